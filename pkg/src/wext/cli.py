"""Command-line drivers: ``wext extrapolate | flow | quantize | certify``.

Exit codes: 0 success, 2 unreadable or missing input, 3 invalid measure or
plan, or a failed certificate, 4 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import InvalidPlan, MeasureError, TooFewSamples, EmptyInput, WextError
from .exact_1d import extrapolate_1d_support
from .exact_ot import w2
from .jko import FlowConfig, extrapolation_trajectory, run_flow
from .measures import AtomicMeasure, TransportPlan
from .qp_oracle import certify, certify_solution
from .sinkhorn import SolverConfig, extrapolation_objective, moment_constant, solve

logger = logging.getLogger("wext")

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_NOCONV = 0, 2, 3, 4


class InputError(Exception):
    """Missing or unparseable input file."""


@dataclass
class RunManifest:
    command: str
    inputs: dict
    config: dict
    out: str
    seed: int
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2))


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------

def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {p}: {exc}") from None


def load_measure(path) -> AtomicMeasure:
    data = _read_json(path)
    try:
        return AtomicMeasure.from_dict(data)
    except MeasureError as exc:
        raise MeasureError(f"{path}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed measure ({exc})") from None


def _write_matrix(path: Path, A) -> None:
    np.savetxt(path, np.asarray(A), delimiter=",", fmt="%.17g")


def _read_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InvalidPlan(f"{path}: unreadable plan ({exc})") from None


def _write_trace(path: Path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "f", "marginal_residual", "z_grad_norm", "epsilon"])
        for k in range(len(trace)):
            w.writerow([k, repr(trace.f[k]), repr(trace.marginal_residual[k]),
                        repr(trace.z_grad_norm[k]), repr(trace.epsilon[k])])


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise InputError(f"output directory not writable: {out}")
    return out


def _parse_tau(text: str):
    if text in ("adaptive", "theory"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--tau must be a number, 'adaptive' or 'theory', got {text!r}")


def _parse_anneal(text: str):
    if text.lower() == "none":
        return None
    try:
        factor, floor = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--anneal expects 'factor,floor' or 'none', got {text!r}")
    return (factor, floor)


def _solver_config(args, t: float) -> SolverConfig:
    return SolverConfig(t=t, epsilon=args.epsilon, tau=args.tau, max_iter=args.max_iter,
                        tol=args.tol, anneal=args.anneal)


def _config_dict(cfg: SolverConfig) -> dict:
    d = asdict(cfg)
    d["schedule"] = cfg.schedule()
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_extrapolate(args) -> int:
    nu0, nu1 = load_measure(args.nu0), load_measure(args.nu1)
    inputs = {"nu0": str(args.nu0), "nu1": str(args.nu1)}
    if args.reverse:
        nu0, nu1 = nu1, nu0
    out = _outdir(args.out)
    t = args.t
    nu0.save(out / "nu0.json")
    nu1.save(out / "nu1.json")
    summary: dict
    if args.exact_1d:
        nu_t = AtomicMeasure(extrapolate_1d_support(nu0, nu1, t), nu1.weights)
        g_val = float(nu1.weights @ (nu_t.points[:, 0] ** 2)) / (2 * t * (t - 1))
        p_val = extrapolation_objective(nu_t, nu0, nu1, t)
        summary = {"p_value": p_val, "primal_g": g_val,
                   "eqbp_residual": abs(p_val - (-g_val + moment_constant(nu0, nu1, t))),
                   "converged": True, "iterations": 0}
        cfg_dict = {"t": t, "exact_1d": True}
        status = EXIT_OK
    else:
        cfg = _solver_config(args, t)
        res = solve(nu0, nu1, cfg)
        nu_t = res.nu_t
        _write_matrix(out / "plan.csv", res.plan.entries)
        _write_trace(out / "trace.csv", res.trace)
        summary = res.summary()
        if args.certify:
            cert = certify_solution(res, nu0, nu1, t)
            summary.update({k: v for k, v in cert.to_dict().items()})
            summary["certificate_passed"] = cert.passed
        cfg_dict = _config_dict(cfg)
        status = EXIT_OK if res.converged else EXIT_NOCONV
    nu_t.save(out / "nu_t.json")
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    RunManifest("extrapolate", inputs, cfg_dict, str(out), args.seed,
                extra={"reverse": bool(args.reverse)}).save(out / "manifest.json")
    if status == EXIT_NOCONV:
        print(f"warning: solver hit max_iter; partial results in {out}", file=sys.stderr)
    return status


def cmd_flow(args) -> int:
    nu0, nu1 = load_measure(args.nu0), load_measure(args.nu1)
    out = _outdir(args.out)
    inner = _solver_config(args, 2.0)
    fcfg = FlowConfig(h=args.h, t_final=args.t_final, inner=inner, use_1d_exact=args.exact_1d)
    times = fcfg.times()
    traj = run_flow(nu0, nu1, fcfg)
    direct = extrapolation_trajectory(nu0, nu1, times, inner, use_1d_exact=args.exact_1d)
    width = max(3, len(str(len(traj) - 1)))
    rows = []
    for n, (tn, mf, me) in enumerate(zip(times, traj, direct)):
        mf.save(out / f"flow_{n:0{width}d}.json")
        rows.append((n, float(tn), w2(mf, me)))
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "w2_flow_vs_extrapolation"])
        for n, tn, d in rows:
            w.writerow([n, repr(tn), repr(d)])
    summary = {"steps": len(traj) - 1, "max_deviation": max(d for _, _, d in rows),
               "t_final": float(times[-1]), "h": args.h}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    cfg = {"h": args.h, "t_final": args.t_final, "exact_1d": bool(args.exact_1d),
           "inner": _config_dict(inner)}
    RunManifest("flow", {"nu0": str(args.nu0), "nu1": str(args.nu1)}, cfg, str(out),
                args.seed).save(out / "manifest.json")
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .quantize import load_samples_csv, lloyd_quantize, sample_shape

    if args.samples is not None:
        if not Path(args.samples).is_file():
            raise InputError(f"no such file: {args.samples}")
        try:
            X = load_samples_csv(args.samples)
        except ValueError as exc:
            raise InputError(f"{args.samples}: {exc}") from None
        inputs = {"samples": str(args.samples)}
    else:
        X = sample_shape(args.shape, args.n_samples, seed=args.seed,
                         center=tuple(args.center))
        inputs = {"shape": args.shape, "n_samples": args.n_samples, "center": list(args.center)}
    m = lloyd_quantize(X, args.k, seed=args.seed)
    out = Path(args.out)
    if out.suffix != ".json":
        out = _outdir(out) / "quantized.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    m.save(out)
    RunManifest("quantize", inputs, {"k": args.k}, str(out), args.seed).save(
        out.with_name(out.stem + "_manifest.json"))
    return EXIT_OK


def cmd_certify(args) -> int:
    d = Path(args.dir)
    if not d.is_dir():
        raise InputError(f"no such directory: {d}")
    manifest = _read_json(d / "manifest.json")
    cfg = manifest.get("config", {})
    if "t" not in cfg or "schedule" not in cfg:
        raise InputError(f"{d / 'manifest.json'}: not an extrapolation run with a plan")
    t = float(cfg["t"])
    eps = float(cfg["schedule"][-1])
    nu0, nu1 = load_measure(d / "nu0.json"), load_measure(d / "nu1.json")
    nu_t = load_measure(d / "nu_t.json")
    P = _read_matrix(d / "plan.csv")
    plan = TransportPlan(P, nu0.weights, nu1.weights)
    cert = certify(plan, nu_t, nu0, nu1, t, eps, plan_tol=max(1e-6, 10 * float(cfg.get("tol", 1e-7))))
    report = cert.to_dict()
    (d / "certificate.json").write_text(json.dumps(report, indent=2))
    for key in ("value_mismatch", "fw_gap", "convex_order", "eqbp_residual"):
        print(f"{key}: {report[key]}")
    return EXIT_OK if cert.passed else EXIT_INVALID


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=1.0,
                   help="starting epsilon (the only one without --anneal)")
    p.add_argument("--anneal", type=_parse_anneal, default=(0.5, 1e-3),
                   help="'factor,floor' geometric schedule, or 'none' (default 0.5,1e-3)")
    p.add_argument("--tau", type=_parse_tau, default="adaptive")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--exact-1d", action="store_true", help="use the quantile formula (1D only)")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wext", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extrapolate", help="extrapolate the geodesic nu0 -> nu1 to time t")
    p.add_argument("nu0")
    p.add_argument("nu1")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--reverse", action="store_true",
                   help="negative direction: extrapolate nu1 -> nu0 instead")
    p.add_argument("--no-certify", dest="certify", action="store_false",
                   help="skip the Frank-Wolfe and convex-order checks")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("flow", help="JKO flow of -W2^2(nu0, .)/(2t) started at nu1")
    p.add_argument("nu0")
    p.add_argument("nu1")
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--t-final", type=float, default=2.0)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("quantize", help="Lloyd quantization of samples into k atoms")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", help="CSV file with one point per row")
    src.add_argument("--shape", help="synthetic shape: square, disk, annulus, cross, ell, triangle")
    p.add_argument("--n-samples", type=int, default=20_000)
    p.add_argument("--center", type=float, nargs=2, default=(0.0, 0.0))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .json file or directory")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("certify", help="check an extrapolate output directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_certify)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("WEXT_THREADS")
    limit = int(threads) if threads else None
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvalidPlan, MeasureError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EmptyInput, TooFewSamples, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except WextError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
