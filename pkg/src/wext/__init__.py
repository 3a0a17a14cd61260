"""Metric extrapolation of Wasserstein geodesics between atomic measures."""

from .errors import (
    DimensionMismatch,
    EmptyInput,
    InstanceTooLarge,
    InvalidPlan,
    MeasureError,
    NoConvergence,
    NonFiniteCoordinate,
    NonFiniteIntermediate,
    NonPositiveWeight,
    NotOneDimensional,
    StepTooLarge,
    TooFewSamples,
    WeightSumMismatch,
    WextError,
)
from .exact_1d import extrapolate_1d, extrapolate_1d_support, pav_isotonic, sticky_flow_1d
from .exact_ot import quantile, w2, w2_sq_1d, w2_sq_exact
from .jko import FlowConfig, extrapolation_trajectory, jko_step, run_flow
from .measures import (
    AtomicMeasure,
    TransportPlan,
    barycenter,
    check_plan,
    dirac,
    product_plan,
    second_moment,
    validate,
)
from .qp_oracle import certify_solution, check_convex_order, fw_solve
from .sinkhorn import (
    ConvergenceTrace,
    DualState,
    ExtrapolationResult,
    SolverConfig,
    solve,
)

__version__ = "0.1.0"


def fixture(name: str) -> AtomicMeasure:
    """Load a bundled measure, e.g. ``fixture("four_dirac_nu0")``."""
    from importlib.resources import files

    return AtomicMeasure.load(files(__name__) / "fixtures" / f"{name}.json")


def fixture_path(name: str):
    from importlib.resources import files

    return files(__name__) / "fixtures" / f"{name}.json"
