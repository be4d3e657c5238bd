"""Sublinear expectations, SL-martingales and SL-BSDEs on finite scenario trees."""

from .ambiguity import KernelSet, TrinomialSpec, enumerate_measures, polar_paths, sup_step, trinomial_kernels
from .bsde import (
    Driver,
    comparison_check,
    constant_driver,
    discount_driver,
    driver_from_expectation,
    driver_property_check,
    roundtrip_check,
    solve_bsde,
    zero_driver,
)
from .config import settings
from .errors import (
    BudgetExceeded,
    KernelError,
    PreconditionError,
    SlexpError,
    SolverError,
    TheoremViolation,
    TreeError,
)
from .expectation import (
    ConvexPiecewiseLinear,
    check_axioms,
    conditional_expectation,
    expectation,
    lower_expectation,
    oracle_expectation,
    qs_equal,
    qs_leq,
)
from .martingale import (
    Kind,
    classify,
    compensator,
    conditional_at_stopping_time,
    crossing_inequality_report,
    doob_decomposition,
    is_symmetric,
    martingale_transform,
    optional_stopping_check,
)
from .representation import PhiMap, g_function, martingale_rep, semimartingale_rep, trinomial_phi
from .tree import (
    AdaptedProcess,
    PredictableProcess,
    RandomVariable,
    ScenarioTree,
    StoppingTime,
    build_tree,
    count_crossings,
    stopped_process,
    stopped_value,
)

__version__ = "0.1.0"
