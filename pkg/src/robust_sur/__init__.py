"""Robust estimation for seemingly unrelated regressions.

The package provides the classical feasible-GLS estimator for SUR systems,
a cellwise-robust two-stage estimator built from per-equation MM fits and a
filtered generalized S scatter, and a casewise-robust S baseline, together
with a simulation lab and a command line harness.
"""

from .cellwise import (
    FilterResult,
    GsEstimate,
    generalized_s,
    two_step_gs,
    univariate_filter,
)
from .estimators import SurFit, fit_fastsur, fit_sure, fit_surerob
from .exceptions import (
    ConvergenceError,
    DegenerateDataError,
    DimensionError,
    EstimationError,
    InferenceUnsupportedError,
    NotPositiveDefiniteError,
    RankError,
    RobustSurError,
    SpecificationError,
)
from .loss import (
    LossFamily,
    bisquare_family,
    consistency_constant,
    efficiency_family,
    m_scale,
    tune_for_breakdown,
)
from .metrics import (
    FlaggedCells,
    InferenceResult,
    flag_cells,
    kl_divergence,
    mse,
    system_inference,
)
from .model import (
    Equation,
    KroneckerIdentityOperator,
    SurSystem,
    kronecker_omega,
    residuals,
    stack,
    system_from_frame,
)
from .regression import RegressionFit, mm_regression, ols, s_initial
from .simulation import (
    SimScenario,
    SystemDraw,
    contaminate_icm,
    contaminate_thcm,
    contaminated_system,
    draw_system,
    random_correlation,
)
from .study import (
    bench_timing,
    load_table,
    run_replication,
    simulate_scenario,
    summarize,
)

__version__ = "0.1.0"
