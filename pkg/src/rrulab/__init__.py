"""rrulab: simulation and statistical verification of randomly reinforced urns."""

__version__ = "0.1.0"

from .reinforce_dist import (
    Dist,
    DistributionError,
    ReinforcementSpec,
    expect_fraction,
    finite_discrete,
    make_dist,
    moments,
    point_mass,
    quantile,
    sample_pair,
    two_point,
    uniform_interval,
)
from .urn_process import (
    Checkpoint,
    PathTrace,
    StepRecord,
    UrnState,
    drift_factor,
    drift_factor_bounds,
    init,
    run_path,
    simulate_block,
    step,
)
from .ensemble_engine import (
    ConfigError,
    EnsembleSummary,
    ExperimentConfig,
    PathsTable,
    estimate_moment,
    geometric_checkpoints,
    load_config,
    load_paths_csv,
    run_ensemble,
)
from .analytics import (
    PreconditionError,
    TestReport,
    TheoryTargets,
    atom_scan,
    clt_test,
    dn_growth_check,
    dominance_test,
    kolmogorov_quantile,
    ks_statistic,
    normal_cdf,
    series_diagnostics,
    tail_sum_check,
)
from .coupling_lab import CoupledTrace, CouplingCheck, check_coupling, run_coupled

__all__ = [name for name in dir() if not name.startswith("_")]
