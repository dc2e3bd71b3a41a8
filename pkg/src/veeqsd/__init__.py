"""Vee-type open quantum systems with multi-channel colored reservoir noise.

Exact master-equation solutions via a pole-free decay-operator pair,
coefficient-field solvers for generalized OU kernels, correlated-noise
synthesis, and stochastic trajectory ensembles, plus a config-driven
scenario runner and CLI.
"""

__version__ = "0.1.0"

from .coefficients import (
    CoefficientField,
    SingleChannelParams,
    TwoTimeField,
    analytic_Q,
    analytic_field,
    exp_integral_Q,
    pole_times,
    single_channel_params,
    solve_F_general,
    solve_F_ou,
)
from .correlations import (
    CorrelationKernel,
    OUChannel,
    alpha,
    alpha_matrix,
    coupling_spectrum,
    kernel_at_zero,
    ou_kernel,
    stacked_covariance,
)
from .errors import (
    ConfigError,
    ConfigParseError,
    NumericalError,
    PoleError,
    QuadratureInstabilityError,
    VeeQSDError,
)
from .master import (
    MasterSolution,
    PropagatorPair,
    assemble_state,
    integrate_master_direct,
    markov_master,
    propagate_pair,
    solve_master,
    trace_distance,
)
from .noise import (
    CovarianceFactor,
    NoisePathBatch,
    ShiftAccumulator,
    build_covariance,
    dump_noise_batch,
    girsanov_shift,
    load_noise_batch,
    sample_noise,
)
from .scenarios import (
    ScenarioConfig,
    TimeSeriesDataset,
    bundled_scenario_names,
    emit_csv,
    load_bundled,
    load_config,
    parse_config,
    read_csv,
    run_scenario,
)
from .system import (
    DensityCheck,
    PureState,
    SystemSpec,
    TimeGrid,
    build_system,
    grid_for_duration,
    level_state,
    lowering_operator,
    pure_state,
    superposition_states,
    validate_density,
)
from .trajectories import (
    EnsembleEstimate,
    TrajectoryState,
    ensemble_density,
    evolve_linear,
    evolve_nonlinear,
    run_ensemble,
)
