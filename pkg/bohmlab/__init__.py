# Protocol — shared types and errors
from .protocol import (
    BohmlabError,
    ConfigError,
    DegenerateStateError,
    GateResult,
    GridMismatchError,
    InitRule,
    IntegrationError,
    InterpMethod,
    PropagationError,
    ResultMethod,
    TimeMismatchError,
    Tolerances,
    UnknownScenarioError,
)

# Core — wave fields, propagation, guidance, ensembles, subsystems, measurement
from .core import (
    ConditionalSlice,
    DensityField,
    EmergenceReport,
    EquivarianceReport,
    ExperimentSpec,
    GridSpec,
    Potential,
    PotentialFrame,
    PropagatorPlan,
    ResultDistribution,
    Trajectory,
    TrajectoryEnsemble,
    VelocityField,
    WaveField,
    compose,
    conditional_wavefunction,
    density,
    eigen_residual,
    evolve,
    init_field,
    inner_product,
    integrate_ensemble,
    make_grid,
    make_plan,
    marginal,
    norm,
    projective_distance,
    run_ensemble,
    run_experiment,
    sample_equilibrium,
    step,
    velocity_at,
    velocity_field,
    verify_bilinearity,
    verify_spectral_measure,
)

# Scenarios — the registry and its built-in experiments
from .scenarios import Scenario, ScenarioRegistry, default_registry

# Compliance — diagnostics and run reports
from .compliance import DiagnosticsCollector, RunReport

# Config
from .config import RunConfig, parse_config

__all__ = [
    # Core
    "GridSpec",
    "WaveField",
    "DensityField",
    "Potential",
    "PotentialFrame",
    "make_grid",
    "init_field",
    "norm",
    "inner_product",
    "density",
    "marginal",
    "PropagatorPlan",
    "make_plan",
    "step",
    "evolve",
    "eigen_residual",
    "VelocityField",
    "velocity_field",
    "velocity_at",
    "Trajectory",
    "TrajectoryEnsemble",
    "sample_equilibrium",
    "integrate_ensemble",
    "run_ensemble",
    "EquivarianceReport",
    "ConditionalSlice",
    "conditional_wavefunction",
    "projective_distance",
    "EmergenceReport",
    "ExperimentSpec",
    "ResultDistribution",
    "compose",
    "run_experiment",
    "verify_bilinearity",
    "verify_spectral_measure",
    # Scenarios
    "Scenario",
    "ScenarioRegistry",
    "default_registry",
    # Compliance & config
    "DiagnosticsCollector",
    "RunReport",
    "RunConfig",
    "parse_config",
    # Protocol
    "GateResult",
    "Tolerances",
    "InitRule",
    "InterpMethod",
    "ResultMethod",
    "BohmlabError",
    "ConfigError",
    "GridMismatchError",
    "DegenerateStateError",
    "PropagationError",
    "IntegrationError",
    "UnknownScenarioError",
    "TimeMismatchError",
]
