from .ensemble import (
    EquivarianceReport,
    Trajectory,
    TrajectoryEnsemble,
    VelocityProvider,
    equivariance_report,
    integrate_ensemble,
    integrate_trajectory,
    run_ensemble,
    sample_density,
    sample_equilibrium,
    sample_uniform_in_slits,
)
from .guidance import (
    VelocityField,
    continuity_residual,
    probability_current,
    spectral_gradient,
    velocity_at,
    velocity_field,
)
from .measurement import (
    ExperimentSpec,
    PovmEstimate,
    ResultDistribution,
    compose,
    extract_povm,
    pointer_experiment,
    run_experiment,
    sample_result_distribution,
    verify_bilinearity,
    verify_spectral_measure,
)
from .propagator import PropagatorPlan, apply_hamiltonian, eigen_residual, evolve, make_plan, step
from .subsystem import (
    ConditionalSlice,
    EmergenceReport,
    conditional_wavefunction,
    projective_distance,
    run_branching_universe,
    run_stationary_universe,
    schrodinger_residual,
)
from .wavefield import (
    DensityField,
    GridSpec,
    Potential,
    PotentialFrame,
    WaveField,
    density,
    init_field,
    inner_product,
    make_grid,
    marginal,
    norm,
    normalize,
)
