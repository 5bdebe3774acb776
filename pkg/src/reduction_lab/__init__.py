"""Energy-based stochastic state reduction for a pair of spin-1/2 particles."""

from .experiment import (
    EnsembleReport,
    Estimate,
    OutcomeRecord,
    conservation_check,
    estimate_p,
    luders_reference,
    run_ensemble,
    s_squared_statistic,
    sphere_histogram,
    summarize,
)
from .qstate import (
    PSI_INITIAL,
    SINGLET,
    TRIPLET_ZERO,
    Observable,
    SphereCoordinates,
    StateVector,
    bloch_coordinates,
    expectation,
    hamiltonian,
    make_state,
    s_squared,
    sigma_1z,
    theta_phi_state,
    variance,
)
from .reduction import (
    ReductionModel,
    SimulationParams,
    Trajectory,
    model_energy,
    model_local_spins,
    run_trajectory,
    validate_model,
)

__version__ = "0.1.0"
