"""geodec: geometric phases of diffusive open-quantum-system trajectories.

Propagates biorthogonal trajectory pairs under the non-Markovian quantum
state diffusion equation, extracts complex total/dynamical/geometric phases
per trajectory and in ensemble average, and checks them against closed-form
results, including leakage-elimination control of the imaginary (decohering)
part of the geometric phase.
"""

from .bath import BathParams, NoisePath, TimeGrid
from .closedform import (
    closed_system_phase,
    dephasing_avg_phases,
    dissipative_avg_phase_series,
    gamma_expansion_leading,
    lambda_expansion_phase,
    markov_phase,
)
from .control import LeoExperiment, run_leo_experiment
from .dynamics import IntegrationError, TrajectoryPair, propagate_pair
from .ensemble import (
    ExcessiveExclusions,
    PhaseEnsemble,
    average_phase_series,
    evolve_rho_tilde,
    reduced_density,
)
from .geomphase import (
    BranchJump,
    PhaseSeries,
    PhaseSingularity,
    geodesic_residual,
    geometric_phase,
    one_form_phase,
)
from .models import ControlField, ModelKind, ModelSpec, build_model

__version__ = "1.0.0"

__all__ = [
    "BathParams",
    "BranchJump",
    "ControlField",
    "ExcessiveExclusions",
    "IntegrationError",
    "LeoExperiment",
    "ModelKind",
    "ModelSpec",
    "NoisePath",
    "PhaseEnsemble",
    "PhaseSeries",
    "PhaseSingularity",
    "TimeGrid",
    "TrajectoryPair",
    "average_phase_series",
    "build_model",
    "closed_system_phase",
    "dephasing_avg_phases",
    "dissipative_avg_phase_series",
    "evolve_rho_tilde",
    "gamma_expansion_leading",
    "geodesic_residual",
    "geometric_phase",
    "lambda_expansion_phase",
    "markov_phase",
    "one_form_phase",
    "propagate_pair",
    "reduced_density",
    "run_leo_experiment",
    "__version__",
]
