"""Balanced truncation for linear SDEs with controlled diffusion and non-zero initial states."""

__version__ = "0.1.0"

from .balancing import BalancedRealization, ReducedModel, balance, hsv, truncate, verify_reduced_gramian
from .errors import (
    BalancingError, CapacityError, GramianError, InputError, NumericalError, ParseError,
    SimulationError, StochBTError, UnstableSystemError, ValidationError,
)
from .gramians import (
    GramianReport, LMIOptions, solve_lmi_reach, solve_obs_eq, solve_type1_reach, verify_gramian,
)
from .operators import op_L, op_Lstar, op_S, op_U
from .simulator import SimConfig, coupled_error, coupled_errors, simulate
from .strategies import (
    AuxiliarySpec, approach1_bound, approach1_reduce, approach2_bound, approach2_reduce, u0_energy,
)
from .system import (
    ControlSignal, HorizonConfig, StochasticSystem, load_system, random_stable_system, save_system,
    stability_check, validate,
)
