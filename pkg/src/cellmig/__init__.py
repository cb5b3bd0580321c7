"""Kinetic model of cell migration on fibers with chemotaxis, and its hydrodynamic limit."""

from .errors import CFLError, ClosureError, ConfigError, FluxDirectionError, NonContractiveError, RegimeError
from .grid import PhaseGrid, build_phase_grid, build_velocity_quadrature, sound_speed_squared
from .kernels import KernelSet, ModelParams, build_kernels, validate_kernels
from .kinetic import KineticSolver, KineticState, initial_state, picard_iterate
from .moments import closure_W, compute_moments, equilibrium, pressure_equilibrium
from .hydro import HydroSolver, HydroState, SweepConfig, epsilon_sweep, nondimensionalize
from .io import FieldContainer, read_timeseries, write_timeseries
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "CFLError", "ClosureError", "ConfigError", "FluxDirectionError", "NonContractiveError", "RegimeError",
    "PhaseGrid", "build_phase_grid", "build_velocity_quadrature", "sound_speed_squared",
    "KernelSet", "ModelParams", "build_kernels", "validate_kernels",
    "KineticSolver", "KineticState", "initial_state", "picard_iterate",
    "closure_W", "compute_moments", "equilibrium", "pressure_equilibrium",
    "HydroSolver", "HydroState", "SweepConfig", "epsilon_sweep", "nondimensionalize",
    "FieldContainer", "read_timeseries", "write_timeseries",
    "RunConfig", "load_config", "parse_config",
]
