"""Three-stage duration-structured HIV model with optimal ART controls."""

__version__ = "0.1.0"

from .params import AgeGrid, Config, ConfigError, ModelParams, load_config, load_params, save_params  # noqa: E402
from .kernels import build_kernels, calibrate_rho0, equilibria, r0  # noqa: E402
from .simulator import EpidemicState, NumericalError, Simulator, Trajectory, initial_state, run  # noqa: E402
from .control import ControlTrajectory, ControlledSimulator, run_controlled  # noqa: E402
from .optimize import objective, performance, performance_surface, solve_adjoint, sweep  # noqa: E402
from .sensitivity import Design, anova_decompose, run_sensitivity  # noqa: E402

__all__ = [
    "AgeGrid", "Config", "ConfigError", "ControlTrajectory", "ControlledSimulator", "Design",
    "EpidemicState", "ModelParams", "NumericalError", "Simulator", "Trajectory",
    "anova_decompose", "build_kernels", "calibrate_rho0", "equilibria", "initial_state",
    "load_config", "load_params", "objective", "performance", "performance_surface", "r0",
    "run", "run_controlled", "run_sensitivity", "save_params", "solve_adjoint", "sweep",
]
