"""High-order LDG Poisson solver with primal and flux operator-coarsening multigrid."""

from .blocklinalg import BlockDiagonal, bottom_solve, random_vector
from .experiments import ExperimentConfig, run_manufactured, run_solve, run_sweep, tau_study
from .ldg import DGSpace, LdgConfig, LevelOperators, assemble_level, assemble_rhs
from .mesh import build_adaptive, build_uniform
from .multigrid import build_hierarchy, convergence_factor, measure_rho, solve_mgpcg, solve_vcycles, vcycle

__version__ = "0.1.0"
