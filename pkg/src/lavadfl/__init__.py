"""Solver-free decision-focused learning for linear programs.

Adjacent vertices of each training optimum are enumerated once by simplex
pivoting; a linear cost model is then trained against them without any
solver calls.
"""

__version__ = "0.1.0"

from .lp_core import (Basis, BasicFeasibleSolution, SolveStats, Solver, StandardFormLP,
                      check_full_row_rank, solve_binary_ilp, solve_lp, to_standard_form)
from .adjacency import AdjacencySet, brute_force_adjacency, enumerate_adjacent_vertices
from .losses import lava_loss, mse_loss, normalized_regret, regret, spo_plus_loss
from .learner import LinearModel, TrainConfig, evaluate, train

__all__ = [
    "Basis", "BasicFeasibleSolution", "SolveStats", "Solver", "StandardFormLP",
    "check_full_row_rank", "solve_binary_ilp", "solve_lp", "to_standard_form",
    "AdjacencySet", "brute_force_adjacency", "enumerate_adjacent_vertices",
    "lava_loss", "mse_loss", "normalized_regret", "regret", "spo_plus_loss",
    "LinearModel", "TrainConfig", "evaluate", "train",
]
