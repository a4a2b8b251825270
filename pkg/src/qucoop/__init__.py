"""Composite binary optimization by repeated QUBO linearization.

Modules: :mod:`qubo` (instances and solvers), :mod:`engine` (the iteration),
:mod:`perm` (permutation parametrisation), :mod:`qap` (assignment problems),
:mod:`registration` (rigid point-set registration) and :mod:`cli`.
"""
from .engine import (IterationConfig, Linearization, PenaltySpec, PermutationParametrisation,
                     QuadraticObjective, RunRecord, assemble_qubo, linearize, run, step)
from .qubo import Backend, QuboInstance, Sample, SolveConfig, energy, solve, solve_batch

__version__ = "0.1.0"

__all__ = [
    "Backend", "IterationConfig", "Linearization", "PenaltySpec", "PermutationParametrisation",
    "QuadraticObjective", "QuboInstance", "RunRecord", "Sample", "SolveConfig",
    "assemble_qubo", "energy", "linearize", "run", "solve", "solve_batch", "step",
]
