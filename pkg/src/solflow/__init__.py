"""Exact KdV N-soliton solutions, soliton-train synthesis and Lagrangian flow checks."""

from .hirota import (
    DomainError,
    EvalFrame,
    EvaluationError,
    NSolitonSolution,
    Soliton,
    eta,
    eta_derivatives,
    interaction_coefficient,
    tau_derivative,
    time_derivative_eta,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "EvalFrame",
    "EvaluationError",
    "NSolitonSolution",
    "Soliton",
    "eta",
    "eta_derivatives",
    "interaction_coefficient",
    "tau_derivative",
    "time_derivative_eta",
]
