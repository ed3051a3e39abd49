"""Stochastic linear-quadratic optimal control over a finite horizon.

Solvers for the matrix Riccati equation (Newton iteration, shifted-weight
family, plain integration when the control does not enter the noise),
finiteness and solvability verdicts, feedback synthesis, and a Monte Carlo
cost checker. Problems are described by JSON files or built directly as
``ProblemData``.

Attribute access is lazy so that ``slq.cli`` can cap the BLAS thread pools
before anything numerical is imported.
"""

from __future__ import annotations

__version__ = "0.1.0"

_EXPORTS = {
    "ProblemData": "problem",
    "TimeGrid": "problem",
    "MatrixPath": "problem",
    "StandardConditionsReport": "problem",
    "standard_conditions": "problem",
    "from_dict": "problem",
    "loads": "problem",
    "load_problem": "problem",
    "OdeTrajectory": "ode",
    "integrate_matrix_ode": "ode",
    "solve_feedback_lyapunov": "lyapunov",
    "solve_M0": "lyapunov",
    "second_moment": "lyapunov",
    "control_l2_norm": "lyapunov",
    "lower_bound_N": "lyapunov",
    "stiffness_gauge": "lyapunov",
    "STIFF_GAUGE_LIMIT": "lyapunov",
    "RiccatiSolution": "riccati",
    "newton_riccati": "riccati",
    "epsilon_riccati": "riccati",
    "direct_riccati_D0": "riccati",
    "solution_stiffness_gauge": "riccati",
    "residual_profile": "riccati",
    "riccati_residual": "riccati",
    "RegularityReport": "riccati",
    "classify_regularity": "riccati",
    "LadderConfig": "solvability",
    "EpsilonLadder": "solvability",
    "build_ladder": "solvability",
    "FinitenessResult": "solvability",
    "finiteness": "solvability",
    "FeedbackLaw": "solvability",
    "value_function": "solvability",
    "synthesize_feedback": "solvability",
    "ClosedLoopResult": "solvability",
    "closed_loop_solve": "solvability",
    "OpenLoopResult": "solvability",
    "open_loop_check": "solvability",
    "theta_norm_criterion": "solvability",
    "gap_certificate": "solvability",
    "necessary_condition_RDMD": "solvability",
    "limit_convexity_check": "solvability",
    "SolvabilityReport": "solvability",
    "analyze": "solvability",
    "SimulationConfig": "montecarlo",
    "CostEstimate": "montecarlo",
    "simulate_cost": "montecarlo",
    "ProbeReport": "montecarlo",
    "convexity_probe": "montecarlo",
    "SlqError": "errors",
    "ParseError": "errors",
    "DimensionError": "errors",
    "NonSymmetricWeight": "errors",
    "UnsupportedStochasticData": "errors",
    "NonFiniteValue": "errors",
    "SingularFundamentalMatrix": "errors",
    "NewtonFailure": "errors",
    "NotUniformlyConvex": "errors",
    "NoConvergence": "errors",
    "MonotonicityViolation": "errors",
    "NotConvexAtEpsilon": "errors",
    "PreconditionD0": "errors",
    "PreconditionDelta": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'slq' has no attribute {name!r}")
    import importlib

    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__() -> list[str]:
    return __all__
