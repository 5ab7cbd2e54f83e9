"""Closed-form right-hand sides of the convergence guarantees.

All logarithms are natural. ``TRC`` is the (2 + 12 sqrt 2) constant carried
by the transductive Rademacher terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

TRC = 2.0 + 12.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class BoundInputs:
    R: float = 1.0
    L: float = 1.0
    B: float = 1.0
    gamma: float = 0.0
    mu: float = 1.0
    b: int = 1
    n: int = 1
    T: int = 1
    eta: float = 0.1
    epsilon: float = 0.5
    delta: float = 1e-4
    M: int = 1
    global_updates: float = 0.0  # expected number of Global commits over the run
    a: float = 0.1

    def with_(self, **kw) -> "BoundInputs":
        return replace(self, **kw)


def _privacy_factor(inp: BoundInputs) -> float:
    return math.log(1.25 / inp.delta) / (inp.epsilon ** 2 * inp.b ** 2)


def _transductive_term(inp: BoundInputs) -> float:
    n, b, T = inp.n, inp.b, inp.T
    return (2.0 * TRC * inp.R * inp.L / 3.0) * (
        math.sqrt(b * T) / n + 2.0 / (math.sqrt(n) + math.sqrt(n - b * T)))


def _check_single_pass(inp: BoundInputs, per_node: bool = False) -> None:
    if inp.T < 1:
        raise ValueError("T must be >= 1")
    limit = inp.n / (inp.b * inp.M) if per_node else inp.n / inp.b
    if inp.T > limit + 1e-9:
        raise ValueError(f"T={inp.T} exceeds the single-pass limit {limit:g}")


def bound_convex_sgd_terms(inp: BoundInputs) -> dict[str, float]:
    _check_single_pass(inp)
    return {
        "init": inp.R ** 2 / (2.0 * inp.eta * inp.T),
        "variance": inp.B ** 2 * inp.eta / 2.0,
        "privacy": 4.0 * inp.eta * inp.L ** 2 * _privacy_factor(inp),
        "transductive": _transductive_term(inp),
    }


def bound_convex_sgd(inp: BoundInputs) -> float:
    """Average suboptimality of the constant-step fully collaborative run."""
    return sum(bound_convex_sgd_terms(inp).values())


def bound_strongly_convex_sgd_terms(inp: BoundInputs) -> dict[str, float]:
    _check_single_pass(inp)
    if inp.gamma <= 0:
        raise ValueError("gamma must be > 0")
    n, b, T, g = inp.n, inp.b, inp.T, inp.gamma
    log_ratio = math.log(n / (n - b * (T - 1)))
    harmonic = math.log(T) + 1.0
    return {
        "transductive": 2.0 * TRC ** 2 * inp.B ** 2 / (g * T) * (
            1.5 / b + 4.0 / n + (1.0 / b + 2.0 / n) * log_ratio),
        "variance": 2.0 * inp.B ** 2 * harmonic / (g * T),
        "privacy": 8.0 * inp.L ** 2 * harmonic * math.log(1.25 / inp.delta) / (
            b ** 2 * inp.epsilon ** 2 * g * T),
    }


def bound_strongly_convex_sgd(inp: BoundInputs) -> float:
    """Average suboptimality of the 2/(gamma t) fully collaborative run."""
    return sum(bound_strongly_convex_sgd_terms(inp).values())


def bound_adaptive_convex_terms(inp: BoundInputs) -> dict[str, float]:
    _check_single_pass(inp)
    return {
        "init": (inp.M + 1) * inp.R ** 2 / (4.0 * inp.T * inp.eta),
        "variance": inp.eta * inp.B ** 2,
        "privacy": 4.0 * inp.eta * inp.L ** 2 * _privacy_factor(inp) * inp.global_updates / inp.T,
        "transductive": _transductive_term(inp),
    }


def bound_adaptive_convex(inp: BoundInputs) -> float:
    """Average suboptimality of the constant-step adaptive run."""
    return sum(bound_adaptive_convex_terms(inp).values())


def bound_adaptive_distance(inp: BoundInputs, t: int, slack: float = 1.0) -> float:
    """Order-level distance bound for the adaptive strongly convex run.

    The guarantee is only stated up to constants; each term carries a unit
    constant and ``slack`` scales the sum.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if inp.a <= 0:
        raise ValueError("a must be > 0")
    M, B, L, a, b = inp.M, inp.B, inp.L, inp.a, inp.b
    value = (M * B ** 2 / (a ** 2 * t)
             + M * B ** 2 * math.log(t) / (a ** 2 * b * t)
             + M * L ** 2 * math.log(1.25 / inp.delta) / (a ** 2 * b ** 2 * inp.epsilon ** 2 * t))
    return slack * value
