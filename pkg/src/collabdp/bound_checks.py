"""Empirical runs checked against the convergence bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaptive import Alg2Config, run_alg2
from .bounds import BoundInputs, bound_strongly_convex_sgd
from .data import make_logistic_task, partition
from .deep_q import ControllerConfig
from .dp_sgd import Alg1Config, Schedule, average_risk_along, run_alg1
from .linalg import RngStream, project_to_ball
from .losses import LossParams, mean_grad, mean_loss
from .privacy import PrivacySpec


def solve_optimum(task, params: LossParams, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Minimizer of the empirical risk over the radius-R ball by projected full-batch GD."""
    step = 1.0 / (0.25 + params.lam)
    w = np.zeros(task.X.shape[1])
    for _ in range(max_iter):
        g = mean_grad(w, task.X, task.y, params.lam)
        w_next = project_to_ball(w - step * g, params.radius)
        if np.linalg.norm(w_next - w) < tol:
            return w_next
        w = w_next
    return w


@dataclass
class AverageGapPoint:
    epsilon: float
    b: int
    T: int
    measured: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound


def check_strongly_convex_average(n: int = 2000, d: int = 5, lam: float = 0.1, M: int = 10,
               epsilons=(0.3, 0.6, 0.999), batches=(1, 10), seeds=range(1, 11),
               data_seed: int = 0) -> list[AverageGapPoint]:
    """Median average-iterate suboptimality of the 2/(gamma t) run vs its bound."""
    params = LossParams(lam, 1.0 / lam)
    task = make_logistic_task(n, d, seed=data_seed)
    f_star = mean_loss(solve_optimum(task, params), task.X, task.y, lam)
    L = params.lipschitz
    delta = 1.0 / n ** 2
    points = []
    for eps in epsilons:
        for b in batches:
            gaps = []
            T = 0
            for s in seeds:
                part = partition(n, M, n // M, RngStream(s).child("partition"))
                cfg = Alg1Config(M, b, Schedule("strongly_convex", gamma=lam),
                                 PrivacySpec(eps, delta), params, seed=s)
                res = run_alg1(task, part, cfg)
                T = res.T
                gaps.append(average_risk_along(res.trajectory, task, params) - f_star)
            inp = BoundInputs(R=params.radius, L=L, B=L, gamma=lam, mu=params.smoothness, b=b,
                              n=n, T=T, epsilon=eps, delta=delta, M=M)
            points.append(AverageGapPoint(eps, b, T, float(np.median(gaps)), bound_strongly_convex_sgd(inp)))
    return points


@dataclass
class SlopeCheck:
    slope: float
    ts: np.ndarray
    distances: np.ndarray
    fit_from: int

    def ok(self, lo: float = -1.3, hi: float = -0.7) -> bool:
        return lo <= self.slope <= hi


def check_adaptive_distance_slope(n: int = 2000, d: int = 5, lam: float = 0.1, M: int = 1, b: int = 4,
                     a: float = 0.95, epsilon: float = 0.999, seeds=range(1, 31),
                     data_seed: int = 0, fit_from: int | None = None) -> SlopeCheck:
    """Log-log slope of the summed squared distance to w* against the round index.

    Runs the adaptive algorithm in parallel-round mode with the 1/(a gamma t)
    schedule (clamped to 1/(2 mu)); distances are averaged over seeds and the
    fit starts at twice the round where the clamp stops binding.
    """
    params = LossParams(lam, 1.0 / lam)
    task = make_logistic_task(n, d, seed=data_seed)
    w_star = solve_optimum(task, params)
    delta = 1.0 / n ** 2
    curves = []
    for s in seeds:
        part = partition(n, M, n // M, RngStream(s).child("partition"))
        ctrl = ControllerConfig(anneal_steps=n / (2.0 * M * b))
        cfg = Alg2Config(M, b, Schedule("adaptive", gamma=lam, a=a), PrivacySpec(epsilon, delta),
                         params, seed=s, mode="parallel", controller=ctrl)
        curves.append(run_alg2(task, part, cfg, w_star=w_star).distances)
    dist = np.mean(np.array(curves), axis=0)
    ts = np.arange(1, len(dist) + 1)
    if fit_from is None:
        unclamped = math.ceil(2.0 * params.smoothness / (a * lam))
        fit_from = min(2 * unclamped, len(dist) // 2)
    sel = ts >= fit_from
    slope = float(np.polyfit(np.log(ts[sel]), np.log(dist[sel]), 1)[0])
    return SlopeCheck(slope, ts, dist, fit_from)
