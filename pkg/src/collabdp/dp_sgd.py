"""Fully collaborative decentralized DP-SGD over a simulated global registry.

Every committed step fetches the current global model, takes one noisy
mini-batch gradient step on the committing node's next without-replacement
batch and projects back onto the radius-R ball.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import RngStream, gaussian_vector, project_to_ball
from .losses import LossParams, mean_grad, mean_loss
from .privacy import (PrivacyLedger, PrivacySpec, noise_sigma, per_coordinate_sigma,
                      sensitivity_alg1)
from .sampling import PermutationCursor

SCHEDULE_KINDS = ("constant", "strongly_convex", "adaptive", "inv_sqrt")


def schedule_eta(kind: str, t: int, gamma: float | None = None, eta: float = 0.1,
                 a: float = 1.0) -> float:
    """Step size at 1-based step ``t``.

    ``constant`` -> eta; ``strongly_convex`` -> 2/(gamma t);
    ``adaptive`` -> 1/(a gamma t); ``inv_sqrt`` -> 1/sqrt(t).
    """
    if t < 1:
        raise ValueError(f"steps are 1-based, got t={t}")
    if kind == "constant":
        return float(eta)
    if kind == "inv_sqrt":
        return 1.0 / math.sqrt(t)
    if kind in ("strongly_convex", "adaptive"):
        if gamma is None or gamma <= 0:
            raise ValueError(f"{kind} schedule needs gamma > 0")
        if kind == "strongly_convex":
            return 2.0 / (gamma * t)
        if not a > 0:
            raise ValueError("adaptive schedule needs a > 0")
        return 1.0 / (a * gamma * t)
    raise ValueError(f"unknown schedule {kind!r}")


@dataclass(frozen=True)
class Schedule:
    kind: str = "constant"
    eta: float = 0.1
    gamma: float | None = None
    a: float = 1.0
    eta_max: float | None = None

    def __call__(self, t: int) -> float:
        value = schedule_eta(self.kind, t, gamma=self.gamma, eta=self.eta, a=self.a)
        if self.eta_max is not None:
            value = min(value, self.eta_max)
        return value


@dataclass
class GlobalRegistry:
    """The public model plus who wrote it last and how many commits so far."""

    w: np.ndarray
    last_updater: int = -1
    t: int = 0

    def commit(self, w_new: np.ndarray, node: int) -> None:
        self.w = w_new
        self.last_updater = node
        self.t += 1


@dataclass
class Alg1Config:
    M: int
    b: int
    schedule: Schedule = field(default_factory=Schedule)
    privacy: PrivacySpec | None = None
    params: LossParams = field(default_factory=LossParams)
    seed: int = 0
    scheduler: str = "round_robin"
    noise_norm_mode: str = "per_coordinate"
    keep_trajectory: bool = True

    @property
    def noiseless(self) -> bool:
        return self.privacy is None


@dataclass
class StepLog:
    step: int
    node: int
    eta: float
    sigma: float
    batch_size: int


def noisy_gradient_step(w: np.ndarray, X: np.ndarray, y: np.ndarray, eta: float,
                        params: LossParams, privacy: PrivacySpec | None,
                        noise_rng: RngStream | None, noise_norm_mode: str = "per_coordinate",
                        sensitivity: float | None = None) -> tuple[np.ndarray, float]:
    """``Pi_R[w - eta grad - A]`` with ``A`` the calibrated noise; returns (w, sigma).

    The noise is applied to the step as a whole: ``A`` stands for ``eta N``
    and its standard deviation is the Gaussian-mechanism sigma for the
    step's L2 sensitivity (``2 eta L / b`` unless given).
    """
    g = mean_grad(w, X, y, params.lam)
    w_new = w - eta * g
    sigma = 0.0
    if privacy is not None:
        delta2 = sensitivity if sensitivity is not None else \
            sensitivity_alg1(eta, params.lipschitz, len(y))
        sigma = noise_sigma(privacy, delta2)
        coord_sigma = per_coordinate_sigma(sigma, len(w), noise_norm_mode)
        w_new = w_new - gaussian_vector(noise_rng, len(w), coord_sigma)
    return project_to_ball(w_new, params.radius), sigma


def alg1_step(registry: GlobalRegistry, node: int, batch: np.ndarray, task, cfg: Alg1Config,
              ledger: PrivacyLedger, noise_rng: RngStream | None) -> StepLog:
    """Commit one update from ``node`` on ``batch`` (indices into ``task``)."""
    t = registry.t + 1
    eta = cfg.schedule(t)
    ledger.record(batch)
    w_new, sigma = noisy_gradient_step(registry.w, task.X[batch], task.y[batch], eta,
                                       cfg.params, cfg.privacy, noise_rng, cfg.noise_norm_mode)
    if cfg.privacy is not None:
        ledger.record_step(t, cfg.privacy, sigma)
    registry.commit(w_new, node)
    return StepLog(t, node, eta, sigma, len(batch))


@dataclass
class TrainResult:
    final: np.ndarray
    average: np.ndarray
    ledger: PrivacyLedger
    steps: list[StepLog]
    trajectory: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.steps)


def make_cursors(partition, b: int, root: RngStream) -> list[PermutationCursor]:
    return [PermutationCursor(idx, b, root.child("perm", m))
            for m, idx in enumerate(partition.nodes)]


class NodeScheduler:
    """Chooses which node acts next among those with data left.

    ``round_robin`` cycles through node ids, skipping drained nodes;
    ``random`` picks uniformly among live nodes.
    """

    def __init__(self, mode: str, M: int, rng: RngStream):
        if mode not in ("round_robin", "random"):
            raise ValueError(f"unknown scheduler {mode!r}")
        self.mode = mode
        self.M = M
        self.rng = rng
        self._next = 0

    def pick(self, live: list[bool]) -> int | None:
        alive = [m for m in range(self.M) if live[m]]
        if not alive:
            return None
        if self.mode == "random":
            return alive[int(self.rng.integers(len(alive)))]
        for k in range(self.M):
            m = (self._next + k) % self.M
            if live[m]:
                self._next = (m + 1) % self.M
                return m
        return None


def run_alg1(task, partition, cfg: Alg1Config, w0: np.ndarray | None = None) -> TrainResult:
    """One pass of the fully collaborative algorithm over every node's data."""
    d = task.X.shape[1]
    root = RngStream(cfg.seed)
    cursors = make_cursors(partition, cfg.b, root)
    noise_rng = root.child("noise")
    sched = NodeScheduler(cfg.scheduler, cfg.M, root.child("sched"))
    registry = GlobalRegistry(np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64))
    ledger = PrivacyLedger(limit=1)

    steps: list[StepLog] = []
    traj: list[np.ndarray] = []
    running = np.zeros(d)
    while (m := sched.pick([not c.exhausted for c in cursors])) is not None:
        batch = cursors[m].next_batch()
        steps.append(alg1_step(registry, m, batch, task, cfg, ledger, noise_rng))
        running += registry.w
        if cfg.keep_trajectory:
            traj.append(registry.w)
    T = max(len(steps), 1)
    return TrainResult(final=registry.w, average=running / T, ledger=ledger, steps=steps,
                       trajectory=np.array(traj) if cfg.keep_trajectory else None)


def average_risk_along(trajectory: np.ndarray, task, params: LossParams) -> float:
    """Mean of F(w_t) over a stored trajectory."""
    return float(np.mean([mean_loss(w, task.X, task.y, params.lam) for w in trajectory]))


def write_trajectory_csv(path, steps: list[StepLog], train_loss: list[float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "node", "eta", "sigma", "train_loss_snapshot_optional"])
        for i, s in enumerate(steps):
            loss = "" if train_loss is None else repr(train_loss[i])
            writer.writerow([s.step, s.node, repr(s.eta), repr(s.sigma), loss])
