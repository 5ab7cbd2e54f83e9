"""Sensitivity bounds, Gaussian-mechanism calibration and the sample ledger."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field


class PrivacyViolation(RuntimeError):
    """A sample was used more often than its budget allows."""


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def split(self, parts: int) -> "PrivacySpec":
        return PrivacySpec(self.epsilon / parts, self.delta / parts)


def sensitivity_alg1(eta: float, L: float, b: int) -> float:
    """L2 sensitivity of one fully collaborative step: ``2 eta L / b``."""
    if eta <= 0 or L <= 0 or b < 1:
        raise ValueError("need eta > 0, L > 0, b >= 1")
    return 2.0 * eta * L / b


def sensitivity_alg2(etas_window, L: float, b: int, mu: float) -> float:
    """Sensitivity of a global commit after local steps at the given rates.

    ``etas_window`` holds every step size used by the node since its last
    global commit, the current one included. The bound only holds when each
    of them is at most ``1 / (2 mu)``.
    """
    etas = list(etas_window)
    if not etas:
        raise ValueError("eta window is empty")
    cap = 1.0 / (2.0 * mu)
    bad = [e for e in etas if e > cap]
    if bad:
        raise ValueError(f"step size {bad[0]} exceeds 1/(2 mu) = {cap}")
    return max(sensitivity_alg1(e, L, b) for e in etas)


def noise_multiplier(delta: float) -> float:
    return math.sqrt(2.0 * math.log(1.25 / delta))


def noise_sigma(spec: PrivacySpec, delta2: float) -> float:
    """Standard deviation of the Gaussian mechanism for sensitivity ``delta2``."""
    if delta2 < 0:
        raise ValueError("sensitivity must be >= 0")
    return noise_multiplier(spec.delta) * delta2 / spec.epsilon


def per_coordinate_sigma(sigma: float, dim: int, mode: str = "per_coordinate") -> float:
    """Map the calibrated sigma to the per-coordinate std actually sampled.

    ``per_coordinate`` draws each coordinate from N(0, sigma^2);
    ``total`` spreads sigma^2 over the vector so E||A||^2 = sigma^2.
    """
    if mode == "per_coordinate":
        return sigma
    if mode == "total":
        return sigma / math.sqrt(dim)
    raise ValueError(f"unknown noise_norm_mode {mode!r}")


@dataclass
class StepRecord:
    t: int
    epsilon: float
    delta: float
    sigma: float


@dataclass
class PrivacyLedger:
    """Per-sample use counts plus a record of every noisy release."""

    limit: int = 1
    counts: Counter = field(default_factory=Counter)
    steps: list[StepRecord] = field(default_factory=list)

    def record(self, batch) -> None:
        ids = [int(i) for i in batch]
        over = [i for i in ids if self.counts[i] + 1 > self.limit]
        if over:
            raise PrivacyViolation(
                f"sample {over[0]} would be used {self.counts[over[0]] + 1} times (limit {self.limit})")
        self.counts.update(ids)

    def record_step(self, t: int, spec: PrivacySpec, sigma: float) -> None:
        self.steps.append(StepRecord(t, spec.epsilon, spec.delta, sigma))

    @property
    def max_count(self) -> int:
        return max(self.counts.values(), default=0)

    def violations(self) -> list[int]:
        return sorted(i for i, c in self.counts.items() if c > self.limit)

    def to_dict(self) -> dict:
        return {
            "limit": self.limit,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
            "step_records": [[s.t, s.epsilon, s.delta, s.sigma] for s in self.steps],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PrivacyLedger":
        led = cls(limit=int(data.get("limit", 1)))
        led.counts = Counter({int(k): int(v) for k, v in data["counts"].items()})
        led.steps = [StepRecord(int(t), float(e), float(d), float(s))
                     for t, e, d, s in data.get("step_records", [])]
        return led

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def ledger_record(ledger: PrivacyLedger, batch) -> PrivacyLedger:
    ledger.record(batch)
    return ledger
