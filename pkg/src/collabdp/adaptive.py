"""Deep-Q driven Local/Global training and the DP-SGD-5 random-walk baseline."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .deep_q import GLOBAL, LOCAL, ACTION_NAMES, ControllerConfig, DeepQController, Transition, build_state
from .dp_sgd import GlobalRegistry, NodeScheduler, Schedule, StepLog, TrainResult, make_cursors, noisy_gradient_step
from .linalg import RngStream, gaussian_vector, project_to_ball
from .losses import LossParams, mean_grad, mean_loss
from .privacy import (PrivacyLedger, PrivacySpec, noise_sigma, per_coordinate_sigma,
                      sensitivity_alg2)
from .sampling import PermutationCursor

POLICIES = ("dqn", "global", "local")


@dataclass
class Alg2Config:
    M: int
    b: int
    schedule: Schedule = field(default_factory=Schedule)
    privacy: PrivacySpec | None = None
    params: LossParams = field(default_factory=LossParams)
    seed: int = 0
    mode: str = "sequential"  # or "parallel"
    policy: str = "dqn"
    controller: ControllerConfig | None = None
    noise_norm_mode: str = "per_coordinate"
    cap_eta: bool = True  # clamp every step size to 1/(2 mu)
    keep_trajectory: bool = False

    def __post_init__(self):
        if self.schedule.kind == "adaptive" and not 0 < self.schedule.a < 1:
            raise ValueError(f"the 1/(a gamma t) schedule needs a in (0, 1), got {self.schedule.a}")

    def eta(self, t: int) -> float:
        value = self.schedule(t)
        if self.cap_eta:
            value = min(value, 1.0 / (2.0 * self.params.smoothness))
        return value


@dataclass
class Alg2NodeState:
    node: int
    w_local: np.ndarray
    cursor: PermutationCursor
    controller: DeepQController | None = None
    window: list[tuple[float, int]] = field(default_factory=list)  # (eta, batch size)
    prev: tuple[np.ndarray, int, np.ndarray] | None = None  # (state, action, batch)
    local_steps: int = 0
    global_steps: int = 0


@dataclass
class ActionLog:
    tick: int
    node: int
    action: int
    eta: float
    sigma: float
    window_len: int
    delta2: float = 0.0
    noise_on_local: bool = False


@dataclass
class Alg2Result:
    global_final: np.ndarray
    global_average: np.ndarray
    local_finals: np.ndarray  # (M, d)
    local_averages: np.ndarray
    actions: list[ActionLog]
    ledger: PrivacyLedger
    p_global: np.ndarray  # per node fraction of Global actions
    global_trajectory: np.ndarray | None = None
    distances: list[float] | None = None
    controllers: list[DeepQController | None] = field(default_factory=list)

    @property
    def ticks(self) -> int:
        return len(self.actions)


def alg2_local_step(node: Alg2NodeState, batch: np.ndarray, task, eta: float,
                    params: LossParams, ledger: PrivacyLedger) -> None:
    """Private doubled step on the node's own model; never noised."""
    ledger.record(batch)
    g = mean_grad(node.w_local, task.X[batch], task.y[batch], params.lam)
    node.w_local = project_to_ball(node.w_local - 2.0 * eta * g, params.radius)
    node.window.append((eta, len(batch)))
    node.local_steps += 1


def alg2_global_step(registry: GlobalRegistry, node: Alg2NodeState, batch: np.ndarray, task,
                     eta: float, cfg: Alg2Config, ledger: PrivacyLedger,
                     noise_rng: RngStream | None) -> tuple[float, float]:
    """Average with the local model, take a noisy step at the global model, sync both.

    Returns ``(sigma, delta2)``. The sensitivity covers every local step since
    the node's previous commit together with this one.
    """
    p = cfg.params
    ledger.record(batch)
    window = node.window + [(eta, len(batch))]
    delta2 = sensitivity_alg2([e for e, _ in window], p.lipschitz,
                              min(s for _, s in window), p.smoothness)
    w_g = registry.w
    g = mean_grad(w_g, task.X[batch], task.y[batch], p.lam)
    w_new = (w_g + node.w_local) / 2.0 - eta * g
    sigma = 0.0
    if cfg.privacy is not None:
        sigma = noise_sigma(cfg.privacy, delta2)
        coord = per_coordinate_sigma(sigma, len(w_g), cfg.noise_norm_mode)
        w_new = w_new - gaussian_vector(noise_rng, len(w_g), coord)
        ledger.record_step(registry.t + 1, cfg.privacy, sigma)
    w_new = project_to_ball(w_new, p.radius)
    registry.commit(w_new, node.node)
    node.w_local = w_new.copy()
    node.window.clear()
    node.global_steps += 1
    return sigma, delta2


def default_anneal_steps(n_total: int, M: int, b: int) -> float:
    return n_total / (2.0 * M * b)


def _make_controller(m: int, d: int, cfg: Alg2Config, root: RngStream,
                     ctrl_cfg: ControllerConfig) -> DeepQController:
    return DeepQController(d + 2, root.child("ctrl", m), ctrl_cfg)


def run_alg2(task, partition, cfg: Alg2Config, w0: np.ndarray | None = None,
             controller_factory: Callable[[int, int], DeepQController] | None = None,
             w_star: np.ndarray | None = None) -> Alg2Result:
    """One pass of the adaptive algorithm.

    ``sequential`` mode lets one node act per tick in round-robin order;
    ``parallel`` mode lets every live node act once per tick, serialized by
    node index. ``w_star`` enables tracking of
    ``sum_m ||w_m - w*||^2 + ||w_G - w*||^2`` after every tick.
    """
    if cfg.policy not in POLICIES:
        raise ValueError(f"unknown policy {cfg.policy!r}")
    if cfg.mode not in ("sequential", "parallel"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    d = task.X.shape[1]
    lam = cfg.params.lam
    root = RngStream(cfg.seed)
    cursors = make_cursors(partition, cfg.b, root)
    noise_rng = root.child("noise")
    sched = NodeScheduler("round_robin", cfg.M, root.child("sched"))
    start = np.zeros(d) if w0 is None else np.array(w0, dtype=np.float64)
    registry = GlobalRegistry(start.copy())
    ledger = PrivacyLedger(limit=1)

    ctrl_cfg = cfg.controller or ControllerConfig(
        anneal_steps=default_anneal_steps(partition.total, cfg.M, cfg.b))
    nodes = []
    for m in range(cfg.M):
        ctrl = None
        if cfg.policy == "dqn":
            ctrl = controller_factory(m, d) if controller_factory else \
                _make_controller(m, d, cfg, root, ctrl_cfg)
        nodes.append(Alg2NodeState(m, start.copy(), cursors[m], ctrl))

    actions: list[ActionLog] = []
    g_sum = np.zeros(d)
    l_sum = np.zeros((cfg.M, d))
    traj: list[np.ndarray] = []
    distances: list[float] = [] if w_star is not None else None

    def act(node: Alg2NodeState, t: int) -> None:
        batch = node.cursor.next_batch()
        X, y = task.X[batch], task.y[batch]
        eta = cfg.eta(t)
        ctrl = node.controller
        state = None
        if ctrl is not None:
            state = build_state(node.w_local, mean_loss(node.w_local, X, y, lam))
            if node.prev is not None:
                p_state, p_action, p_batch = node.prev
                reward = -mean_loss(node.w_local, task.X[p_batch], task.y[p_batch], lam)
                ctrl.trace[-1].reward = reward
                ctrl.record_and_train(Transition(p_state, p_action, reward, state, False))
            action = ctrl.select_action(state)
        else:
            action = GLOBAL if cfg.policy == "global" else LOCAL

        window_len = len(node.window)
        if action == LOCAL:
            alg2_local_step(node, batch, task, eta, cfg.params, ledger)
            sigma, delta2 = 0.0, 0.0
        else:
            sigma, delta2 = alg2_global_step(registry, node, batch, task, eta, cfg, ledger, noise_rng)
        actions.append(ActionLog(t, node.node, action, eta, sigma, window_len, delta2))

        if ctrl is not None:
            node.prev = (state, action, batch)
            if node.cursor.exhausted:
                # last batch of the pass closes the episode
                final_loss = mean_loss(node.w_local, X, y, lam)
                ctrl.trace[-1].reward = -final_loss
                ctrl.record_and_train(Transition(state, action, -final_loss,
                                                 build_state(node.w_local, final_loss), True))
                node.prev = None

    def after_tick() -> None:
        nonlocal g_sum, l_sum
        g_sum += registry.w
        l_sum += np.stack([nd.w_local for nd in nodes])
        if cfg.keep_trajectory:
            traj.append(registry.w)
        if distances is not None:
            dist = sum(float(np.sum((nd.w_local - w_star) ** 2)) for nd in nodes)
            distances.append(dist + float(np.sum((registry.w - w_star) ** 2)))

    t = 0
    if cfg.mode == "sequential":
        while (m := sched.pick([not c.exhausted for c in cursors])) is not None:
            t += 1
            act(nodes[m], t)
            after_tick()
    else:
        while any(not c.exhausted for c in cursors):
            t += 1
            for nd in nodes:
                if not nd.cursor.exhausted:
                    act(nd, t)
            after_tick()

    ticks = max(t, 1)
    counts = np.array([nd.local_steps + nd.global_steps for nd in nodes], dtype=float)
    p_global = np.array([nd.global_steps for nd in nodes], dtype=float) / np.maximum(counts, 1)
    return Alg2Result(
        global_final=registry.w, global_average=g_sum / ticks,
        local_finals=np.stack([nd.w_local for nd in nodes]), local_averages=l_sum / ticks,
        actions=actions, ledger=ledger, p_global=p_global,
        global_trajectory=np.array(traj) if cfg.keep_trajectory else None,
        distances=distances, controllers=[nd.controller for nd in nodes])


def write_action_log_csv(path, actions: list[ActionLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "node", "action", "eta", "sigma", "window_len"])
        for a in actions:
            writer.writerow([a.tick, a.node, ACTION_NAMES[a.action], repr(a.eta), repr(a.sigma),
                             a.window_len])


@dataclass
class Dpsgd5Config:
    M: int
    b: int
    privacy: PrivacySpec | None = None
    params: LossParams = field(default_factory=LossParams)
    seed: int = 0
    passes: int = 5
    noise_norm_mode: str = "per_coordinate"


def run_dpsgd5_baseline(task, partition, cfg: Dpsgd5Config) -> TrainResult:
    """Random-walk global updates with a per-step budget of (eps/5, delta/5).

    Each step a node is drawn uniformly among those with budget left; it takes
    a noisy step at rate ``1/sqrt(t)`` on its next batch. A node reshuffles
    its data after each pass and retires after ``passes`` passes.
    """
    d = task.X.shape[1]
    root = RngStream(cfg.seed)
    step_spec = cfg.privacy.split(cfg.passes) if cfg.privacy is not None else None
    walk = root.child("walk")
    noise_rng = root.child("noise")
    schedule = Schedule("inv_sqrt")
    cursors = [PermutationCursor(idx, cfg.b, root.child("perm", m, 0))
               for m, idx in enumerate(partition.nodes)]
    passes_done = [0] * cfg.M
    registry = GlobalRegistry(np.zeros(d))
    ledger = PrivacyLedger(limit=cfg.passes)
    steps: list[StepLog] = []
    running = np.zeros(d)
    while True:
        for m in range(cfg.M):
            if cursors[m].exhausted and passes_done[m] < cfg.passes:
                passes_done[m] += 1
                if passes_done[m] < cfg.passes:
                    cursors[m] = PermutationCursor(partition.nodes[m], cfg.b,
                                                   root.child("perm", m, passes_done[m]))
        live = [m for m in range(cfg.M) if passes_done[m] < cfg.passes]
        if not live:
            break
        m = live[int(walk.integers(len(live)))]
        batch = cursors[m].next_batch()
        t = registry.t + 1
        eta = schedule(t)
        ledger.record(batch)
        w_new, sigma = noisy_gradient_step(registry.w, task.X[batch], task.y[batch], eta,
                                           cfg.params, step_spec, noise_rng, cfg.noise_norm_mode)
        if step_spec is not None:
            ledger.record_step(t, step_spec, sigma)
        registry.commit(w_new, m)
        steps.append(StepLog(t, m, eta, sigma, len(batch)))
        running += registry.w
    return TrainResult(final=registry.w, average=running / max(len(steps), 1),
                       ledger=ledger, steps=steps)
