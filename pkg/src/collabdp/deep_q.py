"""Per-node deep-Q controller that picks Local or Global updates.

The Q-network is input(d+2) -> hidden(128) -> output(2) with linear
activations throughout, trained by Adam on replayed transitions against a
periodically synced target network.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from .linalg import RngStream

LOCAL = 0
GLOBAL = 1
ACTION_NAMES = ("Local", "Global")


@dataclass
class QNetwork:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def glorot(cls, input_dim: int, hidden: int, rng: RngStream, outputs: int = 2) -> "QNetwork":
        def uniform(fan_out, fan_in):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return (2.0 * rng.uniform(fan_out * fan_in) - 1.0).reshape(fan_out, fan_in) * limit
        return cls(uniform(hidden, input_dim), np.zeros(hidden),
                   uniform(outputs, hidden), np.zeros(outputs))

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = 128, outputs: int = 2) -> "QNetwork":
        return cls(np.zeros((hidden, input_dim)), np.zeros(hidden),
                   np.zeros((outputs, hidden)), np.zeros(outputs))

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "QNetwork":
        return QNetwork(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def forward(self, states: np.ndarray) -> np.ndarray:
        """Q-values for a single state (shape (2,)) or a batch (shape (n, 2))."""
        s = np.asarray(states, dtype=np.float64)
        if s.shape[-1] != self.input_dim:
            raise ValueError(f"state has length {s.shape[-1]}, network expects {self.input_dim}")
        hidden = s @ self.W1.T + self.b1
        return hidden @ self.W2.T + self.b2


def q_forward(net: QNetwork, state_vec) -> tuple[float, float]:
    q = net.forward(np.asarray(state_vec, dtype=np.float64))
    return float(q[LOCAL]), float(q[GLOBAL])


def build_state(w_local, batch_loss: float) -> np.ndarray:
    """``[w, loss, 1]``: the model, its loss on the current batch and a bias input."""
    w = np.asarray(w_local, dtype=np.float64)
    return np.concatenate([w, [float(batch_loss), 1.0]])


def anneal_explr(step: int, total_anneal_steps: float, start: float = 1.0,
                 end: float = 0.1) -> float:
    """Linear decay from ``start`` to ``end`` over ``total_anneal_steps``, flat after."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if total_anneal_steps <= 0:
        return end
    frac = min(step / total_anneal_steps, 1.0)
    return start + (end - start) * frac


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool = False


class ReplayMemory:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int = 20):
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, tr: Transition) -> None:
        self.items.append(tr)

    def sample(self, k: int, rng: RngStream) -> list[Transition]:
        if k >= len(self.items):
            return list(self.items)
        return [self.items[i] for i in rng.choice(len(self.items), k)]


def td_targets(transitions: list[Transition], target: QNetwork, gamma_dq: float) -> np.ndarray:
    """``r`` for terminal transitions, ``r + gamma max_a Q'(s', a)`` otherwise."""
    rewards = np.array([tr.reward for tr in transitions])
    next_q = target.forward(np.stack([tr.next_state for tr in transitions])).max(axis=1)
    terminal = np.array([tr.terminal for tr in transitions])
    return np.where(terminal, rewards, rewards + gamma_dq * next_q)


def squared_td_loss(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                    targets: np.ndarray) -> float:
    q = net.forward(states)[np.arange(len(actions)), actions]
    return float(np.sum((targets - q) ** 2))


def squared_td_grad(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                    targets: np.ndarray) -> list[np.ndarray]:
    """Gradients of :func:`squared_td_loss` w.r.t. (W1, b1, W2, b2)."""
    hidden = states @ net.W1.T + net.b1
    q = hidden @ net.W2.T + net.b2
    rows = np.arange(len(actions))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * (q[rows, actions] - targets)
    gW2 = dq.T @ hidden
    gb2 = dq.sum(axis=0)
    dh = dq @ net.W2
    gW1 = dh.T @ states
    gb1 = dh.sum(axis=0)
    return [gW1, gb1, gW2, gb2]


class Adam:
    def __init__(self, shapes, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class ControllerConfig:
    hidden: int = 128
    memory: int = 20
    replay_batch: int = 10
    gamma_dq: float = 0.9
    lr: float = 0.01
    sync_every: int = 50
    anneal_steps: float = 1.0
    explr_start: float = 1.0
    explr_end: float = 0.1


@dataclass
class TraceRow:
    step: int
    p_explr: float
    q_local: float
    q_global: float
    action: int
    reward: float | None = None


class DeepQController:
    """Online/target Q-networks, replay memory and epsilon-greedy policy for one node."""

    def __init__(self, input_dim: int, rng: RngStream, config: ControllerConfig | None = None):
        self.config = config or ControllerConfig()
        self.rng = rng
        self.online = QNetwork.glorot(input_dim, self.config.hidden, rng.child("init"))
        self.target = self.online.copy()
        self.adam = Adam([a.shape for a in self.online.arrays()], lr=self.config.lr)
        self.memory = ReplayMemory(self.config.memory)
        self.decisions = 0
        self.train_steps = 0
        self.trace: list[TraceRow] = []

    @property
    def p_explr(self) -> float:
        c = self.config
        return anneal_explr(self.decisions, c.anneal_steps, c.explr_start, c.explr_end)

    def select_action(self, state: np.ndarray) -> int:
        p = self.p_explr
        q_local, q_global = q_forward(self.online, state)
        if self.rng.uniform() < p:
            action = int(self.rng.integers(2))
        else:
            action = GLOBAL if q_global > q_local else LOCAL
        self.trace.append(TraceRow(self.decisions, p, q_local, q_global, action))
        self.decisions += 1
        return action

    def record_and_train(self, transition: Transition) -> None:
        self.memory.push(transition)
        batch = self.memory.sample(self.config.replay_batch, self.rng)
        states = np.stack([tr.state for tr in batch])
        actions = np.array([tr.action for tr in batch], dtype=np.int64)
        targets = td_targets(batch, self.target, self.config.gamma_dq)
        grads = squared_td_grad(self.online, states, actions, targets)
        self.adam.step(self.online.arrays(), grads)
        self.train_steps += 1
        if self.train_steps % self.config.sync_every == 0:
            self.target = self.online.copy()


def select_action(ctrl: DeepQController, state_vec) -> int:
    return ctrl.select_action(np.asarray(state_vec, dtype=np.float64))


def record_and_train(ctrl: DeepQController, transition: Transition) -> DeepQController:
    ctrl.record_and_train(transition)
    return ctrl


def write_trace_csv(path, rows: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "p_explr", "q_local", "q_global", "action", "reward"])
        for r in rows:
            writer.writerow([r.step, repr(r.p_explr), repr(r.q_local), repr(r.q_global),
                             ACTION_NAMES[r.action], "" if r.reward is None else repr(r.reward)])
