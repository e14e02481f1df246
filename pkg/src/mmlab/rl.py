"""Replay memory, epsilon-greedy control and the DQN / two-head MORL learners.

A learner with one head is plain DQN. With two heads it is the dual-network
MORL agent: head ``k`` regresses on reward component ``k`` only, and actions
are chosen greedily on ``w * Q1 + (1 - w) * Q2``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .neural import NetSpec, QNetwork, estimate_fisher_diag, forward, layer_freeze_mask, load_params, save_params
from .policies import N_ACTIONS, RunningScaler

log = logging.getLogger(__name__)

REPLAY_CAPACITY = 1_000_000


class ReplayBuffer:
    """Ring buffer of ``(s, a, s_next, r)`` with overwrite-oldest semantics.

    Storage grows geometrically up to ``capacity`` so small runs stay small.
    """

    def __init__(self, state_arity: int, reward_dim: int = 1, capacity: int = REPLAY_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.state_arity = state_arity
        self.reward_dim = reward_dim
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self._alloc(min(capacity, 4096))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "s", None)
        s = np.zeros((n, self.state_arity))
        s2 = np.zeros((n, self.state_arity))
        a = np.zeros(n, dtype=np.int64)
        r = np.zeros((n, self.reward_dim))
        if old is not None:
            k = self.size
            s[:k], s2[:k], a[:k], r[:k] = self.s[:k], self.s_next[:k], self.a[:k], self.r[:k]
        self.s, self.s_next, self.a, self.r = s, s2, a, r

    def __len__(self) -> int:
        return self.size

    def push(self, s, a: int, s_next, r) -> None:
        if self._next == len(self.a) and len(self.a) < self.capacity:
            self._alloc(min(self.capacity, 2 * len(self.a)))
        i = self._next
        self.s[i] = s
        self.s_next[i] = s_next
        self.a[i] = a
        self.r[i] = r
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, k: int, stream: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if self.size >= k:
            return stream.choice(self.size, size=k, replace=False)
        return stream.integers(self.size, size=k)

    def take(self, idx: np.ndarray):
        return self.s[idx], self.a[idx], self.s_next[idx], self.r[idx]

    def sample(self, k: int, stream: np.random.Generator):
        return self.take(self.indices(k, stream))


def buffer_push(buf: ReplayBuffer, transition) -> None:
    buf.push(*transition)


def buffer_sample(buf: ReplayBuffer, k: int, stream: np.random.Generator):
    return buf.sample(k, stream)


def rehearsal_split(gamma_mix: float, k: int) -> Tuple[int, int]:
    """(old, new) counts: ``round(gamma_mix * k)`` old, the rest new."""
    if not 0.0 <= gamma_mix <= 1.0:
        raise ValueError("gamma_mix must lie in [0, 1]")
    n_old = min(k, int(np.floor(gamma_mix * k + 0.5)))
    return n_old, k - n_old


def rehearsal_sample(old_buf: Optional[ReplayBuffer], new_buf: ReplayBuffer, gamma_mix: float, k: int, stream):
    """Mix ``k`` transitions from an old-context and a new-context buffer."""
    n_old, n_new = rehearsal_split(gamma_mix, k)
    old_empty = old_buf is None or len(old_buf) == 0
    if n_old and old_empty:
        log.warning("rehearsal: old buffer empty, drawing all %d samples from the new buffer", k)
        n_old, n_new = 0, k
    elif n_new and len(new_buf) == 0:
        log.warning("rehearsal: new buffer empty, drawing all %d samples from the old buffer", k)
        n_old, n_new = k, 0
    parts = []
    if n_old:
        parts.append(old_buf.sample(n_old, stream))
    if n_new:
        parts.append(new_buf.sample(n_new, stream))
    return tuple(np.concatenate(cols) for cols in zip(*parts))


@dataclass
class EpsSchedule:
    """Per-session geometric decay from ``start`` to ``floor`` over ``n_sessions``."""

    start: float = 0.99
    floor: float = 0.01
    n_sessions: int = 250

    def __post_init__(self):
        if not 0 <= self.floor <= self.start <= 1:
            raise ValueError("need 0 <= floor <= start <= 1")
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")

    @property
    def decay(self) -> float:
        if self.n_sessions == 1 or self.start == 0:
            return 1.0
        return (self.floor / self.start) ** (1.0 / (self.n_sessions - 1))

    def value(self, session: int) -> float:
        return max(self.floor, self.start * self.decay**session)


def select_action(q_values: np.ndarray, eps: float, stream: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if stream.random() < eps:
        return int(stream.integers(len(q_values)))
    return int(np.argmax(q_values))


def blend(q1: np.ndarray, q2: np.ndarray, w: float) -> np.ndarray:
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    return w * q1 + (1.0 - w) * q2


def morl_select_action(q1, q2, w: float, eps: float, stream) -> int:
    return select_action(blend(q1, q2, w), eps, stream)


@dataclass
class LearnerConfig:
    """Hyperparameters of a (possibly two-headed) Q-learner.

    Args:
        gamma: discount factor.
        lr: Adam learning rate.
        train_every: global steps between fits.
        batch_size: transitions sampled per fit.
        sgd_batch: minibatch of each Adam step inside a fit; one fit makes
            ``ceil(batch_size / sgd_batch)`` steps. ``None`` means one
            full-batch step.
        epochs: passes over the sampled batch per fit.
        loss: ``"mae"`` or ``"mse"``.
        reward_scale: multiplier applied to stored rewards when forming targets.
        hidden: hidden layer widths.
        eps_start, eps_floor: exploration schedule bounds.
        capacity: replay capacity.
        scale_states: standardize states online.
    """

    gamma: float = 0.6
    lr: float = 0.01
    train_every: int = 200
    batch_size: int = 1024
    sgd_batch: Optional[int] = 32
    epochs: int = 1
    loss: str = "mae"
    reward_scale: float = 0.01
    hidden: Tuple[int, ...] = (32, 32, 32)
    eps_start: float = 0.99
    eps_floor: float = 0.01
    capacity: int = REPLAY_CAPACITY
    scale_states: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.train_every < 1 or self.batch_size < 1:
            raise ValueError("train_every and batch_size must be positive")


class QLearner:
    """DQN (one head) or dual-network MORL (two heads) with target networks.

    Args:
        state_arity: length of raw state vectors.
        cfg: hyperparameters.
        stream: generator used for init, exploration and replay sampling.
        n_heads: 1 for scalar rewards, 2 for the MORL reward vector.
        w: action-selection weight on head 1 (ignored with one head).
        n_sessions: sessions over which epsilon decays to its floor.
    """

    def __init__(
        self,
        state_arity: int,
        cfg: LearnerConfig,
        stream: np.random.Generator,
        n_heads: int = 1,
        w: float = 1.0,
        n_sessions: int = 250,
    ):
        if n_heads not in (1, 2):
            raise ValueError("n_heads must be 1 or 2")
        self.cfg = cfg
        self.stream = stream
        self.n_heads = n_heads
        self.w = w
        self.spec = NetSpec.mm(state_arity, N_ACTIONS, cfg.hidden)
        self.heads = [QNetwork(self.spec, stream, cfg.lr, cfg.loss) for _ in range(n_heads)]
        self.targets = [h.copy_params() for h in self.heads]
        self.scaler = RunningScaler(state_arity)
        self.buffer = ReplayBuffer(state_arity, n_heads, cfg.capacity)
        self.schedule = EpsSchedule(cfg.eps_start, cfg.eps_floor, n_sessions)
        self.old_buffer: Optional[ReplayBuffer] = None
        self.gamma_mix = 0.0
        self.global_step = 0
        self.session = 0
        self.n_fits = 0
        self.learning = True
        self.eps_override: Optional[float] = None

    # -- acting -----------------------------------------------------------
    @property
    def eps(self) -> float:
        if self.eps_override is not None:
            return self.eps_override
        return self.schedule.value(self.session)

    def _scaled(self, s: np.ndarray) -> np.ndarray:
        return self.scaler.apply(s) if self.cfg.scale_states else s

    def q_values(self, s_raw: np.ndarray) -> np.ndarray:
        x = self._scaled(s_raw)
        qs = [h(x) for h in self.heads]
        return qs[0] if self.n_heads == 1 else blend(qs[0], qs[1], self.w)

    def act(self, s_raw: np.ndarray, explore: bool = True) -> int:
        if self.learning and self.cfg.scale_states:
            self.scaler.update(s_raw)
        q = self.q_values(s_raw)
        return select_action(q, self.eps if explore else 0.0, self.stream)

    # -- learning ---------------------------------------------------------
    def observe(self, s_raw, a: int, s_next_raw, r) -> Optional[List[float]]:
        """Store a transition; fits when the global step hits the cadence."""
        self.buffer.push(s_raw, a, s_next_raw, r)
        self.global_step += 1
        if self.global_step % self.cfg.train_every == 0:
            return self.train_step()
        return None

    def end_session(self) -> None:
        self.session += 1

    def _sample(self):
        k = self.cfg.batch_size
        if self.old_buffer is not None and len(self.old_buffer) and self.gamma_mix > 0:
            return rehearsal_sample(self.old_buffer, self.buffer, self.gamma_mix, k, self.stream)
        return self.buffer.sample(k, self.stream)

    def train_step(self) -> List[float]:
        """One fit of every head on a shared minibatch, then target sync."""
        s, a, s2, r = self._sample()
        x, x2 = self._scaled(s), self._scaled(s2)
        losses = []
        for k, head in enumerate(self.heads):
            q_next = forward(self.spec, self.targets[k], x2).max(axis=1)
            y = r[:, k] * self.cfg.reward_scale + self.cfg.gamma * q_next
            losses.append(self._fit(head, x, a, y))
        for k, head in enumerate(self.heads):
            self.targets[k] = head.copy_params()
        self.n_fits += 1
        return losses

    def _fit(self, head: QNetwork, x, a, y) -> float:
        n = len(a)
        mb = n if self.cfg.sgd_batch is None else self.cfg.sgd_batch
        losses = []
        for _ in range(self.cfg.epochs):
            order = self.stream.permutation(n) if mb < n else np.arange(n)
            for lo in range(0, n, mb):
                idx = order[lo : lo + mb]
                losses.append(head.fit_step(x[idx], a[idx], y[idx]))
        return float(np.mean(losses))

    # -- continual learning hooks ----------------------------------------
    def freeze_layers(self, layers: Sequence[int]) -> None:
        mask = layer_freeze_mask(self.spec, layers)
        for h in self.heads:
            h.freeze_mask = mask

    def anchor_ewc(self, lam: float, n_samples: int = 1024) -> None:
        """Capture theta* and a Fisher diagonal from the current replay contents."""
        s, a, s2, r = self.buffer.sample(min(n_samples, max(1, len(self.buffer))), self.stream)
        x, x2 = self._scaled(s), self._scaled(s2)
        for k, h in enumerate(self.heads):
            y = r[:, k] * self.cfg.reward_scale + self.cfg.gamma * forward(self.spec, self.targets[k], x2).max(axis=1)
            fisher = estimate_fisher_diag(self.spec, h.params, x, a, y, "mse")
            h.ewc = (h.copy_params(), fisher, lam)

    def start_rehearsal(self, gamma_mix: float) -> None:
        """Keep the current memory as the old-context buffer and start a fresh one."""
        self.old_buffer = self.buffer
        self.buffer = ReplayBuffer(self.buffer.state_arity, self.n_heads, self.cfg.capacity)
        self.gamma_mix = gamma_mix

    # -- snapshots and persistence ----------------------------------------
    def snapshot(self) -> "GreedyPolicy":
        return GreedyPolicy(self.spec, [h.copy_params() for h in self.heads], self.scaler.copy(), self.w, self.cfg.scale_states)

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for k, h in enumerate(self.heads):
            save_params(os.path.join(directory, f"head{k}.npz"), self.spec, h.params)
        meta = {"n_heads": self.n_heads, "w": self.w, "scaler": self.scaler.state_dict(), "config": asdict(self.cfg)}
        with open(os.path.join(directory, "learner.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)


class GreedyPolicy:
    """Frozen greedy evaluator: copied params and a frozen state scaler."""

    def __init__(self, spec: NetSpec, heads: Sequence[np.ndarray], scaler: RunningScaler, w: float = 1.0, scale_states: bool = True):
        self.spec = spec
        self.heads = list(heads)
        self.scaler = scaler
        self.w = w
        self.scale_states = scale_states

    def q_values(self, s_raw: np.ndarray) -> np.ndarray:
        x = self.scaler.apply(s_raw) if self.scale_states else s_raw
        qs = [forward(self.spec, p, x) for p in self.heads]
        return qs[0] if len(qs) == 1 else blend(qs[0], qs[1], self.w)

    def act(self, s_raw: np.ndarray) -> int:
        return int(np.argmax(self.q_values(s_raw)))

    def with_weight(self, w: float) -> "GreedyPolicy":
        return GreedyPolicy(self.spec, self.heads, self.scaler, w, self.scale_states)

    @classmethod
    def load(cls, directory) -> "GreedyPolicy":
        with open(os.path.join(directory, "learner.json")) as fh:
            meta = json.load(fh)
        heads, spec = [], None
        for k in range(meta["n_heads"]):
            spec, p = load_params(os.path.join(directory, f"head{k}.npz"), spec)
            heads.append(p)
        return cls(spec, heads, RunningScaler.from_state(meta["scaler"]), meta["w"], meta["config"]["scale_states"])


def dqn_train_step(agent: QLearner) -> float:
    return agent.train_step()[0]


def morl_train_step(agent: QLearner) -> Tuple[float, float]:
    l1, l2 = agent.train_step()
    return l1, l2
