"""Policy weighting through discounted Thompson sampling (POW-dTS).

A library of frozen policies shares the trading clock. Every ``rounds_exp``
rounds a recalibration phase lets each policy act for ``rounds_recal`` steps in
turn; the policy with the largest summed reward is the winner. A discounted
Beta bandit over the library is then updated and its posterior means become
weights, which carve the exploitation horizon ``exp_ts`` into one contiguous
section per policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


@dataclass
class PowDtsCfg:
    alpha_inc: float = 1.0
    beta_inc: float = 1.0
    gamma: float = 0.4
    rounds_exp: int = 3
    rounds_recal: int = 150
    exp_ts: int = 750

    def __post_init__(self):
        if self.alpha_inc < 0 or self.beta_inc < 0:
            raise ValueError("increments must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.rounds_exp < 1 or self.rounds_recal < 1 or self.exp_ts < 1:
            raise ValueError("round counts and horizon must be positive")


Coefs = List[Tuple[float, float]]
Sections = List[Tuple[int, int]]


def initial_coefs(n: int) -> Coefs:
    if n < 1:
        raise ValueError("library must be non-empty")
    return [(1.0, 1.0)] * n


def sample_best(coefs: Sequence[Tuple[float, float]], stream: np.random.Generator) -> int:
    """Draw one Beta(a, b) per policy and return the argmax (lowest index on ties)."""
    if not coefs:
        raise ValueError("coefs must be non-empty")
    draws = [stream.beta(a, b) for a, b in coefs]
    return int(np.argmax(draws))


def update_coefs(coefs: Sequence[Tuple[float, float]], winner_idx: int, sampled_idx: int, cfg: PowDtsCfg) -> Coefs:
    """Discounted success/failure update; only the winner gets an increment."""
    n = len(coefs)
    if not (0 <= winner_idx < n and 0 <= sampled_idx < n):
        raise ValueError("policy index out of range")
    g = cfg.gamma
    out = []
    for i, (a, b) in enumerate(coefs):
        if i == winner_idx:
            if sampled_idx == winner_idx:
                a, b = g * (a + cfg.alpha_inc), g * b
            else:
                a, b = g * a, g * (b + cfg.beta_inc)
        else:
            a, b = g * a, g * b
        out.append((a, b))
    return out


def weights_from_coefs(coefs: Sequence[Tuple[float, float]]) -> np.ndarray:
    means = np.array([a / (a + b) for a, b in coefs], dtype=float)
    return means / means.sum()


def sections_from_weights(weights: Sequence[float], exp_ts: int) -> Sections:
    """Contiguous half-open sections with ends ``round(exp_ts * cumsum(w))`` (half up).

    Rounding the running boundary rather than each length keeps the sections
    an exact partition of ``[0, exp_ts)``.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) == 0:
        raise ValueError("weights must be non-empty")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    ends = [min(exp_ts, math.floor(exp_ts * c + 0.5)) for c in np.cumsum(w)]
    ends[-1] = exp_ts
    secs, start = [], 0
    for e in ends:
        e = max(e, start)
        secs.append((start, e))
        start = e
    return secs


def agent_for_timestep(secs: Sequence[Tuple[int, int]], ts: int) -> int:
    """Index of the section containing ``ts`` (wrapped modulo the horizon)."""
    horizon = secs[-1][1]
    ts = ts % horizon
    for i, (lo, hi) in enumerate(secs):
        if lo <= ts < hi:
            return i
    raise ValueError(f"time step {ts} outside every section")


def winner_of(results: Sequence[float]) -> int:
    return int(np.argmax(results))


@dataclass
class RecalRecord:
    round: int
    test_rewards: List[float]
    winner: int
    sampled: int
    coefs: Coefs
    weights: List[float]
    sections: Sections

    def as_dict(self) -> dict:
        return {
            "round": self.round,
            "test_rewards": self.test_rewards,
            "winner": self.winner,
            "sampled": self.sampled,
            "coefs": [list(c) for c in self.coefs],
            "weights": self.weights,
            "sections": [list(s) for s in self.sections],
        }


class PowDtsScheduler:
    """Step-driven scheduler deciding which library policy acts.

    Call :meth:`start_round` at the beginning of each round (session), then per
    step :meth:`current` to get the acting policy and :meth:`record` with the
    reward it earned.
    """

    def __init__(self, n_policies: int, cfg: PowDtsCfg, stream: np.random.Generator):
        self.n = n_policies
        self.cfg = cfg
        self.stream = stream
        self.coefs = initial_coefs(n_policies)
        self.weights = np.full(n_policies, 1.0 / n_policies)
        self.secs = sections_from_weights(self.weights, cfg.exp_ts)
        self.recal = False
        self.ts_recal = 0
        self.ts_test = 0
        self.results = [0.0] * n_policies
        self.round = -1
        self.history: List[RecalRecord] = []

    def start_round(self, round_idx: Optional[int] = None) -> None:
        self.round = self.round + 1 if round_idx is None else round_idx
        if self.round % self.cfg.rounds_exp == 0:
            self.recal = True
            self.ts_recal = 0
            self.ts_test = 0
            self.results = [0.0] * self.n

    def current(self) -> int:
        if self.recal:
            return self.ts_recal // self.cfg.rounds_recal
        return agent_for_timestep(self.secs, self.ts_test)

    @property
    def in_recalibration(self) -> bool:
        return self.recal

    def record(self, reward: float) -> None:
        if self.recal:
            self.results[self.current()] += float(reward)
            self.ts_recal += 1
            if self.ts_recal == self.n * self.cfg.rounds_recal:
                self._recalibrate()
        else:
            self.ts_test += 1

    def _recalibrate(self) -> None:
        self.recal = False
        winner = winner_of(self.results)
        sampled = sample_best(self.coefs, self.stream)
        self.coefs = update_coefs(self.coefs, winner, sampled, self.cfg)
        self.weights = weights_from_coefs(self.coefs)
        self.secs = sections_from_weights(self.weights, self.cfg.exp_ts)
        self.history.append(
            RecalRecord(self.round, list(self.results), winner, sampled, list(self.coefs), self.weights.tolist(), list(self.secs))
        )


def powdts_run(
    step_fn: Callable[[int, int], float],
    n_policies: int,
    cfg: PowDtsCfg,
    stream: np.random.Generator,
    n_rounds: int,
    steps_per_round: int,
) -> Tuple[List[float], List[int], List[RecalRecord]]:
    """Drive ``step_fn(policy_idx, round_idx) -> reward`` for ``n_rounds`` rounds.

    Returns the per-step rewards, the acting policy per step and the
    recalibration records.
    """
    sched = PowDtsScheduler(n_policies, cfg, stream)
    rewards, acting = [], []
    for r in range(n_rounds):
        sched.start_round(r)
        for _ in range(steps_per_round):
            i = sched.current()
            rew = step_fn(i, r)
            sched.record(rew)
            rewards.append(rew)
            acting.append(i)
    return rewards, acting, sched.history
