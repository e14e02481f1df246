"""Reward functions for the market-making agents.

All inputs are integer ticks; outputs are floats in ticks. Inventory terms use
the inventory held after the step's trades and hedge.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, NamedTuple

import numpy as np

FULL_INV_LAMBDA = 0.15
ASYM_DAMP_ETA = 0.1
MORL_ALPHA = 5.0
RIM_WINDOW = 20


class RewardTerms(NamedTuple):
    """Per-step components: earnings, inventory PnL, hedge cost, RIM penalty."""

    E: float
    PnL: float
    HgC: float
    Pny: float = 0.0


class RewardVector(NamedTuple):
    r1: float
    r2: float


@dataclass
class AIIFConfig:
    aiif: float = 0.0
    ditf: float = 0.5
    window: int = RIM_WINDOW

    def __post_init__(self):
        if self.aiif < 0:
            raise ValueError("aiif must be >= 0")
        if self.ditf <= 0:
            raise ValueError("ditf must be > 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class ThresholdState:
    """Rolling mids, thresholds and absolute inventories over the last ``window`` steps."""

    window: int = RIM_WINDOW
    mids: Deque[float] = field(default_factory=deque)
    thresholds: Deque[float] = field(default_factory=deque)
    inventories: Deque[float] = field(default_factory=deque)

    def __post_init__(self):
        self.mids = deque(self.mids, maxlen=self.window)
        self.thresholds = deque(self.thresholds, maxlen=self.window)
        self.inventories = deque(self.inventories, maxlen=self.window)


def reward_single(terms: RewardTerms) -> float:
    return float(terms.E + terms.PnL - terms.HgC)


def dynamic_threshold(cash: float, rolling_mids, ditf: float) -> float:
    """``ditf * |cash / mean(mids)|``: the inventory a cash balance can comfortably carry."""
    if len(rolling_mids) == 0:
        raise ValueError("need at least one mid")
    mean_mid = float(np.mean(rolling_mids))
    if mean_mid == 0:
        raise ValueError("mean mid must be non-zero")
    return ditf * abs(cash / mean_mid)


def rim_penalty(r_mtm: float, mean_abs_inv: float, mean_thr: float, aiif: float) -> float:
    """Penalty ``aiif * min(|R|, |R * inv / thr|)``; a zero threshold takes the ``|R|`` branch."""
    if mean_thr < 0:
        raise ValueError("mean threshold must be >= 0")
    r = abs(r_mtm)
    if mean_thr == 0:
        return aiif * r
    return aiif * min(r, abs(r * mean_abs_inv / mean_thr))


def reward_rim(terms: RewardTerms, state: ThresholdState, cfg: AIIFConfig, *, cash: float, mid: float, inv: float) -> float:
    """Single-objective reward minus the inventory penalty.

    Pushes ``mid``, then the threshold computed from ``cash`` over the updated
    mid window, then ``|inv|`` into ``state`` before evaluating the penalty.
    """
    state.mids.append(float(mid))
    state.thresholds.append(dynamic_threshold(cash, state.mids, cfg.ditf))
    state.inventories.append(abs(float(inv)))
    r = reward_single(terms)
    if cfg.aiif == 0:
        return r
    pny = rim_penalty(r, float(np.mean(state.inventories)), float(np.mean(state.thresholds)), cfg.aiif)
    return r - pny


def reward_full_inv(E: float, inv: float, HgC: float, lam: float = FULL_INV_LAMBDA) -> float:
    return float(E - lam * abs(inv) - HgC)


def reward_asym_damp(E: float, PnL: float, HgC: float, eta: float = ASYM_DAMP_ETA) -> float:
    return float(E + PnL - max(0.0, eta * PnL) - HgC)


def reward_pnl_only(E: float, HgC: float) -> float:
    return float(E - HgC)


def reward_morl_vector(terms: RewardTerms, inv: float, alpha: float = MORL_ALPHA) -> RewardVector:
    return RewardVector(float(terms.E + terms.PnL - terms.HgC), float(-alpha * abs(inv) - terms.HgC))


def reward_rew(terms: RewardTerms, inv: float, w: float, alpha: float = MORL_ALPHA) -> float:
    """Weighted scalarization ``w * r1 + (1 - w) * r2`` of the MORL vector."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    r1, r2 = reward_morl_vector(terms, inv, alpha)
    return w * r1 + (1.0 - w) * r2


REWARD_KINDS = ("single", "rim", "full_inv", "asym_damp", "pnl_only", "rew", "morl")


@dataclass
class RewardFunction:
    """Stateful wrapper that evaluates the configured reward kind each step.

    Args:
        kind: one of ``REWARD_KINDS``.
        aiif: RIM risk aversion (``rim`` only).
        ditf: RIM threshold factor.
        window: RIM rolling window.
        lam: Full-Inv penalty per share.
        eta: Asym-Damp factor.
        w: RE-W weight on the MtM objective.
        alpha: inventory weight in the MORL vector and RE-W.
    """

    kind: str = "single"
    aiif: float = 0.0
    ditf: float = 0.5
    window: int = RIM_WINDOW
    lam: float = FULL_INV_LAMBDA
    eta: float = ASYM_DAMP_ETA
    w: float = 0.5
    alpha: float = MORL_ALPHA

    def __post_init__(self):
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        self._cfg = AIIFConfig(self.aiif, self.ditf, self.window)
        self.reset()

    @property
    def vector_valued(self) -> bool:
        return self.kind == "morl"

    def reset(self) -> None:
        self.state = ThresholdState(self.window)

    def __call__(self, terms: RewardTerms, *, inv: float, cash: float, mid: float):
        k = self.kind
        if k == "single":
            return reward_single(terms)
        if k == "rim":
            return reward_rim(terms, self.state, self._cfg, cash=cash, mid=mid, inv=inv)
        if k == "full_inv":
            return reward_full_inv(terms.E, inv, terms.HgC, self.lam)
        if k == "asym_damp":
            return reward_asym_damp(terms.E, terms.PnL, terms.HgC, self.eta)
        if k == "pnl_only":
            return reward_pnl_only(terms.E, terms.HgC)
        if k == "rew":
            return reward_rew(terms, inv, self.w, self.alpha)
        return reward_morl_vector(terms, inv, self.alpha)
