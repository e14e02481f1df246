"""Observation/state construction, the 605-way action codec and baseline MMs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Deque, Mapping, NamedTuple, Optional, Sequence

import numpy as np

ETA_SPREAD_GRID = tuple(round(-1.0 + 0.2 * i, 10) for i in range(11))
ETA_HEDGE_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
N_ACTIONS = len(ETA_SPREAD_GRID) ** 2 * len(ETA_HEDGE_GRID)  # 605

V8_FIELDS = ("buys_prev", "sells_prev", "inv_now", "inv_prev", "dmid", "spread_now", "spread_prev", "volume_prev")
V10_FIELDS = (
    "buy_count_prev",
    "buys_prev",
    "sell_count_prev",
    "sells_prev",
    "inv_prev",
    "inv_now",
    "dmid",
    "spread_now",
    "spread_prev",
    "market_volume_prev",
)
STATE_ARITY = {"v8": 8, "v10": 10, "v11": 11}

# (EMA-L, EMA-S, slope lag) in minutes
EMA_PRESETS = {"20-8": (20, 8, 20), "15-4": (15, 4, 15), "10-2": (10, 2, 10)}
STEPS_PER_MINUTE = 60


class EtaAction(NamedTuple):
    eta_buy: float
    eta_sell: float
    eta_hedge: float


def _grid_index(grid: Sequence[float], value: float) -> int:
    for i, g in enumerate(grid):
        if abs(g - value) < 1e-9:
            return i
    raise ValueError(f"{value!r} is not on the action grid {grid}")


def action_to_etas(index: int) -> EtaAction:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} out of range")
    b, rem = divmod(int(index), 55)
    s, h = divmod(rem, 5)
    return EtaAction(ETA_SPREAD_GRID[b], ETA_SPREAD_GRID[s], ETA_HEDGE_GRID[h])


def etas_to_action(etas: EtaAction | Sequence[float]) -> int:
    eb, es, eh = etas
    return _grid_index(ETA_SPREAD_GRID, eb) * 55 + _grid_index(ETA_SPREAD_GRID, es) * 5 + _grid_index(ETA_HEDGE_GRID, eh)


ACTION_TABLE = tuple(action_to_etas(i) for i in range(N_ACTIONS))


def _vector(obs: Mapping[str, float], fields: Sequence[str]) -> np.ndarray:
    try:
        return np.array([float(obs[f]) for f in fields], dtype=float)
    except KeyError as exc:
        raise ValueError(f"observation is missing field {exc.args[0]!r}") from None


def build_state_v8(obs: Mapping[str, float]) -> np.ndarray:
    return _vector(obs, V8_FIELDS)


def build_state_v10(obs: Mapping[str, float]) -> np.ndarray:
    return _vector(obs, V10_FIELDS)


def build_state_v11(obs: Mapping[str, float], ema_l: float, ema_s: float, slope: float) -> np.ndarray:
    return np.concatenate([_vector(obs, V8_FIELDS), [ema_l, ema_s, slope]])


def ema(prev_ema: float, x: float, n: int) -> float:
    """One EMA update with smoothing factor ``2 / (1 + n)``."""
    if n < 1:
        raise ValueError("EMA window must be >= 1")
    alpha = 2.0 / (1.0 + n)
    return alpha * x + (1.0 - alpha) * prev_ema


def ema_slope(ema_series: Sequence[float], n: int) -> float:
    """``EMA(t) - EMA(t - n)``; zero until the series is longer than ``n``."""
    if len(ema_series) <= n:
        return 0.0
    return float(ema_series[-1] - ema_series[-1 - n])


class EmaTracker:
    """Long/short EMAs of the mid plus the long EMA's slope, for v11 states."""

    def __init__(self, long_n: int, short_n: int, slope_lag: int):
        self.long_n, self.short_n, self.slope_lag = long_n, short_n, slope_lag
        self.reset()

    @classmethod
    def from_preset(cls, name: str) -> "EmaTracker":
        l, s, lag = EMA_PRESETS[name]
        return cls(l * STEPS_PER_MINUTE, s * STEPS_PER_MINUTE, lag * STEPS_PER_MINUTE)

    def reset(self) -> None:
        self.ema_l: Optional[float] = None
        self.ema_s: Optional[float] = None
        self._hist: Deque[float] = deque(maxlen=self.slope_lag + 1)

    def update(self, mid: float) -> tuple[float, float, float]:
        if self.ema_l is None:
            self.ema_l = self.ema_s = float(mid)
        else:
            self.ema_l = ema(self.ema_l, mid, self.long_n)
            self.ema_s = ema(self.ema_s, mid, self.short_n)
        self._hist.append(self.ema_l)
        return self.ema_l, self.ema_s, ema_slope(self._hist, self.slope_lag)


class RunningScaler:
    """Online feature standardization (Welford running moments)."""

    def __init__(self, arity: int, eps_std: float = 1e-8):
        self.arity = arity
        self.eps_std = eps_std
        self.count = 0
        self.mean = np.zeros(arity)
        self._m2 = np.zeros(arity)

    @property
    def var(self) -> np.ndarray:
        return self._m2 / self.count if self.count else np.zeros(self.arity)

    def update(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.arity:
            raise ValueError(f"expected arity {self.arity}, got {x.shape[-1]}")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / np.maximum(np.sqrt(self.var), self.eps_std)

    def update_apply(self, x: np.ndarray) -> np.ndarray:
        self.update(x)
        return self.apply(x)

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self._m2.tolist(), "eps_std": self.eps_std}

    @classmethod
    def from_state(cls, state: dict) -> "RunningScaler":
        sc = cls(len(state["mean"]), state["eps_std"])
        sc.count = int(state["count"])
        sc.mean = np.asarray(state["mean"], dtype=float)
        sc._m2 = np.asarray(state["m2"], dtype=float)
        return sc

    def copy(self) -> "RunningScaler":
        return RunningScaler.from_state(self.state_dict())


def scaler_update_apply(scaler: RunningScaler, raw: np.ndarray) -> np.ndarray:
    return scaler.update_apply(raw)


def random_mm_action(stream: np.random.Generator) -> EtaAction:
    return ACTION_TABLE[int(stream.integers(N_ACTIONS))]


def persistent_mm_action(fixed: EtaAction) -> EtaAction:
    return fixed


@dataclass
class StateBuilder:
    """Turns raw per-MM observations into state vectors of one variant."""

    variant: str = "v8"
    ema_preset: Optional[str] = None

    def __post_init__(self):
        if self.variant not in STATE_ARITY:
            raise ValueError(f"unknown state variant {self.variant!r}")
        if self.variant == "v11" and self.ema_preset is None:
            self.ema_preset = "20-8"
        self._ema = EmaTracker.from_preset(self.ema_preset) if self.variant == "v11" else None
        self._ema_vals = (0.0, 0.0, 0.0)

    @property
    def arity(self) -> int:
        return STATE_ARITY[self.variant]

    def reset(self) -> None:
        if self._ema is not None:
            self._ema.reset()

    def observe_mid(self, mid: float) -> None:
        if self._ema is not None:
            self._ema_vals = self._ema.update(mid)

    def build(self, obs: Mapping[str, float]) -> np.ndarray:
        if self.variant == "v8":
            return build_state_v8(obs)
        if self.variant == "v10":
            return build_state_v10(obs)
        return build_state_v11(obs, *self._ema_vals)
