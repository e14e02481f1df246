"""Background market ecology: noise, value, momentum and adaptive POV agents.

Each ``*_step`` function is the pure decision rule; :class:`BackgroundMarket`
wires the agents to one :class:`~mmlab.kernel.OrderBook` and advances them
in a fixed per-step order (by agent id).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Sequence

import numpy as np

from .kernel import OPENING_PRICE, Order, OrderBook, Quotes, RngRegistry, Side

# agent-id bands; a stream depends only on its id, so bands keep populations independent
FUNDAMENTAL_ID = 0
NOISE_BASE = 1_000
VALUE_BASE = 2_000
MOMENTUM_BASE = 3_000
POV_BASE = 4_000


@dataclass(frozen=True)
class NoiseAgentCfg:
    order_size: int = 5
    arrival_prob_per_step: float = 0.1

    def __post_init__(self):
        if self.order_size <= 0:
            raise ValueError("order_size must be positive")
        if not 0.0 <= self.arrival_prob_per_step <= 1.0:
            raise ValueError("arrival_prob_per_step must lie in [0, 1]")


@dataclass(frozen=True)
class FundamentalCfg:
    mean: float = OPENING_PRICE
    kappa: float = 0.01
    sigma: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class ValueAgentCfg:
    fundamental: FundamentalCfg = field(default_factory=FundamentalCfg)
    entry_threshold: int = 20
    order_size: int = 10
    arrival_prob_per_step: float = 0.1
    obs_noise: float = 0.0

    def __post_init__(self):
        if self.entry_threshold < 0:
            raise ValueError("entry_threshold must be non-negative")
        if self.order_size <= 0:
            raise ValueError("order_size must be positive")


@dataclass(frozen=True)
class MomentumCfg:
    fast_window: int = 20
    slow_window: int = 50
    order_size: int = 10

    def __post_init__(self):
        if not 0 < self.fast_window < self.slow_window:
            raise ValueError("need 0 < fast_window < slow_window")


@dataclass(frozen=True)
class POVCfg:
    pov_fraction: float = 0.15
    lookback: int = 100
    wake_interval: int = 10
    ladder_levels: int = 2
    level_spacing: int = 10
    opening_volume_per_step: float = 10.0

    def __post_init__(self):
        if not 0 < self.pov_fraction <= 1:
            raise ValueError("pov_fraction must lie in (0, 1]")
        for name in ("lookback", "wake_interval", "ladder_levels", "level_spacing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, slots=True)
class OrderIntent:
    """An order an agent wants submitted; ``price`` is None for market orders."""

    side: Side
    qty: int
    price: Optional[int] = None


# ---------------------------------------------------------------------------
# decision rules


def noise_step(cfg: NoiseAgentCfg, stream: np.random.Generator, book: OrderBook | None = None) -> List[OrderIntent]:
    """With the arrival probability, one market order of fixed size and random side."""
    if stream.random() >= cfg.arrival_prob_per_step:
        return []
    side = Side.BUY if stream.random() < 0.5 else Side.SELL
    return [OrderIntent(side, cfg.order_size)]


def fundamental_next(x: float, cfg: FundamentalCfg, stream: np.random.Generator) -> float:
    """Mean-reverting walk ``x + kappa*(mean - x) + sigma*xi``, floored at one tick."""
    xi = stream.standard_normal() if cfg.sigma > 0 else 0.0
    return max(1.0, x + cfg.kappa * (cfg.mean - x) + cfg.sigma * xi)


def value_step(
    cfg: ValueAgentCfg, fundamental: float, mid: int, stream: np.random.Generator, quotes: Quotes | None = None
) -> Optional[OrderIntent]:
    """Trade toward the fundamental when the mid deviates by more than the threshold.

    Buys are priced at the best ask (crossing), sells at the best bid; with the
    relevant side empty the order is placed at the mid.
    """
    estimate = fundamental + (cfg.obs_noise * stream.standard_normal() if cfg.obs_noise > 0 else 0.0)
    if mid < estimate - cfg.entry_threshold:
        price = quotes.best_ask if quotes is not None and quotes.best_ask is not None else mid
        return OrderIntent(Side.BUY, cfg.order_size, int(price))
    if mid > estimate + cfg.entry_threshold:
        price = quotes.best_bid if quotes is not None and quotes.best_bid is not None else mid
        return OrderIntent(Side.SELL, cfg.order_size, int(price))
    return None


def momentum_step(cfg: MomentumCfg, mid_history: Sequence[float]) -> Optional[OrderIntent]:
    """Market order on a fast/slow moving-average crossover at the latest step.

    A golden cross (fast moves above slow) buys, a death cross sells. Needs
    ``slow_window + 1`` observations to see a crossing; fewer gives ``None``.
    """
    n = len(mid_history)
    if n < cfg.slow_window + 1:
        return None
    hist = np.asarray(mid_history[-(cfg.slow_window + 1):], dtype=float)
    now = hist[1:]
    before = hist[:-1]
    diff_now = now[-cfg.fast_window:].mean() - now.mean()
    diff_before = before[-cfg.fast_window:].mean() - before.mean()
    if diff_before <= 0 < diff_now:
        return OrderIntent(Side.BUY, cfg.order_size)
    if diff_before >= 0 > diff_now:
        return OrderIntent(Side.SELL, cfg.order_size)
    return None


def pov_level_size(cfg: POVCfg, lookback_volume: float) -> int:
    return max(1, math.ceil(cfg.pov_fraction * lookback_volume / (2 * cfg.ladder_levels) - 1e-9))


def pov_mm_step(cfg: POVCfg, mid: int, lookback_volume: float) -> List[OrderIntent]:
    """Symmetric ladder around ``mid`` sized as a fraction of recent volume."""
    size = pov_level_size(cfg, lookback_volume)
    ladder = []
    for k in range(1, cfg.ladder_levels + 1):
        ladder.append(OrderIntent(Side.BUY, size, mid - k * cfg.level_spacing))
    for k in range(1, cfg.ladder_levels + 1):
        ladder.append(OrderIntent(Side.SELL, size, mid + k * cfg.level_spacing))
    return [o for o in ladder if o.price >= 1]


# ---------------------------------------------------------------------------
# stateful agents


class _MovingAverages:
    """Incremental fast/slow MA crossover detector equivalent to momentum_step."""

    def __init__(self, cfg: MomentumCfg):
        self.cfg = cfg
        self.window: Deque[float] = deque(maxlen=cfg.slow_window + 1)
        self.prev_diff: Optional[float] = None

    def push(self, mid: float) -> Optional[OrderIntent]:
        self.window.append(mid)
        if len(self.window) < self.cfg.slow_window:
            return None
        vals = list(self.window)[-self.cfg.slow_window:]
        diff = sum(vals[-self.cfg.fast_window:]) / self.cfg.fast_window - sum(vals) / self.cfg.slow_window
        prev, self.prev_diff = self.prev_diff, diff
        if prev is None:
            return None
        if prev <= 0 < diff:
            return OrderIntent(Side.BUY, self.cfg.order_size)
        if prev >= 0 > diff:
            return OrderIntent(Side.SELL, self.cfg.order_size)
        return None


@dataclass(frozen=True)
class PopulationCfg:
    noise: int = 100
    value: int = 10
    momentum: int = 10
    pov: int = 1
    multiplier: float = 1.0

    def scaled(self) -> "PopulationCfg":
        def s(n: int) -> int:
            return 0 if n == 0 else max(1, int(round(n * self.multiplier)))

        return PopulationCfg(s(self.noise), s(self.value), s(self.momentum), s(self.pov), 1.0)


class BackgroundMarket:
    """Non-MM ecology trading in one order book, one step at a time."""

    def __init__(
        self,
        registry: RngRegistry,
        population: PopulationCfg = PopulationCfg(),
        noise_cfg: NoiseAgentCfg = NoiseAgentCfg(),
        value_cfg: ValueAgentCfg = ValueAgentCfg(),
        momentum_cfg: MomentumCfg = MomentumCfg(),
        pov_cfg: POVCfg = POVCfg(),
        opening_price: int = OPENING_PRICE,
        record_events: bool = False,
    ):
        pop = population.scaled()
        self.population = pop
        self.noise_cfg, self.value_cfg, self.momentum_cfg, self.pov_cfg = noise_cfg, value_cfg, momentum_cfg, pov_cfg
        self.book = OrderBook(opening_price, record_events=record_events)
        self.step_idx = 0
        self._next_order_id = 1

        self.fundamental = float(value_cfg.fundamental.mean)
        self._fund_stream = registry.stream(FUNDAMENTAL_ID)
        self._noise = [(NOISE_BASE + i, registry.stream(NOISE_BASE + i)) for i in range(pop.noise)]
        self._value = [(VALUE_BASE + i, registry.stream(VALUE_BASE + i)) for i in range(pop.value)]
        self._value_orders: dict[int, int] = {}
        self._momentum = [(MOMENTUM_BASE + i, _MovingAverages(momentum_cfg)) for i in range(pop.momentum)]
        self._pov = [POV_BASE + i for i in range(pop.pov)]
        self._pov_orders: dict[int, List[int]] = {a: [] for a in self._pov}

        prior = pov_cfg.opening_volume_per_step
        self._volume_window: Deque[int] = deque([prior] * pov_cfg.lookback, maxlen=pov_cfg.lookback)
        self._volume_sum = float(prior * pov_cfg.lookback)
        self.step_volume = 0
        self.quotes = self.book.best_quotes()
        self.last_spread = 2 * pov_cfg.level_spacing
        # the POV ladder is posted at the open so step 0 already has a two-sided book
        self._pov_wake(self.quotes.mid)
        self.quotes = self.book.best_quotes()
        if self.quotes.market_spread is not None:
            self.last_spread = self.quotes.market_spread
        self.mid_history: List[int] = [self.quotes.mid]

    @property
    def mid(self) -> int:
        return self.quotes.mid

    @property
    def market_spread(self) -> int:
        """Current spread; falls back to the last two-sided spread when one side is empty."""
        return self.quotes.market_spread if self.quotes.market_spread is not None else self.last_spread

    @property
    def lookback_volume(self) -> float:
        return self._volume_sum

    def _oid(self) -> int:
        oid = self._next_order_id
        self._next_order_id += 1
        return oid

    def _submit(self, agent_id: int, intent: OrderIntent) -> Optional[int]:
        if intent.price is None:
            fills, _ = self.book.submit_market_order(intent.side, intent.qty, agent_id)
            rest_id = None
        else:
            order = Order(self._oid(), agent_id, intent.side, intent.qty, intent.price, self.step_idx)
            fills, remaining = self.book.submit_limit_order(order)
            rest_id = order.id if remaining else None
        self.step_volume += sum(f.qty for f in fills)
        return rest_id

    def _pov_wake(self, mid: int) -> None:
        for agent_id in self._pov:
            for oid in self._pov_orders[agent_id]:
                self.book.cancel_order(oid)
            ladder = pov_mm_step(self.pov_cfg, mid, self.lookback_volume)
            self._pov_orders[agent_id] = [
                oid for oid in (self._submit(agent_id, o) for o in ladder) if oid is not None
            ]

    def advance(self) -> Quotes:
        """Run one step of every background agent (fixed id order) and return new quotes."""
        self.step_idx += 1
        self.book.step = self.step_idx
        self.step_volume = 0

        self.fundamental = fundamental_next(self.fundamental, self.value_cfg.fundamental, self._fund_stream)

        for agent_id, stream in self._noise:
            for intent in noise_step(self.noise_cfg, stream):
                self._submit(agent_id, intent)

        for agent_id, stream in self._value:
            if stream.random() >= self.value_cfg.arrival_prob_per_step:
                continue
            old = self._value_orders.pop(agent_id, None)
            if old is not None:
                self.book.cancel_order(old)
            quotes = self.book.best_quotes()
            intent = value_step(self.value_cfg, self.fundamental, quotes.mid, stream, quotes)
            if intent is not None:
                rest = self._submit(agent_id, intent)
                if rest is not None:
                    self._value_orders[agent_id] = rest

        mid_now = self.book.best_quotes().mid
        for agent_id, ma in self._momentum:
            intent = ma.push(mid_now)
            if intent is not None:
                self._submit(agent_id, intent)

        if self.step_idx % self.pov_cfg.wake_interval == 0:
            self._pov_wake(self.book.best_quotes().mid)

        self._volume_sum += self.step_volume - self._volume_window[0]
        self._volume_window.append(self.step_volume)

        self.quotes = self.book.best_quotes()
        if self.quotes.market_spread is not None:
            self.last_spread = self.quotes.market_spread
        self.mid_history.append(self.quotes.mid)
        return self.quotes
