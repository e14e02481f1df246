"""Deterministic single-asset limit order book and simulation kernel.

Prices are integer ticks (1 tick = $0.01). The book is price-priority and
FIFO within a level; crossing orders are matched on arrival and never rest
crossed. All randomness flows through :class:`RngRegistry`, which hands each
agent an independent stream derived from ``(master_seed, agent_id)``.
"""
from __future__ import annotations

import bisect
import csv
import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

TICKS_PER_DOLLAR = 100
OPENING_PRICE = 100_000  # $1,000.00


class Side(str, Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def opposite(self) -> "Side":
        return Side.SELL if self is Side.BUY else Side.BUY


class DuplicateOrderError(ValueError):
    """Raised when an order id has already been used in the session."""


def round_half_up(numerator: int, denominator: int) -> int:
    """Integer division rounded to nearest, ties away from minus infinity."""
    return (2 * numerator + denominator) // (2 * denominator)


def dollars_to_ticks(dollars: float) -> int:
    return int(round(dollars * TICKS_PER_DOLLAR))


@dataclass(slots=True)
class Order:
    id: int
    agent_id: int
    side: Side
    qty: int
    limit_price: int
    arrival_step: int = 0

    def __post_init__(self) -> None:
        if self.qty <= 0:
            raise ValueError("order qty must be positive")
        if self.limit_price < 0:
            raise ValueError("limit price must be non-negative ticks")


@dataclass(frozen=True, slots=True)
class Fill:
    maker_order_id: int
    maker_agent_id: int
    taker_agent_id: int
    qty: int
    price: int
    step: int
    taker_side: Side


class Quotes(NamedTuple):
    best_bid: Optional[int]
    best_ask: Optional[int]
    mid: int
    market_spread: Optional[int]


@dataclass(slots=True)
class SimClock:
    steps_per_session: int
    step: int = 0

    def advance(self) -> int:
        if self.step + 1 > self.steps_per_session:
            raise RuntimeError("session already finished")
        self.step += 1
        return self.step

    @property
    def done(self) -> bool:
        return self.step >= self.steps_per_session


class RngRegistry:
    """Per-agent random streams derived from a single master seed.

    A stream depends only on ``(master_seed, agent_id)``, so adding or
    removing agents never perturbs anybody else's draws.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self._streams: Dict[int, np.random.Generator] = {}

    def agent_stream(self, agent_id: int) -> np.random.Generator:
        """Return a freshly seeded generator for ``agent_id``."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(int(agent_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, agent_id: int) -> np.random.Generator:
        """Return the registry's cached generator for ``agent_id`` (stateful)."""
        rng = self._streams.get(agent_id)
        if rng is None:
            rng = self._streams[agent_id] = self.agent_stream(agent_id)
        return rng

    def child(self, *key: int) -> "RngRegistry":
        """Derive an independent registry, e.g. one per session."""
        seq = np.random.SeedSequence(self.master_seed, spawn_key=tuple(int(k) for k in key))
        return RngRegistry(int(seq.generate_state(1, dtype=np.uint64)[0]))


EVENT_LOG_COLUMNS = ("step", "event_kind", "agent_id", "side", "qty", "price_ticks", "order_id")


class OrderBook:
    """Two-sided price-time priority book for one symbol."""

    def __init__(self, opening_price: int = OPENING_PRICE, record_events: bool = False):
        self.opening_price = int(opening_price)
        self.last_trade_price: Optional[int] = None
        self._levels: Dict[Side, Dict[int, Deque[Order]]] = {Side.BUY: {}, Side.SELL: {}}
        # ascending price lists; best bid is the last bid price, best ask the first ask price
        self._prices: Dict[Side, List[int]] = {Side.BUY: [], Side.SELL: []}
        self._live: Dict[int, Order] = {}
        self._seen_ids: set[int] = set()
        self.step = 0
        self.events: Optional[List[Tuple]] = [] if record_events else None

    # -- inspection -------------------------------------------------------
    @property
    def best_bid(self) -> Optional[int]:
        prices = self._prices[Side.BUY]
        return prices[-1] if prices else None

    @property
    def best_ask(self) -> Optional[int]:
        prices = self._prices[Side.SELL]
        return prices[0] if prices else None

    def depth(self, side: Side) -> List[Tuple[int, int]]:
        """Aggregated (price, qty) levels, best first."""
        prices = self._prices[side]
        ordered = reversed(prices) if side is Side.BUY else prices
        return [(p, sum(o.qty for o in self._levels[side][p])) for p in ordered]

    def level_orders(self, side: Side, price: int) -> List[Order]:
        return list(self._levels[side].get(price, ()))

    def get_order(self, order_id: int) -> Optional[Order]:
        return self._live.get(order_id)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._live

    def snapshot(self) -> dict:
        def side_dump(side: Side) -> list:
            prices = self._prices[side]
            ordered = reversed(prices) if side is Side.BUY else prices
            return [
                {"price": p, "orders": [[o.id, o.agent_id, o.qty, o.arrival_step] for o in self._levels[side][p]]}
                for p in ordered
            ]

        return {
            "step": self.step,
            "last_trade_price": self.last_trade_price,
            "bids": side_dump(Side.BUY),
            "asks": side_dump(Side.SELL),
        }

    def dump_snapshot(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh, indent=1, sort_keys=True)

    # -- mutation ---------------------------------------------------------
    def _log(self, kind: str, agent_id: int, side: Side, qty: int, price: Optional[int], order_id: Optional[int]):
        if self.events is not None:
            self.events.append((self.step, kind, agent_id, side.value, qty, price, order_id))

    def _rest(self, order: Order) -> None:
        levels = self._levels[order.side]
        queue = levels.get(order.limit_price)
        if queue is None:
            queue = levels[order.limit_price] = deque()
            bisect.insort(self._prices[order.side], order.limit_price)
        queue.append(order)
        self._live[order.id] = order

    def _drop_level(self, side: Side, price: int) -> None:
        del self._levels[side][price]
        prices = self._prices[side]
        prices.pop(bisect.bisect_left(prices, price))

    def _match(self, side: Side, qty: int, limit: Optional[int], taker_agent: int) -> Tuple[List[Fill], int]:
        """Consume opposite liquidity; returns fills and the unmatched remainder."""
        fills: List[Fill] = []
        opp = side.opposite
        prices = self._prices[opp]
        levels = self._levels[opp]
        while qty > 0 and prices:
            price = prices[0] if opp is Side.SELL else prices[-1]
            if limit is not None and ((side is Side.BUY and price > limit) or (side is Side.SELL and price < limit)):
                break
            queue = levels[price]
            while qty > 0 and queue:
                maker = queue[0]
                take = min(qty, maker.qty)
                maker.qty -= take
                qty -= take
                fills.append(Fill(maker.id, maker.agent_id, taker_agent, take, price, self.step, side))
                self._log("fill", maker.agent_id, opp, take, price, maker.id)
                if maker.qty == 0:
                    queue.popleft()
                    del self._live[maker.id]
            if not queue:
                self._drop_level(opp, price)
        if fills:
            notional = sum(f.qty * f.price for f in fills)
            volume = sum(f.qty for f in fills)
            self.last_trade_price = round_half_up(notional, volume)
        return fills, qty

    def submit_limit_order(self, order: Order) -> Tuple[List[Fill], int]:
        """Match ``order`` against the book, resting any remainder.

        Returns the fills (best price first, FIFO within a level) and the
        quantity left resting. Raises :class:`DuplicateOrderError` on id reuse.
        """
        if order.id in self._seen_ids:
            raise DuplicateOrderError(f"order id {order.id} already used")
        if order.qty <= 0:
            raise ValueError("order qty must be positive")
        self._seen_ids.add(order.id)
        self._log("limit", order.agent_id, order.side, order.qty, order.limit_price, order.id)
        fills, remaining = self._match(order.side, order.qty, order.limit_price, order.agent_id)
        if remaining > 0:
            order.qty = remaining
            self._rest(order)
            self._log("accept", order.agent_id, order.side, remaining, order.limit_price, order.id)
        return fills, remaining

    def submit_market_order(self, side: Side, qty: int, agent_id: int = -1) -> Tuple[List[Fill], int]:
        """Walk the opposite side; the unfilled remainder is discarded.

        Returns ``(fills, unfilled_qty)``; ``unfilled_qty > 0`` flags exhaustion.
        """
        if qty <= 0:
            raise ValueError("market order qty must be positive")
        side = Side(side)
        self._log("market", agent_id, side, qty, None, None)
        fills, remaining = self._match(side, qty, None, agent_id)
        if remaining:
            self._log("unfilled", agent_id, side, remaining, None, None)
        return fills, remaining

    def cancel_order(self, order_id: int) -> int:
        """Remove a resting order; returns the quantity removed (0 if absent)."""
        order = self._live.pop(order_id, None)
        if order is None:
            return 0
        queue = self._levels[order.side][order.limit_price]
        queue.remove(order)
        if not queue:
            self._drop_level(order.side, order.limit_price)
        self._log("cancel", order.agent_id, order.side, order.qty, order.limit_price, order.id)
        return order.qty

    def best_quotes(self) -> Quotes:
        bid, ask = self.best_bid, self.best_ask
        if bid is not None and ask is not None:
            return Quotes(bid, ask, round_half_up(bid + ask, 2), ask - bid)
        mid = self.last_trade_price if self.last_trade_price is not None else self.opening_price
        return Quotes(bid, ask, mid, None)


# functional aliases mirroring the operation names
def submit_limit_order(book: OrderBook, order: Order) -> Tuple[List[Fill], int]:
    return book.submit_limit_order(order)


def submit_market_order(book: OrderBook, side: Side, qty: int, agent_id: int = -1) -> Tuple[List[Fill], int]:
    return book.submit_market_order(side, qty, agent_id)


def cancel_order(book: OrderBook, order_id: int) -> int:
    return book.cancel_order(order_id)


def best_quotes(book: OrderBook) -> Quotes:
    return book.best_quotes()


def agent_stream(registry: RngRegistry, agent_id: int) -> np.random.Generator:
    return registry.agent_stream(agent_id)


def write_event_log(path, events: Iterable[Tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_LOG_COLUMNS)
        for row in events:
            writer.writerow(["" if v is None else v for v in row])
