"""Dealer market between the experimental market makers and greedy investors.

Market makers quote half-spreads around the background mid. Investors buy at
``mid + sell_spread`` from the MM with the narrowest sell spread (and sell at
``mid - buy_spread`` to the narrowest buy spread), ties broken uniformly at
random. Hedging closes a fraction of inventory at the mid and pays the market
spread per share. All quantities are integer ticks and shares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .kernel import Side

HEDGE_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True, slots=True)
class MMQuote:
    buy_spread: int
    sell_spread: int


@dataclass(slots=True)
class MMAccount:
    id: int
    cash: int = 10_000_000
    inventory: int = 0

    def mark_to_market(self, mid: int) -> int:
        return self.cash + self.inventory * mid


def _spread(market_spread: int, eta: float) -> int:
    return max(0, math.floor(market_spread * (1.0 + eta) + 0.5))


def quote_from_etas(market_spread: int, eta_buy: float, eta_sell: float) -> MMQuote:
    """Spreads scaled as ``market_spread * (1 + eta)``, rounded, clamped at zero."""
    if not (-1.0 <= eta_buy <= 1.0 and -1.0 <= eta_sell <= 1.0):
        raise ValueError("etas must lie in [-1, 1]")
    return MMQuote(_spread(market_spread, eta_buy), _spread(market_spread, eta_sell))


def best_candidates(quotes: Sequence[MMQuote], investor_side: Side) -> List[int]:
    """Indices of the MMs tied on the narrowest spread relevant to ``investor_side``."""
    if not quotes:
        raise ValueError("no market maker quotes to route to")
    if investor_side is Side.BUY:
        spreads = [q.sell_spread for q in quotes]
    else:
        spreads = [q.buy_spread for q in quotes]
    best = min(spreads)
    return [i for i, s in enumerate(spreads) if s == best]


def pick(candidates: Sequence[int], stream: np.random.Generator) -> int:
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(stream.integers(len(candidates)))]


def route_investor_order(quotes: Sequence[MMQuote], side: Side, stream: np.random.Generator) -> int:
    """Index of the MM an investor order goes to (cheapest quote, uniform tie-break)."""
    return pick(best_candidates(quotes, Side(side)), stream)


def execute_mm_trade(account: MMAccount, investor_side: Side, qty: int, quote: MMQuote, mid: int) -> int:
    """Fill an investor order against ``account``; returns the spread earned."""
    if qty <= 0:
        raise ValueError("qty must be positive")
    if investor_side is Side.BUY:
        account.inventory -= qty
        account.cash += qty * (mid + quote.sell_spread)
        return qty * quote.sell_spread
    account.inventory += qty
    account.cash -= qty * (mid - quote.buy_spread)
    return qty * quote.buy_spread


def hedge(account: MMAccount, eta_h: float, market_spread: int, mid: int) -> Tuple[int, int]:
    """Move inventory toward zero by ``round(|inv| * eta_h)`` shares.

    The hedge is filled at the mid and charged ``market_spread`` per share, so
    the mark-to-market drops by exactly the returned cost.
    """
    if eta_h < 0 or eta_h > 1:
        raise ValueError("eta_h must lie in [0, 1]")
    inv = account.inventory
    qty = math.floor(abs(inv) * eta_h + 0.5)
    if qty == 0:
        return 0, 0
    cost = qty * market_spread
    if inv > 0:
        account.inventory -= qty
        account.cash += qty * mid
    else:
        account.inventory += qty
        account.cash -= qty * mid
    account.cash -= cost
    return qty, cost


def mark_to_market(account: MMAccount, mid: int) -> int:
    return account.mark_to_market(mid)


@dataclass
class InvestorFlow:
    """Fixed-size random orders from a pool of investors."""

    n_investors: int = 50
    order_size: int = 10
    arrival_prob: float = 0.5

    def draw(self, stream: np.random.Generator) -> List[Side]:
        arrivals = stream.random(self.n_investors) < self.arrival_prob
        k = int(arrivals.sum())
        if k == 0:
            return []
        buys = stream.random(k) < 0.5
        return [Side.BUY if b else Side.SELL for b in buys]


@dataclass(slots=True)
class DealerFills:
    """Per-MM outcome of one step's investor flow."""

    earnings: int = 0
    bought: int = 0  # shares bought from investors
    sold: int = 0
    buy_count: int = 0
    sell_count: int = 0


def dealer_step(
    accounts: Sequence[MMAccount],
    quotes: Sequence[MMQuote],
    orders: Sequence[Side],
    order_size: int,
    mid: int,
    stream: np.random.Generator,
) -> List[DealerFills]:
    """Route every investor order to exactly one MM and settle it."""
    out = [DealerFills() for _ in accounts]
    if not orders:
        return out
    cand = {Side.BUY: best_candidates(quotes, Side.BUY), Side.SELL: best_candidates(quotes, Side.SELL)}
    for side in orders:
        i = pick(cand[side], stream)
        f = out[i]
        f.earnings += execute_mm_trade(accounts[i], side, order_size, quotes[i], mid)
        if side is Side.BUY:
            f.sold += order_size
            f.sell_count += 1
        else:
            f.bought += order_size
            f.buy_count += 1
    return out
