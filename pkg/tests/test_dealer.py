import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmlab.dealer import (
    HEDGE_GRID,
    DealerFills,
    InvestorFlow,
    MMAccount,
    MMQuote,
    dealer_step,
    execute_mm_trade,
    hedge,
    mark_to_market,
    quote_from_etas,
    route_investor_order,
)
from mmlab.kernel import Side
from mmlab.policies import ETA_SPREAD_GRID


@pytest.mark.parametrize("eb,es,expected", [(0.0, 0.0, (10, 10)), (-0.2, 0.0, (8, 10)), (-1.0, -1.0, (0, 0))])
def test_quote_from_etas(eb, es, expected):
    q = quote_from_etas(10, eb, es)
    assert (q.buy_spread, q.sell_spread) == expected


def test_quote_rejects_off_range_eta():
    with pytest.raises(ValueError):
        quote_from_etas(10, -1.2, 0.0)


def test_routing_picks_narrowest():
    rng = np.random.default_rng(0)
    quotes = [MMQuote(9, 5), MMQuote(1, 7), MMQuote(3, 9)]
    assert route_investor_order(quotes, Side.BUY, rng) == 0
    assert route_investor_order(quotes, Side.SELL, rng) == 1
    assert route_investor_order([MMQuote(4, 4)], Side.BUY, rng) == 0
    with pytest.raises(ValueError):
        route_investor_order([], Side.BUY, rng)


def test_routing_ties_are_uniform():
    rng = np.random.default_rng(1)
    quotes = [MMQuote(0, 5), MMQuote(0, 7), MMQuote(0, 5)]
    picks = [route_investor_order(quotes, Side.BUY, rng) for _ in range(10_000)]
    assert set(picks) == {0, 2}
    assert abs(np.mean(np.asarray(picks) == 0) - 0.5) < 0.03


def test_execute_trade_cash_and_inventory():
    acc = MMAccount(0, cash=0)
    assert execute_mm_trade(acc, Side.BUY, 10, MMQuote(5, 5), 100_000) == 50
    assert (acc.inventory, acc.cash) == (-10, 1_000_050)
    acc = MMAccount(0, cash=0)
    assert execute_mm_trade(acc, Side.SELL, 10, MMQuote(5, 5), 100_000) == 50
    assert (acc.inventory, acc.cash) == (10, -999_950)
    acc = MMAccount(0)
    before = acc.mark_to_market(100_000)
    assert execute_mm_trade(acc, Side.BUY, 10, MMQuote(0, 0), 100_000) == 0
    assert acc.mark_to_market(100_000) == before


def test_hedge_examples():
    acc = MMAccount(0, inventory=150)
    assert hedge(acc, 0.5, 4, 100_000)[0] == 75 and acc.inventory == 75
    acc = MMAccount(0, inventory=40)
    assert hedge(acc, 0.0, 4, 100_000) == (0, 0) and acc.inventory == 40
    acc = MMAccount(0, inventory=-100)
    assert hedge(acc, 1.0, 4, 100_000) == (100, 400) and acc.inventory == 0


@given(st.integers(-10_000, 10_000), st.sampled_from(HEDGE_GRID), st.integers(1, 50), st.integers(1, 200_000))
def test_hedge_properties(inv, eta_h, spread, mid):
    acc = MMAccount(0, inventory=inv)
    before = acc.mark_to_market(mid)
    qty, cost = hedge(acc, eta_h, spread, mid)
    assert abs(acc.inventory) <= abs(inv)
    assert (abs(acc.inventory) == abs(inv)) == (eta_h == 0 or inv == 0 or qty == 0)
    assert qty == int(np.floor(abs(inv) * eta_h + 0.5))
    assert cost == qty * spread
    assert acc.mark_to_market(mid) == before - cost


def test_mark_to_market_examples():
    assert mark_to_market(MMAccount(0), 100_000) == 10_000_000
    assert mark_to_market(MMAccount(0, cash=0, inventory=100), 100_000) == 10_000_000
    acc = MMAccount(0, cash=0, inventory=-50)
    assert mark_to_market(acc, 100_010) - mark_to_market(acc, 100_000) == -500


def test_investor_flow_rates():
    rng = np.random.default_rng(3)
    flow = InvestorFlow()
    draws = [flow.draw(rng) for _ in range(2000)]
    counts = np.array([len(d) for d in draws])
    assert abs(counts.mean() - 25) < 0.5
    buys = sum(s is Side.BUY for d in draws for s in d)
    assert abs(buys / counts.sum() - 0.5) < 0.01


@given(
    st.lists(st.tuples(st.sampled_from(ETA_SPREAD_GRID), st.sampled_from(ETA_SPREAD_GRID)), min_size=1, max_size=5),
    st.integers(0, 2**31),
)
def test_dealer_step_routes_every_order_once(etas, seed):
    rng = np.random.default_rng(seed)
    accounts = [MMAccount(i) for i in range(len(etas))]
    quotes = [quote_from_etas(12, b, s) for b, s in etas]
    orders = InvestorFlow().draw(rng)
    mid = 100_000
    before = [a.mark_to_market(mid) for a in accounts]
    fills = dealer_step(accounts, quotes, orders, 10, mid, rng)
    n_buy = sum(o is Side.BUY for o in orders)
    assert sum(f.sell_count for f in fills) == n_buy
    assert sum(f.buy_count for f in fills) == len(orders) - n_buy
    best_sell = min(q.sell_spread for q in quotes)
    for a, f, q, b in zip(accounts, fills, quotes, before):
        # only the narrowest quote on a side ever trades on that side
        if f.sell_count:
            assert q.sell_spread == best_sell
        assert a.mark_to_market(mid) - b == f.earnings
        assert a.inventory == f.bought - f.sold


def test_dealer_step_without_orders():
    out = dealer_step([MMAccount(0)], [MMQuote(1, 1)], [], 10, 100, np.random.default_rng(0))
    assert out == [DealerFills()]
