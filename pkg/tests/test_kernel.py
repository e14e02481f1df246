import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmlab.kernel import (
    OPENING_PRICE,
    DuplicateOrderError,
    Order,
    OrderBook,
    RngRegistry,
    Side,
    SimClock,
    best_quotes,
    cancel_order,
    round_half_up,
    submit_limit_order,
    submit_market_order,
    write_event_log,
)

from .oracles import NaiveBook


def book_with(*orders):
    book = OrderBook()
    for o in orders:
        book.submit_limit_order(o)
    return book


def test_empty_book_limit_rests():
    book = OrderBook()
    fills, rest = submit_limit_order(book, Order(1, 7, Side.BUY, 10, 100))
    assert fills == [] and rest == 10
    assert book.best_bid == 100


def test_fifo_split_within_level():
    book = book_with(Order(1, 1, Side.SELL, 5, 101, 1), Order(2, 2, Side.SELL, 5, 101, 2))
    fills, rest = book.submit_limit_order(Order(3, 3, Side.BUY, 7, 101))
    assert [(f.maker_order_id, f.qty, f.price) for f in fills] == [(1, 5, 101), (2, 2, 101)]
    assert rest == 0
    assert book.level_orders(Side.SELL, 101)[0].qty == 3


def test_walks_levels_and_sets_vwap_last_trade():
    book = book_with(Order(1, 1, Side.SELL, 3, 101), Order(2, 1, Side.SELL, 4, 102))
    fills, _ = book.submit_limit_order(Order(3, 2, Side.BUY, 7, 102))
    assert [f.price for f in fills] == [101, 102]
    assert book.last_trade_price == round((3 * 101 + 4 * 102) / 7)


def test_market_order_partial_and_exhaustion():
    book = book_with(Order(1, 1, Side.SELL, 5, 101))
    fills, unfilled = submit_market_order(book, Side.BUY, 3)
    assert [(f.qty, f.price) for f in fills] == [(3, 101)] and unfilled == 0
    fills, unfilled = submit_market_order(book, Side.BUY, 8)
    assert sum(f.qty for f in fills) == 2 and unfilled == 6
    fills, unfilled = submit_market_order(book, Side.SELL, 4)
    assert fills == [] and unfilled == 4


def test_market_orders_never_rest():
    book = OrderBook()
    book.submit_market_order(Side.BUY, 5)
    assert book.depth(Side.BUY) == [] and book.depth(Side.SELL) == []


def test_cancel_rules():
    book = book_with(Order(1, 1, Side.BUY, 7, 100))
    assert cancel_order(book, 1) == 7
    assert book.depth(Side.BUY) == []
    assert cancel_order(book, 99) == 0
    book = book_with(Order(2, 1, Side.BUY, 10, 100))
    book.submit_market_order(Side.SELL, 3)
    assert book.cancel_order(2) == 7


def test_duplicate_id_rejected():
    book = book_with(Order(1, 1, Side.BUY, 1, 100))
    with pytest.raises(DuplicateOrderError):
        book.submit_limit_order(Order(1, 1, Side.BUY, 1, 99))


def test_bad_orders_rejected():
    with pytest.raises(ValueError):
        Order(1, 1, Side.BUY, 0, 100)
    with pytest.raises(ValueError):
        OrderBook().submit_market_order(Side.BUY, 0)


@pytest.mark.parametrize("bid,ask,mid,spread", [(99, 101, 100, 2), (99, 100, 100, 1)])
def test_best_quotes_mid_rounding(bid, ask, mid, spread):
    book = book_with(Order(1, 1, Side.BUY, 1, bid), Order(2, 1, Side.SELL, 1, ask))
    q = best_quotes(book)
    assert (q.best_bid, q.best_ask, q.mid, q.market_spread) == (bid, ask, mid, spread)


def test_mid_fallbacks():
    assert OrderBook().best_quotes().mid == OPENING_PRICE
    book = book_with(Order(1, 1, Side.SELL, 2, 100_500))
    book.submit_market_order(Side.BUY, 1)
    q = book.best_quotes()
    assert q.mid == 100_500 and q.market_spread is None


def test_round_half_up():
    assert round_half_up(199, 2) == 100
    assert round_half_up(197, 2) == 99
    assert round_half_up(10, 4) == 3
    assert round_half_up(9, 4) == 2


def test_clock():
    c = SimClock(2)
    c.advance()
    c.advance()
    assert c.done
    with pytest.raises(RuntimeError):
        c.advance()


def test_rng_streams():
    reg = RngRegistry(42)
    a = reg.agent_stream(1).random(100)
    assert np.array_equal(a, RngRegistry(42).agent_stream(1).random(100))
    assert not np.array_equal(a, reg.agent_stream(2).random(100))
    # drawing from other agents (including a newly added one) never perturbs agent 1
    reg2 = RngRegistry(42)
    reg2.stream(99).random(1000)
    for i in range(2, 99):
        reg2.stream(i).random(3)
    assert np.array_equal(reg2.stream(1).random(100), a)
    assert RngRegistry(42).child(0, 1).master_seed == RngRegistry(42).child(0, 1).master_seed
    assert RngRegistry(42).child(0, 1).master_seed != RngRegistry(42).child(1, 0).master_seed


def test_snapshot_and_event_log(tmp_path):
    book = OrderBook(record_events=True)
    book.submit_limit_order(Order(1, 3, Side.SELL, 5, 101))
    book.submit_market_order(Side.BUY, 2, agent_id=4)
    book.cancel_order(1)
    kinds = [e[1] for e in book.events]
    assert kinds == ["limit", "accept", "market", "fill", "cancel"]
    write_event_log(tmp_path / "ev.csv", book.events)
    header = (tmp_path / "ev.csv").read_text().splitlines()[0]
    assert header == "step,event_kind,agent_id,side,qty,price_ticks,order_id"
    book.dump_snapshot(tmp_path / "snap.json")
    assert json.loads((tmp_path / "snap.json").read_text())["asks"] == []


def _random_ops(rng, n):
    ops, next_id, live = [], 1, []
    for _ in range(n):
        u = rng.random()
        if u < 0.15 and live:
            ops.append(("cancel", live[int(rng.integers(len(live)))]))
        elif u < 0.35:
            ops.append(("market", "buy" if rng.random() < 0.5 else "sell", int(rng.integers(1, 15))))
        else:
            side = "buy" if rng.random() < 0.5 else "sell"
            ops.append(("limit", next_id, side, int(rng.integers(1, 15)), int(rng.integers(95, 106))))
            live.append(next_id)
            next_id += 1
    return ops


def _replay(ops):
    book, ref = OrderBook(), NaiveBook()
    for step, op in enumerate(ops):
        book.step = step
        if op[0] == "limit":
            _, oid, side, qty, price = op
            fills, rest = book.submit_limit_order(Order(oid, oid % 7, Side(side), qty, price, step))
            rfills, rrest = ref.limit(oid, oid % 7, side, qty, price)
        elif op[0] == "market":
            _, side, qty = op
            fills, rest = book.submit_market_order(Side(side), qty, agent_id=-1)
            rfills, rrest = ref.market(side, qty, -1)
        else:
            rest = book.cancel_order(op[1])
            rrest = ref.cancel(op[1])
            fills, rfills = [], []
        assert [(f.maker_order_id, f.maker_agent_id, f.taker_agent_id, f.qty, f.price) for f in fills] == rfills
        assert rest == rrest
        assert book.last_trade_price == ref.last
    for side in ("buy", "sell"):
        assert book.depth(Side(side)) == ref.depth(side)
        for price, _ in ref.depth(side):
            assert [(o.id, o.qty) for o in book.level_orders(Side(side), price)] == ref.queue(side, price)


def test_matches_naive_reference_on_random_sequences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        _replay(_random_ops(rng, int(rng.integers(1, 200))))


@given(st.lists(st.tuples(st.sampled_from(["buy", "sell"]), st.integers(1, 20), st.integers(90, 110)), max_size=60))
def test_book_never_crossed_and_fills_conserve(orders):
    book = OrderBook()
    for i, (side, qty, price) in enumerate(orders):
        fills, rest = book.submit_limit_order(Order(i + 1, i, Side(side), qty, price))
        assert sum(f.qty for f in fills) + rest == qty
        # fills never at a price worse than the taker's limit
        for f in fills:
            assert (f.price <= price) if side == "buy" else (f.price >= price)
        if book.best_bid is not None and book.best_ask is not None:
            assert book.best_bid < book.best_ask
