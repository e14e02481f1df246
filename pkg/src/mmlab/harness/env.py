"""Trading sessions: background market, dealer layer and the experimental MMs.

Step order at step ``t`` (mid ``m_t``, market spread ``s_t``):

1. every MM picks an action from its observation;
2. every MM hedges ``round(|inv| * eta_h)`` shares at ``m_t`` paying ``s_t`` each;
3. MMs quote ``s_t * (1 + eta)`` on each side and investors trade with the
   cheapest quote;
4. the background market advances to ``m_{t+1}``;
5. inventory is revalued: ``PnL = inv * (m_{t+1} - m_t)``.

Hence ``MtM_{t+1} - MtM_t = E + PnL - HgC`` holds exactly per step.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..background import BackgroundMarket
from ..dealer import DealerFills, MMAccount, dealer_step, hedge, quote_from_etas
from ..kernel import RngRegistry
from ..policies import ACTION_TABLE, N_ACTIONS, STATE_ARITY, StateBuilder
from ..powdts import PowDtsCfg, PowDtsScheduler, agent_for_timestep, sections_from_weights
from ..rewards import RewardFunction, RewardTerms
from ..rl import GreedyPolicy, QLearner
from .config import ExperimentConfig

INVESTOR_ID = 5_000
MM_STREAM_BASE = 6_000
LEARNER_STREAM_BASE = 7_000
CONTROLLER_STREAM_BASE = 8_000

STEP_COLUMNS = (
    "session",
    "step",
    "mm",
    "action",
    "eta_b",
    "eta_s",
    "eta_h",
    "buy_spread",
    "sell_spread",
    "hedged",
    "buys",
    "sells",
    "mid",
    "next_mid",
    "market_spread",
    "E",
    "PnL",
    "HgC",
    "reward",
    "reward2",
    "inventory",
    "cash",
    "mtm",
    "policy",
)


def initial_obs(spread: int) -> Dict[str, float]:
    return {
        "buys_prev": 0,
        "sells_prev": 0,
        "buy_count_prev": 0,
        "sell_count_prev": 0,
        "inv_now": 0,
        "inv_prev": 0,
        "dmid": 0,
        "spread_now": spread,
        "spread_prev": spread,
        "volume_prev": 0,
        "market_volume_prev": 0,
    }


def next_obs(fills: DealerFills, inv_now: int, inv_prev: int, dmid: int, spread_now: int, spread_prev: int, market_volume: int):
    return {
        "buys_prev": fills.bought,
        "sells_prev": fills.sold,
        "buy_count_prev": fills.buy_count,
        "sell_count_prev": fills.sell_count,
        "inv_now": inv_now,
        "inv_prev": inv_prev,
        "dmid": dmid,
        "spread_now": spread_now,
        "spread_prev": spread_prev,
        "volume_prev": fills.bought + fills.sold,
        "market_volume_prev": market_volume,
    }


# ---------------------------------------------------------------------------
# market makers


class MarketMaker:
    """Base class. Subclasses choose actions; the session settles them."""

    kind = "base"

    def __init__(self, name: str, reward: Optional[RewardFunction] = None, score_w: float = 1.0):
        self.name = name
        self.reward_fn = reward or RewardFunction("single")
        self.score_w = score_w
        self.last_policy = -1

    def begin_session(self, session: int, stream: np.random.Generator, spread: int) -> None:
        self.stream = stream
        self.reward_fn.reset()

    def act(self, obs: Dict[str, float], mid: int) -> int:
        raise NotImplementedError

    def feedback(self, action: int, reward, obs_next: Dict[str, float], next_mid: int) -> None:
        pass

    def end_session(self) -> None:
        pass

    def score(self, reward) -> tuple:
        """(scalar score, second component) of a scalar or vector reward."""
        if isinstance(reward, tuple):
            r1, r2 = reward
            return self.score_w * r1 + (1.0 - self.score_w) * r2, r2
        return reward, 0.0


class RandomMM(MarketMaker):
    kind = "random"

    def act(self, obs, mid):
        return int(self.stream.integers(N_ACTIONS))


class PersistentMM(MarketMaker):
    kind = "persistent"

    def begin_session(self, session, stream, spread):
        super().begin_session(session, stream, spread)
        self.action = int(stream.integers(N_ACTIONS))

    def act(self, obs, mid):
        return self.action


class _StatefulMM(MarketMaker):
    def __init__(self, name, variant: str, ema_preset=None, **kw):
        super().__init__(name, **kw)
        self.builder = StateBuilder(variant, ema_preset)

    def begin_session(self, session, stream, spread):
        super().begin_session(session, stream, spread)
        self.builder.reset()
        self._state = None

    def _state_for(self, obs, mid):
        if self._state is None:
            self.builder.observe_mid(mid)
            self._state = self.builder.build(obs)
        return self._state

    def _advance_state(self, obs_next, next_mid):
        self.builder.observe_mid(next_mid)
        self._state = self.builder.build(obs_next)


class LearnerMM(_StatefulMM):
    """Epsilon-greedy DQN or MORL agent that learns online."""

    kind = "learner"

    def __init__(self, name, learner: QLearner, variant, ema_preset=None, explore: bool = True, **kw):
        super().__init__(name, variant, ema_preset, **kw)
        self.learner = learner
        self.explore = explore

    def act(self, obs, mid):
        s = self._state_for(obs, mid)
        self._s = s
        return self.learner.act(s, explore=self.explore)

    def feedback(self, action, reward, obs_next, next_mid):
        self._advance_state(obs_next, next_mid)
        if self.learner.learning:
            r = reward if isinstance(reward, tuple) else (reward,)
            self.learner.observe(self._s, action, self._state, r)

    def end_session(self):
        self.learner.end_session()


class GreedyMM(_StatefulMM):
    """Acts greedily with a frozen policy snapshot."""

    kind = "greedy"

    def __init__(self, name, policy: GreedyPolicy, variant, ema_preset=None, **kw):
        super().__init__(name, variant, ema_preset, **kw)
        if policy.spec.input_arity != STATE_ARITY[variant]:
            raise ValueError(f"policy expects {policy.spec.input_arity} features, state variant {variant} has {STATE_ARITY[variant]}")
        self.policy = policy

    def act(self, obs, mid):
        return self.policy.act(self._state_for(obs, mid))

    def feedback(self, action, reward, obs_next, next_mid):
        self._advance_state(obs_next, next_mid)


class LibraryMM(_StatefulMM):
    """Acts with one of several frozen policies chosen per step by a controller.

    Args:
        policies: the library.
        mode: ``powdts``, ``random-blocks`` or ``random-timesteps``.
        powdts_cfg: scheduler settings (also supplies ``rounds_exp`` and ``exp_ts``
            for random blocks).
        stream: controller randomness (persists across sessions).
    """

    kind = "library"

    def __init__(self, name, policies: Sequence[GreedyPolicy], variant, mode: str, powdts_cfg: PowDtsCfg, stream, ema_preset=None, **kw):
        super().__init__(name, variant, ema_preset, **kw)
        if mode not in ("powdts", "random-blocks", "random-timesteps"):
            raise ValueError(f"unknown library mode {mode!r}")
        self.policies = list(policies)
        self.mode = mode
        self.cfg = powdts_cfg
        self.ctrl_stream = stream
        self.scheduler = PowDtsScheduler(len(self.policies), powdts_cfg, stream) if mode == "powdts" else None
        self.round = -1
        self.ts = 0
        self.secs = sections_from_weights(np.full(len(self.policies), 1.0 / len(self.policies)), powdts_cfg.exp_ts)

    def begin_session(self, session, stream, spread):
        super().begin_session(session, stream, spread)
        self.round += 1
        if self.scheduler is not None:
            self.scheduler.start_round(self.round)
        elif self.mode == "random-blocks" and self.round % self.cfg.rounds_exp == 0:
            w = self.ctrl_stream.dirichlet(np.ones(len(self.policies)))
            self.secs = sections_from_weights(w / w.sum(), self.cfg.exp_ts)
            self.ts = 0

    def _choose(self) -> int:
        if self.scheduler is not None:
            return self.scheduler.current()
        if self.mode == "random-timesteps":
            return int(self.ctrl_stream.integers(len(self.policies)))
        i = agent_for_timestep(self.secs, self.ts)
        self.ts += 1
        return i

    def act(self, obs, mid):
        self.last_policy = self._choose()
        return self.policies[self.last_policy].act(self._state_for(obs, mid))

    def feedback(self, action, reward, obs_next, next_mid):
        self._advance_state(obs_next, next_mid)
        if self.scheduler is not None:
            self.scheduler.record(self.score(reward)[0])


# ---------------------------------------------------------------------------
# sessions


@dataclass
class SessionStats:
    """Per-MM aggregates of one session (money in ticks)."""

    session: int
    mm: str
    kind: str
    steps: int
    total_reward: float
    mean_reward: float
    mean_reward2: float
    terminal_mtm: int
    mtm_pnl: int
    mtm_ratio: float
    mean_abs_inventory: float
    total_E: int
    total_HgC: int
    cash_inventory_ratio: Optional[float]
    traded_volume: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SessionResult:
    stats: List[SessionStats]
    rows: List[tuple] = field(default_factory=list)
    market_events: Optional[list] = None


def build_market(cfg: ExperimentConfig, registry: RngRegistry) -> BackgroundMarket:
    m = cfg.market
    return BackgroundMarket(
        registry,
        m.population(),
        m.noise_agent,
        m.value_agent,
        m.momentum_agent,
        m.pov_agent,
        record_events=cfg.market_events,
    )


def run_session(
    cfg: ExperimentConfig,
    mms: Sequence[MarketMaker],
    registry: RngRegistry,
    session: int,
    log_steps: bool = False,
) -> SessionResult:
    """Run one trading session for ``mms`` in a market seeded by ``registry``."""
    market = build_market(cfg, registry)
    investors = cfg.investors
    inv_stream = registry.stream(INVESTOR_ID)
    n = len(mms)
    accounts = [MMAccount(i) for i in range(n)]
    start_cash = [a.cash for a in accounts]
    spread = market.market_spread
    for i, mm in enumerate(mms):
        mm.begin_session(session, registry.stream(MM_STREAM_BASE + i), spread)
    obs = [initial_obs(spread) for _ in range(n)]

    T = cfg.steps_per_session
    sum_r = np.zeros(n)
    sum_r2 = np.zeros(n)
    sum_abs_inv = np.zeros(n)
    sum_cash = np.zeros(n)
    sum_inv_value = np.zeros(n)
    tot_E = [0] * n
    tot_H = [0] * n
    volume = [0] * n
    rows: List[tuple] = []

    for t in range(T):
        mid, spread = market.mid, market.market_spread
        actions = [mm.act(o, mid) for mm, o in zip(mms, obs)]
        inv_prev = [a.inventory for a in accounts]
        hedges = []
        quotes = []
        for acc, a in zip(accounts, actions):
            eb, es, eh = ACTION_TABLE[a]
            hedges.append(hedge(acc, eh, spread, mid))
            quotes.append(quote_from_etas(spread, eb, es))
        orders = investors.draw(inv_stream)
        fills = dealer_step(accounts, quotes, orders, investors.order_size, mid, inv_stream)
        market.advance()
        next_mid, next_spread = market.mid, market.market_spread
        dmid = next_mid - mid
        for i, (mm, acc) in enumerate(zip(mms, accounts)):
            f = fills[i]
            qty_h, hgc = hedges[i]
            pnl = acc.inventory * dmid
            terms = RewardTerms(f.earnings, pnl, hgc)
            reward = mm.reward_fn(terms, inv=acc.inventory, cash=acc.cash, mid=next_mid)
            o_next = next_obs(f, acc.inventory, inv_prev[i], dmid, next_spread, spread, market.step_volume)
            mm.feedback(actions[i], reward, o_next, next_mid)
            obs[i] = o_next
            r_scalar, r2 = mm.score(reward)
            sum_r[i] += r_scalar
            sum_r2[i] += r2
            sum_abs_inv[i] += abs(acc.inventory)
            sum_cash[i] += acc.cash
            sum_inv_value[i] += abs(acc.inventory) * next_mid
            tot_E[i] += f.earnings
            tot_H[i] += hgc
            volume[i] += f.bought + f.sold + qty_h
            if log_steps:
                q = quotes[i]
                rows.append(
                    (
                        session,
                        t,
                        mm.name,
                        actions[i],
                        *ACTION_TABLE[actions[i]],
                        q.buy_spread,
                        q.sell_spread,
                        qty_h,
                        f.bought,
                        f.sold,
                        mid,
                        next_mid,
                        spread,
                        f.earnings,
                        pnl,
                        hgc,
                        r_scalar,
                        r2,
                        acc.inventory,
                        acc.cash,
                        acc.mark_to_market(next_mid),
                        mm.last_policy,
                    )
                )

    stats = []
    final_mid = market.mid
    for i, (mm, acc) in enumerate(zip(mms, accounts)):
        mm.end_session()
        mtm = acc.mark_to_market(final_mid)
        stats.append(
            SessionStats(
                session=session,
                mm=mm.name,
                kind=mm.kind,
                steps=T,
                total_reward=float(sum_r[i]),
                mean_reward=float(sum_r[i] / T),
                mean_reward2=float(sum_r2[i] / T),
                terminal_mtm=int(mtm),
                mtm_pnl=int(mtm - start_cash[i]),
                mtm_ratio=float(mtm / start_cash[i]),
                mean_abs_inventory=float(sum_abs_inv[i] / T),
                total_E=int(tot_E[i]),
                total_HgC=int(tot_H[i]),
                cash_inventory_ratio=float(sum_cash[i] / sum_inv_value[i]) if sum_inv_value[i] > 0 else None,
                traded_volume=int(volume[i]),
            )
        )
    events = list(market.book.events) if market.book.events is not None else None
    return SessionResult(stats, rows, events)


# ---------------------------------------------------------------------------
# lineup construction


def make_learner(cfg: ExperimentConfig, registry: RngRegistry, slot_index: int, n_heads: int, w: float, n_sessions: Optional[int] = None) -> QLearner:
    arity = STATE_ARITY[cfg.state.variant]
    return QLearner(
        arity,
        cfg.rl,
        registry.stream(LEARNER_STREAM_BASE + slot_index),
        n_heads=n_heads,
        w=w,
        n_sessions=n_sessions or cfg.n_sessions,
    )


def build_lineup(cfg: ExperimentConfig, registry: RngRegistry, policies: Optional[Dict[str, GreedyPolicy]] = None) -> List[MarketMaker]:
    """Instantiate the configured MMs; named ``<kind><k>`` in lineup order.

    ``policies`` maps MM names to greedy snapshots, which replace learners
    (used for testing trained agents).
    """
    mms: List[MarketMaker] = []
    counters: Dict[str, int] = {}
    variant, preset = cfg.state.variant, cfg.state.ema_preset
    for slot in cfg.lineup:
        for _ in range(slot.count):
            k = counters.get(slot.kind, 0)
            counters[slot.kind] = k + 1
            name = f"{slot.kind}{k}"
            idx = len(mms)
            if slot.kind == "random":
                mms.append(RandomMM(name, cfg.reward.build()))
            elif slot.kind == "persistent":
                mms.append(PersistentMM(name, cfg.reward.build()))
            elif slot.kind in ("dqn", "morl"):
                morl = slot.kind == "morl"
                reward = RewardFunction("morl", alpha=cfg.reward.alpha) if morl else cfg.reward.build()
                w = slot.w if morl else 1.0
                if policies is not None and name in policies:
                    mms.append(GreedyMM(name, policies[name].with_weight(w), variant, preset, reward=reward, score_w=w))
                    mms[-1].kind = slot.kind
                else:
                    learner = make_learner(cfg, registry, idx, 2 if morl else 1, w)
                    learner.learning = slot.learn
                    mm = LearnerMM(name, learner, variant, preset, explore=slot.learn, reward=reward, score_w=w)
                    mm.kind = slot.kind
                    mms.append(mm)
            elif slot.kind == "greedy":
                if not slot.checkpoint:
                    raise ValueError("greedy slots need a checkpoint directory")
                pol = GreedyPolicy.load(slot.checkpoint).with_weight(slot.w)
                n_heads = len(pol.heads)
                reward = RewardFunction("morl", alpha=cfg.reward.alpha) if n_heads == 2 else cfg.reward.build()
                mms.append(GreedyMM(name, pol, variant, preset, reward=reward, score_w=slot.w if n_heads == 2 else 1.0))
    if not mms:
        raise ValueError("the lineup has no market makers")
    return mms


def session_registry(master: RngRegistry, phase: int, session: int) -> RngRegistry:
    """Market/investor randomness for one session; ``phase`` separates train and test."""
    return master.child(phase, session)


TRAIN_PHASE, TEST_PHASE, CONTEXT_PHASE, LIBRARY_PHASE, EXPLORE_PHASE = 0, 1, 2, 3, 4


def clone_learner(learner: QLearner) -> QLearner:
    return copy.deepcopy(learner)
