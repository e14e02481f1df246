"""Experiment drivers: training, greedy testing, sweeps and the context sequence.

Every driver takes an :class:`ExperimentConfig`, a seed and an output
directory, writes a deterministic file tree and returns in-memory results.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..kernel import RngRegistry, write_event_log
from ..morl_metrics import ObjectivePoint
from ..policies import STATE_ARITY
from ..rewards import RewardFunction
from ..rl import GreedyPolicy, QLearner
from .config import ExperimentConfig, MMSlot, RewardSection, dump_config
from .env import (
    CONTEXT_PHASE,
    CONTROLLER_STREAM_BASE,
    EXPLORE_PHASE,
    LIBRARY_PHASE,
    STEP_COLUMNS,
    TEST_PHASE,
    TRAIN_PHASE,
    GreedyMM,
    LearnerMM,
    LibraryMM,
    MarketMaker,
    SessionStats,
    build_lineup,
    make_learner,
    run_session,
    session_registry,
)

log = logging.getLogger(__name__)

SESSION_COLUMNS = tuple(f.name for f in dataclasses.fields(SessionStats))


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


class RunWriter:
    """Writes ``sessions.csv`` (and optionally ``steps.csv``) incrementally."""

    def __init__(self, out_dir: Optional[str], step_logs: bool):
        self.out_dir = out_dir
        self.step_logs = step_logs and out_dir is not None
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        self._sessions = open(os.path.join(out_dir, "sessions.csv"), "w", newline="")
        self._sw = csv.writer(self._sessions)
        self._sw.writerow(SESSION_COLUMNS)
        if self.step_logs:
            self._steps = open(os.path.join(out_dir, "steps.csv"), "w", newline="")
            self._tw = csv.writer(self._steps)
            self._tw.writerow(STEP_COLUMNS)

    def write(self, stats: Iterable[SessionStats], rows: Iterable[tuple] = ()) -> None:
        if self.out_dir is None:
            return
        for st in stats:
            self._sw.writerow([_fmt(getattr(st, c)) for c in SESSION_COLUMNS])
        if self.step_logs:
            for row in rows:
                self._tw.writerow([_fmt(v) for v in row])

    def close(self) -> None:
        if self.out_dir is None:
            return
        self._sessions.close()
        if self.step_logs:
            self._steps.close()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _mean_std(xs: Sequence[float]) -> dict:
    a = np.asarray([x for x in xs if x is not None], dtype=float)
    if len(a) == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(a.mean()), "std": float(a.std()), "n": int(len(a))}


def summarize(stats: Sequence[SessionStats]) -> Dict[str, dict]:
    """Per-MM aggregates across sessions (mean and population std)."""
    out: Dict[str, dict] = {}
    for name in sorted({s.mm for s in stats}):
        mine = [s for s in stats if s.mm == name]
        out[name] = {
            "kind": mine[0].kind,
            "sessions": len(mine),
            "mean_reward": _mean_std([s.mean_reward for s in mine]),
            "total_reward": _mean_std([s.total_reward for s in mine]),
            "mtm_pnl": _mean_std([s.mtm_pnl for s in mine]),
            "mtm_ratio": _mean_std([s.mtm_ratio for s in mine]),
            "mean_abs_inventory": _mean_std([s.mean_abs_inventory for s in mine]),
            "cash_inventory_ratio": _mean_std([s.cash_inventory_ratio for s in mine]),
        }
    return out


# ---------------------------------------------------------------------------
# training and testing


@dataclass
class TrainResult:
    stats: List[SessionStats]
    learners: Dict[str, QLearner]
    policies: Dict[str, GreedyPolicy]
    out_dir: Optional[str] = None

    @property
    def summary(self) -> Dict[str, dict]:
        return summarize(self.stats)


def _learners(mms: Sequence[MarketMaker]) -> Dict[str, QLearner]:
    return {mm.name: mm.learner for mm in mms if isinstance(mm, LearnerMM)}


def run_training(cfg: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[str] = None) -> TrainResult:
    """Train the configured lineup for ``cfg.n_sessions`` sessions.

    Learner checkpoints are written to ``checkpoints/<mm>/session_<k>`` after
    ``k`` completed sessions for every ``k`` in ``cfg.checkpoints``, and the
    final policies to ``policies/<mm>``.
    """
    seed = cfg.seed if seed is None else seed
    master = RngRegistry(seed)
    mms = build_lineup(cfg, master)
    learners = _learners(mms)
    writer = RunWriter(out_dir, cfg.step_logs)
    if out_dir is not None:
        dump_config(cfg, os.path.join(out_dir, "config.yaml"))
    stats: List[SessionStats] = []

    def checkpoint(k: int) -> None:
        if out_dir is None or k not in cfg.checkpoints:
            return
        for name, learner in learners.items():
            learner.save(os.path.join(out_dir, "checkpoints", name, f"session_{k}"))

    try:
        for s in range(cfg.n_sessions):
            checkpoint(s)
            res = run_session(cfg, mms, session_registry(master, TRAIN_PHASE, s), s, log_steps=writer.step_logs)
            writer.write(res.stats, res.rows)
            if res.market_events is not None and out_dir is not None:
                write_event_log(os.path.join(out_dir, f"market_events_{s}.csv"), res.market_events)
            stats.extend(res.stats)
            log.info("train seed=%d session=%d %s", seed, s, {st.mm: round(st.mean_reward, 2) for st in res.stats})
        checkpoint(cfg.n_sessions)
    finally:
        writer.close()
    policies = {name: l.snapshot() for name, l in learners.items()}
    result = TrainResult(stats, learners, policies, out_dir)
    if out_dir is not None:
        for name, learner in learners.items():
            learner.save(os.path.join(out_dir, "policies", name))
        write_json(os.path.join(out_dir, "summary.json"), {"seed": seed, "phase": "train", "mms": result.summary})
    return result


def load_policies(checkpoint_dir: str, cfg: ExperimentConfig) -> Dict[str, GreedyPolicy]:
    """Load every ``<mm>/`` policy under ``checkpoint_dir``, checking the state arity."""
    out = {}
    for name in sorted(os.listdir(checkpoint_dir)):
        path = os.path.join(checkpoint_dir, name)
        if not os.path.isfile(os.path.join(path, "learner.json")):
            continue
        pol = GreedyPolicy.load(path)
        if pol.spec.input_arity != STATE_ARITY[cfg.state.variant]:
            raise ValueError(
                f"checkpoint {path} expects {pol.spec.input_arity} features but state variant "
                f"{cfg.state.variant} has {STATE_ARITY[cfg.state.variant]}"
            )
        out[name] = pol
    if not out:
        raise ValueError(f"no policies found under {checkpoint_dir}")
    return out


@dataclass
class TestResult:
    stats: List[SessionStats]
    out_dir: Optional[str] = None

    @property
    def summary(self) -> Dict[str, dict]:
        return summarize(self.stats)


def run_test(cfg: ExperimentConfig, policies, seed: Optional[int] = None, out_dir: Optional[str] = None) -> TestResult:
    """Greedy-only sessions: learners are replaced by frozen ``policies``.

    ``policies`` is a name -> :class:`GreedyPolicy` mapping or a directory
    as written by :func:`run_training` (``policies/``).
    """
    seed = cfg.seed if seed is None else seed
    if isinstance(policies, (str, os.PathLike)):
        policies = load_policies(str(policies), cfg)
    master = RngRegistry(seed)
    mms = build_lineup(cfg, master, policies=policies)
    missing = [mm.name for mm in mms if isinstance(mm, LearnerMM)]
    if missing:
        raise ValueError(f"no test policy for learner slot(s) {missing}")
    writer = RunWriter(out_dir, cfg.step_logs)
    stats: List[SessionStats] = []
    try:
        for s in range(cfg.n_test_sessions):
            res = run_session(cfg, mms, session_registry(master, TEST_PHASE, s), s, log_steps=writer.step_logs)
            writer.write(res.stats, res.rows)
            stats.extend(res.stats)
    finally:
        writer.close()
    result = TestResult(stats, out_dir)
    if out_dir is not None:
        write_json(os.path.join(out_dir, "summary.json"), {"seed": seed, "phase": "test", "mms": result.summary})
    return result


def train_and_test(cfg: ExperimentConfig, seed: int, out_dir: Optional[str]) -> Tuple[TrainResult, TestResult]:
    tr = run_training(cfg, seed, None if out_dir is None else os.path.join(out_dir, "train"))
    te = run_test(cfg, tr.policies, seed, None if out_dir is None else os.path.join(out_dir, "test"))
    return tr, te


def _sub(out_dir: Optional[str], *parts) -> Optional[str]:
    return None if out_dir is None else os.path.join(out_dir, *[str(p) for p in parts])


def with_learner(cfg: ExperimentConfig, kind: str = "dqn", w: float = 1.0, reward: Optional[RewardSection] = None) -> ExperimentConfig:
    """Copy of ``cfg`` whose learner slots are of ``kind`` with weight ``w``."""
    lineup = [dataclasses.replace(s, kind=kind, w=w) if s.kind in ("dqn", "morl") else s for s in cfg.lineup]
    if not any(s.kind == kind for s in lineup):
        lineup = [MMSlot(kind, 1, w)] + lineup
    return dataclasses.replace(cfg, lineup=lineup, reward=reward or cfg.reward)


def _learner_stats(stats: Sequence[SessionStats]) -> List[SessionStats]:
    return [s for s in stats if s.kind in ("dqn", "morl")]


# ---------------------------------------------------------------------------
# sweeps


def run_aiif_sweep(cfg: ExperimentConfig, aiif_list: Optional[Sequence[float]] = None, out_dir: Optional[str] = None, seeds=None) -> dict:
    """Train+test one RIM learner per (AIIF, seed); returns the ratio table."""
    aiif_list = list(cfg.sweep.aiif if aiif_list is None else aiif_list)
    seeds = list(cfg.seeds() if seeds is None else seeds)
    rows = []
    for aiif in aiif_list:
        reward = dataclasses.replace(cfg.reward, kind="rim", aiif=float(aiif))
        c = with_learner(cfg, "dqn", 1.0, reward)
        for seed in seeds:
            _, te = train_and_test(c, seed, _sub(out_dir, f"aiif_{aiif}", f"seed_{seed}"))
            agg = summarize(_learner_stats(te.stats))
            for name, a in agg.items():
                rows.append(
                    {
                        "aiif": float(aiif),
                        "seed": seed,
                        "mm": name,
                        "mean_abs_inventory": a["mean_abs_inventory"]["mean"],
                        "mtm_pnl": a["mtm_pnl"]["mean"],
                        "mean_reward": a["mean_reward"]["mean"],
                        "cash_inventory_ratio": a["cash_inventory_ratio"]["mean"],
                    }
                )
    table = {"rows": rows, "by_aiif": _group_means(rows, "aiif")}
    if out_dir is not None:
        write_json(os.path.join(out_dir, "aiif_sweep.json"), table)
        _write_rows_csv(os.path.join(out_dir, "aiif_sweep.csv"), rows)
    return table


def _group_means(rows: Sequence[dict], key: str) -> List[dict]:
    out = []
    for k in sorted({r[key] for r in rows}, key=lambda v: (isinstance(v, str), v)):
        mine = [r for r in rows if r[key] == k]
        agg = {key: k, "n": len(mine)}
        for col in ("mean_abs_inventory", "mtm_pnl", "mean_reward", "cash_inventory_ratio"):
            vals = [r[col] for r in mine if r.get(col) is not None]
            agg[col] = float(np.mean(vals)) if vals else None
        out.append(agg)
    return out


def _write_rows_csv(path, rows: Sequence[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def _objective_points(label: str, w: float, runs: Sequence[TestResult]) -> ObjectivePoint:
    """Mean over seeds of (terminal MtM PnL, -mean |inventory|) of the learner."""
    mtm, inv = [], []
    for te in runs:
        mine = _learner_stats(te.stats)
        mtm.append(np.mean([s.mtm_pnl for s in mine]))
        inv.append(np.mean([s.mean_abs_inventory for s in mine]))
    return ObjectivePoint(float(np.mean(mtm)), -float(np.mean(inv)), f"{label}:{w}")


def run_morl_weight_sweep(
    cfg: ExperimentConfig,
    weights: Optional[Sequence[float]] = None,
    out_dir: Optional[str] = None,
    family: str = "morl",
    seeds=None,
) -> List[ObjectivePoint]:
    """One point per weight for the MORL agent (``family='morl'``) or RE-W (``'rew'``).

    ``family='rim'`` sweeps AIIF values instead of weights (the RE-AIIF set).
    """
    seeds = list(cfg.seeds() if seeds is None else seeds)
    if family == "morl":
        weights = list(cfg.sweep.morl_weights if weights is None else weights)
    elif family == "rew":
        weights = list(cfg.sweep.rew_weights if weights is None else weights)
    elif family == "rim":
        weights = list(cfg.sweep.aiif if weights is None else weights)
    else:
        raise ValueError(f"unknown sweep family {family!r}")
    points = []
    for w in weights:
        if family == "morl":
            c = with_learner(cfg, "morl", float(w))
        elif family == "rew":
            c = with_learner(cfg, "dqn", 1.0, dataclasses.replace(cfg.reward, kind="rew", w=float(w)))
        else:
            c = with_learner(cfg, "dqn", 1.0, dataclasses.replace(cfg.reward, kind="rim", aiif=float(w)))
        runs = [train_and_test(c, seed, _sub(out_dir, f"{family}_{w}", f"seed_{seed}"))[1] for seed in seeds]
        points.append(_objective_points(family, float(w), runs))
    if out_dir is not None:
        write_json(os.path.join(out_dir, f"points_{family}.json"), [dataclasses.asdict(p) for p in points])
    return points


BENCHMARK_ARMS = ("rim", "full_inv", "asym_damp", "pnl_only")


def run_reward_benchmark(cfg: ExperimentConfig, out_dir: Optional[str] = None, seeds=None) -> dict:
    """Compare RIM (each AIIF in ``cfg.sweep.rim_aiif``), Full-Inv, Asym-Damp and PnL-only."""
    seeds = list(cfg.seeds() if seeds is None else seeds)
    arms: List[Tuple[str, RewardSection]] = [
        (f"rim_{a}", dataclasses.replace(cfg.reward, kind="rim", aiif=float(a))) for a in cfg.sweep.rim_aiif
    ]
    arms += [(k, dataclasses.replace(cfg.reward, kind=k)) for k in ("full_inv", "asym_damp", "pnl_only")]
    rows = []
    for label, reward in arms:
        c = with_learner(cfg, "dqn", 1.0, reward)
        for seed in seeds:
            _, te = train_and_test(c, seed, _sub(out_dir, label, f"seed_{seed}"))
            for name, a in summarize(_learner_stats(te.stats)).items():
                rows.append(
                    {
                        "reward": label,
                        "seed": seed,
                        "mm": name,
                        "mtm_pnl": a["mtm_pnl"]["mean"],
                        "mean_abs_inventory": a["mean_abs_inventory"]["mean"],
                        "cash_inventory_ratio": a["cash_inventory_ratio"]["mean"],
                        "mean_reward": a["mean_reward"]["mean"],
                    }
                )
    table = {"rows": rows, "by_reward": _group_means(rows, "reward")}
    if out_dir is not None:
        write_json(os.path.join(out_dir, "reward_benchmark.json"), table)
        _write_rows_csv(os.path.join(out_dir, "reward_benchmark.csv"), rows)
    return table


# ---------------------------------------------------------------------------
# non-stationary context sequence

CONTEXT_METHODS = (
    "single-policy",
    "cl-singlep",
    "cl-freezing",
    "cl-rehearsal",
    "cl-ewc",
    "powdts",
    "random-blocks",
    "random-timesteps",
    "optimal-mp",
)


def parse_method(method: str) -> Tuple[str, bool, Optional[str]]:
    """``name[:arg][-exp]`` -> (name, exploration flag, argument)."""
    explore = method.endswith("-exp")
    base = method[: -len("-exp")] if explore else method
    base, _, arg = base.partition(":")
    if base not in CONTEXT_METHODS:
        raise ValueError(f"unknown context method {method!r}; expected one of {CONTEXT_METHODS}")
    if explore and not base.startswith("cl-"):
        raise ValueError("exploration variants exist only for the continual-learning methods")
    return base, explore, arg or None


@dataclass
class Library:
    """Pre-trained MORL learners keyed by the competitor count they trained against."""

    learners: Dict[int, QLearner]
    baseline_policy: GreedyPolicy

    def policy(self, count: int) -> GreedyPolicy:
        return self.learners[count].snapshot()

    @property
    def counts(self) -> List[int]:
        return sorted(self.learners)


def _context_cfg(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(cfg, lineup=[MMSlot("morl", 1, cfg.context.blend_w)])


def _morl_reward(cfg: ExperimentConfig) -> RewardFunction:
    return RewardFunction("morl", alpha=cfg.reward.alpha)


def _competitors(cfg: ExperimentConfig, policy: GreedyPolicy, n: int) -> List[MarketMaker]:
    w = cfg.context.blend_w
    return [
        GreedyMM(f"competitor{i}", policy.with_weight(w), cfg.state.variant, cfg.state.ema_preset, reward=_morl_reward(cfg), score_w=w)
        for i in range(n)
    ]


def pretrain_library(cfg: ExperimentConfig, seed: int, out_dir: Optional[str] = None) -> Library:
    """Train one MORL agent per library competitor count.

    The zero-competitor agent is the baseline; the other agents train against
    greedy copies of the baseline policy.
    """
    master = RngRegistry(seed)
    ctx = cfg.context
    counts = sorted(set(ctx.library) | {0})
    learners: Dict[int, QLearner] = {}
    baseline_policy: Optional[GreedyPolicy] = None
    w = ctx.blend_w
    for j, count in enumerate(counts):
        learner = make_learner(cfg, master, 100 + j, 2, w, n_sessions=ctx.pretrain_sessions)
        agent = LearnerMM("agent", learner, cfg.state.variant, cfg.state.ema_preset, reward=_morl_reward(cfg), score_w=w)
        agent.kind = "morl"
        mms: List[MarketMaker] = [agent] + (_competitors(cfg, baseline_policy, count) if count else [])
        writer = RunWriter(_sub(out_dir, f"library_{count}"), False)
        try:
            for s in range(ctx.pretrain_sessions):
                res = run_session(cfg, mms, master.child(LIBRARY_PHASE, count, s), s)
                writer.write(res.stats)
        finally:
            writer.close()
        learners[count] = learner
        if count == 0:
            baseline_policy = learner.snapshot()
        if out_dir is not None:
            learner.save(os.path.join(out_dir, f"library_{count}", "policy"))
    return Library(learners, baseline_policy)


@dataclass
class ContextResult:
    method: str
    seed: int
    stats: List[SessionStats]
    blocks: List[int]  # context block index per entry of ``stats``
    exploration: List[bool]
    recalibrations: List[dict] = field(default_factory=list)

    def summary(self) -> dict:
        sequence_stats = self.stats
        per_block = []
        for b in sorted(set(self.blocks)):
            mine = [s for s, bb in zip(sequence_stats, self.blocks) if bb == b]
            per_block.append(
                {
                    "block": b,
                    "sessions": len(mine),
                    "mean_reward": float(np.mean([s.mean_reward for s in mine])),
                    "mtm_ratio": float(np.mean([s.mtm_ratio for s in mine])),
                    "mean_abs_inventory": float(np.mean([s.mean_abs_inventory for s in mine])),
                }
            )
        return {
            "method": self.method,
            "seed": self.seed,
            "sessions": len(sequence_stats),
            "mean_reward": float(np.mean([s.mean_reward for s in sequence_stats])),
            "mtm_ratio": float(np.mean([s.mtm_ratio for s in sequence_stats])),
            "mean_abs_inventory": float(np.mean([s.mean_abs_inventory for s in sequence_stats])),
            "blocks": per_block,
            "n_recalibrations": len(self.recalibrations),
        }


def _cl_agent(cfg: ExperimentConfig, library: Library, base: str, arg: Optional[str]) -> LearnerMM:
    ctx = cfg.context
    learner = copy.deepcopy(library.learners[0])
    lr = float(arg) if (base == "cl-singlep" and arg) else ctx.cl_lr
    for h in learner.heads:
        h.adam.lr = lr
    if base == "cl-freezing":
        learner.freeze_layers(ctx.frozen_layers)
    elif base == "cl-rehearsal":
        learner.start_rehearsal(float(arg) if arg else ctx.gamma_mix)
    elif base == "cl-ewc":
        learner.anchor_ewc(float(arg) if arg else ctx.ewc_lambda)
    agent = LearnerMM("agent", learner, cfg.state.variant, cfg.state.ema_preset, explore=True, reward=_morl_reward(cfg), score_w=ctx.blend_w)
    agent.kind = "morl"
    return agent


def run_context_sequence(
    cfg: ExperimentConfig,
    method: str,
    seed: Optional[int] = None,
    library: Optional[Library] = None,
    out_dir: Optional[str] = None,
) -> ContextResult:
    """Drive one method through the competitor-count context sequence.

    Sessions of the main sequence share their market seeds across methods;
    exploration sessions of the ``-exp`` variants use their own seeds.
    """
    seed = cfg.seed if seed is None else seed
    base, explore, arg = parse_method(method)
    ctx = cfg.context
    master = RngRegistry(seed)
    if library is None:
        library = pretrain_library(cfg, seed, _sub(out_dir, "library"))
    w = ctx.blend_w
    variant, preset = cfg.state.variant, cfg.state.ema_preset

    agent: MarketMaker
    if base == "single-policy":
        k = int(arg) if arg is not None else 0
        agent = GreedyMM("agent", library.policy(k).with_weight(w), variant, preset, reward=_morl_reward(cfg), score_w=w)
    elif base == "optimal-mp":
        agent = None  # chosen per block
    elif base in ("powdts", "random-blocks", "random-timesteps"):
        pols = [library.policy(c).with_weight(w) for c in library.counts]
        agent = LibraryMM("agent", pols, variant, base, cfg.powdts, master.stream(CONTROLLER_STREAM_BASE), preset, reward=_morl_reward(cfg), score_w=w)
    else:
        agent = _cl_agent(cfg, library, base, arg)

    stats: List[SessionStats] = []
    blocks: List[int] = []
    exploration: List[bool] = []
    writer = RunWriter(out_dir, cfg.step_logs)
    session_idx = 0
    try:
        for b, count in enumerate(ctx.sequence):
            if base == "optimal-mp":
                nearest = min(library.counts, key=lambda c: (abs(c - count), c))
                agent = GreedyMM("agent", library.policy(nearest).with_weight(w), variant, preset, reward=_morl_reward(cfg), score_w=w)
            mms = [agent] + _competitors(cfg, library.baseline_policy, count)
            plan = [(True, j) for j in range(ctx.exploration_sessions)] if explore else []
            plan += [(False, j) for j in range(ctx.sessions_per_context)]
            for is_exp, j in plan:
                if isinstance(agent, LearnerMM):
                    agent.learner.eps_override = 1.0 if is_exp else None
                reg = master.child(EXPLORE_PHASE, b, j) if is_exp else master.child(CONTEXT_PHASE, b, j)
                res = run_session(cfg, mms, reg, session_idx, log_steps=writer.step_logs)
                writer.write(res.stats, res.rows)
                stats.append(res.stats[0])
                blocks.append(b)
                exploration.append(is_exp)
                session_idx += 1
    finally:
        writer.close()
    recal = []
    if isinstance(agent, LibraryMM) and agent.scheduler is not None:
        recal = [r.as_dict() for r in agent.scheduler.history]
    result = ContextResult(method, seed, stats, blocks, exploration, recal)
    if out_dir is not None:
        write_json(os.path.join(out_dir, "summary.json"), result.summary())
        if recal:
            write_json(os.path.join(out_dir, "recalibrations.json"), recal)
    return result
