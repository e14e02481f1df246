"""Experiment configuration: typed sections, YAML loading and scale presets.

A config file is a nested YAML mapping whose sections mirror the dataclasses
below. Unknown keys anywhere are rejected. Top-level scalar keys can be
overridden with ``MMLAB_<KEY>`` environment variables (e.g. ``MMLAB_SEED=7``).
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple, get_args, get_origin, get_type_hints

import yaml

from ..background import MomentumCfg, NoiseAgentCfg, POVCfg, PopulationCfg, ValueAgentCfg
from ..dealer import InvestorFlow
from ..powdts import PowDtsCfg
from ..rewards import RewardFunction
from ..rl import LearnerConfig

MM_KINDS = ("dqn", "morl", "random", "persistent", "greedy")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class MarketSection:
    multiplier: float = 0.2
    noise: int = 100
    value: int = 10
    momentum: int = 10
    pov: int = 1
    noise_agent: NoiseAgentCfg = field(default_factory=NoiseAgentCfg)
    value_agent: ValueAgentCfg = field(default_factory=ValueAgentCfg)
    momentum_agent: MomentumCfg = field(default_factory=MomentumCfg)
    pov_agent: POVCfg = field(default_factory=POVCfg)

    def population(self) -> PopulationCfg:
        return PopulationCfg(self.noise, self.value, self.momentum, self.pov, self.multiplier)


@dataclass
class MMSlot:
    """A group of identical market makers in the lineup.

    Args:
        kind: ``dqn``, ``morl``, ``random``, ``persistent`` or ``greedy``.
        count: how many of them.
        w: MORL action-selection weight.
        checkpoint: policy directory for ``greedy`` slots.
        learn: learners update their networks (False = act greedily only).
    """

    kind: str = "dqn"
    count: int = 1
    w: float = 0.5
    checkpoint: Optional[str] = None
    learn: bool = True

    def __post_init__(self):
        if self.kind not in MM_KINDS:
            raise ConfigError(f"unknown MM kind {self.kind!r}; expected one of {MM_KINDS}")
        if self.count < 0:
            raise ConfigError("MM count must be >= 0")


@dataclass
class RewardSection:
    kind: str = "single"
    aiif: float = 0.0
    ditf: float = 0.5
    window: int = 20
    lam: float = 0.15
    eta: float = 0.1
    w: float = 0.5
    alpha: float = 5.0

    def build(self) -> RewardFunction:
        return RewardFunction(**dataclasses.asdict(self))


@dataclass
class StateSection:
    variant: str = "v8"
    ema_preset: Optional[str] = None


@dataclass
class ContextSection:
    """Non-stationary competitor schedule for the context-sequence experiments.

    Args:
        sequence: number of competitor MMs in each context block.
        sessions_per_context: trading sessions per block.
        exploration_sessions: extra epsilon = 1 sessions after each change for (Exp) variants.
        blend_w: weight of the MtM component in the multi-goal scalar reward.
        library: competitor counts for which library policies are pre-trained.
        pretrain_sessions: training sessions per library policy.
        ewc_lambda: EWC strength for ``cl-ewc``.
        gamma_mix: old-experience share for ``cl-rehearsal``.
        frozen_layers: layer indices frozen by ``cl-freezing``.
        cl_lr: learning rate for the continual-learning variants.
    """

    sequence: List[int] = field(default_factory=lambda: [0, 5, 1, 7, 1, 7, 5, 0])
    sessions_per_context: int = 30
    exploration_sessions: int = 30
    blend_w: float = 0.9
    library: List[int] = field(default_factory=lambda: [0, 1, 5, 7])
    pretrain_sessions: int = 30
    ewc_lambda: float = 1.0
    gamma_mix: float = 0.5
    frozen_layers: List[int] = field(default_factory=lambda: [0, 1, 2])
    cl_lr: float = 0.01

    def __post_init__(self):
        if any(c < 0 for c in self.sequence):
            raise ConfigError("context competitor counts must be >= 0")


@dataclass
class SweepSection:
    aiif: List[float] = field(default_factory=lambda: [0.0, 1.0, 10.0])
    morl_weights: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    rew_weights: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(11)])
    rim_aiif: List[float] = field(default_factory=lambda: [0.5, 1.0])


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 1
    scale: str = "desk"
    steps_per_session: int = 1800
    n_sessions: int = 30
    n_test_sessions: int = 10
    n_seeds: int = 3
    out_dir: str = "runs"
    step_logs: bool = True
    market_events: bool = False
    checkpoints: List[int] = field(default_factory=list)
    market: MarketSection = field(default_factory=MarketSection)
    investors: InvestorFlow = field(default_factory=InvestorFlow)
    lineup: List[MMSlot] = field(default_factory=lambda: [MMSlot("dqn"), MMSlot("random"), MMSlot("persistent")])
    reward: RewardSection = field(default_factory=RewardSection)
    state: StateSection = field(default_factory=StateSection)
    rl: LearnerConfig = field(default_factory=LearnerConfig)
    powdts: PowDtsCfg = field(default_factory=PowDtsCfg)
    context: ContextSection = field(default_factory=ContextSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}; expected one of {sorted(SCALES)}")
        if self.steps_per_session < 1 or self.n_sessions < 1 or self.n_seeds < 1:
            raise ConfigError("steps_per_session, n_sessions and n_seeds must be >= 1")

    def seeds(self) -> List[int]:
        return [self.seed + i for i in range(self.n_seeds)]

    def to_dict(self) -> dict:
        return _to_plain(self)


# scale presets: top-level values applied by ``with_scale``
SCALES: Dict[str, Dict[str, Any]] = {
    "desk": {"steps_per_session": 1800, "n_sessions": 30, "n_seeds": 3, "market.multiplier": 0.2, "context.sessions_per_context": 30},
    "paper": {"steps_per_session": 7200, "n_sessions": 150, "n_seeds": 5, "market.multiplier": 1.0, "context.sessions_per_context": 50},
}


def with_scale(cfg: ExperimentConfig, scale: str) -> ExperimentConfig:
    """Return a copy of ``cfg`` with the named scale preset applied."""
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}")
    data = cfg.to_dict()
    data["scale"] = scale
    for dotted, value in SCALES[scale].items():
        node = data
        *path, leaf = dotted.split(".")
        for p in path:
            node = node[p]
        node[leaf] = value
    return from_dict(data)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    return obj


def _build(tp, value, where: str):
    origin = get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        hints = get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp) if f.init}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigError(f"{where}: unknown key(s) {unknown}")
        kwargs = {k: _build(hints[k], v, f"{where}.{k}") for k, v in value.items()}
        try:
            return tp(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if origin is list or origin is List:
        (inner,) = get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return [_build(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is tuple or origin is Tuple:
        args = get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        inner = args[0]
        return tuple(_build(inner, v, f"{where}[{i}]") for i, v in enumerate(value))
    args = get_args(tp)
    if origin is not None and type(None) in args:  # Optional[X]
        if value is None:
            return None
        inner = next(a for a in args if a is not type(None))
        return _build(inner, value, where)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool):
        if not isinstance(value, tp) or (tp is int and isinstance(value, bool)):
            raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
    return value


def from_dict(data: Mapping) -> ExperimentConfig:
    return _build(ExperimentConfig, dict(data), "config")


def _coerce_env(raw: str):
    return yaml.safe_load(raw)


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None, env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Load YAML (or defaults), apply the scale preset, then env and explicit overrides.

    Precedence, lowest first: dataclass defaults, scale preset, file contents,
    ``MMLAB_*`` environment variables, ``overrides``.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        data.update(loaded)
    env = os.environ if env is None else env
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, raw in env.items():
        if key.startswith("MMLAB_"):
            name = key[len("MMLAB_") :].lower()
            if name not in top:
                raise ConfigError(f"environment override {key} names no top-level key")
            data[name] = _coerce_env(raw)
    data.update(overrides or {})
    scale = data.get("scale", "desk")
    base = with_scale(ExperimentConfig(), scale).to_dict()
    return from_dict(_deep_merge(base, data))


def _deep_merge(base: dict, new: Mapping) -> dict:
    out = dict(base)
    for k, v in new.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
