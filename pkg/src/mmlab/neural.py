"""A small fully connected Q-network with hand-written backpropagation.

Parameters live in one flat float64 array. Layer ``l`` owns a weight block of
shape ``(sizes[l], sizes[l+1])`` followed by a bias of length ``sizes[l+1]``,
laid out consecutively in that order. Hidden layers use ReLU, the head is
linear. Losses only involve the output unit of the action actually taken.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

HIDDEN = (32, 32, 32)
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetSpec:
    sizes: Tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("a net needs an input, at least one hidden layer and an output")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")

    @classmethod
    def mm(cls, input_arity: int, output_arity: int = 605, hidden: Sequence[int] = HIDDEN) -> "NetSpec":
        return cls((input_arity, *hidden, output_arity))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def input_arity(self) -> int:
        return self.sizes[0]

    @property
    def output_arity(self) -> int:
        return self.sizes[-1]

    def layout(self) -> List[Tuple[slice, Tuple[int, int], slice]]:
        """(weight slice, weight shape, bias slice) per layer."""
        out, pos = [], 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, (fan_in, fan_out), b))
        return out

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


def _views(spec: NetSpec, params: np.ndarray):
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    return [(params[w].reshape(shape), params[b]) for w, shape, b in spec.layout()]


def init_params(spec: NetSpec, stream: np.random.Generator) -> np.ndarray:
    """He-normal weights (variance ``2 / fan_in``) and zero biases."""
    params = np.zeros(spec.n_params)
    for w, (fan_in, fan_out), _ in spec.layout():
        params[w] = stream.normal(0.0, np.sqrt(2.0 / fan_in), size=fan_in * fan_out)
    return params


def _forward_cache(spec: NetSpec, params: np.ndarray, x: np.ndarray):
    layers = _views(spec, params)
    acts = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return layers, acts


def forward(spec: NetSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Q-values for one state (1-D input) or a batch (2-D input)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.input_arity:
        raise ValueError(f"input arity {x.shape[-1]} does not match {spec.input_arity}")
    h = x
    layers = _views(spec, params)
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i != last:
            np.maximum(h, 0.0, out=h)
    return h


LOSS_KINDS = ("mae", "mse")


def _residual_grad(pred: np.ndarray, target: np.ndarray, loss_kind: str) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and d(loss)/d(pred)."""
    res = pred - target
    if loss_kind == "mae":
        return np.abs(res), np.sign(res)
    if loss_kind == "mse":
        return res * res, 2.0 * res
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _backprop(spec, layers, acts, actions, dpred):
    """Per-sample deltas at every layer's pre-activation (list, input side first)."""
    n = acts[0].shape[0]
    delta = np.zeros((n, spec.output_arity))
    delta[np.arange(n), actions] = dpred
    deltas = [delta]
    for i in range(len(layers) - 1, 0, -1):
        W, _ = layers[i]
        delta = (delta @ W.T) * (acts[i] > 0)
        deltas.append(delta)
    deltas.reverse()
    return deltas


def _prep_batch(spec, x, actions, targets):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if not (x.shape[0] == actions.shape[0] == targets.shape[0]):
        raise ValueError("batch components disagree in length")
    if x.shape[1] != spec.input_arity:
        raise ValueError("input arity mismatch")
    return x, actions, targets


def loss_and_grad(
    spec: NetSpec, params: np.ndarray, x, actions, targets, loss_kind: str = "mae"
) -> Tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient with respect to ``params``."""
    x, actions, targets = _prep_batch(spec, x, actions, targets)
    n = x.shape[0]
    layers, acts = _forward_cache(spec, params, x)
    pred = acts[-1][np.arange(n), actions]
    losses, dpred = _residual_grad(pred, targets, loss_kind)
    deltas = _backprop(spec, layers, acts, actions, dpred / n)
    g = np.empty_like(params)
    for (w, shape, b), a, d in zip(spec.layout(), acts[:-1], deltas):
        g[w] = (a.T @ d).reshape(-1)
        g[b] = d.sum(axis=0)
    return float(losses.mean()), g


def grad(spec: NetSpec, params: np.ndarray, x, actions, targets, loss_kind: str = "mae") -> np.ndarray:
    return loss_and_grad(spec, params, x, actions, targets, loss_kind)[1]


def batch_loss(spec: NetSpec, params: np.ndarray, x, actions, targets, loss_kind: str = "mae") -> float:
    x, actions, targets = _prep_batch(spec, x, actions, targets)
    pred = forward(spec, params, x)[np.arange(x.shape[0]), actions]
    return float(_residual_grad(pred, targets, loss_kind)[0].mean())


@dataclass
class AdamState:
    n_params: int
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, freeze_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """One Adam update in place; entries where ``freeze_mask`` is True are untouched."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and optimizer state must share a shape")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    if freeze_mask is None or not freeze_mask.any():
        idx = slice(None)
    else:
        idx = ~freeze_mask
    g = grads[idx]
    state.m[idx] = b1 * state.m[idx] + (1 - b1) * g
    state.v[idx] = b2 * state.v[idx] + (1 - b2) * g * g
    m_hat = state.m[idx] / (1 - b1**state.t)
    v_hat = state.v[idx] / (1 - b2**state.t)
    params[idx] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def layer_freeze_mask(spec: NetSpec, frozen_layers: Sequence[int]) -> np.ndarray:
    """Boolean mask freezing the weights and biases of the listed layers (0 = first)."""
    mask = np.zeros(spec.n_params, dtype=bool)
    layout = spec.layout()
    for l in frozen_layers:
        w, _, b = layout[l]
        mask[w] = True
        mask[b] = True
    return mask


def estimate_fisher_diag(spec: NetSpec, params: np.ndarray, x, actions, targets, loss_kind: str = "mse") -> np.ndarray:
    """Mean over samples of the squared per-sample loss gradient."""
    x, actions, targets = _prep_batch(spec, x, actions, targets)
    n = x.shape[0]
    layers, acts = _forward_cache(spec, params, x)
    pred = acts[-1][np.arange(n), actions]
    _, dpred = _residual_grad(pred, targets, loss_kind)
    deltas = _backprop(spec, layers, acts, actions, dpred)
    fisher = np.empty_like(params)
    for (w, shape, b), a, d in zip(spec.layout(), acts[:-1], deltas):
        d2 = d * d
        fisher[w] = ((a * a).T @ d2).reshape(-1) / n
        fisher[b] = d2.mean(axis=0)
    return fisher


def ewc_penalty_and_grad(params: np.ndarray, anchor: np.ndarray, fisher: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    """``sum(lam/2 * F * (theta - theta*)^2)`` and its gradient ``lam * F * (theta - theta*)``."""
    if not (params.shape == anchor.shape == fisher.shape):
        raise ValueError("params, anchor and fisher must share a shape")
    diff = params - anchor
    g = lam * fisher * diff
    return float(0.5 * np.dot(g, diff)), g


def save_params(path, spec: NetSpec, params: np.ndarray) -> None:
    """Write an ``.npz`` holding a JSON header and the flat parameter array."""
    header = json.dumps({"format": FORMAT_VERSION, "sizes": list(spec.sizes), "n_params": spec.n_params})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(header), params=np.asarray(params, dtype=np.float64))


def load_params(path, expected: Optional[NetSpec] = None) -> Tuple[NetSpec, np.ndarray]:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            params = np.array(data["params"], dtype=np.float64)
        spec = NetSpec(tuple(header["sizes"]))
    except (KeyError, ValueError, TypeError, OSError) as exc:
        raise ValueError(f"unreadable parameter file {path}: {exc}") from None
    if header.get("format") != FORMAT_VERSION or header.get("n_params") != spec.n_params or params.shape != (spec.n_params,):
        raise ValueError(f"parameter file {path} has an inconsistent header")
    if expected is not None and expected != spec:
        raise ValueError(f"parameter file spec {spec.sizes} does not match expected {expected.sizes}")
    return spec, params


class QNetwork:
    """Params plus optimizer state for one :class:`NetSpec`."""

    def __init__(self, spec: NetSpec, stream: np.random.Generator, lr: float = 0.01, loss_kind: str = "mae"):
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss_kind!r}")
        self.spec = spec
        self.params = init_params(spec, stream)
        self.adam = AdamState(spec.n_params, lr=lr)
        self.loss_kind = loss_kind
        self.freeze_mask: Optional[np.ndarray] = None
        # EWC anchor: (theta*, fisher, lambda)
        self.ewc: Optional[Tuple[np.ndarray, np.ndarray, float]] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.spec, self.params, x)

    def fit_step(self, x, actions, targets) -> float:
        loss, g = loss_and_grad(self.spec, self.params, x, actions, targets, self.loss_kind)
        if self.ewc is not None:
            anchor, fisher, lam = self.ewc
            pen, g_ewc = ewc_penalty_and_grad(self.params, anchor, fisher, lam)
            loss += pen
            g += g_ewc
        adam_step(self.params, g, self.adam, self.freeze_mask)
        return loss

    def copy_params(self) -> np.ndarray:
        return self.params.copy()
