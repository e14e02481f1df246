"""Pareto tooling and front-quality metrics for two maximized objectives.

Points are ``(mtm_score, inv_score)`` with the inventory axis encoded as
``-mean|inventory|`` so that higher is better on both axes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

DEFAULT_MARGIN = 0.05


@dataclass(frozen=True)
class ObjectivePoint:
    mtm_score: float
    inv_score: float
    tag: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.mtm_score) and np.isfinite(self.inv_score)):
            raise ValueError("objective values must be finite")

    @property
    def xy(self) -> Tuple[float, float]:
        return (self.mtm_score, self.inv_score)


def _xy(p) -> Tuple[float, float]:
    return p.xy if isinstance(p, ObjectivePoint) else (float(p[0]), float(p[1]))


def dominates(p, q) -> bool:
    """True when ``p`` is at least as good on both axes and strictly better on one."""
    (px, py), (qx, qy) = _xy(p), _xy(q)
    return px >= qx and py >= qy and (px > qx or py > qy)


def undominated_mask(points: Sequence) -> np.ndarray:
    """Boolean mask of points no other point dominates (equal points all survive).

    Sort by x descending (y descending on ties); a point is dominated exactly
    when some earlier point has a strictly larger y, or an equal y and a
    strictly larger x.
    """
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=bool)
    xy = np.array([_xy(p) for p in points], dtype=float)
    order = np.lexsort((-xy[:, 1], -xy[:, 0]))
    mask = np.zeros(n, dtype=bool)
    best_y = -np.inf
    best_y_x = -np.inf  # largest x among earlier points attaining best_y
    for i in order:
        x, y = xy[i]
        if y > best_y:
            mask[i] = True
            best_y, best_y_x = y, x
        elif y == best_y:
            mask[i] = x >= best_y_x
        # y < best_y: the earlier point has x' >= x and y' > y, so dominated
    return mask


@dataclass
class FrontSet:
    points: List
    undominated: np.ndarray

    @property
    def front(self) -> List:
        return [p for p, keep in zip(self.points, self.undominated) if keep]


def pareto_filter(points: Sequence) -> FrontSet:
    pts = list(points)
    return FrontSet(pts, undominated_mask(pts))


@dataclass(frozen=True)
class MinMaxTransform:
    lo: Tuple[float, float]
    hi: Tuple[float, float]
    margin: float

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.empty_like(xy)
        for k in range(2):
            span = self.hi[k] - self.lo[k]
            out[:, k] = 0.5 if span == 0 else (xy[:, k] - self.lo[k]) / span
        return out + self.margin


def minmax_normalize(points: Sequence, margin: float = DEFAULT_MARGIN) -> Tuple[np.ndarray, MinMaxTransform]:
    """Scale each axis to ``[0, 1]`` then shift by ``margin``.

    The hypervolume reference is then the origin, which sits ``margin`` below
    the per-axis worst value (the nadir). A constant axis maps to 0.5.
    """
    xy = np.array([_xy(p) for p in points], dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        raise ValueError("no points to normalize")
    t = MinMaxTransform(tuple(xy.min(axis=0)), tuple(xy.max(axis=0)), float(margin))
    return t.apply(xy), t


def hypervolume_2d(front: Sequence, reference=(0.0, 0.0)) -> float:
    """Exact area dominated by ``front`` and bounded below by ``reference``."""
    rx, ry = float(reference[0]), float(reference[1])
    xy = np.array([_xy(p) for p in front], dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        return 0.0
    if np.any(xy[:, 0] < rx) or np.any(xy[:, 1] < ry):
        raise ValueError("every point must weakly dominate the reference point")
    order = np.argsort(-xy[:, 0], kind="stable")
    area, y_top = 0.0, ry
    # sweep x from right to left; each point adds the strip above the running max y
    for i in order:
        x, y = xy[i]
        if y > y_top:
            area += (x - rx) * (y - y_top)
            y_top = y
    return float(area)


def sparsity(front: Sequence) -> float:
    """Mean Euclidean distance from each point to its nearest other point."""
    xy = np.array([_xy(p) for p in front], dtype=float).reshape(-1, 2)
    if len(xy) < 2:
        return 0.0
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


def combined_front_attribution(labeled: Mapping[str, Sequence]) -> Dict[str, int]:
    """Pool every labelled set, filter, and count surviving points per label."""
    labels, pts = [], []
    for label, group in labeled.items():
        for p in group:
            labels.append(label)
            pts.append(p)
    mask = undominated_mask(pts)
    counts = {label: 0 for label in labeled}
    for label, keep in zip(labels, mask):
        counts[label] += int(keep)
    return counts


def metrics_table(labeled: Mapping[str, Sequence], margin: float = DEFAULT_MARGIN) -> Dict[str, dict]:
    """Per-label hypervolume and sparsity on the pooled normalization, plus undominated counts.

    All labels share one min-max transform fitted on the pooled points, so
    hypervolumes are comparable across labels.
    """
    pooled = [p for group in labeled.values() for p in group]
    _, t = minmax_normalize(pooled, margin)
    counts = combined_front_attribution(labeled)
    out = {}
    for label, group in labeled.items():
        front = pareto_filter(group).front
        norm = t.apply([_xy(p) for p in front]) if front else np.zeros((0, 2))
        out[label] = {
            "hypervolume": hypervolume_2d(norm, (0.0, 0.0)),
            "sparsity": sparsity(norm),
            "undominated": counts[label],
            "n_points": len(group),
        }
    return out


def write_metrics(path_json, path_csv, table: Mapping[str, dict]) -> None:
    with open(path_json, "w") as fh:
        json.dump(table, fh, indent=1, sort_keys=True)
    with open(path_csv, "w") as fh:
        fh.write("algorithm,hypervolume,sparsity,undominated,n_points\n")
        for label in sorted(table):
            r = table[label]
            fh.write(f"{label},{r['hypervolume']:.6f},{r['sparsity']:.6f},{r['undominated']},{r['n_points']}\n")
