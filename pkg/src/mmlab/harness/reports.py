"""Report generation from a finished run directory.

Scans every ``sessions.csv`` under a run directory and writes, next to it,
``report/``: per-MM rolling averages of the session metrics (plot-ready CSV)
and a JSON summary. Regenerating a report overwrites it with identical bytes.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Dict, List, Sequence

import numpy as np
import yaml

ROLLING_WINDOW = 50
SERIES = ("mean_reward", "mtm_pnl", "mean_abs_inventory")


class IncompleteRunError(ValueError):
    """Session logs have gaps."""


def rolling_mean(values: Sequence[float], window: int = ROLLING_WINDOW) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what exists."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        return x
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def read_sessions(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_complete(rows: Sequence[dict], expected: int = None) -> None:
    """Every MM must have sessions ``0..n-1`` (``n = expected`` if given)."""
    by_mm: Dict[str, set] = {}
    for r in rows:
        by_mm.setdefault(r["mm"], set()).add(int(r["session"]))
    problems = []
    for mm, got in sorted(by_mm.items()):
        n = expected if expected is not None else max(got) + 1
        missing = sorted(set(range(n)) - got)
        if missing:
            problems.append(f"{mm}: missing sessions {missing}")
    if problems:
        raise IncompleteRunError("; ".join(problems))


def _float(v):
    return None if v in ("", None) else float(v)


def recompute_from_steps(steps_path) -> Dict[tuple, dict]:
    """Session aggregates recomputed from a per-step log, keyed by (session, mm)."""
    acc: Dict[tuple, dict] = {}
    with open(steps_path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["session"]), r["mm"])
            a = acc.setdefault(key, {"steps": 0, "total_reward": 0.0, "abs_inv": 0, "E": 0, "HgC": 0, "mtm": None})
            a["steps"] += 1
            a["total_reward"] += float(r["reward"])
            a["abs_inv"] += abs(int(r["inventory"]))
            a["E"] += int(r["E"])
            a["HgC"] += int(r["HgC"])
            a["mtm"] = int(r["mtm"])
    return {
        k: {
            "steps": a["steps"],
            "total_reward": a["total_reward"],
            "mean_reward": a["total_reward"] / a["steps"],
            "mean_abs_inventory": a["abs_inv"] / a["steps"],
            "total_E": a["E"],
            "total_HgC": a["HgC"],
            "terminal_mtm": a["mtm"],
        }
        for k, a in acc.items()
    }


def report_for(sessions_csv, window: int = ROLLING_WINDOW, expected: int = None) -> dict:
    """Rolling series and aggregates for one ``sessions.csv``."""
    rows = read_sessions(sessions_csv)
    check_complete(rows, expected)
    out = {}
    for mm in sorted({r["mm"] for r in rows}):
        mine = sorted((r for r in rows if r["mm"] == mm), key=lambda r: int(r["session"]))
        entry = {"sessions": len(mine), "series": {}}
        for col in SERIES:
            vals = [_float(r[col]) for r in mine]
            entry["series"][col] = rolling_mean(vals, window).tolist()
            entry[col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        out[mm] = entry
    return out


def emit_reports(run_dir, window: int = ROLLING_WINDOW) -> List[str]:
    """Write ``report/`` beside every ``sessions.csv`` under ``run_dir``.

    Returns the written file paths in sorted order.
    """
    written = []
    found = []
    for root, dirs, files in os.walk(run_dir):
        dirs.sort()
        if "report" in dirs:
            dirs.remove("report")
        if "sessions.csv" in files:
            found.append(root)
    if not found:
        raise FileNotFoundError(f"no sessions.csv under {run_dir}")
    for root in sorted(found):
        expected = None
        cfg_path = os.path.join(root, "config.yaml")
        if os.path.exists(cfg_path):
            with open(cfg_path) as fh:
                expected = (yaml.safe_load(fh) or {}).get("n_sessions")
        rep = report_for(os.path.join(root, "sessions.csv"), window, expected)
        rdir = os.path.join(root, "report")
        os.makedirs(rdir, exist_ok=True)
        spath = os.path.join(rdir, "summary.json")
        with open(spath, "w") as fh:
            json.dump({mm: {k: v for k, v in e.items() if k != "series"} for mm, e in rep.items()}, fh, indent=1, sort_keys=True)
        cpath = os.path.join(rdir, "rolling.csv")
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mm", "index"] + [f"{c}_rolling" for c in SERIES])
            for mm, e in rep.items():
                for i in range(e["sessions"]):
                    w.writerow([mm, i] + [repr(e["series"][c][i]) for c in SERIES])
        written += [cpath, spath]
    return sorted(written)
