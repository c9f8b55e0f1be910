"""Lap metrics and velocity-binned analysis computed from telemetry."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .backup import MPC

BIN_WIDTH = 2.0
VIOLATION_TOL = 1e-6


@dataclass(frozen=True)
class LapMetrics:
    lap: int
    complete: bool
    lap_time: float
    ticks: int
    mean_e_y: float
    std_e_y: float
    max_abs_e_y: float
    max_abs_e_psi: float
    mean_solve_time: float
    max_solve_time: float
    max_a_y: float
    fallback_tick_count: int


@dataclass(frozen=True)
class Summary:
    ticks: int
    max_abs_e_y: float
    mean_e_y: float
    std_e_y: float
    max_abs_e_psi: float
    mean_solve_time: float
    p99_solve_time: float
    max_solve_time: float
    max_a_y: float
    fallback_tick_count: int
    constraint_violations: int


def rows_to_columns(rows: list[dict]) -> dict[str, np.ndarray]:
    if not rows:
        return {}
    out = {}
    for key in rows[0]:
        vals = [r[key] for r in rows]
        out[key] = np.array(vals, dtype=object if isinstance(vals[0], str) else float)
    return out


def _stats(tel, mask):
    e_y = tel["e_y"][mask]
    solve = tel["solve_time"][mask]
    if e_y.size == 0:
        return dict(mean_e_y=math.nan, std_e_y=math.nan, max_abs_e_y=math.nan,
                    max_abs_e_psi=math.nan, mean_solve_time=math.nan,
                    max_solve_time=math.nan, max_a_y=math.nan, fallback_tick_count=0)
    return dict(
        mean_e_y=float(np.mean(e_y)),
        std_e_y=float(np.std(e_y)),
        max_abs_e_y=float(np.max(np.abs(e_y))),
        max_abs_e_psi=float(np.max(np.abs(tel["e_psi"][mask]))),
        mean_solve_time=float(np.mean(solve)),
        max_solve_time=float(np.max(solve)),
        max_a_y=float(np.max(np.abs(tel["a_y"][mask]))),
        fallback_tick_count=int(np.count_nonzero(tel["source"][mask] != MPC)),
    )


def lap_metrics(tel: dict, skip: float = 10.0) -> list[LapMetrics]:
    """One entry per lap index seen in the telemetry.

    Statistics use only ticks with ``t >= skip``. A lap counts as complete
    when the telemetry continues into the next lap; ``lap_time`` is NaN
    otherwise. Laps that end before ``skip`` are dropped.
    """
    if not tel or tel["t"].size == 0:
        return []
    t, lap = tel["t"], tel["lap"].astype(int)
    dt = float(np.median(np.diff(t))) if t.size > 1 else 0.0
    window = t >= skip
    out = []
    for k in np.unique(lap):
        in_lap = lap == k
        mask = in_lap & window
        if not mask.any():
            continue
        complete = bool(np.any(lap > k))
        lap_time = float(t[in_lap][-1] - t[in_lap][0] + dt) if complete else math.nan
        out.append(LapMetrics(lap=int(k), complete=complete, lap_time=lap_time,
                              ticks=int(mask.sum()), **_stats(tel, mask)))
    return out


def constraint_violations(tel: dict, delta_max: float, rate_max: float,
                          tol: float = VIOLATION_TOL) -> np.ndarray:
    """Per-tick flag: applied or predicted steering/rate outside its bound."""
    bad = (np.abs(tel["delta_applied"]) > delta_max + tol) | (np.abs(tel["delta_rate"]) > rate_max + tol)
    mpc = tel["source"] == MPC
    pred_d = np.nan_to_num(tel["pred_delta_max_abs"], nan=0.0)
    pred_u = np.nan_to_num(tel["pred_u_max_abs"], nan=0.0)
    bad |= mpc & ((pred_d > delta_max + tol) | (pred_u > rate_max + tol))
    return bad


def summarize(tel: dict, skip: float, delta_max: float, rate_max: float) -> Summary:
    window = tel["t"] >= skip
    st = _stats(tel, window)
    solve = tel["solve_time"][window]
    p99 = float(np.percentile(solve, 99)) if solve.size else math.nan
    viol = int(np.count_nonzero(constraint_violations(tel, delta_max, rate_max)[window]))
    return Summary(ticks=int(window.sum()), p99_solve_time=p99, constraint_violations=viol, **st)


def write_lap_metrics(path, laps: list[LapMetrics]) -> None:
    names = [f.name for f in fields(LapMetrics)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for lm in laps:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(lm).values()])


def _bin_edges(v: np.ndarray, width: float) -> np.ndarray:
    lo = math.floor(np.min(v) / width) * width
    hi = math.floor(np.max(v) / width) * width + width
    return np.arange(lo, hi + 0.5 * width, width)


def velocity_bins(v: np.ndarray, values: dict[str, np.ndarray], width: float = BIN_WIDTH) -> list[dict]:
    """Mean/std/max-abs of each series per speed bin [lo, lo + width); empty bins are skipped."""
    finite = np.isfinite(v)
    v = v[finite]
    if v.size == 0:
        return []
    values = {k: np.asarray(a, dtype=float)[finite] for k, a in values.items()}
    edges = _bin_edges(v, width)
    idx = np.clip(np.floor((v - edges[0]) / width).astype(int), 0, len(edges) - 2)
    out = []
    for b in range(len(edges) - 1):
        sel = idx == b
        if not sel.any():
            continue
        row = {"v_lo": float(edges[b]), "v_hi": float(edges[b + 1]), "count": int(sel.sum())}
        for name, arr in values.items():
            a = arr[sel]
            a = a[np.isfinite(a)]
            row[f"{name}_mean"] = float(a.mean()) if a.size else math.nan
            row[f"{name}_std"] = float(a.std()) if a.size else math.nan
            row[f"{name}_max_abs"] = float(np.abs(a).max()) if a.size else math.nan
        out.append(row)
    return out


@dataclass
class AnalysisBundle:
    error_bins: list[dict]
    model_error_bins: list[dict]
    gg: np.ndarray  # columns a_x, a_y, v_x

    @property
    def empty(self) -> bool:
        return not self.error_bins and self.gg.size == 0


def analyze(tel: dict, skip: float = 0.0, width: float = BIN_WIDTH) -> AnalysisBundle:
    if not tel or tel["t"].size == 0:
        return AnalysisBundle([], [], np.zeros((0, 3)))
    m = tel["t"] >= skip
    v = tel["v_x"][m]
    err = velocity_bins(v, {"e_y": tel["e_y"][m], "e_psi": tel["e_psi"][m]}, width)
    merr = velocity_bins(v, {"model_error": tel["model_error_1step"][m]}, width)
    gg = np.column_stack([tel["a_x_cmd"][m], tel["a_y"][m], v])
    return AnalysisBundle(err, merr, gg)


def _write_dicts(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def write_bundle(out_dir, bundle: AnalysisBundle) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "error_vs_velocity.csv", out / "model_error_vs_velocity.csv", out / "gg.csv"]
    _write_dicts(paths[0], bundle.error_bins)
    _write_dicts(paths[1], bundle.model_error_bins)
    _write_dicts(paths[2], [{"a_x": float(a), "a_y": float(b), "v_x": float(c)} for a, b, c in bundle.gg])
    return paths
