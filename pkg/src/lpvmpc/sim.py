"""Closed-loop lap simulation: plant at 1 kHz, controllers at the control rate."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import tomli_w

from .analysis import LapMetrics, Summary, lap_metrics, rows_to_columns, summarize, write_lap_metrics
from .backup import MPC, ArbiterState, Pid, arbitrate, pure_pursuit_steer
from .config import ScenarioConfig
from .mpc import LpvMpc, one_step_model_error
from .qp import dump_qp
from .plant import PlantInput, PlantModel, PlantState, lateral_acceleration, step
from .track import Raceline, error_rates, horizon_schedule, load_raceline, project

log = logging.getLogger(__name__)

TELEMETRY_COLUMNS = (
    "t", "x", "y", "psi", "v_x", "v_y", "psi_dot", "delta",
    "e_y", "e_psi", "e_y_dot", "e_psi_dot", "s_proj", "lap", "kappa", "phi",
    "delta_cmd_mpc", "delta_cmd_pp", "delta_applied", "u0", "delta_rate",
    "v_ref", "a_x_cmd", "a_y", "qp_status", "qp_iterations", "source", "solve_time",
    "pred_ts", "pred_e_y0", "pred_e_y1", "pred_delta_max_abs", "pred_u_max_abs",
    "model_error_1step",
)
STRING_COLUMNS = ("qp_status", "source")


class SimulationDiverged(RuntimeError):
    def __init__(self, row: int, message: str, telemetry=None):
        super().__init__(f"plant diverged at telemetry row {row}: {message}")
        self.row = row
        self.telemetry = telemetry or []


@dataclass
class SimResult:
    telemetry: list[dict]
    laps: list[LapMetrics]
    summary: Summary
    telemetry_path: Path | None
    wall_time: float


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_telemetry(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TELEMETRY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in TELEMETRY_COLUMNS])


def read_telemetry(path) -> dict[str, np.ndarray]:
    """Column arrays from a telemetry CSV; string columns stay as object arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if header is None:
        return {}
    cols = list(zip(*rows)) if rows else [()] * len(header)
    out = {}
    for name, values in zip(header, cols):
        if name in STRING_COLUMNS:
            out[name] = np.array(values, dtype=object)
        else:
            out[name] = np.array([float(v) for v in values], dtype=float)
    return out


def run_scenario(cfg: ScenarioConfig, raceline: Raceline | None = None,
                 write: bool = True, dump_qp_path=None) -> SimResult:
    """Simulate the scenario and (optionally) write telemetry, lap metrics and a summary.

    ``dump_qp_path`` saves the first MPC subproblem in the text matrix format.
    """
    wall0 = time.perf_counter()
    rl = raceline or load_raceline(cfg.raceline)
    vp = cfg.vehicle
    model = PlantModel(vp, cfg.front, cfg.rear, cfg.rear_slip_gain)
    mcfg = cfg.mpc
    tc = mcfg.control_period
    n_sub = int(round(tc / cfg.plant_dt))
    n_ticks = int(round(cfg.duration / tc))
    rng = np.random.default_rng(cfg.seed)

    start = rl.sample(rl.s[0] + 0.0)
    left = (-math.sin(start.psi_ref), math.cos(start.psi_ref))
    state = PlantState(x=start.x + cfg.launch_offset * left[0],
                       y=start.y + cfg.launch_offset * left[1],
                       psi=start.psi_ref, v_x=cfg.launch_speed,
                       psi_dot=cfg.launch_speed * start.kappa)
    ctrl = LpvMpc(vp, cfg.weights, mcfg)
    pid = Pid(cfg.pid)
    arb = ArbiterState(engaged=False)
    delta_cmd = 0.0
    hint = None
    lap = 0
    prev_s = None
    prev_pred = None
    rows = []

    for tick in range(n_ticks):
        t = tick * tc
        if not state.is_finite():
            raise SimulationDiverged(tick, "non-finite state", rows)
        err = project(rl, state.x, state.y, state.psi, hint)
        hint = err.nearest_index
        if abs(err.e_y) > 50.0:
            raise SimulationDiverged(tick, f"cross-track error {err.e_y:.1f} m", rows)
        if prev_s is not None and err.s_proj < prev_s - 0.5 * rl.length:
            lap += 1
        prev_s = err.s_proj
        wp = rl.sample(err.s_proj)
        v_meas = max(state.v_x, 1e-3)
        v_y_meas, r_meas = state.v_y, state.psi_dot
        if cfg.measurement_noise > 0:
            v_y_meas += rng.normal(0.0, cfg.measurement_noise)
            r_meas += rng.normal(0.0, 0.1 * cfg.measurement_noise)
        err = error_rates(err, v_meas, v_y_meas, r_meas, wp.kappa)
        if cfg.v_ref_ramp is not None:
            v0, v1, t_ramp = cfg.v_ref_ramp
            v_ref = v0 + (v1 - v0) * min(t / t_ramp, 1.0)
        else:
            v_ref = wp.v_ref

        model_err = math.nan
        if prev_pred is not None:
            model_err = one_step_model_error(prev_pred, err.e_y, tc)

        x0 = np.array([err.e_y, err.e_y_dot, err.e_psi, err.e_psi_dot, delta_cmd])
        sol = None
        status = "not_run"
        if state.v_x >= 1.0:
            sched = horizon_schedule(rl, err.s_proj, v_meas, wp.phi, mcfg.ts, mcfg.n_steps)
            if cfg.v_ref_ramp is not None:
                sched = [p._replace(v_x=v_meas if k == 0 else v_ref) for k, p in enumerate(sched)]
            try:
                sol = ctrl.solve_step(x0, sched)
                status = sol.qp_status
                if dump_qp_path is not None:
                    dump_qp(dump_qp_path, ctrl.last_qp)
                    dump_qp_path = None
            except (ValueError, np.linalg.LinAlgError) as exc:
                log.debug("MPC failed at tick %d: %s", tick, exc)
                ctrl.reset()
                status = "error"
        solve_time = sol.solve_time if (sol is not None and cfg.timing == "wall") else 0.0
        delta_pp = pure_pursuit_steer(state.x, state.y, state.psi, state.v_x, rl,
                                      cfg.pure_pursuit, vp.wheelbase, mcfg.delta_max, hint)
        source, arb = arbitrate(status if sol is not None else None, state.v_x, solve_time,
                                cfg.arbitration, arb)
        if source == MPC:
            rate = sol.u0
        else:
            rate = (delta_pp - delta_cmd) / tc
        rate = min(max(rate, -mcfg.rate_max), mcfg.rate_max)
        new_delta = min(max(delta_cmd + rate * tc, -mcfg.delta_max), mcfg.delta_max)
        rate = (new_delta - delta_cmd) / tc
        a_cmd = pid(v_ref, state.v_x, tc)

        a_y = lateral_acceleration(state, model, wp.phi)
        pred = sol.predicted_states if sol is not None else None
        rows.append({
            "t": t, "x": state.x, "y": state.y, "psi": state.psi, "v_x": state.v_x,
            "v_y": state.v_y, "psi_dot": state.psi_dot, "delta": state.delta,
            "e_y": err.e_y, "e_psi": err.e_psi, "e_y_dot": err.e_y_dot,
            "e_psi_dot": err.e_psi_dot, "s_proj": err.s_proj, "lap": lap,
            "kappa": wp.kappa, "phi": wp.phi,
            "delta_cmd_mpc": delta_cmd + sol.u0 * tc if sol is not None else math.nan,
            "delta_cmd_pp": delta_pp, "delta_applied": new_delta,
            "u0": sol.u0 if sol is not None else math.nan, "delta_rate": rate,
            "v_ref": v_ref, "a_x_cmd": a_cmd, "a_y": a_y,
            "qp_status": status, "qp_iterations": sol.qp.iterations if sol is not None else 0,
            "source": source, "solve_time": solve_time,
            "pred_ts": sol.ts if sol is not None else math.nan,
            "pred_e_y0": pred[0, 0] if pred is not None else math.nan,
            "pred_e_y1": pred[1, 0] if pred is not None else math.nan,
            "pred_delta_max_abs": float(np.abs(pred[1:, 4]).max()) if pred is not None else math.nan,
            "pred_u_max_abs": float(np.abs(sol.predicted_inputs).max()) if sol is not None else math.nan,
            "model_error_1step": model_err,
        })
        prev_pred = sol if (sol is not None and sol.solved) else None

        u_in = PlantInput(rate, a_cmd)
        phis = rl.banking_at(err.s_proj + state.v_x * cfg.plant_dt * np.arange(n_sub))
        for phi in phis.tolist():
            state = step(state, u_in, cfg.plant_dt, model, phi)
        delta_cmd = new_delta

    tel = rows_to_columns(rows)
    laps = lap_metrics(tel, cfg.metrics_skip)
    summary = summarize(tel, cfg.metrics_skip, mcfg.delta_max, mcfg.rate_max)
    wall = time.perf_counter() - wall0
    path = None
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "telemetry.csv"
        write_telemetry(path, rows)
        write_lap_metrics(out / "laps.csv", laps)
        write_summary(out / "summary.toml", cfg, summary, laps)
    return SimResult(rows, laps, summary, path, wall)


def write_summary(path, cfg: ScenarioConfig, summary: Summary, laps: list[LapMetrics]) -> None:
    def clean(d):
        return {k: v for k, v in d.items() if not (isinstance(v, float) and math.isnan(v))}

    doc = {
        "scenario": {"name": cfg.name, "raceline": str(cfg.raceline), "duration": cfg.duration,
                     "metrics_skip": cfg.metrics_skip},
        "summary": clean(asdict(summary)),
        "laps": [clean(asdict(lm)) for lm in laps],
    }
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)
