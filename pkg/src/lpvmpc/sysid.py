"""Pacejka identification from logged runs.

Axle forces are rebuilt from the IMU lateral acceleration, slip angles from
the logged velocities, and each axle is fitted by alternating a bounded
Levenberg-Marquardt solve over the current inliers with a MAD-based
re-selection of inliers until the set stops changing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .tires import (PRACTICE_FRONT, PRACTICE_REAR, PacejkaAxleParams, VehicleParams,
                    axle_forces_from_imu, c_linear, pacejka_force, pacejka_jacobian,
                    slip_angles)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("t", "v_x", "v_y", "psi_dot", "delta", "a_y_imu")
MAD_TO_SIGMA = 1.4826

# b, c, d, e
_LOWER = np.array([1e-6, 1e-3, 1e-6, -np.inf])
_UPPER = np.array([np.inf, 3.0, np.inf, 1.0])


class InsufficientExcitationError(ValueError):
    pass


@dataclass(frozen=True)
class LogRecord:
    t: float
    v_x: float
    v_y: float
    psi_dot: float
    delta: float
    a_y_imu: float


@dataclass(frozen=True)
class FitConfig:
    k_mad: float = 3.0
    mad_floor: float = 1.0
    max_outer: int = 20
    lm_max_iter: int = 500
    lm_lambda0: float = 1e-3
    lm_tol: float = 1e-10
    min_samples: int = 50
    min_alpha_span: float = 0.005
    max_condition: float = 1e12
    v_min: float = 5.0


@dataclass
class LmResult:
    theta: np.ndarray
    cost: float
    iterations: int
    converged: bool


@dataclass
class AxleFit:
    params: PacejkaAxleParams
    c_linear: float
    inlier_fraction: float
    residual_rms: float
    iterations: int
    converged: bool
    e_frozen: bool
    inliers: np.ndarray = field(repr=False)


@dataclass
class FitResult:
    front: PacejkaAxleParams
    rear: PacejkaAxleParams
    c_linear_front: float
    c_linear_rear: float
    inlier_fraction: float
    residual_rms: float
    iterations: int
    front_fit: AxleFit = field(repr=False)
    rear_fit: AxleFit = field(repr=False)


def levenberg_marquardt(alpha, force, theta0, free=None, lambda0=1e-3, tol=1e-10,
                        max_iter=500) -> LmResult:
    """Bounded LM for the Pacejka least-squares problem.

    Marquardt diagonal scaling; damping halves on accepted steps and doubles
    on rejected ones. Steps are projected back into the parameter box.
    ``free`` masks which of (B, C, D, E) are optimised.
    """
    theta = np.clip(np.asarray(theta0, dtype=float), _LOWER, _UPPER)
    free = np.ones(4, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    res = force - pacejka_force(PacejkaAxleParams.from_array(theta), alpha)
    cost = float(res @ res)
    lam = lambda0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = pacejka_jacobian(theta, alpha)[:, free]
        JtJ = J.T @ J
        grad = J.T @ res
        diag = np.maximum(np.diag(JtJ), 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                lam *= 2.0
                continue
            cand = theta.copy()
            cand[free] += step
            cand = np.clip(cand, _LOWER, _UPPER)
            new_res = force - pacejka_force(PacejkaAxleParams.from_array(cand), alpha)
            new_cost = float(new_res @ new_res)
            if np.isfinite(new_cost) and new_cost <= cost:
                accepted = True
                break
            lam *= 2.0
        if not accepted:
            converged = True
            break
        dtheta = np.linalg.norm(cand - theta)
        rel_change = (cost - new_cost) / max(cost, 1e-300)
        theta, res, cost = cand, new_res, new_cost
        lam = max(lam * 0.5, 1e-12)
        if rel_change < tol or dtheta < tol * (np.linalg.norm(theta) + tol):
            converged = True
            break
    return LmResult(theta, cost, it, converged)


def _scaled_condition(alpha, theta) -> float:
    J = pacejka_jacobian(theta, alpha)
    norms = np.linalg.norm(J, axis=0)
    if np.any(norms == 0):
        return np.inf
    return float(np.linalg.cond(J / norms))


def fit_pacejka(alpha, force, init: PacejkaAxleParams | None = None,
                cfg: FitConfig = FitConfig()) -> AxleFit:
    """Robust single-axle fit (LM + MAD outlier rejection)."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    force = np.asarray(force, dtype=float).ravel()
    if alpha.size < cfg.min_samples or np.max(np.abs(alpha), initial=0.0) < cfg.min_alpha_span:
        raise InsufficientExcitationError(
            f"insufficient slip excitation: {alpha.size} samples, "
            f"max |alpha| = {np.max(np.abs(alpha), initial=0.0):.4g} rad")
    init = init or PRACTICE_FRONT
    theta = init.as_array()
    free = np.ones(4, dtype=bool)
    inliers = np.ones(alpha.size, dtype=bool)
    e_frozen = False
    converged = False
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        a_in, f_in = alpha[inliers], force[inliers]
        if not e_frozen and _scaled_condition(a_in, theta) > np.sqrt(cfg.max_condition):
            e_frozen = True
            free[3] = False
            theta[3] = init.e_p
        # restarts from the prior and a peak-rescaled prior escape basins the
        # outlier-contaminated first pass may have fallen into
        starts = [theta]
        peak = float(np.percentile(np.abs(f_in), 99))
        if outer == 2:
            starts.append(init.as_array())
            if peak > 0:
                starts.append(np.array([init.b_p * init.d_p / peak, init.c_p, peak, init.e_p]))
        lm = None
        for start in starts:
            start = start.copy()
            if e_frozen:
                start[3] = init.e_p
            cand = levenberg_marquardt(a_in, f_in, start, free, cfg.lm_lambda0, cfg.lm_tol,
                                       cfg.lm_max_iter)
            if lm is None or cand.cost < lm.cost:
                lm = cand
        theta = lm.theta
        resid = force - pacejka_force(PacejkaAxleParams.from_array(theta), alpha)
        centred = np.abs(resid - np.median(resid))
        mad = max(float(np.median(centred)), cfg.mad_floor)
        new_inliers = centred <= cfg.k_mad * MAD_TO_SIGMA * mad
        if new_inliers.sum() < 4:
            log.warning("outlier rejection would leave < 4 samples; keeping previous set")
            converged = lm.converged
            break
        if np.array_equal(new_inliers, inliers):
            converged = lm.converged
            break
        inliers = new_inliers
    params = PacejkaAxleParams.from_array(theta)
    final_res = force[inliers] - pacejka_force(params, alpha[inliers])
    return AxleFit(params, c_linear(params), float(inliers.mean()),
                   float(np.sqrt(np.mean(final_res**2))), outer, converged, e_frozen, inliers)


class PacejkaRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_pacejka`.

    ``X`` is a single column of slip angles [rad], ``y`` the axle force [N].
    """

    def __init__(self, init=None, k_mad=3.0, mad_floor=1.0, max_outer=20):
        self.init = init
        self.k_mad = k_mad
        self.mad_floor = mad_floor
        self.max_outer = max_outer

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2)
        if X.shape[1] != 1:
            raise ValueError("X must hold exactly one column (slip angle)")
        init = self.init
        if init is not None and not isinstance(init, PacejkaAxleParams):
            init = PacejkaAxleParams.from_array(init)
        cfg = FitConfig(k_mad=self.k_mad, mad_floor=self.mad_floor, max_outer=self.max_outer)
        fit = fit_pacejka(X[:, 0], y, init, cfg)
        self.params_ = fit.params
        self.c_linear_ = fit.c_linear
        self.inlier_mask_ = fit.inliers
        self.inlier_fraction_ = fit.inlier_fraction
        self.residual_rms_ = fit.residual_rms
        self.n_iter_ = fit.iterations
        self.e_frozen_ = fit.e_frozen
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        return pacejka_force(self.params_, X[:, 0])


def read_log(path) -> list[LogRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.lstrip().startswith("#"))
        missing = [c for c in LOG_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: log is missing columns {missing}")
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                out.append(LogRecord(*(float(row[c]) for c in LOG_COLUMNS)))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: row {i}: {exc}") from None
    ts = np.array([r.t for r in out])
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        raise ValueError(f"{path}: t must be strictly increasing")
    return out


def write_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in records:
            w.writerow([repr(float(getattr(r, c))) for c in LOG_COLUMNS])


def extract_samples(records, vp: VehicleParams, v_min: float = 5.0):
    """Per-axle (alpha, force) arrays from a log; records below ``v_min`` are dropped."""
    recs = [r for r in records if r.v_x >= v_min]
    if not recs:
        empty = np.zeros(0)
        return (empty, empty), (empty, empty)
    arr = np.array([[r.v_x, r.v_y, r.psi_dot, r.delta, r.a_y_imu] for r in recs])
    v_x, v_y, psi_dot, delta, a_y = arr.T
    alpha_f, alpha_r = slip_angles(v_x, v_y, psi_dot, delta, vp)
    f_f, f_r = axle_forces_from_imu(a_y, delta, vp)
    return (np.asarray(alpha_f), np.asarray(f_f)), (np.asarray(alpha_r), np.asarray(f_r))


def identify(records_or_path, vp: VehicleParams, init_front: PacejkaAxleParams | None = None,
             init_rear: PacejkaAxleParams | None = None, cfg: FitConfig = FitConfig()):
    """Extract samples and fit both axles. Returns (FitResult, report dict)."""
    if isinstance(records_or_path, (str, Path)):
        records = read_log(records_or_path)
    else:
        records = list(records_or_path)
    (a_f, f_f), (a_r, f_r) = extract_samples(records, vp, cfg.v_min)
    front = fit_pacejka(a_f, f_f, init_front or PRACTICE_FRONT, cfg)
    rear = fit_pacejka(a_r, f_r, init_rear or PRACTICE_REAR, cfg)
    n_f, n_r = front.inliers.size, rear.inliers.size
    result = FitResult(
        front=front.params, rear=rear.params,
        c_linear_front=front.c_linear, c_linear_rear=rear.c_linear,
        inlier_fraction=min(front.inlier_fraction, rear.inlier_fraction),
        residual_rms=float(np.sqrt((front.residual_rms**2 * front.inliers.sum()
                                    + rear.residual_rms**2 * rear.inliers.sum())
                                   / max(front.inliers.sum() + rear.inliers.sum(), 1))),
        iterations=front.iterations + rear.iterations,
        front_fit=front, rear_fit=rear)
    report = {"axles": {}, "curves": {}}
    for name, fit, a, f in (("front", front, a_f, f_f), ("rear", rear, a_r, f_r)):
        report["axles"][name] = {
            **asdict(fit.params),
            "c_linear": fit.c_linear,
            "inlier_fraction": fit.inlier_fraction,
            "residual_rms": fit.residual_rms,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "e_frozen": fit.e_frozen,
            "n_samples": int(a.size),
        }
        order = np.argsort(a)
        report["curves"][name] = np.column_stack([
            a[order], f[order], pacejka_force(fit.params, a[order]),
            fit.inliers[order].astype(float)])
    log.info("fit done: C_linear front %.0f rear %.0f N/rad", front.c_linear, rear.c_linear)
    return result, report


def write_report(out_dir, report) -> list[Path]:
    """Report as TOML-like text plus one CSV of (alpha, F_measured, F_fitted, inlier) per axle."""
    import tomli_w

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "fit_report.toml"]
    paths[0].write_text(tomli_w.dumps({"axles": report["axles"]}))
    for name, curve in report["curves"].items():
        p = out / f"fit_{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "f_measured", "f_fitted", "inlier"])
            for row in curve:
                w.writerow([repr(float(v)) for v in row])
        paths.append(p)
    return paths


@lru_cache(maxsize=64)
def _pacejka_peak(params: PacejkaAxleParams) -> tuple[float, float]:
    peak = minimize_scalar(lambda a: -pacejka_force(params, a), bounds=(0.0, 1.0),
                           method="bounded", options={"xatol": 1e-12})
    return float(peak.x), float(-peak.fun)


def _pacejka_slope(params: PacejkaAxleParams, alpha):
    b, c, d, e = params.b_p, params.c_p, params.d_p, params.e_p
    ba = b * alpha
    inner = ba - e * (ba - np.arctan(ba))
    d_inner = b * (1.0 - e + e / (1.0 + ba**2))
    return d * np.cos(c * np.arctan(inner)) * c * d_inner / (1.0 + inner**2)


def invert_pacejka(params: PacejkaAxleParams, force):
    """Slip angles on the rising branch producing ``force``; NaN where unreachable."""
    force = np.asarray(force, dtype=float)
    a_peak, f_peak = _pacejka_peak(params)
    grid = np.linspace(0.0, a_peak, 4001)
    mag = np.abs(force)
    alpha = np.interp(mag, pacejka_force(params, grid), grid)
    for _ in range(4):
        slope = _pacejka_slope(params, alpha)
        alpha = np.clip(alpha - (pacejka_force(params, alpha) - mag) / slope, 0.0, a_peak)
    return np.where(mag < f_peak, np.sign(force) * alpha, np.nan)


def synthesize_steady_log(front: PacejkaAxleParams, rear: PacejkaAxleParams,
                          vp: VehicleParams, n: int = 3000, v_range=(50.0, 72.0),
                          alpha_max: float = 0.03, noise: float = 0.0,
                          outlier_fraction: float = 0.0, seed: int = 0,
                          rate_hz: float = 50.0) -> list[LogRecord]:
    """Quasi-steady cornering log generated from known axle curves.

    Every record satisfies the yaw-moment balance, so the IMU force split
    reproduces the true axle forces exactly before noise. ``noise`` is the
    standard deviation of additive lateral-acceleration noise as a fraction of
    the peak lateral acceleration ``(D_f + D_r) / m``; outliers are offset by
    three times that peak.
    """
    rng = np.random.default_rng(seed)
    L = vp.l_f + vp.l_r
    a_peak = (front.d_p + rear.d_p) / vp.m
    chunks = []
    have = 0
    while have < n:
        m = 2 * (n - have) + 16
        v_x = rng.uniform(*v_range, size=m)
        alpha_r = rng.uniform(-alpha_max, alpha_max, size=m)
        f_r = pacejka_force(rear, alpha_r)
        a_y = f_r * L / (vp.l_f * vp.m)
        psi_dot = a_y / v_x
        v_y = vp.l_r * psi_dot - v_x * np.tan(alpha_r)
        delta = np.zeros(m)
        # moment balance l_f F_f cos(delta) = l_r F_r, fixed point in delta
        for _ in range(60):
            alpha_f = invert_pacejka(front, vp.l_r * f_r / (vp.l_f * np.cos(delta)))
            delta = alpha_f + np.arctan((v_y + vp.l_f * psi_dot) / v_x)
        ok = np.isfinite(delta)
        block = np.column_stack([v_x, v_y, psi_dot, delta, a_y])[ok]
        chunks.append(block)
        have += len(block)
    data = np.vstack(chunks)[:n]
    if noise > 0:
        data[:, 4] += rng.normal(0.0, noise * a_peak, size=n)
    if outlier_fraction > 0:
        k = int(round(outlier_fraction * n))
        idx = rng.choice(n, size=k, replace=False)
        data[idx, 4] += rng.choice([-1.0, 1.0], size=k) * 3.0 * a_peak
    t = np.arange(n) / rate_hz
    return [LogRecord(float(ti), *map(float, row)) for ti, row in zip(t, data)]


def synthesize_sim_log(front: PacejkaAxleParams, rear: PacejkaAxleParams, vp: VehicleParams,
                       duration: float = 60.0, v_x: float = 56.0, steer_amp: float = 0.012,
                       steer_freq: float = 0.15, rate_hz: float = 50.0) -> list[LogRecord]:
    """Log from the nonlinear plant driven by a slow sinusoidal steering sweep at constant speed."""
    from .plant import PlantInput, PlantModel, PlantState, lateral_acceleration, step

    model = PlantModel(vp, front, rear)
    dt = 1e-3
    sub = int(round(1.0 / (rate_hz * dt)))
    s = PlantState(v_x=v_x)
    out = []
    n_rec = int(round(duration * rate_hz))
    w = 2 * np.pi * steer_freq
    for i in range(n_rec):
        t = i / rate_hz
        out.append(LogRecord(t, s.v_x, s.v_y, s.psi_dot, s.delta,
                             lateral_acceleration(s, model)))
        for j in range(sub):
            tj = t + j * dt
            # hold speed: cancel the v_y * psi_dot coupling
            s = step(s, PlantInput(steer_amp * w * np.cos(w * tj), -s.v_y * s.psi_dot), dt, model)
    return out
