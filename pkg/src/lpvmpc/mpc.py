"""LPV-MPC lateral controller solved by real-time iteration.

Each control tick builds the horizon models from the scheduling parameters,
condenses the states away, forms one Gauss-Newton QP of the tracking /
effort / side-slip cost and solves it. The first steering-rate input is
applied; the solution is kept to linearise and warm-start the next tick.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .lpv_model import N_STATE, DiscreteLpv, build_horizon_models
from .qp import SOLVED, DenseQp, QpSolution, QpSolver, QpSolverConfig
from .tires import VehicleParams

DELTA = 4
E_Y_DOT = 1


@dataclass(frozen=True)
class MpcWeights:
    q: tuple = (20.0, 1.0, 40.0, 1.0, 0.5)
    r: float = 5.0
    q_beta: float = 10.0

    def __post_init__(self):
        if len(self.q) != N_STATE or any(v < 0 for v in self.q):
            raise ValueError("q needs 5 non-negative entries")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.q_beta < 0:
            raise ValueError("q_beta must be non-negative")


@dataclass(frozen=True)
class MpcConfig:
    horizon_T: float = 1.6
    n_steps: int = 45
    delta_max: float = 0.35
    rate_max: float = 1.0
    control_period: float = 0.02
    terminal_q_scale: float = 0.0
    qp: QpSolverConfig = field(default_factory=QpSolverConfig)

    def __post_init__(self):
        if self.n_steps < 5:
            raise ValueError("n_steps must be >= 5")
        if not (self.horizon_T > 0 and self.control_period > 0):
            raise ValueError("horizon_T and control_period must be positive")
        if self.delta_max <= 0 or self.rate_max < 0:
            raise ValueError("invalid steering bounds")

    @property
    def ts(self) -> float:
        return self.horizon_T / self.n_steps


class Condensed(NamedTuple):
    """x_k = phi[k] @ x0 + gamma[k] @ U + d[k] for k = 0..N."""

    phi: np.ndarray
    gamma: np.ndarray
    d: np.ndarray
    x0: np.ndarray

    def free_response(self) -> np.ndarray:
        return self.phi @ self.x0 + self.d

    def states(self, u) -> np.ndarray:
        return self.free_response() + self.gamma @ np.asarray(u, dtype=float)


@dataclass
class MpcSolution:
    u0: float
    predicted_states: np.ndarray
    predicted_inputs: np.ndarray
    qp_status: str
    solve_time: float
    ts: float
    qp: QpSolution | None = None

    @property
    def solved(self) -> bool:
        return self.qp_status == SOLVED


def condense(models: list[DiscreteLpv], x0) -> Condensed:
    if not models:
        raise ValueError("need at least one model")
    n_h = len(models)
    nx = N_STATE
    x0 = np.asarray(x0, dtype=float)
    phi = np.zeros((n_h + 1, nx, nx))
    gamma = np.zeros((n_h + 1, nx, n_h))
    d = np.zeros((n_h + 1, nx))
    phi[0] = np.eye(nx)
    for k, mdl in enumerate(models):
        phi[k + 1] = mdl.a_d @ phi[k]
        gamma[k + 1] = mdl.a_d @ gamma[k]
        gamma[k + 1][:, k] += mdl.b_d
        d[k + 1] = mdl.a_d @ d[k] + mdl.e_d
    return Condensed(phi, gamma, d, x0)


def rollout(models: list[DiscreteLpv], x0, u) -> np.ndarray:
    """Step-by-step propagation of the discrete model."""
    xs = [np.asarray(x0, dtype=float)]
    for mdl, uk in zip(models, u):
        xs.append(mdl.step(xs[-1], uk))
    return np.array(xs)


def side_slip(e_y_dot, v_x):
    return np.arctan(np.asarray(e_y_dot) / np.asarray(v_x))


def side_slip_jacobian(e_y_dot, v_x):
    ratio = np.asarray(e_y_dot) / np.asarray(v_x)
    return 1.0 / (np.asarray(v_x) * (1.0 + ratio**2))


def build_subproblem(cond: Condensed, lin_point: np.ndarray | None, weights: MpcWeights,
                     cfg: MpcConfig, schedule) -> DenseQp:
    """Gauss-Newton QP in the input sequence U.

    Residuals: sqrt(q)-weighted states 1..N-1 (state 0 is fixed), sqrt(r)
    weighted inputs, and sqrt(q_beta)*beta_k for k = 1..N-1 with beta
    linearised at ``lin_point``. Constraints: rate box on U and steering
    bounds on the predicted delta_1..delta_N.
    """
    n_h = cond.gamma.shape[-1]
    free = cond.free_response()
    sq = np.sqrt(np.asarray(weights.q, dtype=float))
    blocks = [(sq[None, :, None] * cond.gamma[1:n_h]).reshape(-1, n_h)]
    offsets = [(sq[None, :] * free[1:n_h]).ravel()]
    if cfg.terminal_q_scale > 0:
        st = np.sqrt(cfg.terminal_q_scale) * sq
        blocks.append(st[:, None] * cond.gamma[n_h])
        offsets.append(st * free[n_h])
    blocks.append(np.sqrt(weights.r) * np.eye(n_h))
    offsets.append(np.zeros(n_h))
    if weights.q_beta > 0:
        if lin_point is None:
            raise ValueError("side-slip cost needs a linearisation point")
        v = np.array([p.v_x for p in schedule[1:n_h]], dtype=float)
        ebar = np.asarray(lin_point)[1:n_h, E_Y_DOT]
        jac = side_slip_jacobian(ebar, v)
        sqb = np.sqrt(weights.q_beta)
        g_rows = cond.gamma[1:n_h, E_Y_DOT, :]
        blocks.append(sqb * jac[:, None] * g_rows)
        offsets.append(sqb * (side_slip(ebar, v) + jac * (free[1:n_h, E_Y_DOT] - ebar)))
    M = np.vstack(blocks)
    r0 = np.concatenate(offsets)
    H = M.T @ M
    H = 0.5 * (H + H.T)
    g = M.T @ r0
    g_delta = cond.gamma[1:, DELTA, :]
    free_delta = free[1:, DELTA]
    a_ineq = np.vstack([np.eye(n_h), g_delta])
    lo = np.concatenate([np.full(n_h, -cfg.rate_max), -cfg.delta_max - free_delta])
    hi = np.concatenate([np.full(n_h, cfg.rate_max), cfg.delta_max - free_delta])
    return DenseQp(H, g, a_ineq, lo, hi)


def _shift(arr: np.ndarray) -> np.ndarray:
    return np.concatenate([arr[1:], arr[-1:]])


def one_step_model_error(predicted: MpcSolution, actual_e_y: float,
                         control_period: float = 0.02) -> float:
    """Predicted e_y one control period ahead minus the measured e_y."""
    states = predicted.predicted_states
    if states.shape[0] < 2:
        raise ValueError("prediction needs at least two states")
    t = predicted.ts * np.arange(states.shape[0])
    e_hat = float(np.interp(control_period, t, states[:, 0]))
    return e_hat - actual_e_y


class LpvMpc:
    """Stateful controller: warm start, linearisation point and QP workspace."""

    def __init__(self, vehicle: VehicleParams, weights: MpcWeights | None = None,
                 config: MpcConfig | None = None):
        self.vehicle = vehicle
        self.weights = weights or MpcWeights()
        self.config = config or MpcConfig()
        self.solver = QpSolver(self.config.qp)
        self._u = None
        self._qp_sol = None
        self.last_qp = None

    def reset(self):
        self._u = None
        self._qp_sol = None

    def solve_step(self, x0, schedule, shift: bool = True) -> MpcSolution:
        """One real-time iteration.

        ``shift=False`` re-linearises at the previous solution without moving
        it one step forward; repeated calls then iterate Gauss-Newton on a
        frozen problem.
        """
        t_start = time.perf_counter()
        cfg = self.config
        n_h = cfg.n_steps
        if len(schedule) != n_h + 1:
            raise ValueError(f"schedule needs {n_h + 1} entries, got {len(schedule)}")
        x0 = np.asarray(x0, dtype=float)
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        models = build_horizon_models(schedule, self.vehicle, cfg.ts)
        cond = condense(models, x0)
        warm = None
        if self._u is None:
            u_lin = np.zeros(n_h)
        else:
            u_lin = _shift(self._u) if shift else self._u.copy()
            lam = self._qp_sol.lam
            if shift:
                lam = np.concatenate([_shift(lam[:n_h]), _shift(lam[n_h:])])
            warm = QpSolution(u_lin, lam, SOLVED, 0, 0.0, 0.0)
        lin_point = cond.states(u_lin)
        qp = build_subproblem(cond, lin_point, self.weights, cfg, schedule)
        self.last_qp = qp
        sol = self.solver.solve(qp, warm)
        u = np.clip(sol.z, -cfg.rate_max, cfg.rate_max)
        states = cond.states(u)
        if sol.status == SOLVED:
            self._u = u.copy()
            self._qp_sol = sol
        else:
            self.reset()
        elapsed = time.perf_counter() - t_start
        return MpcSolution(float(u[0]), states, u, sol.status, elapsed, cfg.ts, sol)


def solve_step(x0, schedule, vehicle: VehicleParams, weights: MpcWeights | None = None,
               config: MpcConfig | None = None, controller: LpvMpc | None = None) -> MpcSolution:
    """Functional wrapper; pass ``controller`` to keep warm-start state."""
    ctrl = controller or LpvMpc(vehicle, weights, config)
    return ctrl.solve_step(x0, schedule)
