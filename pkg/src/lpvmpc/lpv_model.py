"""Linear parameter-varying error dynamics and their exact ZOH discretisation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tires import GRAVITY, V_X_MIN, VehicleParams

N_STATE = 5


class SchedulingParams(NamedTuple):
    """Exogenous quantities the model is scheduled on: speed, curvature, banking."""

    v_x: float
    kappa: float
    phi: float


class ErrorState(NamedTuple):
    e_y: float
    e_y_dot: float
    e_psi: float
    e_psi_dot: float
    delta: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class DiscreteLpv:
    a_d: np.ndarray
    b_d: np.ndarray
    e_d: np.ndarray

    def step(self, x, u: float) -> np.ndarray:
        return self.a_d @ x + self.b_d * u + self.e_d


def continuous_matrices(p: SchedulingParams, vp: VehicleParams):
    """A (4x4), B (4,), C (4,) of the error-state single-track model.

    ``vp.c_f``/``vp.c_r`` are per-tire stiffnesses. Speeds below ``V_X_MIN``
    are clamped.
    """
    v = max(float(p.v_x), V_X_MIN)
    m, iz, lf, lr, cf, cr = vp.m, vp.i_z, vp.l_f, vp.l_r, vp.c_f, vp.c_r
    a22 = -2.0 * (cf + cr) / (m * v)
    a23 = -v * a22
    a24 = (-2.0 * cf * lf + 2.0 * cr * lr) / (m * v)
    a42 = -2.0 * (cf * lf - cr * lr) / (iz * v)
    a43 = -v * a42
    a44 = -2.0 * (cf * lf**2 + cr * lr**2) / (iz * v)
    b21 = 2.0 * cf / m
    b41 = 2.0 * cf * lf / iz
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, a22, a23, a24],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, a42, a43, a44],
    ])
    B = np.array([0.0, b21, 0.0, b41])
    C = np.array([0.0, a24 - v, 0.0, a44])
    return A, B, C


def augment(A, B, C, p: SchedulingParams):
    """Steering-augmented system with the affine curvature/banking term."""
    a_t = np.zeros((N_STATE, N_STATE))
    a_t[:4, :4] = A
    a_t[:4, 4] = B
    b_t = np.zeros(N_STATE)
    b_t[4] = 1.0
    c_t = np.zeros(N_STATE)
    c_t[:4] = C
    psi_dot_ref = max(float(p.v_x), V_X_MIN) * p.kappa
    e = c_t * psi_dot_ref
    e[1] += GRAVITY * np.sin(p.phi)
    return a_t, b_t, e


# Pade(13) coefficients for scaling-and-squaring (Higham 2005).
_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def expm_batch(M: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack of square matrices, shape (..., n, n).

    Scaling and squaring with a degree-13 Pade approximant; one common
    scaling exponent per batch keeps the work vectorised.
    """
    M = np.asarray(M, dtype=float)
    single = M.ndim == 2
    if single:
        M = M[None]
    n = M.shape[-1]
    norm1 = np.abs(M).sum(axis=-2).max(axis=-1).max() if M.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm1 / _THETA13)))) if norm1 > 0 else 0
    X = M / (2.0**s)
    b = _PADE13
    ident = np.broadcast_to(np.eye(n), X.shape)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    u_inner = X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
    u_ = X @ (u_inner + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident)
    v_inner = X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
    v_ = v_inner + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident
    R = np.linalg.solve(v_ - u_, v_ + u_)
    for _ in range(s):
        R = R @ R
    return R[0] if single else R


def _embed(a_t, b_t, e):
    a_t = np.asarray(a_t)
    n = a_t.shape[-1]
    M = np.zeros(a_t.shape[:-2] + (n + 2, n + 2))
    M[..., :n, :n] = a_t
    M[..., :n, n] = b_t
    M[..., :n, n + 1] = e
    return M


def discretize(a_t, b_t, e, ts: float) -> DiscreteLpv:
    """Exact zero-order-hold discretisation of x' = A x + B u + E."""
    if not 0 < ts <= 0.1:
        raise ValueError(f"ts must lie in (0, 0.1], got {ts}")
    n = np.asarray(a_t).shape[-1]
    F = expm_batch(_embed(a_t, b_t, e) * ts)
    return DiscreteLpv(F[:n, :n], F[:n, n].copy(), F[:n, n + 1].copy())


def _embedded_batch(schedule, vp: VehicleParams) -> np.ndarray:
    """Vectorised ``_embed(augment(continuous_matrices(p)))`` over a schedule."""
    arr = np.array([(p.v_x, p.kappa, p.phi) for p in schedule], dtype=float)
    v = np.maximum(arr[:, 0], V_X_MIN)
    m, iz, lf, lr, cf, cr = vp.m, vp.i_z, vp.l_f, vp.l_r, vp.c_f, vp.c_r
    a22 = -2.0 * (cf + cr) / (m * v)
    a24 = (-2.0 * cf * lf + 2.0 * cr * lr) / (m * v)
    a42 = -2.0 * (cf * lf - cr * lr) / (iz * v)
    a44 = -2.0 * (cf * lf**2 + cr * lr**2) / (iz * v)
    M = np.zeros((len(arr), N_STATE + 2, N_STATE + 2))
    M[:, 0, 1] = 1.0
    M[:, 1, 1] = a22
    M[:, 1, 2] = -v * a22
    M[:, 1, 3] = a24
    M[:, 2, 3] = 1.0
    M[:, 3, 1] = a42
    M[:, 3, 2] = -v * a42
    M[:, 3, 3] = a44
    M[:, 1, 4] = 2.0 * cf / m
    M[:, 3, 4] = 2.0 * cf * lf / iz
    M[:, 4, 5] = 1.0
    psi_dot_ref = v * arr[:, 1]
    M[:, 1, 6] = (a24 - v) * psi_dot_ref + GRAVITY * np.sin(arr[:, 2])
    M[:, 3, 6] = a44 * psi_dot_ref
    return M


def build_horizon_models(schedule, vp: VehicleParams, ts: float) -> list[DiscreteLpv]:
    """Discrete models for steps 0..N-1 of a schedule holding N+1 entries."""
    if len(schedule) < 2:
        raise ValueError("schedule needs at least 2 entries")
    if not 0 < ts <= 0.1:
        raise ValueError(f"ts must lie in (0, 0.1], got {ts}")
    F = expm_batch(_embedded_batch(schedule[:-1], vp) * ts)
    n = N_STATE
    return [DiscreteLpv(f[:n, :n], f[:n, n].copy(), f[:n, n + 1].copy()) for f in F]
