"""Dense convex QP solver (ADMM operator splitting with active-set polishing).

Problem form::

    minimize    0.5 z'Hz + g'z
    subject to  lo <= A z <= hi

Dual sign convention: ``H z + g + A' lam = 0`` with ``lam_i <= 0`` on an
active lower bound and ``lam_i >= 0`` on an active upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class DenseQp:
    h: np.ndarray
    g: np.ndarray
    a_ineq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        n = self.g.size
        self.a_ineq = np.asarray(self.a_ineq, dtype=float).reshape(-1, n)
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        m = self.a_ineq.shape[0]
        if self.h.shape != (n, n):
            raise ValueError(f"h has shape {self.h.shape}, expected {(n, n)}")
        if self.lo.shape != (m,) or self.hi.shape != (m,):
            raise ValueError("lo/hi must have one entry per constraint row")
        if np.abs(self.h - self.h.T).max(initial=0.0) > 1e-10:
            raise ValueError("h is not symmetric")
        if np.any(self.lo > self.hi):
            raise ValueError("lo must not exceed hi")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.lo.size

    def objective(self, z) -> float:
        return float(0.5 * z @ self.h @ z + self.g @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int
    primal_res: float
    dual_res: float
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


@dataclass
class QpSolverConfig:
    rho: float = 0.1
    sigma: float = 1e-8
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-7
    max_iter: int = 4000
    adaptive_rho_interval: int = 50
    polish: bool = True
    polish_interval: int = 10
    record_history: bool = False


def kkt_residuals(qp: DenseQp, sol: QpSolution) -> tuple[float, float, float]:
    """(stationarity, primal infeasibility, complementarity) as infinity norms."""
    z, lam = sol.z, sol.lam
    az = qp.a_ineq @ z
    stat = np.abs(qp.h @ z + qp.g + qp.a_ineq.T @ lam).max(initial=0.0)
    viol = np.maximum(np.maximum(qp.lo - az, az - qp.hi), 0.0).max(initial=0.0)
    with np.errstate(invalid="ignore"):
        slack = np.where(lam < 0, az - qp.lo, qp.hi - az)
        comp = np.where(lam == 0, 0.0, np.abs(lam * slack))
    return float(stat), float(viol), float(comp.max(initial=0.0))


class QpSolver:
    """Warm-startable ADMM solver; owns a cached factorisation.

    One instance per control thread. The cached inverse of
    ``H + sigma*I + A' diag(rho) A`` is reused while H, A and rho are unchanged.
    """

    def __init__(self, config: QpSolverConfig | None = None):
        self.config = config or QpSolverConfig()
        self._cache_key = None
        self._kinv = None
        self.factorizations = 0
        self.history: list[float] = []

    def _factor(self, qp: DenseQp, rho_vec: np.ndarray) -> np.ndarray:
        key = self._cache_key
        if (key is not None and key[0].shape == qp.h.shape and key[1].shape == qp.a_ineq.shape
                and np.array_equal(key[0], qp.h) and np.array_equal(key[1], qp.a_ineq)
                and np.array_equal(key[2], rho_vec)):
            return self._kinv
        K = qp.h + self.config.sigma * np.eye(qp.n) + (qp.a_ineq.T * rho_vec) @ qp.a_ineq
        cf = sla.cho_factor(K, check_finite=False)
        self._kinv = sla.cho_solve(cf, np.eye(qp.n), check_finite=False)
        self._cache_key = (qp.h.copy(), qp.a_ineq.copy(), rho_vec.copy())
        self.factorizations += 1
        return self._kinv

    def _rho_vector(self, qp: DenseQp, rho: float) -> np.ndarray:
        rv = np.full(qp.m, rho)
        rv[qp.hi - qp.lo < 1e-9] = rho * 1e3
        rv[np.isinf(qp.lo) & np.isinf(qp.hi)] = 1e-6
        return rv

    def _polish(self, qp: DenseQp, z_admm, y_admm, x):
        """Solve the equality-constrained KKT system for the guessed active set."""
        cfg = self.config
        A = qp.a_ineq
        lower = z_admm - qp.lo < -y_admm
        upper = qp.hi - z_admm < y_admm
        active = lower | upper
        idx = np.flatnonzero(active)
        n, k = qp.n, idx.size
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = qp.h
        kkt[:n, n:] = A[idx].T
        kkt[n:, :n] = A[idx]
        rhs = np.concatenate([-qp.g, np.where(lower[idx], qp.lo[idx], qp.hi[idx])])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n]
        lam = np.zeros(qp.m)
        lam[idx] = sol[n:]
        eq = qp.hi - qp.lo < 1e-9
        tol = cfg.eps_abs
        if np.any((lam[lower & ~eq] > tol)) or np.any(lam[upper & ~eq] < -tol):
            return None
        ax = A @ xp
        prim = float(np.maximum(np.maximum(qp.lo - ax, ax - qp.hi), 0.0).max(initial=0.0))
        dual = float(np.abs(qp.h @ xp + qp.g + A.T @ lam).max(initial=0.0))
        if prim > tol or dual > tol:
            return None
        return xp, lam, prim, dual

    def solve(self, qp: DenseQp, warm: QpSolution | None = None) -> QpSolution:
        cfg = self.config
        n, m = qp.n, qp.m
        H, g, A, lo, hi = qp.h, qp.g, qp.a_ineq, qp.lo, qp.hi
        if warm is not None and warm.z.shape == (n,) and warm.lam.shape == (m,):
            x = warm.z.astype(float).copy()
            y = warm.lam.astype(float).copy()
        else:
            x = np.zeros(n)
            y = np.zeros(m)
        z = np.clip(A @ x, lo, hi)
        rho = cfg.rho
        rho_vec = self._rho_vector(qp, rho)
        kinv = self._factor(qp, rho_vec)
        sigma, alpha = cfg.sigma, cfg.alpha
        prim = dual = np.inf
        best = None
        it = 0
        self.history = []
        for it in range(1, cfg.max_iter + 1):
            rhs = sigma * x - g + A.T @ (rho_vec * z - y)
            x_t = kinv @ rhs
            z_t = A @ x_t
            x = alpha * x_t + (1.0 - alpha) * x
            z_relax = alpha * z_t + (1.0 - alpha) * z
            z_new = np.clip(z_relax + y / rho_vec, lo, hi)
            dy = rho_vec * (z_relax - z_new)
            y = y + dy
            z = z_new

            ax = A @ x
            prim = float(np.abs(ax - z).max(initial=0.0))
            aty = A.T @ y
            hx = H @ x
            dual = float(np.abs(hx + g + aty).max(initial=0.0))
            if cfg.record_history:
                self.history.append(prim + dual)
            if best is None or prim + dual < best[2] + best[3]:
                best = (x.copy(), y.copy(), prim, dual)

            converged = prim <= cfg.eps_abs and dual <= cfg.eps_abs
            if cfg.polish and (converged or it % cfg.polish_interval == 0):
                pol = self._polish(qp, z, y, x)
                if pol is not None:
                    return QpSolution(pol[0], pol[1], SOLVED, it, pol[2], pol[3], polished=True)
            if converged:
                return QpSolution(x, y, SOLVED, it, prim, dual)

            dy_norm = np.abs(dy).max(initial=0.0)
            if dy_norm > 0:
                at_dy = np.abs(A.T @ dy).max(initial=0.0)
                with np.errstate(invalid="ignore"):
                    support = (np.where(dy > 0, hi, 0.0) @ np.maximum(dy, 0.0)
                               + np.where(dy < 0, lo, 0.0) @ np.minimum(dy, 0.0))
                if at_dy <= cfg.eps_pinf * dy_norm and support < -cfg.eps_pinf * dy_norm:
                    return QpSolution(x, y, INFEASIBLE, it, prim, dual)

            if cfg.adaptive_rho_interval and it % cfg.adaptive_rho_interval == 0:
                p_scale = max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-12)
                d_scale = max(np.abs(hx).max(initial=0.0), np.abs(aty).max(initial=0.0),
                              np.abs(g).max(initial=0.0), 1e-12)
                ratio = (prim / p_scale + cfg.eps_rel) / (dual / d_scale + cfg.eps_rel)
                new_rho = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rho_vec = self._rho_vector(qp, rho)
                    kinv = self._factor(qp, rho_vec)
        x, y, prim, dual = best
        return QpSolution(x, y, MAX_ITER, it, prim, dual)


def solve(qp: DenseQp, warm: QpSolution | None = None,
          config: QpSolverConfig | None = None) -> QpSolution:
    return QpSolver(config).solve(qp, warm)


def dump_qp(path, qp: DenseQp) -> None:
    """Write a QP as plain-text matrix blocks (debug aid)."""
    with open(path, "w") as fh:
        for name in ("h", "g", "a_ineq", "lo", "hi"):
            arr = np.atleast_2d(getattr(qp, name))
            fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
            np.savetxt(fh, arr, fmt="%.17g")


def load_qp(path) -> DenseQp:
    blocks: dict[str, np.ndarray] = {}
    name = None
    rows: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if name is not None:
                    blocks[name] = np.array(rows, dtype=float)
                name, rows = line.split()[1], []
            elif line.strip():
                rows.append([float(v) for v in line.split()])
    if name is not None:
        blocks[name] = np.array(rows, dtype=float)
    n = blocks["g"].size
    return DenseQp(blocks["h"].reshape(n, n), blocks["g"].ravel(),
                   blocks["a_ineq"].reshape(-1, n), blocks["lo"].ravel(), blocks["hi"].ravel())
