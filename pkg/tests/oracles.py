"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np

from lpvmpc.qp import DenseQp


def random_qp(rng, n=None, m=None, identity_rows=None):
    """Strictly convex QP with two-sided bounds on random rows, n <= 4, m <= 6."""
    n = n or int(rng.integers(1, 5))
    m = m if m is not None else int(rng.integers(1, 7))
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3
    if identity_rows is None:
        identity_rows = bool(rng.integers(0, 2))
    if identity_rows:
        m = n
        A = np.eye(n)
    else:
        A = rng.normal(size=(m, n))
    center = rng.normal(size=m) * 0.5
    width = rng.uniform(0.1, 2.0, size=m)
    lo, hi = center - width, center + width
    # one-sided or free rows now and then
    for i in range(m):
        r = rng.uniform()
        if r < 0.1:
            lo[i] = -np.inf
        elif r < 0.2:
            hi[i] = np.inf
    return DenseQp(H, g, A, lo, hi)


def brute_force_qp(qp):
    """Enumerate every active set (row at lower / upper / inactive), solve the
    equality-constrained KKT system and keep the best feasible point."""
    n, m = qp.n, qp.m
    best_z, best_f = None, np.inf
    for choice in itertools.product((0, 1, 2), repeat=m):
        rows, rhs = [], []
        for i, c in enumerate(choice):
            if c == 1 and np.isfinite(qp.lo[i]):
                rows.append(i)
                rhs.append(qp.lo[i])
            elif c == 2 and np.isfinite(qp.hi[i]):
                rows.append(i)
                rhs.append(qp.hi[i])
            elif c != 0:
                break
        else:
            if len(rows) > n:
                continue
            k = len(rows)
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = qp.h
            if k:
                Ak = qp.a_ineq[rows]
                kkt[:n, n:] = Ak.T
                kkt[n:, :n] = Ak
            b = np.concatenate([-qp.g, rhs])
            try:
                sol = np.linalg.solve(kkt, b)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            az = qp.a_ineq @ z
            if np.all(az >= qp.lo - 1e-9) and np.all(az <= qp.hi + 1e-9):
                f = qp.objective(z)
                if f < best_f - 1e-12:
                    best_z, best_f = z, f
    return best_z, best_f


def rk4_affine_batch(a_t, b_t, e, x0, u, ts, n=1000):
    """Classical RK4 of x' = A x + B u + E for a stack of systems, n substeps."""
    h = ts / n
    x = np.array(x0, dtype=float)
    drive = b_t * np.asarray(u, dtype=float)[:, None] + e

    def f(z):
        return np.einsum("kij,kj->ki", a_t, z) + drive

    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x
