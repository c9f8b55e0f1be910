"""Lateral tire force models and axle-force reconstruction.

Stiffness bookkeeping used throughout the package:

* ``PacejkaAxleParams`` and :func:`c_linear` describe a whole axle.
* ``VehicleParams.c_f`` / ``c_r`` are *per tire*; the factor 2 of the
  linear single-track model is applied exactly once, in :func:`linear_force`
  and in the LPV matrix entries. Convert with ``c_tire = c_linear / 2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
import tomli_w

GRAVITY = 9.80665
V_X_MIN = 1.0


@dataclass(frozen=True)
class PacejkaAxleParams:
    """Magic-formula coefficients for one axle (no shift terms)."""

    b_p: float
    c_p: float
    d_p: float
    e_p: float

    def __post_init__(self):
        if not self.b_p > 0:
            raise ValueError(f"b_p must be > 0, got {self.b_p}")
        if not 0 < self.c_p <= 3:
            raise ValueError(f"c_p must lie in (0, 3], got {self.c_p}")
        if not self.d_p > 0:
            raise ValueError(f"d_p must be > 0, got {self.d_p}")
        if not self.e_p <= 1:
            raise ValueError(f"e_p must be <= 1, got {self.e_p}")

    def as_array(self) -> np.ndarray:
        return np.array([self.b_p, self.c_p, self.d_p, self.e_p])

    @classmethod
    def from_array(cls, theta) -> "PacejkaAxleParams":
        b, c, d, e = (float(v) for v in theta)
        return cls(b, c, d, e)


# Axle fits from a 56 m/s practice lap and a 72 m/s final run.
PRACTICE_FRONT = PacejkaAxleParams(34.59, 1.81, 2100.0, -1.0)
PRACTICE_REAR = PacejkaAxleParams(35.04, 1.96, 3036.0, -0.26)
FINAL_RUN_FRONT = PacejkaAxleParams(22.30, 2.00, 3885.85, -1.00)
FINAL_RUN_REAR = PacejkaAxleParams(26.08, 2.00, 5342.89, -1.00)

_PRACTICE_FRONT_TIRE = PRACTICE_FRONT.b_p * PRACTICE_FRONT.c_p * PRACTICE_FRONT.d_p / 2.0
_PRACTICE_REAR_TIRE = PRACTICE_REAR.b_p * PRACTICE_REAR.c_p * PRACTICE_REAR.d_p / 2.0


@dataclass(frozen=True)
class VehicleParams:
    """Single-track vehicle parameters.

    The mass/inertia/geometry defaults are placeholders for an open-wheel
    oval racer; ``c_f``/``c_r`` default to half the practice-lap axle stiffness.
    """

    m: float = 787.0
    i_z: float = 1000.0
    l_f: float = 1.7
    l_r: float = 1.25
    c_f: float = _PRACTICE_FRONT_TIRE
    c_r: float = _PRACTICE_REAR_TIRE
    delta_max: float = 0.35
    delta_rate_max: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if self.l_f + self.l_r <= 1.0:
            raise ValueError("wheelbase l_f + l_r must exceed 1 m")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def with_axle_stiffness(self, front: PacejkaAxleParams, rear: PacejkaAxleParams) -> "VehicleParams":
        """Copy with per-tire stiffness taken from a pair of axle fits."""
        return replace(self, c_f=c_linear(front) / 2.0, c_r=c_linear(rear) / 2.0)


def pacejka_force(params: PacejkaAxleParams, alpha):
    """Axle lateral force [N] for slip angle(s) ``alpha`` [rad]."""
    b, c, d, e = params.b_p, params.c_p, params.d_p, params.e_p
    ba = b * np.asarray(alpha, dtype=float)
    out = d * np.sin(c * np.arctan(ba - e * (ba - np.arctan(ba))))
    return float(out) if out.ndim == 0 else out


def pacejka_jacobian(theta, alpha) -> np.ndarray:
    """d F / d (B, C, D, E) for every entry of ``alpha``; shape (n, 4)."""
    b, c, d, e = theta
    alpha = np.asarray(alpha, dtype=float)
    ba = b * alpha
    at_ba = np.arctan(ba)
    inner = ba - e * (ba - at_ba)
    at_in = np.arctan(inner)
    cos_term = np.cos(c * at_in)
    sin_term = np.sin(c * at_in)
    d_at_in = 1.0 / (1.0 + inner**2)
    # d inner / d B = alpha * (1 - E + E / (1 + (B alpha)^2))
    d_inner_db = alpha * (1.0 - e + e / (1.0 + ba**2))
    d_inner_de = -(ba - at_ba)
    common = d * cos_term * c * d_at_in
    return np.column_stack([
        common * d_inner_db,
        d * cos_term * at_in,
        sin_term,
        common * d_inner_de,
    ])


def linear_force(c_tire: float, alpha):
    """Axle force of the linear model, two tires of stiffness ``c_tire``."""
    return 2.0 * c_tire * alpha


def c_linear(params: PacejkaAxleParams) -> float:
    """Axle cornering stiffness B*C*D [N/rad]."""
    return params.b_p * params.c_p * params.d_p


def slip_angles(v_x: float, v_y: float, psi_dot: float, delta: float,
                params: VehicleParams, small_angle: bool = False) -> tuple[float, float]:
    """Front and rear slip angles [rad].

    ``small_angle`` replaces atan(z) with z, as in the linear controller model.
    """
    v_x = np.asarray(v_x, dtype=float)
    if np.any(v_x < V_X_MIN):
        raise ValueError(f"slip angles need v_x >= {V_X_MIN} m/s")
    zf = (v_y + params.l_f * psi_dot) / v_x
    zr = (v_y - params.l_r * psi_dot) / v_x
    if small_angle:
        return delta - zf, -zr
    return delta - np.arctan(zf), -np.arctan(zr)


def axle_forces_from_imu(a_y_imu, delta, params: VehicleParams):
    """Reconstruct (front, rear) axle lateral forces from IMU lateral acceleration.

    Assumes quasi-steady yaw (no yaw acceleration) so the two axle forces
    split the total lateral force by the moment balance about the CoG.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(np.abs(delta) >= np.pi / 2):
        raise ValueError("|delta| must be below pi/2")
    L = params.l_f + params.l_r
    f_front = params.m * params.l_r * np.asarray(a_y_imu) / (L * np.cos(delta))
    f_rear = params.m * params.l_f * np.asarray(a_y_imu) / L
    return f_front, f_rear


def load_params_file(path) -> tuple[VehicleParams, PacejkaAxleParams, PacejkaAxleParams]:
    """Read ``[vehicle]``, ``[tire.front]`` and ``[tire.rear]`` from a TOML file.

    Missing tire tables fall back to the practice-lap fit; a ``[vehicle]`` table without
    ``c_f``/``c_r`` takes them from the tire fits (``c_linear / 2``).
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return params_from_dict(data)


def params_from_dict(data: dict) -> tuple[VehicleParams, PacejkaAxleParams, PacejkaAxleParams]:
    tire = data.get("tire", {})
    front = PacejkaAxleParams(**tire["front"]) if "front" in tire else PRACTICE_FRONT
    rear = PacejkaAxleParams(**tire["rear"]) if "rear" in tire else PRACTICE_REAR
    veh = dict(data.get("vehicle", {}))
    stiff_given = "c_f" in veh and "c_r" in veh
    vp = VehicleParams(**veh)
    if not stiff_given:
        vp = vp.with_axle_stiffness(front, rear)
    return vp, front, rear


def save_params_file(path, vp: VehicleParams, front: PacejkaAxleParams,
                     rear: PacejkaAxleParams) -> None:
    data = {
        "vehicle": asdict(vp),
        "tire": {"front": asdict(front), "rear": asdict(rear)},
    }
    Path(path).write_bytes(tomli_w.dumps(data).encode())
