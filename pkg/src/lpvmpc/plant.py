"""Nonlinear single-track plant with Pacejka axles, banking and steering-rate actuation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tires import GRAVITY, V_X_MIN, PacejkaAxleParams, VehicleParams


@dataclass(frozen=True)
class PlantState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    psi_dot: float = 0.0
    delta: float = 0.0

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.psi, self.v_x, self.v_y, self.psi_dot, self.delta)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())


@dataclass(frozen=True)
class PlantInput:
    delta_rate: float = 0.0
    a_x: float = 0.0


@dataclass(frozen=True)
class PlantModel:
    """Everything the plant integrates with besides state and input.

    ``rear_slip_gain`` > 0 shrinks the rear peak force under positive
    longitudinal acceleration, ``D_r * max(0.2, 1 - gain * a_x)``, to emulate
    throttle-induced loss of lateral grip. Off by default.
    """

    vehicle: VehicleParams
    front: PacejkaAxleParams
    rear: PacejkaAxleParams
    rear_slip_gain: float = 0.0


def _pac(b, c, d, e, alpha):
    ba = b * alpha
    return d * math.sin(c * math.atan(ba - e * (ba - math.atan(ba))))


def _deriv(st, delta_rate, a_x, model: PlantModel, phi):
    x, y, psi, v_x, v_y, psi_dot, delta = st
    vp = model.vehicle
    cpsi, spsi = math.cos(psi), math.sin(psi)
    dx = v_x * cpsi - v_y * spsi
    dy = v_x * spsi + v_y * cpsi
    if (delta >= vp.delta_max and delta_rate > 0) or (delta <= -vp.delta_max and delta_rate < 0):
        delta_rate = 0.0
    if v_x < V_X_MIN:
        return (dx, dy, psi_dot, a_x, 0.0, 0.0, delta_rate)
    f, r = model.front, model.rear
    alpha_f = delta - math.atan((v_y + vp.l_f * psi_dot) / v_x)
    alpha_r = -math.atan((v_y - vp.l_r * psi_dot) / v_x)
    d_r = r.d_p
    if model.rear_slip_gain > 0 and a_x > 0:
        d_r *= max(0.2, 1.0 - model.rear_slip_gain * a_x)
    fyf = _pac(f.b_p, f.c_p, f.d_p, f.e_p, alpha_f)
    fyr = _pac(r.b_p, r.c_p, d_r, r.e_p, alpha_r)
    cd = math.cos(delta)
    dv_y = (fyf * cd + fyr) / vp.m - v_x * psi_dot + GRAVITY * math.sin(phi)
    dpsi_dot = (vp.l_f * fyf * cd - vp.l_r * fyr) / vp.i_z
    dv_x = a_x + v_y * psi_dot
    return (dx, dy, psi_dot, dv_x, dv_y, dpsi_dot, delta_rate)


def derivatives(s: PlantState, u: PlantInput, model: PlantModel, phi: float = 0.0) -> np.ndarray:
    """Time derivative of the plant state as an array ordered like PlantState."""
    return np.array(_deriv(s.as_tuple(), u.delta_rate, u.a_x, model, phi))


def lateral_acceleration(s: PlantState, model: PlantModel, phi: float = 0.0, a_x: float = 0.0) -> float:
    """Body-frame lateral acceleration the tires produce (what an IMU would read on flat ground)."""
    d = _deriv(s.as_tuple(), 0.0, a_x, model, phi)
    return d[4] + s.v_x * s.psi_dot - GRAVITY * math.sin(phi)


def step(s: PlantState, u: PlantInput, dt: float, model: PlantModel, phi: float = 0.0) -> PlantState:
    """Classical RK4 step with the input held; steering saturated afterwards."""
    if not 0 < dt <= 0.02:
        raise ValueError(f"dt must lie in (0, 0.02], got {dt}")
    st = s.as_tuple()
    dr, ax = u.delta_rate, u.a_x
    k1 = _deriv(st, dr, ax, model, phi)
    s2 = tuple(a + 0.5 * dt * b for a, b in zip(st, k1))
    k2 = _deriv(s2, dr, ax, model, phi)
    s3 = tuple(a + 0.5 * dt * b for a, b in zip(st, k2))
    k3 = _deriv(s3, dr, ax, model, phi)
    s4 = tuple(a + dt * b for a, b in zip(st, k3))
    k4 = _deriv(s4, dr, ax, model, phi)
    new = [a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
           for a, b1, b2, b3, b4 in zip(st, k1, k2, k3, k4)]
    dmax = model.vehicle.delta_max
    new[6] = min(max(new[6], -dmax), dmax)
    new[3] = max(new[3], 0.0)
    return PlantState(*new)
