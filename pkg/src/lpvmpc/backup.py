"""Pure-pursuit fallback, PID speed control and MPC/fallback arbitration."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .track import Raceline, project, wrap_angle

MPC = "mpc"
PURE_PURSUIT = "pure_pursuit"


@dataclass(frozen=True)
class PurePursuitConfig:
    lookahead_gain: float = 0.5
    lookahead_min: float = 5.0
    lookahead_max: float = 40.0

    def __post_init__(self):
        if not (self.lookahead_gain > 0 and 0 < self.lookahead_min <= self.lookahead_max):
            raise ValueError("invalid pure-pursuit lookahead settings")

    def lookahead(self, v_x: float) -> float:
        return min(max(self.lookahead_gain * v_x, self.lookahead_min), self.lookahead_max)


def pure_pursuit_steer(x: float, y: float, psi: float, v_x: float, raceline: Raceline,
                       cfg: PurePursuitConfig, wheelbase: float, delta_max: float = math.inf,
                       hint: int | None = None) -> float:
    if v_x < 0:
        raise ValueError("pure pursuit needs v_x >= 0")
    l_d = cfg.lookahead(v_x)
    s_proj = project(raceline, x, y, psi, hint).s_proj
    target = raceline.sample(s_proj + l_d)
    alpha = wrap_angle(math.atan2(target.y - y, target.x - x) - psi)
    delta = math.atan(2.0 * wheelbase * math.sin(alpha) / l_d)
    return min(max(delta, -delta_max), delta_max)


@dataclass(frozen=True)
class PidConfig:
    kp: float = 0.8
    ki: float = 0.1
    kd: float = 0.0
    a_min: float = -6.0
    a_max: float = 6.0
    integrator_limit: float = 20.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be non-negative")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def pid_accel(v_ref: float, v_x: float, dt: float, state: PidState,
              cfg: PidConfig) -> tuple[float, PidState]:
    """Clamped PID on speed error; the integrator freezes while the output saturates."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = v_ref - v_x
    deriv = 0.0 if state.prev_error is None else (err - state.prev_error) / dt
    lim = cfg.integrator_limit
    integral = min(max(state.integral + err * dt, -lim), lim)
    raw = cfg.kp * err + cfg.ki * integral + cfg.kd * deriv
    if (raw > cfg.a_max and err > 0) or (raw < cfg.a_min and err < 0):
        integral = state.integral
        raw = cfg.kp * err + cfg.ki * integral + cfg.kd * deriv
    a = min(max(raw, cfg.a_min), cfg.a_max)
    return a, PidState(integral, err)


class Pid:
    def __init__(self, cfg: PidConfig | None = None):
        self.cfg = cfg or PidConfig()
        self.state = PidState()

    def __call__(self, v_ref: float, v_x: float, dt: float) -> float:
        a, self.state = pid_accel(v_ref, v_x, dt, self.state, self.cfg)
        return a


@dataclass(frozen=True)
class ArbitrationConfig:
    v_min: float = 20.0
    v_reenter: float = 21.0
    reenter_ticks: int = 5
    deadline: float = 0.010


@dataclass(frozen=True)
class ArbiterState:
    """Whether the MPC currently holds the wheel, and the run of healthy ticks."""

    engaged: bool = True
    streak: int = 0


def arbitrate(qp_status: str | None, v_x: float, solve_time: float,
              cfg: ArbitrationConfig = ArbitrationConfig(),
              state: ArbiterState = ArbiterState()) -> tuple[str, ArbiterState]:
    """Choose the steering source for this tick.

    ``qp_status`` is None when the MPC was not run. Once disengaged, the MPC
    needs ``v_x >= v_reenter`` for ``reenter_ticks`` consecutive healthy
    ticks before it takes over again.
    """
    healthy = qp_status == "solved" and solve_time <= cfg.deadline
    if state.engaged:
        if healthy and v_x >= cfg.v_min:
            return MPC, ArbiterState(True, state.streak + 1)
        return PURE_PURSUIT, ArbiterState(False, 0)
    streak = state.streak + 1 if healthy and v_x >= cfg.v_reenter else 0
    if streak >= cfg.reenter_ticks:
        return MPC, ArbiterState(True, streak)
    return PURE_PURSUIT, ArbiterState(False, streak)
