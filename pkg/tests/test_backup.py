import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lpvmpc.backup import (
    MPC,
    PURE_PURSUIT,
    ArbiterState,
    ArbitrationConfig,
    Pid,
    PidConfig,
    PidState,
    PurePursuitConfig,
    arbitrate,
    pid_accel,
    pure_pursuit_steer,
)
from lpvmpc.plant import PlantInput, PlantModel, PlantState, step
from lpvmpc.tires import FINAL_RUN_FRONT, FINAL_RUN_REAR, VehicleParams
from lpvmpc.track import make_circle, make_straight

PP = PurePursuitConfig()
STRAIGHT = make_straight(1000.0, spacing=1.0)


def test_target_dead_ahead():
    assert pure_pursuit_steer(100.0, 0.0, 0.0, 30.0, STRAIGHT, PP, 2.95) == 0.0


def test_circle_limit():
    radius = 300.0
    rl = make_circle(radius, spacing=1.0)
    cfg = PurePursuitConfig(lookahead_gain=0.5, lookahead_min=15.0, lookahead_max=15.0)
    assert 15.0 / radius == 0.05
    delta = pure_pursuit_steer(rl.x[100], rl.y[100], rl.psi_ref[100], 30.0, rl, cfg, 2.95)
    assert delta == pytest.approx(math.atan(2.95 / radius), rel=2e-3)


def test_lookahead_clamps():
    assert PP.lookahead(0.0) == PP.lookahead_min
    assert PP.lookahead(1000.0) == PP.lookahead_max
    assert PP.lookahead(20.0) == 10.0


@given(st.floats(0.01, 10.0), st.floats(10.0, 60.0))
def test_pursuit_odd_in_offset(offset, v):
    left = pure_pursuit_steer(200.0, offset, 0.0, v, STRAIGHT, PP, 2.95)
    right = pure_pursuit_steer(200.0, -offset, 0.0, v, STRAIGHT, PP, 2.95)
    assert left == pytest.approx(-right, abs=1e-12)
    assert left < 0  # steer back toward the line


def test_pursuit_respects_bound():
    assert pure_pursuit_steer(200.0, -30.0, 0.0, 10.0, STRAIGHT, PP, 2.95, delta_max=0.2) == 0.2


def test_pid_examples():
    cfg = PidConfig(kp=1.0, ki=0.0, kd=0.0)
    assert pid_accel(30.0, 30.0, 0.02, PidState(), PidConfig())[0] == 0.0
    assert pid_accel(34.0, 30.0, 0.02, PidState(), cfg)[0] == pytest.approx(4.0)


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0, 100)), min_size=1, max_size=60),
       st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(0.0, 1.0))
def test_pid_bounded(seq, kp, ki, kd):
    cfg = PidConfig(kp=kp, ki=ki, kd=kd, integrator_limit=3.0)
    state = PidState()
    for v_ref, v in seq:
        a, state = pid_accel(v_ref, v, 0.02, state, cfg)
        assert cfg.a_min <= a <= cfg.a_max
        assert abs(state.integral) <= cfg.integrator_limit


def _speed_step(v0, v_ref, t_end=10.0):
    model = PlantModel(VehicleParams(), FINAL_RUN_FRONT, FINAL_RUN_REAR)
    pid = Pid()
    s = PlantState(v_x=v0)
    for _ in range(int(round(t_end / 0.02))):
        a = pid(v_ref, s.v_x, 0.02)
        for _ in range(20):
            s = step(s, PlantInput(0.0, a), 0.001, model)
    return s.v_x


def test_pid_unit_step_settles():
    assert abs(_speed_step(29.0, 30.0) - 30.0) < 0.1


def test_pid_step_follows_second_order_response():
    # drag-free plant: e'' + kp e' + ki e = 0 with e(0) = 5, e'(0) = -kp * 5
    kp, ki = 0.8, 0.1
    r1, r2 = np.roots([1.0, kp, ki])
    a = (-kp * 5.0 - r2 * 5.0) / (r1 - r2)
    b = 5.0 - a
    expected = 30.0 - (a * np.exp(r1 * 10.0) + b * np.exp(r2 * 10.0))
    # discrete 50 Hz control adds a small lag
    assert _speed_step(25.0, 30.0) == pytest.approx(expected, abs=0.02)


def test_pid_rejects_bad_dt():
    with pytest.raises(ValueError):
        pid_accel(1.0, 0.0, 0.0, PidState(), PidConfig())


def test_arbitration_examples():
    assert arbitrate("solved", 19.9, 0.004)[0] == PURE_PURSUIT
    assert arbitrate("solved", 70.0, 0.0058)[0] == MPC
    assert arbitrate("max_iter", 70.0, 0.002)[0] == PURE_PURSUIT
    assert arbitrate("solved", 70.0, 0.011)[0] == PURE_PURSUIT
    assert arbitrate(None, 70.0, 0.0)[0] == PURE_PURSUIT


def test_reentry_needs_streak_above_threshold():
    cfg = ArbitrationConfig()
    state = ArbiterState(engaged=False)
    picks = []
    for v in [20.5] * 10 + [21.0] * 6:
        src, state = arbitrate("solved", v, 0.001, cfg, state)
        picks.append(src)
    assert picks[:14] == [PURE_PURSUIT] * 14
    assert picks[14:] == [MPC, MPC]
    # one failure drops out again and the streak restarts
    src, state = arbitrate("infeasible", 30.0, 0.001, cfg, state)
    assert src == PURE_PURSUIT and state.streak == 0


@given(st.sampled_from(["solved", "max_iter", "infeasible", None]), st.floats(0, 100),
       st.floats(0, 0.05), st.booleans(), st.integers(0, 10))
def test_arbitrate_pure(status, v, t, engaged, streak):
    state = ArbiterState(engaged, streak)
    assert arbitrate(status, v, t, ArbitrationConfig(), state) == arbitrate(status, v, t, ArbitrationConfig(), state)


def test_config_validation():
    with pytest.raises(ValueError):
        PurePursuitConfig(lookahead_min=10.0, lookahead_max=5.0)
    with pytest.raises(ValueError):
        PidConfig(a_min=1.0)
    with pytest.raises(ValueError):
        pure_pursuit_steer(0.0, 0.0, 0.0, -1.0, STRAIGHT, PP, 2.95)


def test_steering_direction_on_circle_is_left():
    rl = make_circle(100.0, spacing=1.0)
    assert pure_pursuit_steer(rl.x[0], rl.y[0], 0.0, 20.0, rl, PP, 2.95) > 0
    assert np.isfinite(pure_pursuit_steer(rl.x[5], rl.y[5], 1.0, 20.0, rl, PP, 2.95, hint=5))
