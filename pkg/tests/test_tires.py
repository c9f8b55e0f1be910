import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from lpvmpc.tires import (
    FINAL_RUN_FRONT,
    FINAL_RUN_REAR,
    PRACTICE_FRONT,
    PRACTICE_REAR,
    PacejkaAxleParams,
    VehicleParams,
    axle_forces_from_imu,
    c_linear,
    linear_force,
    load_params_file,
    pacejka_force,
    pacejka_jacobian,
    params_from_dict,
    save_params_file,
    slip_angles,
)

NAMED = [PRACTICE_FRONT, PRACTICE_REAR, FINAL_RUN_FRONT, FINAL_RUN_REAR]

params_st = st.builds(
    PacejkaAxleParams,
    b_p=st.floats(1.0, 80.0),
    c_p=st.floats(0.5, 3.0),
    d_p=st.floats(100.0, 1e4),
    e_p=st.floats(-5.0, 1.0),
)


def test_zero_slip_zero_force():
    assert pacejka_force(PRACTICE_FRONT, 0.0) == 0.0


def test_small_slip_force():
    # high-precision evaluation of the magic formula at 1 mrad
    assert pacejka_force(PRACTICE_FRONT, 0.001) == pytest.approx(131.39065177037623, rel=1e-12)


def test_peak_bounded_by_d():
    alpha = np.linspace(0, 1.5, 3001)
    f = pacejka_force(FINAL_RUN_FRONT, alpha)
    assert np.max(np.abs(f)) <= FINAL_RUN_FRONT.d_p * (1 + 1e-12)
    # grid step 0.5 mrad; the peak itself reaches D
    assert np.max(f) == pytest.approx(FINAL_RUN_FRONT.d_p, rel=1e-4)


@pytest.mark.parametrize("params,expected", [
    (PRACTICE_FRONT, 131_476.59),
    (PRACTICE_REAR, 208_507.6224),
    (FINAL_RUN_FRONT, 173_308.91),
    (FINAL_RUN_REAR, 278_685.1424),
])
def test_c_linear(params, expected):
    assert c_linear(params) == pytest.approx(expected, rel=1e-12)


def test_linear_force_examples():
    assert linear_force(66e3, 0.01) == pytest.approx(1320.0)
    assert linear_force(66e3, 0.0) == 0.0
    assert linear_force(66e3, -0.02) == pytest.approx(-2640.0)


@given(params_st, st.floats(-2.0, 2.0))
def test_pacejka_odd(params, alpha):
    assert pacejka_force(params, -alpha) == -pacejka_force(params, alpha)


def _cubic_coefficient(p):
    # relative third-order deviation at B*C*alpha = x is x^2 * this
    return (1 + p.e_p) / (3 * p.c_p**2) + 1.0 / 6.0


@pytest.mark.parametrize("params", NAMED)
def test_linear_region_named_fits(params):
    lim = 0.2 / (params.b_p * params.c_p)
    alpha = np.linspace(-lim, lim, 401)
    alpha = alpha[alpha != 0]
    dev = np.abs(pacejka_force(params, alpha) - c_linear(params) * alpha)
    assert np.all(dev <= 0.01 * c_linear(params) * np.abs(alpha))


@given(params_st, st.floats(-1.0, 1.0).filter(lambda u: u != 0))
def test_linear_region_property(params, u):
    # the 1 % band only holds where the cubic term is small enough and
    # B*alpha stays small (C >= 1) so higher orders do not take over
    assume(params.c_p >= 1.0 and abs(_cubic_coefficient(params)) <= 0.24)
    alpha = u * 0.2 / (params.b_p * params.c_p)
    dev = abs(pacejka_force(params, alpha) - c_linear(params) * alpha)
    assert dev <= 0.01 * c_linear(params) * abs(alpha)


@given(params_st, st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=5))
def test_jacobian_matches_finite_differences(params, alphas):
    theta = params.as_array()
    jac = pacejka_jacobian(theta, alphas)
    for i in range(4):
        h = 1e-6 * max(abs(theta[i]), 1.0)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h

        def f(t):
            b, c, d, e = t
            ba = b * np.asarray(alphas)
            return d * np.sin(c * np.arctan(ba - e * (ba - np.arctan(ba))))

        fd = (f(up) - f(dn)) / (2 * h)
        np.testing.assert_allclose(jac[:, i], fd, rtol=1e-5, atol=1e-6 * params.d_p)


def test_slip_angle_examples():
    vp = VehicleParams(l_r=1.2)
    af, ar = slip_angles(50.0, 0.0, 0.0, 0.05, vp)
    assert af == pytest.approx(0.05) and ar == 0.0
    _, ar = slip_angles(50.0, 1.0, 0.2, 0.0, vp)
    assert ar == pytest.approx(-0.01519882955958018, rel=1e-12)


@given(st.floats(-0.03, 0.03))
def test_small_angle_close_to_exact(z):
    vp = VehicleParams()
    exact = slip_angles(10.0, 10.0 * z, 0.0, 0.0, vp)
    small = slip_angles(10.0, 10.0 * z, 0.0, 0.0, vp, small_angle=True)
    assert abs(exact[0] - small[0]) < 1e-5
    assert abs(exact[1] - small[1]) < 1e-5


def test_slip_angles_need_speed():
    with pytest.raises(ValueError):
        slip_angles(0.5, 0.0, 0.0, 0.0, VehicleParams())


def test_imu_split_examples():
    ff, fr = axle_forces_from_imu(10.0, 0.0, VehicleParams())
    assert ff == pytest.approx(3334.7457627118642, rel=1e-12)
    sym = VehicleParams(l_f=1.5, l_r=1.5)
    ff, fr = axle_forces_from_imu(4.0, 0.0, sym)
    assert ff == pytest.approx(sym.m * 2.0) and fr == pytest.approx(sym.m * 2.0)
    assert axle_forces_from_imu(0.0, 0.1, sym) == (0.0, 0.0)


@given(st.floats(-30, 30), st.floats(-1.5, 1.5), st.floats(300, 1200), st.floats(0.8, 2.5),
       st.floats(0.8, 2.5))
def test_imu_split_force_balance(a_y, delta, m, lf, lr):
    vp = VehicleParams(m=m, l_f=lf, l_r=lr)
    ff, fr = axle_forces_from_imu(a_y, delta, vp)
    assert ff * np.cos(delta) + fr == pytest.approx(m * a_y, abs=1e-9 * max(1.0, abs(m * a_y)))
    # and the yaw moment balances
    assert lf * ff * np.cos(delta) == pytest.approx(lr * fr, abs=1e-9 * max(1.0, abs(m * a_y)))


def test_imu_split_rejects_right_angle():
    with pytest.raises(ValueError):
        axle_forces_from_imu(1.0, np.pi / 2, VehicleParams())


@pytest.mark.parametrize("bad", [dict(b_p=0.0), dict(c_p=3.5), dict(d_p=-1.0), dict(e_p=1.5)])
def test_param_box(bad):
    kw = dict(b_p=10.0, c_p=1.5, d_p=1000.0, e_p=0.0) | bad
    with pytest.raises(ValueError):
        PacejkaAxleParams(**kw)


def test_vehicle_validation():
    with pytest.raises(ValueError):
        VehicleParams(m=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(l_f=0.4, l_r=0.4)


def test_params_file_roundtrip(tmp_path):
    vp = VehicleParams(m=600.0).with_axle_stiffness(FINAL_RUN_FRONT, FINAL_RUN_REAR)
    p = tmp_path / "p.toml"
    save_params_file(p, vp, FINAL_RUN_FRONT, FINAL_RUN_REAR)
    assert load_params_file(p) == (vp, FINAL_RUN_FRONT, FINAL_RUN_REAR)


def test_stiffness_defaults_follow_tires():
    vp, f, r = params_from_dict({"tire": {"front": dict(vars(FINAL_RUN_FRONT))}})
    assert f == FINAL_RUN_FRONT and r == PRACTICE_REAR
    assert vp.c_f == c_linear(FINAL_RUN_FRONT) / 2
    assert vp.c_r == c_linear(PRACTICE_REAR) / 2
    vp, _, _ = params_from_dict({"vehicle": {"c_f": 1e4, "c_r": 2e4}})
    assert (vp.c_f, vp.c_r) == (1e4, 2e4)
