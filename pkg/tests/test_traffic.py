import math

import numpy as np
import pytest
from scipy.linalg import expm

from deeplcc import traffic as tr
from deeplcc.traffic import (NOMINAL, TABLE_HETEROGENEOUS, HdvParams,
                             LinearCoeffs, MixedConfig, StateSpaceModel,
                             TrafficState)


def bisect_inverse(f, target, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def taylor_expm(M, terms=20):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ M / k
        out = out + term
    return out


# -- parameters and layout ---------------------------------------------------

def test_hdv_params_validation():
    with pytest.raises(ValueError):
        HdvParams(alpha=-1)
    with pytest.raises(ValueError):
        HdvParams(s_st=40, s_go=35)


def test_mixed_config_validation():
    with pytest.raises(ValueError):
        MixedConfig(4, (3, 2))
    with pytest.raises(ValueError):
        MixedConfig(4, (5,))
    with pytest.raises(ValueError):
        MixedConfig(4, (1,), (NOMINAL,) * 2)
    cfg = MixedConfig(8, (3, 6), TABLE_HETEROGENEOUS)
    assert cfg.m == 2
    assert cfg.hdv_indices == (1, 2, 4, 5, 7, 8)
    assert cfg.vehicle_params()[7] == TABLE_HETEROGENEOUS[5]


def test_collision_flag_on_state():
    st = TrafficState([10.0, 0.0], [15.0, 15.0], 15.0)
    assert st.collision


# -- OVM ---------------------------------------------------------------------

@pytest.mark.parametrize("s, expected", [(5.0, 0.0), (35.0, 30.0), (0.0, 0.0),
                                         (50.0, 30.0)])
def test_desired_velocity_boundaries(s, expected):
    assert tr.ovm_desired_velocity(s) == expected


def test_desired_velocity_midpoint_against_bisection():
    v = tr.ovm_desired_velocity(20.0)
    assert v == pytest.approx(15.0, abs=1e-12)
    s = bisect_inverse(tr.ovm_desired_velocity, v, 5.0, 35.0)
    assert s == pytest.approx(20.0, abs=1e-9)


def test_desired_velocity_rejects_negative():
    with pytest.raises(ValueError):
        tr.ovm_desired_velocity(-1.0)


def test_desired_velocity_monotone():
    s = np.arange(0.0, 45.0, 1e-3)
    v = tr.ovm_desired_velocity(s)
    assert np.all(np.diff(v) >= 0)


@pytest.mark.parametrize("args, expected", [((20, 0, 15), 0.0),
                                            ((20, 1, 15), 0.9),
                                            ((5, 0, 10), -6.0)])
def test_ovm_acceleration_examples(args, expected):
    assert tr.ovm_acceleration(*args) == pytest.approx(expected, abs=1e-12)


# -- equilibrium and linearization --------------------------------------------

def test_equilibrium_spacing():
    assert tr.solve_equilibrium_spacing(15.0) == pytest.approx(20.0, abs=1e-12)
    oracle = bisect_inverse(tr.ovm_desired_velocity, 15.0, 5.0, 35.0)
    assert tr.solve_equilibrium_spacing(15.0) == pytest.approx(oracle, abs=1e-9)
    assert tr.solve_equilibrium_spacing(1e-9) == pytest.approx(5.0, abs=1e-3)
    for bad in (0.0, 30.0, -1.0, 31.0):
        with pytest.raises(ValueError):
            tr.solve_equilibrium_spacing(bad)


def _fd_coeffs(p, v_star, h=1e-5):
    s_star = tr.solve_equilibrium_spacing(v_star, p)
    F = lambda s, sd, v: tr.ovm_acceleration(s, sd, v, p)
    a1 = (F(s_star + h, 0, v_star) - F(s_star - h, 0, v_star)) / (2 * h)
    dsd = (F(s_star, h, v_star) - F(s_star, -h, v_star)) / (2 * h)
    dv = (F(s_star, 0, v_star + h) - F(s_star, 0, v_star - h)) / (2 * h)
    # F(s, v_front - v, v): d/dv = dv - dsd, d/dv_front = dsd
    return a1, dsd - dv, dsd


def test_linearize_nominal():
    c = tr.linearize_hdv(NOMINAL, 15.0)
    assert c.alpha1 == pytest.approx(0.6 * 30 * math.pi / 60, rel=1e-12)
    assert c.alpha1 == pytest.approx(0.9425, abs=1e-4)
    assert (c.alpha2, c.alpha3) == pytest.approx((1.5, 0.9))
    fd = _fd_coeffs(NOMINAL, 15.0)
    assert np.allclose([c.alpha1, c.alpha2, c.alpha3], fd, rtol=1e-6)


@pytest.mark.parametrize("p", TABLE_HETEROGENEOUS)
def test_linearize_heterogeneous_vs_finite_difference(p):
    c = tr.linearize_hdv(p, 15.0)
    assert np.allclose([c.alpha1, c.alpha2, c.alpha3], _fd_coeffs(p, 15.0),
                       rtol=1e-6)


def test_linearize_table_hdv6():
    c = tr.linearize_hdv(TABLE_HETEROGENEOUS[5], 15.0)
    assert (c.alpha2, c.alpha3) == pytest.approx((1.8, 1.0))


def test_linearize_accepts_equilibrium():
    eq = tr.Equilibrium(15.0, (20.0,))
    assert tr.linearize_hdv(NOMINAL, eq) == tr.linearize_hdv(NOMINAL, 15.0)


# -- continuous model --------------------------------------------------------

def test_model_single_cav():
    m = tr.build_continuous_model(MixedConfig(1, (1,)), [])
    assert np.array_equal(m.A, [[0, -1], [0, 0]])
    assert np.array_equal(m.B, [[0], [1]])
    assert np.array_equal(m.H, [[1], [0]])
    assert np.array_equal(m.C, [[0, 1], [1, 0]])


def test_model_two_vehicles_hand_written():
    c = LinearCoeffs(0.9, 1.5, 0.9)
    m = tr.build_continuous_model(MixedConfig(2, (2,)), [c])
    A = np.array([[0, -1, 0, 0],
                  [0.9, -1.5, 0, 0],
                  [0, 1, 0, -1],
                  [0, 0, 0, 0]])
    assert np.array_equal(m.A, A)
    assert np.array_equal(m.B[:, 0], [0, 0, 0, 1])
    assert np.array_equal(m.H[:, 0], [1, 0.9, 0, 0])


def test_output_matrix_default_layout(default_cfg):
    m = tr.build_continuous_model(default_cfg, tr.hdv_coefficients(default_cfg, 15))
    assert m.C.shape == (10, 16)
    # 1-based column of the single 1 in each row
    cols = [int(np.flatnonzero(r)[0]) + 1 for r in m.C]
    assert cols == [2, 4, 6, 8, 10, 12, 14, 16, 5, 11]
    assert np.array_equal(np.flatnonzero(m.B.T.ravel()) % 16 + 1, [6, 12])
    assert np.count_nonzero(m.H[2:]) == 0


def test_model_rejects_wrong_coefficient_count(default_cfg):
    with pytest.raises(ValueError):
        tr.build_continuous_model(default_cfg, [LinearCoeffs(1, 2, 1)])


# -- discretization ----------------------------------------------------------

def test_discretize_zero_dynamics():
    B = np.array([[0.0], [1.0]])
    d = tr.discretize(StateSpaceModel(np.zeros((2, 2)), B, np.zeros((2, 1)),
                                      np.eye(2)), 0.05)
    assert np.allclose(d.Ad, np.eye(2))
    assert np.allclose(d.Bd, 0.05 * B)


def test_discretize_diagonal():
    d = tr.discretize(StateSpaceModel(np.diag([-1.0, -2.0]), np.zeros((2, 1)),
                                      np.zeros((2, 1)), np.eye(2)), 0.05)
    assert np.allclose(d.Ad, np.diag([math.exp(-0.05), math.exp(-0.1)]),
                       atol=1e-15)


def test_discretize_against_series():
    cfg = MixedConfig(2, (2,))
    model = tr.build_continuous_model(cfg, tr.hdv_coefficients(cfg, 15))
    dt = 0.05
    d = tr.discretize(model, dt)
    assert np.max(np.abs(d.Ad - taylor_expm(model.A * dt))) < 1e-9
    # Bd = sum_k A^k dt^(k+1) / (k+1)!
    series = np.zeros_like(model.A)
    term = np.eye(2 * cfg.n) * dt
    for k in range(1, 25):
        series = series + term
        term = term @ model.A * dt / (k + 1)
    assert np.max(np.abs(d.Bd - series @ model.B)) < 1e-9
    assert np.max(np.abs(d.Hd - series @ model.H)) < 1e-9
    assert np.array_equal(d.Cd, model.C)


def test_discretize_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        tr.discretize(StateSpaceModel(np.eye(1), np.eye(1), np.eye(1),
                                      np.eye(1)), 0.0)


def test_discretize_default_model_matches_expm(default_cfg):
    model = tr.build_continuous_model(default_cfg,
                                      tr.hdv_coefficients(default_cfg, 15))
    d = tr.discretize(model, 0.05)
    assert np.allclose(d.Ad, expm(model.A * 0.05), atol=1e-13)


# -- nonlinear step ----------------------------------------------------------

def test_equilibrium_is_fixed_point(hetero_cfg):
    for v in (5.0, 15.0, 25.0):
        st = tr.equilibrium_state(hetero_cfg, v)
        nxt = tr.step_nonlinear(st, np.zeros(2), v, np.zeros(6), 0.05,
                                hetero_cfg)
        assert np.allclose(nxt.spacing, st.spacing, atol=1e-12)
        assert np.allclose(nxt.velocity, st.velocity, atol=1e-12)


def test_hand_euler_step():
    cfg = MixedConfig(2, (2,))
    st = TrafficState([20.0, 20.0], [15.0, 15.0], 16.0)
    nxt = tr.step_nonlinear(st, [0.0], 16.0, [0.0], 0.05, cfg)
    assert nxt.velocity[0] - 15.0 == pytest.approx(0.045, abs=1e-12)
    assert nxt.spacing[0] - 20.0 == pytest.approx(0.05, abs=1e-12)
    assert nxt.head_velocity == 16.0


def test_hdv_saturation():
    cfg = MixedConfig(2, (2,))
    # OVM: 0.6 * (0 - 10) + 0.9 * (0 - 10) = -15 -> saturated
    st = TrafficState([5.0, 20.0], [10.0, 10.0], 0.0)
    _, acc = tr.step_nonlinear(st, [0.0], 0.0, [0.0], 0.05, cfg,
                               return_accel=True)
    assert acc[0] == -5.0
    st = TrafficState([20.0, 20.0], [15.0 + 7 / 0.6, 15.0], 15.0 + 7 / 0.6)
    _, acc = tr.step_nonlinear(st, [0.0], st.head_velocity, [0.0], 0.05, cfg,
                               return_accel=True)
    assert acc[0] == -5.0


def test_cav_saturation():
    cfg = MixedConfig(2, (2,))
    st = tr.equilibrium_state(cfg, 15.0)
    _, acc = tr.step_nonlinear(st, [9.0], 15.0, [0.0], 0.05, cfg,
                               return_accel=True)
    assert acc[1] == 2.0


def test_step_input_lengths(default_cfg):
    st = tr.equilibrium_state(default_cfg, 15)
    with pytest.raises(ValueError):
        tr.step_nonlinear(st, [0.0], 15, np.zeros(6), 0.05, default_cfg)
    with pytest.raises(ValueError):
        tr.step_nonlinear(st, [0.0, 0.0], 15, np.zeros(5), 0.05, default_cfg)


def test_collision_flagged_not_clamped():
    cfg = MixedConfig(1, (1,))
    st = TrafficState([0.01], [15.0], 5.0)
    nxt = tr.step_nonlinear(st, [0.0], 5.0, [], 0.05, cfg)
    assert nxt.collision and nxt.spacing[0] < 0


def test_hdv_mask_runs_cav_slot_on_ovm():
    cfg = MixedConfig(2, (2,))
    st = TrafficState([20.0, 15.0], [15.0, 15.0], 15.0)
    nxt, acc = tr.step_nonlinear(st, [], 15.0, [0.0, 0.0], 0.05, cfg,
                                 hdv_mask=[True, True], return_accel=True)
    expect = tr.ovm_acceleration(15.0, 0.0, 15.0)
    assert acc[1] == pytest.approx(expect)


def test_linearization_consistency(default_cfg):
    """Nonlinear and linear responses to a 0.1 m/s kick agree within 2%."""
    dt, v_star, kick = 0.05, 15.0, 0.1
    st = tr.equilibrium_state(default_cfg, v_star)
    eq = tr.platoon_equilibrium(default_cfg, v_star)
    st.velocity[0] += kick
    lin = tr.linear_model(default_cfg, v_star, dt)
    x = np.zeros(16)
    x[1] = kick
    worst = 0.0
    for _ in range(50):
        st = tr.step_nonlinear(st, np.zeros(2), v_star, np.zeros(6), dt,
                               default_cfg)
        x = lin.Ad @ x
        nl = np.empty(16)
        nl[0::2] = st.spacing - np.array(eq.s_star)
        nl[1::2] = st.velocity - v_star
        worst = max(worst, np.max(np.abs(nl - x)))
    assert worst < 0.02 * kick


def test_measure_output(default_cfg):
    st = tr.equilibrium_state(default_cfg, 15)
    y = tr.measure_output(st, default_cfg, 15, (20.0, 20.0))
    assert y.shape == (10,) and np.allclose(y, 0)


def test_linear_plant_matches_model(default_cfg, rng):
    plant = tr.LinearPlant(default_cfg, 15.0)
    x0 = rng.standard_normal(16)
    plant.x = x0.copy()
    u, e = rng.standard_normal(2), 0.3
    plant.step(u, e)
    m = plant.model
    assert np.allclose(plant.x, m.Ad @ x0 + m.Bd @ u + m.Hd[:, 0] * e)
