"""Path-constraint values, gradients, tightening, and kernel consistency."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halokeep import constraints as con
from halokeep import ephemeris, kernels
from halokeep.dynamics import ForceModel
from halokeep.units import DU_KM, TU_S

from conftest import formation_states

CENTER_KM = np.array([20000.0, -35000.0, -55000.0])


def _two_craft(offset_km: np.ndarray) -> np.ndarray:
    return formation_states(CENTER_KM, np.vstack([np.zeros(3), offset_km]))


def _sun_direction(model: ForceModel, t_sec: float,
                   from_km: np.ndarray) -> np.ndarray:
    sun = ephemeris.body_state(model.ephemeris, ephemeris.Body.SUN, t_sec).r_km
    d = sun - from_km
    return d / np.linalg.norm(d)


# ---------------------------------------------------------------- tightening


def test_margin_is_zero_at_horizon_start() -> None:
    spec = con.TighteningSpec(25.0, 1.0e5)
    assert con.tightening_margin(100.0, 100.0, 5000.0, spec) == 0.0


def test_margin_with_zero_rate_vanishes_everywhere() -> None:
    spec = con.TighteningSpec(25.0, 0.0)
    for t in (0.0, 0.3, 1.0):
        assert con.tightening_margin(t, 0.0, 1.0, spec) == pytest.approx(0.0, abs=1e-15)


def test_margin_matches_direct_arithmetic_at_horizon_end() -> None:
    # eta = 25 km, kappa = 1e5, full horizon: 25 - 1/(1e5 + 1/25)
    spec = con.TighteningSpec(25.0, 1.0e5)
    expected = 25.0 - 1.0 / (1.0e5 + 0.04)
    value = con.tightening_margin(1.0, 0.0, 1.0, spec)
    assert value == pytest.approx(expected, rel=1e-14)
    assert value == pytest.approx(24.99999, abs=1e-5)


def test_disabled_spec_leaves_value_unchanged() -> None:
    spec = con.TighteningSpec(25.0, 1.0e5, enabled=False)
    assert con.tightened_value(-3.0, 0.7, 0.0, 1.0, spec) == -3.0


def test_tightened_value_adds_margin() -> None:
    spec = con.TighteningSpec(25.0, 1.0e5)
    g = -25.0
    assert con.tightened_value(g, 1.0, 0.0, 1.0, spec) == pytest.approx(
        -1.0 / (1.0e5 + 0.04), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(margin=st.floats(0.0, 200.0), rate=st.floats(0.0, 1.0e7),
       t1=st.floats(0.0, 1.0), t2=st.floats(0.0, 1.0))
def test_margin_monotone_and_bounded(margin: float, rate: float,
                                     t1: float, t2: float) -> None:
    spec = con.TighteningSpec(margin, rate)
    lo, hi = sorted((t1, t2))
    z_lo = con.tightening_margin(lo, 0.0, 1.0, spec)
    z_hi = con.tightening_margin(hi, 0.0, 1.0, spec)
    assert z_lo <= z_hi + 1e-15
    assert 0.0 <= z_lo <= margin + 1e-12
    assert z_hi <= margin + 1e-12


def test_margin_clamps_outside_horizon() -> None:
    spec = con.TighteningSpec(10.0, 1.0e4)
    before = con.tightening_margin(-5.0, 0.0, 1.0, spec)
    after = con.tightening_margin(2.0, 0.0, 1.0, spec)
    assert before == 0.0
    assert after == con.tightening_margin(1.0, 0.0, 1.0, spec)


def test_kernel_margin_matches_km_arithmetic() -> None:
    # The kernel works in nondimensional length; rescaling margin and rate
    # together must reproduce the km-unit schedule exactly.
    margin_km, rate = 25.0, 1.0e5
    spec = con.TighteningSpec(margin_km, rate)
    for frac in (0.0, 1.0e-4, 0.01, 0.37, 1.0):
        z_km = con.tightening_margin(frac, 0.0, 1.0, spec)
        z_nd = kernels.zeta_kernel(frac, 0.0, 1.0, margin_km / DU_KM,
                                   rate * DU_KM)
        assert z_nd * DU_KM == pytest.approx(z_km, rel=1e-12, abs=1e-15)


def test_negative_margin_rejected() -> None:
    with pytest.raises(ValueError):
        con.TighteningSpec(-1.0, 1.0e5)
    with pytest.raises(ValueError):
        con.TighteningSpec(1.0, -2.0)


# ---------------------------------------------------------------- separation


def test_separation_at_floor_is_active_zero() -> None:
    states = _two_craft(np.array([10.0, 0.0, 0.0]))
    g = con.separation_violation_km(states, (0, 1), 10.0, "min")
    assert g == pytest.approx(0.0, abs=1e-12)


def test_separation_at_ceiling_is_active_zero() -> None:
    states = _two_craft(np.array([0.0, 150.0, 0.0]))
    g = con.separation_violation_km(states, (0, 1), 150.0, "max")
    assert g == pytest.approx(0.0, abs=1e-12)


def test_coincident_pair_realizes_maximal_floor_violation() -> None:
    states = _two_craft(np.zeros(3))
    g = con.separation_violation_km(states, (0, 1), 10.0, "min")
    assert g == 10.0


def test_separation_signs() -> None:
    states = _two_craft(np.array([0.0, 0.0, 40.0]))
    assert con.separation_violation_km(states, (0, 1), 10.0, "min") < 0.0
    assert con.separation_violation_km(states, (0, 1), 150.0, "max") < 0.0
    assert con.separation_violation_km(states, (0, 1), 50.0, "min") > 0.0
    assert con.separation_violation_km(states, (0, 1), 30.0, "max") > 0.0


@settings(max_examples=40, deadline=None)
@given(shift=st.tuples(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5),
                       st.floats(-1e5, 1e5)),
       offset=st.tuples(st.floats(-500.0, 500.0), st.floats(-500.0, 500.0),
                        st.floats(-500.0, 500.0)))
def test_separation_invariant_under_rigid_translation(shift, offset) -> None:
    base = _two_craft(np.asarray(offset))
    moved = base.copy()
    for i in range(2):
        moved[6 * i:6 * i + 3] += np.asarray(shift)
    for kind in ("min", "max"):
        g0 = con.separation_violation_km(base, (0, 1), 60.0, kind)
        g1 = con.separation_violation_km(moved, (0, 1), 60.0, kind)
        assert g1 == pytest.approx(g0, rel=1e-9, abs=1e-9)


# --------------------------------------------------------------- phase angle


def test_phase_angle_collinear_geometries(model: ForceModel) -> None:
    t = 86400.0
    u_sun = _sun_direction(model, t, CENTER_KM)
    sunward = formation_states(CENTER_KM, np.vstack([np.zeros(3), 80.0 * u_sun]))
    anti = formation_states(CENTER_KM, np.vstack([np.zeros(3), -80.0 * u_sun]))
    assert con.sun_phase_angle_rad(t, sunward, (0, 1), model) == pytest.approx(
        0.0, abs=1e-5)
    assert con.sun_phase_angle_rad(t, anti, (0, 1), model) == pytest.approx(
        math.pi, abs=1e-5)


def test_phase_angle_right_angle_geometry(model: ForceModel) -> None:
    t = 3.0 * 86400.0
    u_sun = _sun_direction(model, t, CENTER_KM)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(u_sun @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    transverse = np.cross(u_sun, helper)
    transverse /= np.linalg.norm(transverse)
    states = formation_states(CENTER_KM,
                              np.vstack([np.zeros(3), 50.0 * transverse]))
    phi = con.sun_phase_angle_rad(t, states, (0, 1), model)
    # the finite Sun distance bends the exact right angle by ~ d / d_sun
    assert phi == pytest.approx(math.pi / 2.0, abs=1e-5)


def test_phase_angle_reciprocal_sum_near_pi(model: ForceModel) -> None:
    rng = np.random.default_rng(11)
    t = 5.0 * 86400.0
    for _ in range(8):
        offset = rng.uniform(-1.0, 1.0, 3)
        offset *= 1000.0 / np.linalg.norm(offset)
        states = formation_states(CENTER_KM, np.vstack([np.zeros(3), offset]))
        fwd = con.sun_phase_angle_rad(t, states, (0, 1), model)
        rev = con.sun_phase_angle_rad(t, states, (1, 0), model)
        assert abs(fwd + rev - math.pi) < math.radians(0.1)


def test_phase_angle_coincident_pair_raises(model: ForceModel) -> None:
    states = _two_craft(np.zeros(3))
    with pytest.raises(ValueError):
        con.sun_phase_angle_rad(0.0, states, (0, 1), model)


# ----------------------------------------------------------------- gradients


def _fd_gradient(fun, states: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros(states.size)
    for k in range(states.size):
        plus = states.copy()
        minus = states.copy()
        plus[k] += step
        minus[k] -= step
        grad[k] = (fun(plus) - fun(minus)) / (2.0 * step)
    return grad


def test_separation_gradient_is_unit_direction() -> None:
    cset = con.ConstraintSet(n_vehicles=2)
    states = _two_craft(np.array([30.0, -40.0, 0.0]))
    grad = con.constraint_gradient(cset, 0, 0.0, states,
                                   ForceModel(harmonics=None))
    delta = states[0:3] - states[6:9]
    direction = delta / np.linalg.norm(delta)
    assert grad[0:3] @ direction == pytest.approx(-1.0, rel=1e-12)
    assert grad[6:9] @ direction == pytest.approx(1.0, rel=1e-12)
    assert np.all(grad[3:6] == 0.0) and np.all(grad[9:12] == 0.0)


def test_gradients_match_finite_differences(model: ForceModel) -> None:
    cset = con.ConstraintSet(n_vehicles=3, include_phase=True)
    rng = np.random.default_rng(4)
    offsets = rng.uniform(-60.0, 60.0, (3, 3))
    states = formation_states(CENTER_KM, offsets)
    t = 2.5 * 86400.0
    for index in range(cset.n_constraints):
        grad = con.constraint_gradient(cset, index, t, states, model)

        def value(x: np.ndarray, _i: int = index) -> float:
            return float(con.constraint_values(cset, t, x, model)[_i])

        fd = _fd_gradient(value, states, 1.0e-3)
        scale = max(np.linalg.norm(grad), 1e-12)
        assert np.linalg.norm(grad - fd) / scale < 1e-6


def test_phase_gradient_transverse_magnitude(model: ForceModel) -> None:
    # At a right-angle geometry the gradient on the far vehicle reduces to
    # the sunward unit vector over the baseline length.
    t = 4.0 * 86400.0
    u_sun = _sun_direction(model, t, CENTER_KM)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(u_sun @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    transverse = np.cross(u_sun, helper)
    transverse /= np.linalg.norm(transverse)
    dist = 75.0
    states = formation_states(CENTER_KM,
                              np.vstack([np.zeros(3), dist * transverse]))
    cset = con.ConstraintSet(n_vehicles=2, include_separation=False,
                             include_phase=True)
    grad_max = con.constraint_gradient(cset, 1, t, states, model)
    mag = np.linalg.norm(grad_max[6:9])
    assert mag == pytest.approx(1.0 / dist, rel=1e-6)
    cosine = grad_max[6:9] @ u_sun / mag
    assert abs(cosine) == pytest.approx(1.0, rel=1e-8)


# --------------------------------------------------------- kernel consistency


def _pack_nd_state(states_km: np.ndarray) -> np.ndarray:
    x = np.asarray(states_km, dtype=float).copy()
    n = x.size // 6
    from halokeep.units import VU_KM_S
    for i in range(n):
        x[6 * i:6 * i + 3] /= DU_KM
        x[6 * i + 3:6 * i + 6] /= VU_KM_S
    return x


def test_kernel_values_match_python_path(model: ForceModel) -> None:
    cset = con.ConstraintSet(n_vehicles=3, include_phase=True)
    rng = np.random.default_rng(9)
    offsets = rng.uniform(-80.0, 80.0, (3, 3))
    states = formation_states(CENTER_KM, offsets)
    t = 1.7 * 86400.0
    cons = cset.kernel_params()
    dyn = model.kernel_params(n_vehicles=3)
    x_nd = _pack_nd_state(states)
    py_vals = con.constraint_values(cset, t, states, model)
    grad_nd = np.empty(18)
    for k, row in enumerate(cset.rows()):
        g_nd = kernels.constraint_value_grad(t / TU_S, x_nd, k, cons, dyn,
                                             True, grad_nd)
        is_sep = row.family in (con.FAMILY_SEP_MIN, con.FAMILY_SEP_MAX)
        value_scale = DU_KM if is_sep else 1.0
        assert g_nd * value_scale == pytest.approx(py_vals[k], rel=1e-9,
                                                   abs=1e-9)
        grad_py = con.constraint_gradient(cset, k, t, states, model)
        grad_km = grad_nd * value_scale / DU_KM
        pos = np.concatenate([grad_km[6 * i:6 * i + 3] for i in range(3)])
        pos_py = np.concatenate([grad_py[6 * i:6 * i + 3] for i in range(3)])
        assert np.allclose(pos, pos_py, rtol=1e-8, atol=1e-12)


def test_kernel_window_gating_zeroes_apolune_rows(model: ForceModel) -> None:
    cset = con.ConstraintSet(n_vehicles=2, include_phase=True)
    cons = cset.kernel_params(0.0, 10.0 * 86400.0)
    dyn = model.kernel_params(n_vehicles=2)
    states = _two_craft(np.array([300.0, 0.0, 0.0]))
    x_nd = _pack_nd_state(states)
    grad = np.empty(12)
    for k, row in enumerate(cset.rows()):
        gated = kernels.constraint_tilde(1000.0, x_nd, k, cons, dyn, 0, True,
                                         grad)
        if row.apolune_only:
            assert gated == -1.0e30
            assert np.all(grad == 0.0)
        else:
            assert gated > -1.0e29


def test_kernel_params_layout() -> None:
    cset = con.ConstraintSet(n_vehicles=3, include_phase=True)
    cons = cset.kernel_params(100.0, 900.0)
    (n_veh, n_con, pair_a, pair_b, fam, bound, wgt, eta, kappa, apo,
     t0_h, tn_h) = cons
    assert n_veh == 3
    assert n_con == 12  # 4 families x C(3,2) pairs
    assert cset.n_constraints == 12
    assert sorted(set(zip(pair_a.tolist(), pair_b.tolist()))) == [
        (0, 1), (0, 2), (1, 2)]
    sep_rows = [k for k in range(n_con)
                if fam[k] in (kernels.FAM_SEP_MIN, kernels.FAM_SEP_MAX)]
    phase_rows = [k for k in range(n_con) if k not in sep_rows]
    assert all(wgt[k] == 1.0 for k in sep_rows)
    assert all(wgt[k] == 1.0e-4 for k in phase_rows)
    for k in range(n_con):
        if fam[k] == kernels.FAM_SEP_MIN:
            assert bound[k] == pytest.approx(10.0 / DU_KM)
            assert apo[k] == 0
            assert eta[k] == pytest.approx(25.0 / DU_KM)
            assert kappa[k] == pytest.approx(1.0e5 * DU_KM)
        elif fam[k] == kernels.FAM_SEP_MAX:
            assert bound[k] == pytest.approx(150.0 / DU_KM)
            assert apo[k] == 1
        elif fam[k] == kernels.FAM_PHASE_MIN:
            assert bound[k] == pytest.approx(math.radians(30.0))
            assert apo[k] == 1
            assert eta[k] == pytest.approx(math.radians(30.0))
            assert kappa[k] == pytest.approx(1.0e5)
        else:
            assert bound[k] == pytest.approx(math.radians(150.0))
            assert apo[k] == 1
    assert t0_h == pytest.approx(100.0 / TU_S)
    assert tn_h == pytest.approx(900.0 / TU_S)


def test_rows_order_is_family_major() -> None:
    cset = con.ConstraintSet(n_vehicles=3, include_phase=True)
    fams = [row.family for row in cset.rows()]
    assert fams == [0] * 3 + [1] * 3 + [2] * 3 + [3] * 3
    labels = cset.labels()
    assert labels[0] == "separation_min[0-1]"
    assert labels[-1] == "phase_max[1-2]"


def test_separation_only_set_has_two_families() -> None:
    cset = con.ConstraintSet(n_vehicles=4)
    assert cset.n_constraints == 2 * 6
    assert all(row.family in (0, 1) for row in cset.rows())


def test_invalid_configurations_rejected() -> None:
    with pytest.raises(ValueError):
        con.ConstraintSet(n_vehicles=2, sep_min_km=100.0, sep_max_km=50.0)
    with pytest.raises(ValueError):
        con.ConstraintSet(n_vehicles=2, include_phase=True,
                          phase_min_deg=150.0, phase_max_deg=30.0)
    with pytest.raises(ValueError):
        con.ConstraintSet(n_vehicles=0)
    with pytest.raises(ValueError):
        con.ConstraintSet(n_vehicles=2, enforcement="sometimes")


def test_slack_rate_is_weighted_squared_violation(model: ForceModel) -> None:
    # mode-1 propagation state: the slack derivative must equal the weighted
    # squared positive part of the tightened constraint.
    cset = con.ConstraintSet(n_vehicles=2)
    cons = cset.kernel_params(0.0, 86400.0)
    dyn = model.kernel_params(n_vehicles=2)
    states = _two_craft(np.array([4.0, 3.0, 0.0]))  # 5 km apart: floor violated
    x_nd = _pack_nd_state(states)
    y = np.concatenate([x_nd, np.zeros(2)])
    out = np.empty(y.size)
    t_nd = 43200.0 / TU_S
    kernels.rhs(1, t_nd, y, dyn, cons, 1, out)
    g_tilde_km = con.tightened_values(cset, 43200.0, states, model,
                                      0.0, 86400.0)
    expected_min = 1.0 * max(g_tilde_km[0] / DU_KM, 0.0) ** 2
    assert out[12] == pytest.approx(expected_min, rel=1e-9)
    assert g_tilde_km[1] < 0.0 and out[13] == 0.0
