"""Tests for the successive convexification driver.

Oracle strategy: the two-body transfer gate is cross-checked against an
independent single-shooting Newton oracle built on scipy's DOP853 with a
plain Python two-body right-hand side and finite-difference sensitivities.
Merit monotonicity and trust bounds are checked on recorded iteration
data; determinism is bitwise on the trace CSV.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from halokeep import scp, transcription as tr
from halokeep.constraints import ConstraintSet
from halokeep.dynamics import ForceModel, propagate_dense
from halokeep.reference import ReferenceOrbit
from halokeep.units import MU_MOON_KM3_S2


def free_constraints() -> ConstraintSet:
    return ConstraintSet(n_vehicles=1, include_separation=False)


@pytest.fixture(scope="module")
def ellipse_reference(point_mass_model: ForceModel) -> ReferenceOrbit:
    """A plain two-body ellipse stored as a reference orbit."""
    r_p, r_a = 3000.0, 70000.0
    a = 0.5 * (r_p + r_a)
    v_p = math.sqrt(MU_MOON_KM3_S2 * (2.0 / r_p - 1.0 / a))
    incl = math.radians(35.0)
    x0 = np.array([r_p, 0.0, 0.0,
                   0.0, v_p * math.cos(incl), v_p * math.sin(incl)])
    period = 2.0 * math.pi * math.sqrt(a ** 3 / MU_MOON_KM3_S2)
    times = np.arange(0.0, 1.6 * period, 200.0)
    states = propagate_dense(point_mass_model, times, x0)
    return ReferenceOrbit(t_sec=times, states_km=states)


@pytest.fixture(scope="module")
def toy_instance(ellipse_reference: ReferenceOrbit,
                 point_mass_model: ForceModel) -> tr.OcpInstance:
    """Two-impulse rendezvous: coast to node 1, maneuver at nodes 1 and 2.

    Node 0 is masked so the reachable terminal position is controlled by
    the single interior impulse, a classical two-impulse transfer over
    the 320 degrees between the last two nodes.  Tracking cones are tiny
    so the converged plan approximates exact rendezvous.
    """
    t0 = ellipse_reference.find_anomaly_crossing(math.radians(160.0), 1000.0)
    x_est = ellipse_reference.state(t0)
    x_est[:3] += np.array([15.0, -10.0, 8.0])
    x_est[3:] += np.array([2.0e-4, 1.0e-4, -1.5e-4])
    mask = np.array([[False], [True], [True]])
    return tr.build_instance(
        ellipse_reference, t0, x_est, point_mass_model, free_constraints(),
        n_rev=1, eps_r_km=1.0e-3, eps_v_m_s=1.0e-5, control_mask=mask)


TOY_CFG = scp.ScpConfig(eps_feas=1.0e-9, gap_tol=1.0e-11)


@pytest.fixture(scope="module")
def toy_result(toy_instance: tr.OcpInstance) -> scp.ScpResult:
    return scp.solve(toy_instance, TOY_CFG)


def _two_body_rhs(t: float, y: np.ndarray, mu: float) -> np.ndarray:
    r = y[:3]
    rn = np.linalg.norm(r)
    return np.hstack([y[3:], -mu * r / rn ** 3])


def _flow(x0_km: np.ndarray, t0: float, t1: float, mu: float) -> np.ndarray:
    sol = solve_ivp(_two_body_rhs, (t0, t1), x0_km, args=(mu,),
                    method="DOP853", rtol=1.0e-12, atol=1.0e-12)
    return sol.y[:, -1]


def _rendezvous_oracle(x_dep_km: np.ndarray, t_dep: float, t_arr: float,
                       target_km: np.ndarray,
                       mu: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact two-impulse rendezvous via single-shooting Newton.

    Returns the departure and arrival impulses in km/s.  The Jacobian of
    the terminal position with respect to the departure velocity is
    built by central differences on the independent integrator.
    """
    r0 = x_dep_km[:3]
    v = x_dep_km[3:].copy()
    for _ in range(25):
        y1 = _flow(np.hstack([r0, v]), t_dep, t_arr, mu)
        err = y1[:3] - target_km[:3]
        if np.linalg.norm(err) < 1.0e-10:
            break
        jac = np.empty((3, 3))
        h = 1.0e-7
        for c in range(3):
            dv = np.zeros(3)
            dv[c] = h
            yp = _flow(np.hstack([r0, v + dv]), t_dep, t_arr, mu)
            ym = _flow(np.hstack([r0, v - dv]), t_dep, t_arr, mu)
            jac[:, c] = (yp[:3] - ym[:3]) / (2.0 * h)
        v = v - np.linalg.solve(jac, err)
    else:
        raise AssertionError("shooting oracle did not converge")
    y1 = _flow(np.hstack([r0, v]), t_dep, t_arr, mu)
    return v - x_dep_km[3:], target_km[3:] - y1[3:]


class TestFixedPoint:
    def test_on_reference_formation_is_a_fixed_point(self, reference, model):
        t0 = reference.find_anomaly_crossing(math.radians(160.0), 3600.0)
        x_est = reference.state(t0)
        inst = tr.build_instance(reference, t0, x_est, model,
                                 free_constraints(), n_rev=2)
        result = scp.solve(inst)
        assert result.converged
        assert result.status == "converged"
        assert result.iterations <= 3
        assert result.plan.total_cost_m_s <= 1.0e-9
        assert result.final_defect <= 1.0e-6


class TestTwoBodyOracle:
    def test_impulse_pair_matches_shooting_oracle(self, toy_instance,
                                                  toy_result,
                                                  ellipse_reference):
        assert toy_result.converged
        mu = MU_MOON_KM3_S2
        t_nodes = toy_instance.t_nodes_sec
        x_est = toy_instance.x0_est_km
        x_dep = _flow(x_est, float(t_nodes[0]), float(t_nodes[1]), mu)
        target = ellipse_reference.state(float(t_nodes[2]))
        dv1_km_s, dv2_km_s = _rendezvous_oracle(
            x_dep, float(t_nodes[1]), float(t_nodes[2]), target, mu)

        u = toy_result.plan.impulses_m_s
        assert np.linalg.norm(u[0, 0]) == pytest.approx(0.0, abs=1.0e-12)
        assert np.linalg.norm(u[1, 0] - dv1_km_s * 1000.0) <= 1.0e-4
        assert np.linalg.norm(u[2, 0] - dv2_km_s * 1000.0) <= 1.0e-4

    def test_cold_start_was_outside_the_cones(self, toy_instance):
        start = tr.cold_start(toy_instance)
        report = tr.evaluate_violation(toy_instance, start.z_nodes,
                                       start.u_nodes)
        assert float(report.terminal_pos_residual_nd.max()) > 0.0

    def test_converged_residuals_within_tolerances(self, toy_instance,
                                                   toy_result):
        assert toy_result.final_defect <= 1.0e-9
        report = tr.evaluate_violation(
            toy_instance, toy_result.solution.z_nodes,
            toy_result.solution.u_nodes)
        assert float(report.terminal_pos_residual_nd.max()) <= 1.0e-7
        assert float(report.terminal_vel_residual_nd.max()) <= 1.0e-7


@pytest.fixture(scope="module")
def insertion_case(reference, model):
    t0 = reference.find_anomaly_crossing(math.radians(160.0), 3600.0)
    x_est = reference.state(t0)
    x_est[:3] += np.array([3.0, -3.0, 2.0])  # 4.7 km insertion error
    inst = tr.build_instance(reference, t0, x_est, model,
                             free_constraints(), n_rev=5)
    merits: list[dict] = []
    result = scp.solve(inst, merit_log=merits)
    return inst, result, merits


class TestInsertionError:
    def test_converges_with_first_impulse_in_class(self, insertion_case):
        _, result, _ = insertion_case
        assert result.converged
        first = result.plan.first_node_impulses_m_s()
        mag = float(np.linalg.norm(first[0]))
        assert 1.0e-3 <= mag <= 1.0
        assert result.final_defect <= 1.0e-6
        assert result.final_violation <= 1.0e-6

    def test_accepted_steps_never_increase_merit(self, insertion_case):
        _, _, merits = insertion_case
        checked = 0
        for entry in merits:
            if entry["accepted"] and entry["merit_ref"] is not None:
                slack = 1.0e-12 * max(1.0, abs(entry["merit_ref"]))
                assert entry["merit_cand"] <= entry["merit_ref"] + slack
                checked += 1
        assert checked >= 1

    def test_trust_radii_stay_inside_bounds(self, insertion_case):
        _, result, _ = insertion_case
        cfg = scp.ScpConfig()
        for row in result.trace:
            assert cfg.trust_min <= row.delta_state <= cfg.trust_max

    def test_warm_restart_converges_quickly(self, insertion_case):
        inst, result, _ = insertion_case
        again = scp.solve(inst, warm=result.solution,
                          warm_weight=result.weight,
                          warm_multipliers=result.multipliers)
        assert again.converged
        assert again.iterations <= 3
        assert again.plan.total_cost_m_s == pytest.approx(
            result.plan.total_cost_m_s, rel=1.0e-3, abs=1.0e-6)


class TestDeterminismAndTrace:
    def test_repeated_solve_gives_identical_trace(self, toy_instance,
                                                  toy_result):
        again = scp.solve(toy_instance, TOY_CFG)
        assert again.trace_csv() == toy_result.trace_csv()
        assert np.array_equal(again.plan.impulses_m_s,
                              toy_result.plan.impulses_m_s)

    def test_trace_format(self, toy_result, tmp_path):
        text = toy_result.trace_csv()
        lines = text.strip().split("\n")
        assert lines[0] == ("iter,objective,defect_norm,slack_growth,"
                            "delta_state,w,accepted")
        assert len(lines) == toy_result.iterations + 1
        for k, line in enumerate(lines[1:], start=1):
            parts = line.split(",")
            assert len(parts) == 7
            assert int(parts[0]) == k
            for p in parts[1:6]:
                float(p)
            assert parts[6] in ("0", "1")
        path = tmp_path / "trace.csv"
        toy_result.write_trace(path)
        assert path.read_text(encoding="utf-8") == text

    def test_iteration_limit_flags_result(self, toy_instance):
        cfg = scp.ScpConfig(max_iterations=1, eps_feas=1.0e-9,
                            gap_tol=1.0e-11)
        result = scp.solve(toy_instance, cfg)
        assert not result.converged
        assert result.status == "iteration-limit"
        assert result.iterations == 1
        assert np.isfinite(result.final_defect)


class TestConfigAndAdapters:
    def test_bad_configs_rejected(self):
        with pytest.raises(ValueError, match="trust bounds"):
            scp.ScpConfig(trust_min=1.0, trust_max=0.5)
        with pytest.raises(ValueError, match="positive"):
            scp.ScpConfig(eps_feas=0.0)
        with pytest.raises(ValueError, match="shrink"):
            scp.ScpConfig(shrink_factor=1.5)
        with pytest.raises(ValueError, match="weight growth"):
            scp.ScpConfig(weight_growth=0.9)

    def test_trust_scaling_clamps_to_bounds(self):
        cfg = scp.ScpConfig()
        big = cfg.trust_at(1.0e9)
        small = cfg.trust_at(1.0e-12)
        assert big.state == cfg.trust_max
        assert big.phase_slack == cfg.trust_max
        assert small.state == cfg.trust_min
        assert small.sep_slack == cfg.trust_min

    def test_conic_solve_delegates(self):
        from halokeep.conic import SubproblemBuilder
        bld = SubproblemBuilder()
        x = bld.add_variables("x", 1)
        bld.add_linear_cost(x, [1.0])
        bld.add_upper_bound(x, [-1.0], -1.0)
        sol = scp.conic_solve(bld.build())
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(1.0, abs=1.0e-8)
