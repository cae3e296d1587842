"""Tests for the single-horizon transcription layer.

Oracle strategy: linear-model exactness is checked against the stored
nonlinear defects by direct evaluation; state-transition accuracy is
checked by Taylor-remainder ratios against nonlinear repropagation at two
perturbation sizes; assembled subproblems are checked behaviorally (trust
pinning, defect suppression under a large penalty weight, terminal cones,
control masks) through the conic solver.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from halokeep import kernels, transcription as tr
from halokeep.conic import solve_subproblem
from halokeep.constraints import ConstraintSet
from halokeep.dynamics import _to_nd
from halokeep.units import DU_KM, TU_S, VU_KM_S


def stacked_state(center_state_km: np.ndarray,
                  offsets_km: np.ndarray) -> np.ndarray:
    """Full stacked state: one vehicle per offset around a center state."""
    n = offsets_km.shape[0]
    out = np.tile(center_state_km, n)
    for i in range(n):
        out[6 * i:6 * i + 3] += offsets_km[i]
    return out


@pytest.fixture(scope="module")
def t_start(reference) -> float:
    """A window-entry anomaly event early in the reference span."""
    return reference.find_anomaly_crossing(math.radians(160.0), 3600.0)


@pytest.fixture(scope="module")
def free_cset() -> ConstraintSet:
    return ConstraintSet(n_vehicles=1, include_separation=False)


@pytest.fixture(scope="module")
def pair_cset() -> ConstraintSet:
    return ConstraintSet(n_vehicles=2)


@pytest.fixture(scope="module")
def single_instance(reference, model, t_start, free_cset) -> tr.OcpInstance:
    """One vehicle, one revolution, 40 km off the reference."""
    x_est = reference.state(t_start)
    x_est[:3] += np.array([30.0, -20.0, 10.0])
    x_est[3:] += np.array([1.0e-4, -5.0e-5, 2.0e-5])
    return tr.build_instance(reference, t_start, x_est, model, free_cset,
                             n_rev=1)


@pytest.fixture(scope="module")
def single_linearized(single_instance) -> tr.ReferenceSolution:
    return tr.linearize(single_instance, tr.cold_start(single_instance))


@pytest.fixture(scope="module")
def pair_instance(reference, model, t_start, pair_cset) -> tr.OcpInstance:
    """Two vehicles, 27 km apart, separation constraints continuous."""
    offsets = np.array([[0.0, 0.0, 0.0], [20.0, 15.0, -10.0]])
    x_est = stacked_state(reference.state(t_start), offsets)
    return tr.build_instance(reference, t_start, x_est, model, pair_cset,
                             n_rev=1)


@pytest.fixture(scope="module")
def pair_linearized(pair_instance) -> tr.ReferenceSolution:
    return tr.linearize(pair_instance, tr.cold_start(pair_instance))


class TestBuildInstance:
    def test_node_count_and_alternation(self, reference, model, t_start,
                                        free_cset):
        inst = tr.build_instance(reference, t_start,
                                 reference.state(t_start), model, free_cset,
                                 n_rev=5)
        assert inst.n_nodes == 11
        target = [160.0, 200.0]
        for j, t in enumerate(inst.t_nodes_sec):
            th = math.degrees(reference.anomaly(float(t)))
            assert th == pytest.approx(target[j % 2], abs=1.0e-5)

    def test_segment_window_flags_alternate(self, single_instance):
        flags = single_instance.segment_apolune_flags()
        assert flags.tolist() == [1, 0]

    def test_window_segments_are_the_long_dwell(self, single_instance):
        spans = np.diff(single_instance.t_nodes_sec) / 86400.0
        assert spans[0] > 1.5 * spans[1]

    def test_rejects_start_away_from_event(self, reference, model,
                                           free_cset, t_start):
        t_bad = t_start + 0.3 * 86400.0
        with pytest.raises(ValueError, match="maneuver"):
            tr.build_instance(reference, t_bad, reference.state(t_bad),
                              model, free_cset, n_rev=1)

    def test_rejects_horizon_past_span(self, reference, model, free_cset):
        t_late = reference.find_anomaly_crossing(
            math.radians(160.0), reference.tf_sec - 8.0 * 86400.0)
        with pytest.raises(ValueError, match="span"):
            tr.build_instance(reference, t_late, reference.state(t_late),
                              model, free_cset, n_rev=3)

    def test_even_node_count_rejected(self, reference, model, t_start,
                                      free_cset):
        t_nodes = np.array([0.0, 1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="odd"):
            tr.OcpInstance(t_nodes_sec=t_nodes,
                           x0_est_km=reference.state(t_start),
                           cset=free_cset, model=model, reference=reference,
                           n_vehicles=1)


class TestColdStartAndLinearize:
    def test_cold_start_anchors_estimate(self, single_instance):
        point = tr.cold_start(single_instance)
        np.testing.assert_allclose(
            point.z_nodes[0], _to_nd(single_instance.x0_est_km),
            rtol=0.0, atol=1.0e-15)
        assert np.all(point.u_nodes == 0.0)

    def test_ballistic_on_orbit_defects_vanish(self, reference, model,
                                               t_start):
        cset = ConstraintSet(n_vehicles=2, include_separation=False)
        x_est = stacked_state(reference.state(t_start), np.zeros((2, 3)))
        inst = tr.build_instance(reference, t_start, x_est, model, cset,
                                 n_rev=2)
        lin = tr.linearize(inst, tr.cold_start(inst))
        assert np.abs(lin.defects).max() < 1.0e-6

    def test_linear_model_exact_at_reference(self, pair_instance,
                                             pair_linearized):
        lin = pair_linearized
        b = tr._impulse_matrix(pair_instance.dim_z,
                               pair_instance.n_vehicles)
        for j in range(pair_instance.n_segments):
            pred = lin.stms[j] @ (lin.z_nodes[j] + b @ lin.u_nodes[j]) \
                + lin.constants[j]
            resid = lin.z_nodes[j + 1] - pred
            np.testing.assert_allclose(resid, lin.defects[j], rtol=0.0,
                                       atol=1.0e-13)

    def test_stm_taylor_remainder(self, pair_instance, pair_linearized):
        inst, lin = pair_instance, pair_linearized
        dyn, cons = tr._kernel_tuples(inst)
        seg_apo = inst.segment_apolune_flags()
        direction = np.zeros(inst.dim_z)
        direction[0:3] = [0.6, -0.8, 0.3]
        direction[3:6] = [0.1, 0.2, -0.1]
        direction /= np.linalg.norm(direction)
        errs = []
        for eps in (2.0e-5, 1.0e-5):
            z_pert = lin.z_nodes[0] + eps * direction
            flow = tr._segment_flow(inst, 0, z_pert, dyn, cons,
                                    int(seg_apo[0]))
            predicted = lin.stms[0] @ z_pert + lin.constants[0]
            errs.append(np.linalg.norm(flow - predicted))
        ratio = errs[0] / errs[1]
        assert 2.5 < ratio < 6.0

    def test_stm_covers_slack_rows(self, pair_instance, pair_linearized):
        inst, lin = pair_instance, pair_linearized
        dyn, cons = tr._kernel_tuples(inst)
        seg_apo = inst.segment_apolune_flags()
        eps = 1.0e-5
        delta = np.zeros(inst.dim_z)
        delta[6:9] = eps * np.array([-0.5, 0.7, 0.5])
        flow = tr._segment_flow(inst, 0, lin.z_nodes[0] + delta, dyn, cons,
                                int(seg_apo[0]))
        base = tr._segment_flow(inst, 0, lin.z_nodes[0], dyn, cons,
                                int(seg_apo[0]))
        actual = (flow - base)[inst.dim_x:]
        predicted = (lin.stms[0] @ delta)[inst.dim_x:]
        assert np.abs(actual).max() > 0.0
        np.testing.assert_allclose(predicted, actual, rtol=2.0e-2,
                                   atol=1.0e-12)

    def test_nodes_only_records_node_rows(self, reference, model, t_start):
        cset = ConstraintSet(n_vehicles=2, enforcement="nodes-only")
        offsets = np.array([[0.0, 0.0, 0.0], [20.0, 15.0, -10.0]])
        x_est = stacked_state(reference.state(t_start), offsets)
        inst = tr.build_instance(reference, t_start, x_est, model, cset,
                                 n_rev=1)
        lin = tr.linearize(inst, tr.cold_start(inst))
        assert lin.node_con_values.shape == (3, 1)
        assert lin.node_con_grads.shape == (3, 1, 12)
        t_nd = inst.t_nodes_sec / TU_S
        cons_full = cset.kernel_params(float(inst.t_nodes_sec[0]),
                                       float(inst.t_nodes_sec[-1]))
        grad = np.empty(12)
        dyn = model.kernel_params(n_vehicles=2)
        for j in (1, 2):
            expect = kernels.constraint_tilde(
                t_nd[j], lin.z_nodes[j, :12], 0, cons_full, dyn, 1, False,
                grad)
            assert lin.node_con_values[j, 0] == pytest.approx(expect,
                                                              rel=1.0e-12)


class TestAssemble:
    def test_tiny_trust_pins_nonterminal_nodes(self, reference, model,
                                               t_start, free_cset):
        x_est = reference.state(t_start)
        x_est[:3] += np.array([0.4, -0.2, 0.1])
        inst = tr.build_instance(reference, t_start, x_est, model,
                                 free_cset, n_rev=1)
        lin = tr.linearize(inst, tr.cold_start(inst))
        lam = np.zeros((inst.n_segments, inst.dim_z))
        sub = tr.assemble(inst, lin, lam, 100.0,
                          tr.TrustRegion(1.0e-9, 1.0e-9, 1.0e-9))
        sol = solve_subproblem(sub)
        assert sol.status == "optimal"
        out = tr.extract_solution(inst, sub, sol.x)
        for j in range(inst.n_nodes - 1):
            np.testing.assert_allclose(out.z_nodes[j], lin.z_nodes[j],
                                       rtol=0.0, atol=5.0e-9)

    def test_large_weight_suppresses_defect_slack(self, single_instance,
                                                  single_linearized):
        inst, lin = single_instance, single_linearized
        lam = np.zeros((inst.n_segments, inst.dim_z))
        trust = tr.TrustRegion()
        xi_by_weight = []
        for w in (1.0e2, 1.0e6):
            sub = tr.assemble(inst, lin, lam, w, trust)
            sol = solve_subproblem(sub)
            assert sol.status == "optimal"
            xi = tr.extract_defect_slack(inst, sub, sol.x)
            xi_by_weight.append(np.abs(xi).max())
        assert xi_by_weight[1] < xi_by_weight[0]
        assert xi_by_weight[1] < 1.0e-5

    def test_terminal_cones_hold_on_solution(self, single_instance,
                                             single_linearized):
        inst, lin = single_instance, single_linearized
        lam = np.zeros((inst.n_segments, inst.dim_z))
        sub = tr.assemble(inst, lin, lam, 1.0e6, tr.TrustRegion())
        sol = solve_subproblem(sub)
        out = tr.extract_solution(inst, sub, sol.x)
        ref_end = inst.terminal_reference_nd()
        pos_err = np.linalg.norm(out.z_nodes[-1, :3] - ref_end[:3])
        vel_err = np.linalg.norm(out.z_nodes[-1, 3:6]
                                 + out.u_nodes[-1, :3] - ref_end[3:])
        assert pos_err <= inst.eps_r_km / DU_KM + 1.0e-7
        assert vel_err <= inst.eps_v_m_s / 1000.0 / VU_KM_S + 1.0e-7

    def test_slack_growth_rows_present(self, pair_instance,
                                       pair_linearized):
        inst = pair_instance
        lam = np.zeros((inst.n_segments, inst.dim_z))
        sub = tr.assemble(inst, pair_linearized, lam, 100.0,
                          tr.TrustRegion())
        hits = np.count_nonzero(sub.b_vec == inst.licq_eps)
        assert hits == inst.n_segments * inst.n_slack

    def test_control_mask_pins_and_prices(self, reference, model, t_start,
                                          free_cset):
        x_est = reference.state(t_start)
        x_est[:3] += np.array([10.0, 5.0, -5.0])
        mask = np.array([[True], [False], [True]])
        inst = tr.build_instance(reference, t_start, x_est, model,
                                 free_cset, n_rev=1, control_mask=mask)
        lin = tr.linearize(inst, tr.cold_start(inst))
        lam = np.zeros((inst.n_segments, inst.dim_z))
        sub = tr.assemble(inst, lin, lam, 1.0e4, tr.TrustRegion())
        assert sub.variables["t_epi"].stop - sub.variables["t_epi"].start \
            == 2
        sol = solve_subproblem(sub)
        out = tr.extract_solution(inst, sub, sol.x)
        np.testing.assert_allclose(out.u_nodes[1], 0.0, rtol=0.0,
                                   atol=1.0e-12)
        assert np.linalg.norm(out.u_nodes[0]) > 0.0

    def test_missing_linear_model_rejected(self, single_instance):
        point = tr.cold_start(single_instance)
        lam = np.zeros((single_instance.n_segments, single_instance.dim_z))
        with pytest.raises(ValueError, match="linear model"):
            tr.assemble(single_instance, point, lam, 100.0,
                        tr.TrustRegion())

    def test_nodes_only_epigraph_floors(self, reference, model, t_start):
        cset = ConstraintSet(n_vehicles=2, enforcement="nodes-only")
        offsets = np.array([[0.0, 0.0, 0.0], [20.0, 15.0, -10.0]])
        x_est = stacked_state(reference.state(t_start), offsets)
        inst = tr.build_instance(reference, t_start, x_est, model, cset,
                                 n_rev=1)
        lin = tr.linearize(inst, tr.cold_start(inst))
        lam_dyn = np.zeros((inst.n_segments, inst.dim_z))
        lam_node = np.full((inst.n_nodes, 1), 2.0e-3)
        w = 100.0
        sub = tr.assemble(inst, lin, lam_dyn, w, tr.TrustRegion(),
                          lam_node=lam_node)
        sol = solve_subproblem(sub)
        assert sol.status == "optimal"
        s = tr.extract_node_slack(inst, sub, sol.x)
        out = tr.extract_solution(inst, sub, sol.x)
        for j in (1, 2):
            g_lin = lin.node_con_values[j, 0] + lin.node_con_grads[j, 0] @ (
                out.z_nodes[j, :12] - lin.z_nodes[j, :12])
            floor = max(g_lin, -lam_node[j, 0] / w)
            assert s[j - 1, 0] >= floor - 1.0e-8
            assert s[j - 1, 0] <= floor + 1.0e-6


class TestSolutionHandling:
    def test_control_plan_units(self, single_instance):
        n, m = single_instance.n_nodes, single_instance.n_vehicles
        u = np.zeros((n, 3 * m))
        u[0, :3] = [1.0e-3, 0.0, 0.0]
        sol = tr.ReferenceSolution(
            z_nodes=np.zeros((n, single_instance.dim_z)), u_nodes=u)
        plan = tr.control_plan(single_instance, sol)
        expect = 1.0e-3 * VU_KM_S * 1000.0
        assert plan.impulses_m_s[0, 0, 0] == pytest.approx(expect)
        assert plan.total_cost_m_s == pytest.approx(expect)
        np.testing.assert_array_equal(plan.first_node_impulses_m_s(),
                                      plan.impulses_m_s[0])

    def test_evaluate_violation_matches_defects(self, pair_instance,
                                                pair_linearized):
        rep = tr.evaluate_violation(pair_instance,
                                    pair_linearized.z_nodes,
                                    pair_linearized.u_nodes)
        np.testing.assert_allclose(rep.defects, pair_linearized.defects,
                                   rtol=0.0, atol=1.0e-9)
        assert rep.cost_nd == 0.0

    def test_warm_start_shifts_and_reanchors(self, reference, model,
                                             t_start, pair_cset):
        offsets = np.array([[0.0, 0.0, 0.0], [20.0, 15.0, -10.0]])
        x_est = stacked_state(reference.state(t_start), offsets)
        inst = tr.build_instance(reference, t_start, x_est, model,
                                 pair_cset, n_rev=2)
        prev = tr.linearize(inst, tr.cold_start(inst))
        prev.u_nodes[:] = 1.0e-5
        t_next = float(inst.t_nodes_sec[1])
        x_next = stacked_state(reference.state(t_next), offsets)
        inst2 = tr.build_instance(reference, t_next, x_next, model,
                                  pair_cset, n_rev=2)
        warm = tr.warm_start_from_previous(inst2, prev)
        np.testing.assert_allclose(warm.z_nodes[0, :12], _to_nd(x_next),
                                   rtol=0.0, atol=1.0e-15)
        for j in range(1, inst2.n_nodes - 1):
            np.testing.assert_allclose(warm.z_nodes[j, :12],
                                       prev.z_nodes[j + 1, :12],
                                       rtol=0.0, atol=1.0e-15)
            np.testing.assert_array_equal(warm.u_nodes[j - 1],
                                          prev.u_nodes[j])
        assert np.all(warm.z_nodes[0, 12:] == 0.0)

    def test_warm_start_shape_mismatch_falls_back(self, reference, model,
                                                  t_start, pair_cset):
        offsets = np.array([[0.0, 0.0, 0.0], [20.0, 15.0, -10.0]])
        x_est = stacked_state(reference.state(t_start), offsets)
        inst = tr.build_instance(reference, t_start, x_est, model,
                                 pair_cset, n_rev=1)
        bogus = tr.ReferenceSolution(z_nodes=np.zeros((9, 14)),
                                     u_nodes=np.zeros((9, 6)))
        warm = tr.warm_start_from_previous(inst, bogus)
        cold = tr.cold_start(inst)
        np.testing.assert_allclose(warm.z_nodes, cold.z_nodes, rtol=0.0,
                                   atol=1.0e-12)
