"""Single-horizon optimal control transcription.

Builds one planning instance from the reference trajectory (node epochs at
successive apolune-window boundary crossings), linearizes the multi-vehicle
shooting dynamics with augmented state-transition matrices, and assembles
the convex subproblem consumed by the solver loop: linearized dynamics with
penalized defect slacks, elementwise trust regions, impulse-cost epigraphs,
terminal tracking cones, and either integrated-violation slack bookkeeping
(continuous enforcement) or pointwise node constraints (nodes-only).

Internally everything is nondimensional.  Impulse decision variables carry
an extra scale factor so their magnitudes sit near unity for the solver;
`CONTROL_SCALE` converts between solver units and nondimensional velocity.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .conic import ConicSubproblem, SubproblemBuilder
from .constraints import FAMILY_SEP_MAX, FAMILY_SEP_MIN, ConstraintSet
from .dynamics import ForceModel, no_constraints, _to_nd
from .reference import ReferenceOrbit
from .units import DU_KM, TU_S, VU_KM_S

CONTROL_SCALE = 1.0e3

NODE_ANOMALIES_DEG = (160.0, 200.0)


@dataclass(frozen=True)
class OcpInstance:
    """One planning problem over a fixed node grid.

    Attributes:
        t_nodes_sec: Node epochs, each at an apolune-window boundary
            crossing of the reference; strictly increasing, odd count.
        x0_est_km: Estimated stacked state at the first node (km, km/s).
        cset: Path constraints and tightening schedules.
        model: Force model used for planning propagation.
        reference: Tracked reference trajectory.
        n_vehicles: Formation size.
        eps_r_km: Terminal position tracking tolerance per vehicle.
        eps_v_m_s: Terminal velocity tracking tolerance per vehicle.
        licq_eps: Per-segment slack growth allowance (nondimensional).
        control_mask: Boolean (n_nodes, n_vehicles); False pins that
            impulse to zero.  None allows maneuvers at every node.
        u_max_m_s: Optional per-impulse magnitude cap; None leaves
            impulse magnitudes unconstrained.
    """

    t_nodes_sec: np.ndarray
    x0_est_km: np.ndarray
    cset: ConstraintSet
    model: ForceModel
    reference: ReferenceOrbit
    n_vehicles: int
    eps_r_km: float = 20.0
    eps_v_m_s: float = 5.0
    licq_eps: float = 1.0e-6
    control_mask: np.ndarray | None = None
    u_max_m_s: float | None = None

    def __post_init__(self) -> None:
        n = self.t_nodes_sec.size
        if n < 3 or n % 2 == 0:
            raise ValueError("node count must be odd and at least 3")
        if np.any(np.diff(self.t_nodes_sec) <= 0.0):
            raise ValueError("node epochs must be strictly increasing")
        if self.eps_r_km <= 0.0 or self.eps_v_m_s <= 0.0:
            raise ValueError("terminal tolerances must be positive")
        if self.x0_est_km.size != 6 * self.n_vehicles:
            raise ValueError("estimate size inconsistent with vehicle count")
        if self.control_mask is not None and self.control_mask.shape != (
                n, self.n_vehicles):
            raise ValueError("control mask must be (n_nodes, n_vehicles)")
        if self.u_max_m_s is not None and self.u_max_m_s <= 0.0:
            raise ValueError("impulse cap must be positive when set")

    @property
    def n_nodes(self) -> int:
        return self.t_nodes_sec.size

    @property
    def n_segments(self) -> int:
        return self.t_nodes_sec.size - 1

    @property
    def continuous(self) -> bool:
        return self.cset.enforcement == "continuous"

    @property
    def n_slack(self) -> int:
        return self.cset.n_constraints if self.continuous else 0

    @property
    def dim_x(self) -> int:
        return 6 * self.n_vehicles

    @property
    def dim_z(self) -> int:
        return self.dim_x + self.n_slack

    def maneuverable(self, node: int, vehicle: int) -> bool:
        """Whether the impulse at (node, vehicle) is a free variable."""
        if self.control_mask is None:
            return True
        return bool(self.control_mask[node, vehicle])

    def segment_apolune_flags(self) -> np.ndarray:
        """Apolune-window membership per shooting segment."""
        out = np.zeros(self.n_segments, dtype=np.int64)
        for j in range(self.n_segments):
            if self.reference.segment_is_apolune(self.t_nodes_sec[j],
                                                 self.t_nodes_sec[j + 1]):
                out[j] = 1
        return out

    def terminal_reference_nd(self) -> np.ndarray:
        """Reference state tracked by every vehicle at the last node."""
        return _to_nd(self.reference.state(float(self.t_nodes_sec[-1])))


@dataclass
class ReferenceSolution:
    """Linearization point and its discrete linear dynamics model.

    All arrays are nondimensional.  The model per segment j is
    z[j+1] = stm[j] @ (z[j] + B u[j]) + constant[j] + defect-slack, which is
    exact at (z_nodes, u_nodes): plugging them in reproduces `defects`,
    the nonlinear shooting residuals of this linearization point.
    """

    z_nodes: np.ndarray
    u_nodes: np.ndarray
    stms: np.ndarray | None = None
    constants: np.ndarray | None = None
    defects: np.ndarray | None = None
    node_con_values: np.ndarray | None = None
    node_con_grads: np.ndarray | None = None

    def copy_point(self) -> "ReferenceSolution":
        """Duplicate of the linearization point without the linear model."""
        return ReferenceSolution(self.z_nodes.copy(), self.u_nodes.copy())


@dataclass(frozen=True)
class ControlPlan:
    """Physical impulse schedule extracted from a solved subproblem."""

    t_nodes_sec: np.ndarray
    impulses_m_s: np.ndarray

    @property
    def total_cost_m_s(self) -> float:
        """Sum of impulse magnitudes over all vehicles and nodes."""
        return float(np.linalg.norm(self.impulses_m_s, axis=2).sum())

    def first_node_impulses_m_s(self) -> np.ndarray:
        """Impulses executed at the first node, shape (n_vehicles, 3)."""
        return self.impulses_m_s[0].copy()


def build_instance(reference: ReferenceOrbit, t_k_sec: float,
                   x_est_km: np.ndarray, model: ForceModel,
                   cset: ConstraintSet, n_rev: int = 5,
                   eps_r_km: float = 20.0, eps_v_m_s: float = 5.0,
                   licq_eps: float = 1.0e-6,
                   control_mask: np.ndarray | None = None,
                   u_max_m_s: float | None = None) -> OcpInstance:
    """Locate the node grid for a horizon starting at an anomaly event.

    The first node is `t_k_sec`, which must lie at one of the two
    maneuver anomalies of the reference; subsequent nodes alternate
    between the two anomalies, two per revolution.

    Raises:
        ValueError: If `t_k_sec` is not at a maneuver anomaly or the
            reference does not span the horizon.
    """
    n_nodes = 2 * n_rev + 1
    theta_k = math.degrees(reference.anomaly(t_k_sec))
    tol_deg = 0.5
    offsets = [abs(theta_k - a) for a in NODE_ANOMALIES_DEG]
    if min(offsets) > tol_deg:
        raise ValueError(
            f"horizon start anomaly {theta_k:.3f} deg is not a maneuver "
            f"event (expected one of {NODE_ANOMALIES_DEG})")
    start_idx = int(np.argmin(offsets))
    t_nodes = np.empty(n_nodes)
    t_nodes[0] = t_k_sec
    for j in range(1, n_nodes):
        target = NODE_ANOMALIES_DEG[(start_idx + j) % 2]
        try:
            t_nodes[j] = reference.find_anomaly_crossing(
                math.radians(target), t_nodes[j - 1] + 600.0)
        except ValueError as exc:
            raise ValueError("reference span exhausted while placing "
                             f"node {j} of {n_nodes}") from exc
    x_est = np.asarray(x_est_km, dtype=float).ravel().copy()
    return OcpInstance(
        t_nodes_sec=t_nodes, x0_est_km=x_est, cset=cset, model=model,
        reference=reference, n_vehicles=x_est.size // 6, eps_r_km=eps_r_km,
        eps_v_m_s=eps_v_m_s, licq_eps=licq_eps, control_mask=control_mask,
        u_max_m_s=u_max_m_s)


def _segment_flow(instance: OcpInstance, j: int, z_dep: np.ndarray,
                  dyn: tuple, cons: tuple, seg_apo: int,
                  rtol: float = 1.0e-12,
                  atol: float = 1.0e-12) -> np.ndarray:
    """Augmented state flowed across segment j (states plus slacks)."""
    t_nd = instance.t_nodes_sec / TU_S
    y1, status, _ = kernels.propagate_adaptive(
        1, t_nd[j], t_nd[j + 1], z_dep.copy(), rtol, atol, dyn, cons,
        seg_apo)
    if status != 0:
        raise RuntimeError(
            f"segment {j} propagation failed (status {status})")
    return y1[:instance.dim_z]


def _kernel_tuples(instance: OcpInstance) -> tuple[tuple, tuple]:
    """Force-model and constraint tuples for this instance's propagations."""
    dyn = instance.model.kernel_params(n_vehicles=instance.n_vehicles)
    if instance.continuous:
        cons = instance.cset.kernel_params(
            float(instance.t_nodes_sec[0]), float(instance.t_nodes_sec[-1]))
    else:
        cons = no_constraints(instance.n_vehicles)
    return dyn, cons


def cold_start(instance: OcpInstance) -> ReferenceSolution:
    """Ballistic linearization point: the estimate flown with zero controls.

    Node states come from propagating the estimated initial augmented state
    (slack coordinates start at zero) through the node epochs, so the point
    is dynamically consistent and vehicle geometry at every node reflects
    the actual formation rather than a degenerate stack.
    """
    n = instance.n_nodes
    dyn, cons = _kernel_tuples(instance)
    seg_apo = instance.segment_apolune_flags()
    z = np.zeros((n, instance.dim_z))
    z[0, :instance.dim_x] = _to_nd(instance.x0_est_km)
    for j in range(n - 1):
        z[j + 1] = _segment_flow(instance, j, z[j], dyn, cons,
                                 int(seg_apo[j]))
    u = np.zeros((n, 3 * instance.n_vehicles))
    return ReferenceSolution(z_nodes=z, u_nodes=u)


def _impulse_matrix(dim_z: int, n_vehicles: int) -> np.ndarray:
    """Map from stacked impulses (3M) to augmented state increments."""
    b = np.zeros((dim_z, 3 * n_vehicles))
    for i in range(n_vehicles):
        b[6 * i + 3:6 * i + 6, 3 * i:3 * i + 3] = np.eye(3)
    return b


def _nonconvex_node_rows(cset: ConstraintSet) -> list[int]:
    """Row indices enforced through the penalty scheme in nodes-only mode.

    The separation ceiling is convex (a norm upper bound) and is imposed
    directly as a cone, so only the remaining families appear here.
    """
    return [row.index for row in cset.rows()
            if row.family != FAMILY_SEP_MAX]


def linearize(instance: OcpInstance, ref_sol: ReferenceSolution,
              rtol: float = 1.0e-12, atol: float = 1.0e-12,
              workers: int = 1) -> ReferenceSolution:
    """Propagate the linearization point and attach its linear model.

    Per segment: augmented state-transition matrix (block-diagonal vehicle
    blocks, slack sensitivity rows, identity on slack columns), the
    linear-model constant that makes the model exact at the point, and the
    nonlinear shooting defect of the point itself.  In nodes-only mode the
    tightened constraint values and gradients at nodes 1..N-1 are also
    recorded.  Segments are independent; with `workers` > 1 they are
    propagated on a thread pool (the integrator kernels release the GIL),
    and results are identical to the sequential path.

    Raises:
        RuntimeError: If a segment propagation fails.
    """
    n, m = instance.n_nodes, instance.n_vehicles
    dim_x, dim_z = instance.dim_x, instance.dim_z
    n_slack = instance.n_slack
    dyn, cons = _kernel_tuples(instance)
    seg_apo = instance.segment_apolune_flags()
    b_mat = _impulse_matrix(dim_z, m)
    base_phi = dim_z
    base_yx = base_phi + 36 * m
    mode2_dim = base_yx + dim_x * n_slack
    t_nd = instance.t_nodes_sec / TU_S

    out = ReferenceSolution(ref_sol.z_nodes.copy(), ref_sol.u_nodes.copy())
    out.stms = np.empty((n - 1, dim_z, dim_z))
    out.constants = np.empty((n - 1, dim_z))
    out.defects = np.empty((n - 1, dim_z))

    def _segment_model(j: int) -> None:
        z_dep = out.z_nodes[j] + b_mat @ out.u_nodes[j]
        y0 = np.zeros(mode2_dim)
        y0[:dim_z] = z_dep
        for iv in range(m):
            y0[base_phi + 36 * iv:base_phi + 36 * (iv + 1)] = np.eye(6).ravel()
        y1, status, _ = kernels.propagate_adaptive(
            2, t_nd[j], t_nd[j + 1], y0, rtol, atol, dyn, cons,
            int(seg_apo[j]))
        if status != 0:
            raise RuntimeError(f"linearization propagation failed on "
                               f"segment {j} (status {status})")
        psi = np.zeros((dim_z, dim_z))
        for iv in range(m):
            psi[6 * iv:6 * iv + 6, 6 * iv:6 * iv + 6] = \
                y1[base_phi + 36 * iv:base_phi + 36 * (iv + 1)].reshape(6, 6)
        for ell in range(n_slack):
            psi[dim_x + ell, :dim_x] = \
                y1[base_yx + dim_x * ell:base_yx + dim_x * (ell + 1)]
            psi[dim_x + ell, dim_x + ell] = 1.0
        out.stms[j] = psi
        out.constants[j] = y1[:dim_z] - psi @ z_dep
        out.defects[j] = out.z_nodes[j + 1] - y1[:dim_z]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_segment_model, j) for j in range(n - 1)]
            for fut in futures:
                fut.result()
    else:
        for j in range(n - 1):
            _segment_model(j)

    if not instance.continuous:
        rows = _nonconvex_node_rows(instance.cset)
        cons_full = instance.cset.kernel_params(
            float(instance.t_nodes_sec[0]), float(instance.t_nodes_sec[-1]))
        out.node_con_values = np.zeros((n, len(rows)))
        out.node_con_grads = np.zeros((n, len(rows), dim_x))
        grad = np.empty(dim_x)
        for j in range(1, n):
            for c, ell in enumerate(rows):
                val = kernels.constraint_tilde(
                    t_nd[j], out.z_nodes[j, :dim_x], ell, cons_full, dyn,
                    1, True, grad)
                out.node_con_values[j, c] = val
                out.node_con_grads[j, c] = grad
    return out


@dataclass(frozen=True)
class TrustRegion:
    """Elementwise trust radii per augmented-state variable class."""

    state: float = 0.05
    sep_slack: float = 0.5
    phase_slack: float = 5.0

    def vector(self, instance: OcpInstance) -> np.ndarray:
        """Radii expanded over one augmented state vector."""
        delta = np.full(instance.dim_z, self.state)
        if instance.continuous:
            for k, row in enumerate(instance.cset.rows()):
                is_sep = row.family in (FAMILY_SEP_MIN, FAMILY_SEP_MAX)
                delta[instance.dim_x + k] = \
                    self.sep_slack if is_sep else self.phase_slack
        return delta

    def scaled(self, factor: float) -> "TrustRegion":
        return TrustRegion(self.state * factor, self.sep_slack * factor,
                           self.phase_slack * factor)

    def max_radius(self) -> float:
        return max(self.state, self.sep_slack, self.phase_slack)

    def min_radius(self) -> float:
        return min(self.state, self.sep_slack, self.phase_slack)


def assemble(instance: OcpInstance, ref_sol: ReferenceSolution,
             lam_dyn: np.ndarray, weight: float, trust: TrustRegion,
             lam_node: np.ndarray | None = None) -> ConicSubproblem:
    """Assemble the convex subproblem about a linearized point.

    Args:
        instance: Problem description.
        ref_sol: Linearization point with STMs and constants attached.
        lam_dyn: Dynamics-defect multipliers, shape (n_segments, dim_z).
        weight: Quadratic penalty weight (positive).
        trust: Elementwise trust radii about the linearization point.
        lam_node: Node-constraint multipliers for nodes-only mode,
            shape (n_nodes, n_nonconvex_rows), nonnegative.

    Returns:
        Conic subproblem with variable blocks "z", "u", "xi", epigraphs
        "t_epi", and (nodes-only) penalty epigraphs "s_node".
    """
    if ref_sol.stms is None:
        raise ValueError("reference solution lacks a linear model; "
                         "run linearize first")
    if weight <= 0.0:
        raise ValueError("penalty weight must be positive")
    n, m = instance.n_nodes, instance.n_vehicles
    dim_x, dim_z = instance.dim_x, instance.dim_z
    b_mat = _impulse_matrix(dim_z, m)
    t_nd = instance.t_nodes_sec / TU_S

    bld = SubproblemBuilder()
    z_idx = bld.add_variables("z", n * dim_z).reshape(n, dim_z)
    u_idx = bld.add_variables("u", n * 3 * m).reshape(n, 3 * m)
    xi_idx = bld.add_variables("xi", (n - 1) * dim_z).reshape(n - 1, dim_z)
    epi_pairs = [(j, i) for j in range(n) for i in range(m)
                 if instance.maneuverable(j, i)]
    t_epi = bld.add_variables("t_epi", max(len(epi_pairs), 1))

    # impulse magnitude epigraphs (solver-scaled controls)
    u_cap = None
    if instance.u_max_m_s is not None:
        u_cap = instance.u_max_m_s / 1000.0 / VU_KM_S * CONTROL_SCALE
    for k, (j, i) in enumerate(epi_pairs):
        bld.add_linear_cost(t_epi[k], [1.0 / CONTROL_SCALE])
        bld.add_second_order_cone([
            (t_epi[k:k + 1], [1.0], 0.0),
            (u_idx[j, 3 * i:3 * i + 1], [1.0], 0.0),
            (u_idx[j, 3 * i + 1:3 * i + 2], [1.0], 0.0),
            (u_idx[j, 3 * i + 2:3 * i + 3], [1.0], 0.0),
        ])
        if u_cap is not None:
            bld.add_upper_bound(t_epi[k:k + 1], [1.0], u_cap)
    if not epi_pairs:
        bld.add_equality(t_epi[:1], [1.0], 0.0)
    for j in range(n):
        for i in range(m):
            if not instance.maneuverable(j, i):
                for c in range(3):
                    bld.add_equality(u_idx[j, 3 * i + c:3 * i + c + 1],
                                     [1.0], 0.0)

    # initial condition: states to the estimate, slacks to zero
    x0_nd = _to_nd(instance.x0_est_km)
    for r in range(dim_z):
        rhs = x0_nd[r] if r < dim_x else 0.0
        bld.add_equality(z_idx[0, r:r + 1], [1.0], rhs)

    # linearized shooting dynamics with defect slacks
    for j in range(n - 1):
        psi = ref_sol.stms[j]
        psi_b = psi @ b_mat / CONTROL_SCALE
        cj = ref_sol.constants[j]
        for r in range(dim_z):
            idx = np.concatenate([
                z_idx[j + 1, r:r + 1], z_idx[j], u_idx[j],
                xi_idx[j, r:r + 1]])
            coef = np.concatenate([
                [1.0], -psi[r], -psi_b[r], [-1.0]])
            bld.add_equality(idx, coef, cj[r])
        lam = lam_dyn[j]
        bld.add_linear_cost(xi_idx[j], lam)
        bld.add_quadratic_cost(xi_idx[j], np.full(dim_z, weight))

    # elementwise trust regions on all but the terminal node
    delta = trust.vector(instance)
    for j in range(n - 1):
        bld.add_box(z_idx[j], ref_sol.z_nodes[j], delta)

    # slack growth allowance per segment (continuous mode)
    if instance.continuous:
        for j in range(n - 1):
            for ell in range(instance.n_slack):
                bld.add_upper_bound(
                    [z_idx[j + 1, dim_x + ell], z_idx[j, dim_x + ell]],
                    [1.0, -1.0], instance.licq_eps)

    # terminal tracking cones against the common reference
    ref_end = instance.terminal_reference_nd()
    eps_r_nd = instance.eps_r_km / DU_KM
    eps_v_nd = instance.eps_v_m_s / 1000.0 / VU_KM_S
    for i in range(m):
        pos = z_idx[n - 1, 6 * i:6 * i + 3]
        vel = z_idx[n - 1, 6 * i + 3:6 * i + 6]
        exprs = [(pos[:1], [0.0], eps_r_nd)]
        for c in range(3):
            exprs.append((pos[c:c + 1], [1.0], -ref_end[c]))
        bld.add_second_order_cone(exprs)
        exprs = [(vel[:1], [0.0], eps_v_nd)]
        for c in range(3):
            exprs.append((
                np.array([vel[c], u_idx[n - 1, 3 * i + c]]),
                [1.0, 1.0 / CONTROL_SCALE], -ref_end[3 + c]))
        bld.add_second_order_cone(exprs)

    # nodes-only path constraints at nodes 1..N-1
    if not instance.continuous:
        if ref_sol.node_con_values is None:
            raise ValueError("nodes-only instance requires node constraint "
                             "data from linearize")
        rows = _nonconvex_node_rows(instance.cset)
        if lam_node is None:
            lam_node = np.zeros((n, len(rows)))
        s_node = bld.add_variables(
            "s_node", max((n - 1) * len(rows), 1)).reshape(
                n - 1, len(rows)) if rows else None
        cons_full = instance.cset.kernel_params(
            float(instance.t_nodes_sec[0]), float(instance.t_nodes_sec[-1]))
        (_, _, pair_a, pair_b, fam, bound, _, eta, kappa, _,
         t0_h, tn_h) = cons_full
        for j in range(1, n):
            for c, ell in enumerate(rows):
                g_bar = ref_sol.node_con_values[j, c]
                grad = ref_sol.node_con_grads[j, c]
                s_var = s_node[j - 1, c:c + 1]
                # s >= g_lin(z_j) and s >= -lambda/w, cost lambda s + w/2 s^2
                idx = np.concatenate([z_idx[j, :dim_x], s_var])
                coef = np.concatenate([grad, [-1.0]])
                rhs = float(grad @ ref_sol.z_nodes[j, :dim_x]) - g_bar
                bld.add_upper_bound(idx, coef, rhs)
                bld.add_upper_bound(s_var, [-1.0],
                                    lam_node[j, c] / weight)
                bld.add_linear_cost(s_var, [lam_node[j, c]])
                bld.add_quadratic_cost(s_var, [weight])
            # separation ceiling as a direct cone, tightened at the node
            for k, row in enumerate(instance.cset.rows()):
                if row.family != FAMILY_SEP_MAX:
                    continue
                zeta = kernels.zeta_kernel(t_nd[j], t0_h, tn_h,
                                           eta[k], kappa[k])
                head = bound[k] - zeta
                a, bveh = row.pair
                exprs = [(z_idx[j, :1], [0.0], head)]
                for c in range(3):
                    exprs.append((
                        np.array([z_idx[j, 6 * a + c],
                                  z_idx[j, 6 * bveh + c]]),
                        [1.0, -1.0], 0.0))
                bld.add_second_order_cone(exprs)
    return bld.build()


@dataclass
class ViolationReport:
    """Nonlinear residuals of a candidate solution.

    Defects and slack growth are nondimensional; terminal residuals are
    positive where the candidate exceeds a tracking cone.
    """

    defects: np.ndarray
    slack_growth: np.ndarray
    terminal_pos_residual_nd: np.ndarray
    terminal_vel_residual_nd: np.ndarray
    node_con_values: np.ndarray | None
    cost_nd: float
    node_hard_values: np.ndarray | None = None

    @property
    def max_defect(self) -> float:
        return float(np.abs(self.defects).max())

    @property
    def max_slack_growth_violation(self) -> float:
        if self.slack_growth.size == 0:
            return 0.0
        return float(max(self.slack_growth.max(), 0.0))


def evaluate_violation(instance: OcpInstance, z_nodes: np.ndarray,
                       u_nodes: np.ndarray, rtol: float = 1.0e-12,
                       atol: float = 1.0e-12) -> ViolationReport:
    """Nonlinear repropagation residuals of a candidate solution.

    Segments are re-integrated (states plus slacks, no sensitivities) from
    each candidate node; defects compare the flow against the next node.
    Slack growth reports max(growth - licq_eps, 0) per segment and row.
    """
    n, m = instance.n_nodes, instance.n_vehicles
    dim_x, dim_z = instance.dim_x, instance.dim_z
    dyn, cons = _kernel_tuples(instance)
    seg_apo = instance.segment_apolune_flags()
    b_mat = _impulse_matrix(dim_z, m)
    t_nd = instance.t_nodes_sec / TU_S
    defects = np.empty((n - 1, dim_z))
    growth = np.zeros((n - 1, instance.n_slack))
    for j in range(n - 1):
        z_dep = z_nodes[j] + b_mat @ u_nodes[j]
        y1 = _segment_flow(instance, j, z_dep, dyn, cons, int(seg_apo[j]),
                           rtol, atol)
        defects[j] = z_nodes[j + 1] - y1
        if instance.n_slack:
            growth[j] = (y1[dim_x:dim_z] - z_nodes[j, dim_x:dim_z]
                         - instance.licq_eps)

    ref_end = instance.terminal_reference_nd()
    pos_res = np.empty(m)
    vel_res = np.empty(m)
    eps_r_nd = instance.eps_r_km / DU_KM
    eps_v_nd = instance.eps_v_m_s / 1000.0 / VU_KM_S
    for i in range(m):
        pos_res[i] = np.linalg.norm(
            z_nodes[n - 1, 6 * i:6 * i + 3] - ref_end[:3]) - eps_r_nd
        v_end = (z_nodes[n - 1, 6 * i + 3:6 * i + 6]
                 + u_nodes[n - 1, 3 * i:3 * i + 3] - ref_end[3:])
        vel_res[i] = np.linalg.norm(v_end) - eps_v_nd

    node_vals = None
    node_hard = None
    if not instance.continuous:
        rows = _nonconvex_node_rows(instance.cset)
        hard_rows = [k for k, row in enumerate(instance.cset.rows())
                     if row.family == FAMILY_SEP_MAX]
        cons_full = instance.cset.kernel_params(
            float(instance.t_nodes_sec[0]), float(instance.t_nodes_sec[-1]))
        node_vals = np.zeros((n, len(rows)))
        node_hard = np.zeros((n, len(hard_rows)))
        grad = np.empty(dim_x)
        for j in range(1, n):
            for c, ell in enumerate(rows):
                node_vals[j, c] = kernels.constraint_tilde(
                    t_nd[j], z_nodes[j, :dim_x], ell, cons_full, dyn, 1,
                    False, grad)
            for c, ell in enumerate(hard_rows):
                node_hard[j, c] = kernels.constraint_tilde(
                    t_nd[j], z_nodes[j, :dim_x], ell, cons_full, dyn, 1,
                    False, grad)

    cost = float(sum(np.linalg.norm(u_nodes[j, 3 * i:3 * i + 3])
                     for j in range(n) for i in range(m)))
    return ViolationReport(
        defects=defects, slack_growth=growth,
        terminal_pos_residual_nd=pos_res, terminal_vel_residual_nd=vel_res,
        node_con_values=node_vals, cost_nd=cost, node_hard_values=node_hard)


def extract_solution(instance: OcpInstance, sub: ConicSubproblem,
                     x: np.ndarray) -> ReferenceSolution:
    """Unpack a primal vector into a new linearization point."""
    n = instance.n_nodes
    z = x[sub.variables["z"]].reshape(n, instance.dim_z).copy()
    u = x[sub.variables["u"]].reshape(n, 3 * instance.n_vehicles).copy()
    return ReferenceSolution(z_nodes=z, u_nodes=u / CONTROL_SCALE)


def extract_defect_slack(instance: OcpInstance, sub: ConicSubproblem,
                         x: np.ndarray) -> np.ndarray:
    """Defect-slack block of a primal vector, shape (n_segments, dim_z)."""
    return x[sub.variables["xi"]].reshape(instance.n_segments,
                                          instance.dim_z).copy()


def extract_node_slack(instance: OcpInstance, sub: ConicSubproblem,
                       x: np.ndarray) -> np.ndarray | None:
    """Node-constraint epigraph block for nodes-only instances."""
    if instance.continuous or "s_node" not in sub.variables:
        return None
    rows = _nonconvex_node_rows(instance.cset)
    if not rows:
        return None
    return x[sub.variables["s_node"]].reshape(instance.n_nodes - 1,
                                              len(rows)).copy()


def control_plan(instance: OcpInstance,
                 solution: ReferenceSolution) -> ControlPlan:
    """Convert a solution's impulse schedule to physical units."""
    n, m = instance.n_nodes, instance.n_vehicles
    u = solution.u_nodes.reshape(n, m, 3) * VU_KM_S * 1000.0
    return ControlPlan(t_nodes_sec=instance.t_nodes_sec.copy(),
                       impulses_m_s=u)


def warm_start_from_previous(instance: OcpInstance,
                             prev: ReferenceSolution) -> ReferenceSolution:
    """Shift a previous horizon's solution one node to seed the next one.

    Drops the executed first node, re-anchors node 0 at the new estimate,
    rebases slack coordinates so they restart at zero, and fills the new
    terminal node by flying the shifted plan ballistically over the last
    segment.  Falls back to a cold start when the shapes do not match.
    """
    n, m = instance.n_nodes, instance.n_vehicles
    if prev.z_nodes.shape != (n, instance.dim_z):
        return cold_start(instance)
    z = np.zeros((n, instance.dim_z))
    u = np.zeros((n, 3 * m))
    z[0, :instance.dim_x] = _to_nd(instance.x0_est_km)
    for j in range(n - 1):
        u[j] = prev.u_nodes[j + 1]
    for j in range(1, n - 1):
        z[j] = prev.z_nodes[j + 1]
        if instance.n_slack:
            base = prev.z_nodes[1, instance.dim_x:]
            z[j, instance.dim_x:] = np.maximum(
                prev.z_nodes[j + 1, instance.dim_x:] - base, 0.0)
    dyn, cons = _kernel_tuples(instance)
    seg_apo = instance.segment_apolune_flags()
    b_mat = _impulse_matrix(instance.dim_z, m)
    z[n - 1] = _segment_flow(instance, n - 2, z[n - 2] + b_mat @ u[n - 2],
                             dyn, cons, int(seg_apo[n - 2]))
    return ReferenceSolution(z_nodes=z, u_nodes=u)
