"""Augmented-Lagrangian sequential convex programming driver.

Solves a station-keeping problem instance by repeatedly linearizing the
shooting dynamics about the incumbent point, assembling the conic
subproblem, and applying a trust-region acceptance test to the candidate
step.  The merit function is the augmented Lagrangian of the nonlinear
problem: control cost plus linear-multiplier and quadratic-penalty terms
on the shooting defects, plus (nodes-only enforcement) one-sided penalty
terms on the nonconvex node constraints.  The subproblem objective equals
this merit under the linearized dynamics, and the two agree exactly at
the incumbent, so the predicted reduction is the subproblem's own
improvement over the incumbent merit.

Per iteration:

- accept when (actual merit reduction) / (predicted reduction) meets the
  acceptance ratio; grow the trust region when the ratio is high, shrink
  it on rejection (reusing the cached linearization);
- an incumbent that violates the subproblem's hard rows (terminal cones,
  decision-slack growth caps, separation ceilings) has no admissible
  merit, so the first subproblem-feasible candidate is accepted
  unconditionally;
- on acceptance, first-order multiplier updates from the nonlinear
  residuals, then penalty-weight growth when total infeasibility has not
  dropped sufficiently;
- convergence requires the incumbent's nonlinear residuals within the
  feasibility tolerance and a predicted reduction within the optimality
  tolerance (scaled by the incumbent merit magnitude).

The iteration trace serializes to CSV with the exact header
`iter,objective,defect_norm,slack_growth,delta_state,w,accepted`.
All solver-facing quantities are nondimensional; reported plans are in
physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import ConicSolution, ConicSubproblem, solve_subproblem
from .dynamics import _to_km
from .transcription import (
    ControlPlan,
    OcpInstance,
    ReferenceSolution,
    TrustRegion,
    ViolationReport,
    assemble,
    cold_start,
    control_plan,
    evaluate_violation,
    extract_solution,
    linearize,
)

HARD_FEAS_TOL = 1.0e-7
STATIONARITY_FLOOR = 1.0e-5


@dataclass(frozen=True)
class ScpConfig:
    """Tuning parameters of the successive convexification loop.

    Trust radii are per variable class and nondimensional; the bounds
    apply to each class radius after scaling.  Tolerances: `eps_feas`
    bounds the nonlinear residuals at convergence, `eps_opt` bounds the
    predicted merit reduction relative to the incumbent merit magnitude.
    """

    trust_state: float = 0.05
    trust_sep_slack: float = 0.5
    trust_phase_slack: float = 5.0
    trust_min: float = 1.0e-8
    trust_max: float = 10.0
    weight_initial: float = 100.0
    weight_growth: float = 5.0
    weight_max: float = 1.0e8
    eps_opt: float = 1.0e-3
    eps_feas: float = 1.0e-6
    max_iterations: int = 40
    accept_ratio: float = 0.1
    expand_ratio: float = 0.7
    shrink_factor: float = 0.5
    expand_factor: float = 2.0
    feas_improvement: float = 0.25
    gap_tol: float = 1.0e-9
    rtol: float = 1.0e-12
    atol: float = 1.0e-12
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.trust_min < self.trust_max:
            raise ValueError("trust bounds must satisfy 0 < min < max")
        for name in ("trust_state", "trust_sep_slack", "trust_phase_slack",
                     "weight_initial", "eps_opt", "eps_feas", "gap_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.shrink_factor < 1.0 < self.expand_factor:
            raise ValueError("need shrink factor < 1 < expand factor")
        if not 0.0 < self.accept_ratio <= self.expand_ratio:
            raise ValueError("need 0 < accept ratio <= expand ratio")
        if self.weight_growth <= 1.0 or self.weight_max < self.weight_initial:
            raise ValueError("weight growth must exceed 1 with max >= initial")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")

    def trust_at(self, scale: float) -> TrustRegion:
        """Class radii at a trust scale, clamped to the configured bounds."""
        def clamp(r0: float) -> float:
            return float(min(max(r0 * scale, self.trust_min), self.trust_max))
        return TrustRegion(state=clamp(self.trust_state),
                           sep_slack=clamp(self.trust_sep_slack),
                           phase_slack=clamp(self.trust_phase_slack))


@dataclass(frozen=True)
class IterationRecord:
    """One row of the iteration trace."""

    iteration: int
    objective: float
    defect_norm: float
    slack_growth: float
    delta_state: float
    weight: float
    accepted: bool


TRACE_HEADER = "iter,objective,defect_norm,slack_growth,delta_state,w,accepted"


def format_trace(trace: list[IterationRecord]) -> str:
    """Render iteration records as CSV with the documented header."""
    lines = [TRACE_HEADER]
    for r in trace:
        lines.append(
            f"{r.iteration},{float(r.objective)!r},{float(r.defect_norm)!r},"
            f"{float(r.slack_growth)!r},{float(r.delta_state)!r},"
            f"{float(r.weight)!r},{int(r.accepted)}")
    return "\n".join(lines) + "\n"


@dataclass
class ScpResult:
    """Outcome of one solve.

    Status is "converged", "iteration-limit", "trust-floor",
    "subproblem-failure", or "propagation-failure"; all but the first
    return the best accepted point so far, flagged not converged.
    """

    converged: bool
    status: str
    iterations: int
    solution: ReferenceSolution
    plan: ControlPlan
    final_defect: float
    final_violation: float
    final_cost_m_s: float
    trace: list[IterationRecord] = field(default_factory=list)
    multipliers: np.ndarray | None = None
    node_multipliers: np.ndarray | None = None
    weight: float = 0.0

    def node_states_km(self) -> np.ndarray:
        """Stacked vehicle states at the nodes in km and km/s."""
        dim_x = 6 * self.plan.impulses_m_s.shape[1]
        return np.vstack([_to_km(row[:dim_x])
                          for row in self.solution.z_nodes])

    def trace_csv(self) -> str:
        """Iteration trace as CSV text."""
        return format_trace(self.trace)

    def write_trace(self, path) -> None:
        """Write the iteration trace CSV to a file."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.trace_csv())


def conic_solve(sub: ConicSubproblem, gap_tol: float = 1.0e-9,
                max_iter: int = 200, verbose: bool = False) -> ConicSolution:
    """Solve one assembled conic subproblem (solver adapter delegate)."""
    return solve_subproblem(sub, gap_tol=gap_tol, max_iter=max_iter,
                            verbose=verbose)


def _merit(report: ViolationReport, lam_dyn: np.ndarray, weight: float,
           lam_node: np.ndarray | None) -> float:
    """Augmented-Lagrangian merit of a point from its nonlinear residuals."""
    d = report.defects
    val = report.cost_nd + float(np.sum(lam_dyn * d)
                                 + 0.5 * weight * np.sum(d * d))
    if lam_node is not None and report.node_con_values is not None \
            and report.node_con_values.size:
        g = report.node_con_values
        shifted = np.maximum(0.0, lam_node + weight * g)
        val += float(np.sum(shifted ** 2 - lam_node ** 2) / (2.0 * weight))
    return val


def _hard_violation(instance: OcpInstance, point: ReferenceSolution,
                    report: ViolationReport) -> float:
    """Worst violation of the subproblem's hard rows at a decision point."""
    v = max(0.0, float(report.terminal_pos_residual_nd.max()),
            float(report.terminal_vel_residual_nd.max()))
    if instance.continuous and instance.n_slack:
        growth = (point.z_nodes[1:, instance.dim_x:]
                  - point.z_nodes[:-1, instance.dim_x:] - instance.licq_eps)
        v = max(v, float(growth.max()))
    if report.node_hard_values is not None and report.node_hard_values.size:
        v = max(v, float(report.node_hard_values.max()))
    return v


def _soft_violation(instance: OcpInstance, report: ViolationReport) -> float:
    """Worst nonlinear path-constraint violation at a decision point."""
    if instance.continuous:
        return report.max_slack_growth_violation
    if report.node_con_values is None or not report.node_con_values.size:
        return 0.0
    return max(0.0, float(report.node_con_values.max()))


def solve(instance: OcpInstance, cfg: ScpConfig | None = None,
          warm: ReferenceSolution | None = None,
          merit_log: list | None = None,
          warm_weight: float | None = None,
          warm_multipliers: np.ndarray | None = None,
          warm_node_multipliers: np.ndarray | None = None) -> ScpResult:
    """Run the successive convexification loop on one problem instance.

    The starting point is `warm` when given, otherwise the ballistic
    cold start; `warm_weight` and the `warm_*multipliers` optionally
    resume the penalty state of an earlier result so a re-solve near the
    optimum does not repeat the weight ramp.  Returns a result whose
    `converged` flag implies the final defect and constraint violations
    are within `cfg.eps_feas`.  When `merit_log` is a list, one dict per
    candidate evaluation is appended with the incumbent and candidate
    merit values.
    """
    cfg = cfg or ScpConfig()
    ref = warm.copy_point() if warm is not None else cold_start(instance)
    ref_report = evaluate_violation(instance, ref.z_nodes, ref.u_nodes,
                                    cfg.rtol, cfg.atol)

    if warm_multipliers is not None:
        lam_dyn = np.array(warm_multipliers, dtype=float)
        if lam_dyn.shape != (instance.n_segments, instance.dim_z):
            raise ValueError("multiplier warm start has the wrong shape")
    else:
        lam_dyn = np.zeros((instance.n_segments, instance.dim_z))
    lam_node = None
    if not instance.continuous and instance.cset.n_constraints:
        n_soft = 0 if ref_report.node_con_values is None \
            else ref_report.node_con_values.shape[1]
        lam_node = np.zeros((instance.n_nodes, n_soft))
        if warm_node_multipliers is not None:
            lam_node = np.array(warm_node_multipliers, dtype=float)
            if lam_node.shape != (instance.n_nodes, n_soft):
                raise ValueError(
                    "node multiplier warm start has the wrong shape")
    weight = cfg.weight_initial
    if warm_weight is not None:
        if warm_weight <= 0.0:
            raise ValueError("warm-start weight must be positive")
        weight = min(float(warm_weight), cfg.weight_max)
    scale = 1.0
    scale_floor = cfg.trust_min / cfg.trust_state
    scale_ceil = cfg.trust_max / cfg.trust_state
    infeas_ref = max(ref_report.max_defect,
                     _hard_violation(instance, ref, ref_report),
                     _soft_violation(instance, ref_report))

    trace: list[IterationRecord] = []
    linearized: ReferenceSolution | None = None
    status = "iteration-limit"
    converged = False

    for it in range(1, cfg.max_iterations + 1):
        if linearized is None:
            try:
                linearized = linearize(instance, ref, cfg.rtol, cfg.atol,
                                       workers=cfg.workers)
            except RuntimeError:
                status = "propagation-failure"
                break
        trust = cfg.trust_at(scale)
        sub = assemble(instance, linearized, lam_dyn, weight, trust,
                       lam_node)
        sol = conic_solve(sub, gap_tol=cfg.gap_tol)

        ref_soft = _soft_violation(instance, ref_report)
        ref_hard = _hard_violation(instance, ref, ref_report)
        feas_ok = (ref_report.max_defect <= cfg.eps_feas
                   and ref_hard <= cfg.eps_feas
                   and ref_soft <= cfg.eps_feas)

        if sol.status != "optimal":
            trace.append(IterationRecord(
                it, float("nan"), float("nan"), float("nan"),
                trust.state, weight, False))
            if trust.state <= cfg.trust_min * (1.0 + 1.0e-12):
                status = "subproblem-failure"
                break
            scale = max(scale * cfg.shrink_factor, scale_floor)
            continue

        hard_feasible = ref_hard <= HARD_FEAS_TOL
        merit_ref = _merit(ref_report, lam_dyn, weight, lam_node) \
            if hard_feasible else None

        if merit_ref is not None:
            pred_red = merit_ref - sol.objective
            stat_thr = cfg.eps_opt * max(abs(merit_ref), STATIONARITY_FLOOR)
            if feas_ok and pred_red <= stat_thr:
                trace.append(IterationRecord(
                    it, sol.objective, ref_report.max_defect, ref_soft,
                    trust.state, weight, False))
                status = "converged"
                converged = True
                break
            if pred_red <= 10.0 * cfg.gap_tol:
                # No modeled improvement while still infeasible: the
                # penalty is too weak, so strengthen it and retry.
                trace.append(IterationRecord(
                    it, sol.objective, ref_report.max_defect, ref_soft,
                    trust.state, weight, False))
                weight = min(weight * cfg.weight_growth, cfg.weight_max)
                continue

        cand = extract_solution(instance, sub, sol.x)
        try:
            cand_report = evaluate_violation(
                instance, cand.z_nodes, cand.u_nodes, cfg.rtol, cfg.atol)
        except RuntimeError:
            trace.append(IterationRecord(
                it, sol.objective, float("nan"), float("nan"),
                trust.state, weight, False))
            if trust.state <= cfg.trust_min * (1.0 + 1.0e-12):
                status = "trust-floor"
                break
            scale = max(scale * cfg.shrink_factor, scale_floor)
            continue

        if merit_ref is None:
            rho = None
            accepted = True
            merit_cand = None
        else:
            merit_cand = _merit(cand_report, lam_dyn, weight, lam_node)
            rho = (merit_ref - merit_cand) / max(pred_red, 1.0e-16)
            accepted = rho >= cfg.accept_ratio
        if merit_log is not None:
            merit_log.append({"iteration": it, "merit_ref": merit_ref,
                              "merit_cand": merit_cand,
                              "accepted": accepted})

        trace.append(IterationRecord(
            it, sol.objective, cand_report.max_defect,
            _soft_violation(instance, cand_report), trust.state, weight,
            accepted))

        if not accepted:
            if trust.state <= cfg.trust_min * (1.0 + 1.0e-12):
                status = "trust-floor"
                break
            scale = max(scale * cfg.shrink_factor, scale_floor)
            continue

        ref = cand
        ref_report = cand_report
        linearized = None
        lam_dyn = lam_dyn + weight * cand_report.defects
        if lam_node is not None and cand_report.node_con_values is not None:
            lam_node = np.maximum(
                0.0, lam_node + weight * cand_report.node_con_values)
        infeas_new = max(cand_report.max_defect,
                         _hard_violation(instance, cand, cand_report),
                         _soft_violation(instance, cand_report))
        if infeas_new > cfg.eps_feas \
                and infeas_new > cfg.feas_improvement * infeas_ref:
            weight = min(weight * cfg.weight_growth, cfg.weight_max)
        infeas_ref = infeas_new
        if rho is not None and rho >= cfg.expand_ratio:
            scale = min(scale * cfg.expand_factor, scale_ceil)

    plan = control_plan(instance, ref)
    return ScpResult(
        converged=converged, status=status, iterations=len(trace),
        solution=ref, plan=plan,
        final_defect=ref_report.max_defect,
        final_violation=max(_hard_violation(instance, ref, ref_report),
                            _soft_violation(instance, ref_report)),
        final_cost_m_s=plan.total_cost_m_s, trace=trace,
        multipliers=lam_dyn, node_multipliers=lam_node, weight=weight)
