"""Closed-loop station-keeping simulation with dispersions and Monte Carlo.

One mission is a fixed cadence of planning recursions, two per revolution
at the apolune-window boundary anomalies of the reference.  Each recursion
estimates the formation state with navigation noise, solves the planning
problem over a receding multi-revolution horizon, executes the first-node
impulses corrupted by an execution-error model, and propagates the truth to
the next event under independently redrawn radiation-pressure parameters.
A mission log records every maneuver, a densely sampled truth trajectory,
raw path-constraint audits, and per-recursion feasibility flags; a sample
counts as successful when every recursion's state estimate satisfies the
raw path constraints.  Monte Carlo batches replay missions over per-sample
random streams derived from a master seed by fixed splitting, so results
are bit-identical across repeated runs and across worker counts.

Randomness is consumed in a documented order from a single generator per
sample: insertion noise per vehicle at the start, then per recursion the
navigation noise, the execution errors per vehicle, and the
radiation-pressure factors per vehicle.  All dispersion magnitudes are
configured as 3-sigma values and divided by three internally.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import scp
from .constraints import (
    ConstraintSet,
    TighteningSpec,
    constraint_values,
    constraint_values_batch,
)
from .dynamics import ForceModel, propagate_dense
from .gravity import bundled_field
from .reference import (
    APOLUNE_ENTRY_DEG,
    ReferenceOrbit,
    bundled_reference,
    rtn_basis,
)
from .scp import ScpConfig, TRACE_HEADER
from .transcription import ReferenceSolution, build_instance, \
    warm_start_from_previous

START_ANOMALY_DEG = APOLUNE_ENTRY_DEG
RECURSIONS_PER_REV = 2

# A best-effort plan whose repropagated residuals exceed this level (in
# nondimensional units, about a kilometer of position) is flagged as
# infeasible in the log.
PLAN_FEAS_TOL = 1.0e-4


def default_force_model() -> ForceModel:
    """Force model used by missions unless one is supplied."""
    return ForceModel(harmonics=bundled_field())


def mission_scp_config() -> ScpConfig:
    """Solver tuning used by closed-loop missions unless one is supplied.

    Mission horizons carry an active constraint corridor, so the penalty
    weight is capped lower than the library default (gentler multiplier
    updates near the optimum) and stationarity is declared at one percent
    of the merit, well below the dispersion-driven cost scatter.
    """
    return ScpConfig(eps_opt=1.0e-2, weight_max=1.0e6)


@dataclass(frozen=True)
class UncertaintyConfig:
    """Dispersion magnitudes, each given as a 3-sigma value.

    Attributes:
        insertion_pos_3sigma_km: Insertion position error per axis.
        insertion_vel_3sigma_m_s: Insertion velocity error per axis.
        srp_area_mass_3sigma_rel: Relative area-to-mass dispersion.
        srp_cr_3sigma_rel: Relative reflectivity-coefficient dispersion.
        nav_pos_3sigma_km: Navigation position error per axis.
        nav_vel_3sigma_cm_s: Navigation velocity error per axis.
        exec_abs_3sigma_mm_s: Absolute impulse-magnitude execution error.
        exec_rel_3sigma: Proportional impulse-magnitude execution error.
        exec_dir_3sigma_deg: Impulse pointing rotation angle.
        master_seed: Default seed for Monte Carlo stream splitting.
    """

    insertion_pos_3sigma_km: float = 5.0
    insertion_vel_3sigma_m_s: float = 0.1
    srp_area_mass_3sigma_rel: float = 0.30
    srp_cr_3sigma_rel: float = 0.15
    nav_pos_3sigma_km: float = 1.0
    nav_vel_3sigma_cm_s: float = 0.8
    exec_abs_3sigma_mm_s: float = 1.0
    exec_rel_3sigma: float = 0.015
    exec_dir_3sigma_deg: float = 0.5
    master_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("insertion_pos_3sigma_km", "insertion_vel_3sigma_m_s",
                     "srp_area_mass_3sigma_rel", "srp_cr_3sigma_rel",
                     "nav_pos_3sigma_km", "nav_vel_3sigma_cm_s",
                     "exec_abs_3sigma_mm_s", "exec_rel_3sigma",
                     "exec_dir_3sigma_deg"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def zero(cls, master_seed: int = 0) -> "UncertaintyConfig":
        """Configuration with every dispersion switched off."""
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, master_seed)


_EXPERIMENT_IDS = ("I", "II", "III", "IV", "custom")

# Separation-only experiments exclude the phase-angle families; odd-numbered
# experiments integrate violations continuously, even-numbered ones check
# constraints at control nodes alone.
_EXPERIMENT_TABLE = {
    "I": (False, "continuous"),
    "II": (False, "nodes-only"),
    "III": (True, "continuous"),
    "IV": (True, "nodes-only"),
}

_VARIANT_SCALES = {"IIIi": 0.0, "IIIii": 0.8}


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment definition.

    Attributes:
        experiment: Constraint/enforcement selector, one of "I" through
            "IV" or "custom" (see `experiment_config` for the reduced
            tightening variants).
        n_vehicles: Formation size.
        dx_des_rtn_km: Desired reference-relative insertion offsets per
            vehicle, shape (n_vehicles, 6), expressed in the radial,
            tangential, normal axes of the reference at the insertion
            epoch (km and km/s).  None selects the built-in two-vehicle
            layout.
        revolutions: Mission length; each revolution holds two recursions.
        samples: Default Monte Carlo sample count.
        n_rev_horizon: Prediction-horizon length in revolutions.
        eps_r_km: Terminal position tracking tolerance per vehicle.
        eps_v_m_s: Terminal velocity tracking tolerance per vehicle.
        tightening_scale: Factor on every default margin schedule (0
            disables tightening, 1 keeps the defaults).
        u_max_m_s: Optional per-impulse magnitude cap.
        custom_constraints: Full constraint set, required when and only
            when `experiment` is "custom".
    """

    experiment: str = "I"
    n_vehicles: int = 2
    dx_des_rtn_km: np.ndarray | None = None
    revolutions: int = 10
    samples: int = 100
    n_rev_horizon: int = 5
    eps_r_km: float = 20.0
    eps_v_m_s: float = 5.0
    tightening_scale: float = 1.0
    u_max_m_s: float | None = None
    custom_constraints: ConstraintSet | None = None

    def __post_init__(self) -> None:
        if self.experiment not in _EXPERIMENT_IDS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"expected one of {_EXPERIMENT_IDS}")
        if (self.experiment == "custom") != (self.custom_constraints
                                             is not None):
            raise ValueError("custom_constraints must be given exactly for "
                             "the 'custom' experiment")
        if self.custom_constraints is not None \
                and self.custom_constraints.n_vehicles != self.n_vehicles:
            raise ValueError("custom constraint set vehicle count mismatch")
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be at least 1")
        if self.experiment != "custom" and self.n_vehicles < 2:
            raise ValueError("pairwise constraints need at least 2 vehicles")
        if self.revolutions < 1 or self.samples < 1 or self.n_rev_horizon < 1:
            raise ValueError("revolutions, samples, and n_rev_horizon must "
                             "be positive")
        if self.eps_r_km <= 0.0 or self.eps_v_m_s <= 0.0:
            raise ValueError("terminal tolerances must be positive")
        if self.tightening_scale < 0.0:
            raise ValueError("tightening_scale must be nonnegative")
        if self.dx_des_rtn_km is not None:
            arr = np.asarray(self.dx_des_rtn_km, dtype=float)
            if arr.shape != (self.n_vehicles, 6):
                raise ValueError("dx_des_rtn_km must be (n_vehicles, 6)")

    @property
    def recursions(self) -> int:
        """Planning recursions per mission, two per revolution."""
        return RECURSIONS_PER_REV * self.revolutions

    def constraint_set(self) -> ConstraintSet:
        """Path constraints selected by the experiment identifier."""
        if self.experiment == "custom":
            assert self.custom_constraints is not None
            return self.custom_constraints
        include_phase, enforcement = _EXPERIMENT_TABLE[self.experiment]
        s = self.tightening_scale
        return ConstraintSet(
            n_vehicles=self.n_vehicles,
            include_phase=include_phase,
            enforcement=enforcement,
            sep_min_tightening=TighteningSpec(25.0 * s, 1.0e5),
            sep_max_tightening=TighteningSpec(100.0 * s, 1.0e5),
            phase_min_tightening_deg=TighteningSpec(30.0 * s, 1.0e5),
            phase_max_tightening_deg=TighteningSpec(30.0 * s, 1.0e5))

    def insertion_offsets_rtn_km(self) -> np.ndarray:
        """Configured or default desired insertion offsets, RTN frame."""
        if self.dx_des_rtn_km is not None:
            return np.asarray(self.dx_des_rtn_km, dtype=float).copy()
        return default_insertion_offsets(self.n_vehicles)


def experiment_config(name: str, **overrides) -> ExperimentConfig:
    """Build an `ExperimentConfig` from an experiment name.

    Accepts "I" through "IV" and "custom" directly, plus the reduced
    tightening variants "IIIi" (no tightening) and "IIIii" (margins at 80
    percent), also written "III-i"/"III-ii".  Keyword overrides are passed
    through to the configuration.
    """
    key = name.strip().replace("-", "").replace("(", "").replace(")", "")
    if key in _VARIANT_SCALES:
        overrides.setdefault("tightening_scale", _VARIANT_SCALES[key])
        key = "III"
    if key not in _EXPERIMENT_IDS:
        raise ValueError(f"unknown experiment {name!r}")
    return ExperimentConfig(experiment=key, **overrides)


# Relative state of vehicle 1 with respect to vehicle 0 in the RTN frame
# at insertion (km and km/s), split half-and-half across the pair.  The
# direction and the matched relative velocity were calibrated against the
# bundled reference and force model so that the pair's ballistic arc over
# the first revolution holds a 37 km to 40 km baseline with the Sun phase
# angle near 90 degrees, the center of the tightened corridor.
_DEFAULT_RELATIVE_STATE_RTN = np.array([
    -32.908965, 19.0, 0.0, 1.52046e-4, 1.31334e-4, -6.00508e-5])


def default_insertion_offsets(n_vehicles: int = 2) -> np.ndarray:
    """Built-in desired insertion offsets in the RTN frame, km and km/s.

    Two vehicles straddle the reference along a fixed relative state with
    a 38 km baseline, placing the pair inside the tightened separation
    corridor and near the middle of the phase band while keeping each
    vehicle within its terminal tracking cone.  Other formation sizes
    must configure offsets explicitly.
    """
    if n_vehicles != 2:
        raise ValueError("built-in offsets cover two vehicles; configure "
                         "dx_des_rtn_km explicitly for other sizes")
    return np.vstack((-0.5 * _DEFAULT_RELATIVE_STATE_RTN,
                      0.5 * _DEFAULT_RELATIVE_STATE_RTN))


def sample_insertion(rng: np.random.Generator, ucfg: UncertaintyConfig,
                     x_ref_km: np.ndarray,
                     dx_des_km: np.ndarray) -> np.ndarray:
    """Dispersed insertion state of one vehicle, km and km/s.

    Returns the reference state plus the desired offset plus independent
    Gaussian noise per axis (three position draws then three velocity
    draws).  Both inputs are inertial length-6 states.
    """
    x_ref = np.asarray(x_ref_km, dtype=float).ravel()
    dx = np.asarray(dx_des_km, dtype=float).ravel()
    if x_ref.size != 6 or dx.size != 6:
        raise ValueError("insertion states must have 6 components")
    out = x_ref + dx
    out[:3] = out[:3] + rng.normal(
        0.0, ucfg.insertion_pos_3sigma_km / 3.0, size=3)
    out[3:] = out[3:] + rng.normal(
        0.0, ucfg.insertion_vel_3sigma_m_s / 3000.0, size=3)
    return out


def sample_navigation(rng: np.random.Generator, ucfg: UncertaintyConfig,
                      x_truth_km: np.ndarray) -> np.ndarray:
    """Navigation estimate of a stacked truth state, km and km/s.

    Noise is drawn independently for each vehicle in ascending order,
    three position axes then three velocity axes.
    """
    x = np.asarray(x_truth_km, dtype=float).ravel().copy()
    if x.size % 6:
        raise ValueError("stacked state length must be a multiple of 6")
    sig_pos = ucfg.nav_pos_3sigma_km / 3.0
    sig_vel = ucfg.nav_vel_3sigma_cm_s / 3.0 * 1.0e-5
    for i in range(x.size // 6):
        x[6 * i:6 * i + 3] += rng.normal(0.0, sig_pos, size=3)
        x[6 * i + 3:6 * i + 6] += rng.normal(0.0, sig_vel, size=3)
    return x


def _random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    """Direction drawn uniformly on the unit sphere."""
    while True:
        v = rng.normal(0.0, 1.0, size=3)
        n = np.linalg.norm(v)
        if n > 1.0e-12:
            return v / n


def corrupt_control(rng: np.random.Generator, ucfg: UncertaintyConfig,
                    u_m_s: np.ndarray) -> np.ndarray:
    """Executed impulse under magnitude and pointing errors, m/s.

    The commanded impulse gains an absolute and a proportional Gaussian
    magnitude error along its own direction, then is rotated about a
    uniformly random axis by a Gaussian angle (Gates-style model).  Draws
    are consumed in that order regardless of the input, so a zero
    commanded impulse returns zero without disturbing the stream.
    """
    u = np.asarray(u_m_s, dtype=float).ravel()
    if u.size != 3:
        raise ValueError("impulse must have 3 components")
    d_abs = rng.normal(0.0, ucfg.exec_abs_3sigma_mm_s / 3000.0)
    d_rel = rng.normal(0.0, ucfg.exec_rel_3sigma / 3.0)
    axis = _random_unit_vector(rng)
    angle = rng.normal(0.0, math.radians(ucfg.exec_dir_3sigma_deg) / 3.0)
    norm = np.linalg.norm(u)
    if norm == 0.0:
        return np.zeros(3)
    v = u + d_abs * (u / norm) + d_rel * u
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * float(axis @ v) * (1.0 - c)


def perturb_srp(rng: np.random.Generator, ucfg: UncertaintyConfig,
                n_vehicles: int) -> np.ndarray:
    """Per-vehicle radiation-pressure multipliers for one truth segment.

    Each vehicle draws an independent area-to-mass factor and reflectivity
    factor (in that order); the returned multiplier is their product and
    scales the nominal radiation-pressure acceleration.
    """
    sig_area = ucfg.srp_area_mass_3sigma_rel / 3.0
    sig_cr = ucfg.srp_cr_3sigma_rel / 3.0
    out = np.empty(n_vehicles)
    for i in range(n_vehicles):
        f_area = 1.0 + rng.normal(0.0, sig_area)
        f_cr = 1.0 + rng.normal(0.0, sig_cr)
        out[i] = f_area * f_cr
    return out


# The warm start carries only the shifted trajectory between recursions.
# Carrying the penalty weight or the multiplier estimates across horizons
# was tried and consistently degraded the next solve: the multipliers are
# tuned to the previous horizon's constraint geometry, and restarting the
# penalty schedule from a near-feasible trajectory converges faster.


@dataclass
class RecursionRecord:
    """Everything logged about one planning recursion.

    A record with `executed` False marks a recursion halted before any
    maneuver because the state estimate violated the raw path constraints.
    """

    index: int
    t_start_sec: float
    t_end_sec: float
    x_truth_km: np.ndarray
    x_est_km: np.ndarray
    estimate_values: np.ndarray
    estimate_feasible: bool
    executed: bool
    commanded_m_s: np.ndarray
    executed_m_s: np.ndarray
    srp_scale: np.ndarray
    scp_status: str = ""
    scp_converged: bool = False
    scp_iterations: int = 0
    plan_cost_m_s: float = 0.0
    plan_feasible: bool = False
    trace_csv: str = ""


@dataclass
class SegmentAudit:
    """Dense raw-constraint evaluation along one truth segment.

    Constraint columns follow the constraint-set row order; `row_applies`
    marks rows enforced on this segment (apolune-only rows are exempt on
    perilune-transit segments).
    """

    index: int
    apolune: bool
    row_applies: np.ndarray
    t_sec: np.ndarray
    states_km: np.ndarray
    values: np.ndarray

    def worst(self) -> float:
        """Largest applicable raw value; -inf when nothing applies."""
        if self.values.size == 0 or not bool(self.row_applies.any()):
            return -math.inf
        return float(self.values[:, self.row_applies].max())


@dataclass
class StepOutcome:
    """Result of one planning recursion: log entry, audit, carried state."""

    record: RecursionRecord
    audit: SegmentAudit | None
    x_truth_next_km: np.ndarray
    warm_next: ReferenceSolution | None
    halted: bool


def mpc_step(reference: ReferenceOrbit, model: ForceModel,
             cset: ConstraintSet, ucfg: UncertaintyConfig, t_k_sec: float,
             x_truth_km: np.ndarray, rng: np.random.Generator, *,
             index: int = 0, n_rev: int = 5, eps_r_km: float = 20.0,
             eps_v_m_s: float = 5.0, u_max_m_s: float | None = None,
             scp_cfg: ScpConfig | None = None,
             warm: ReferenceSolution | None = None,
             audit_per_segment: int = 1000) -> StepOutcome:
    """One closed-loop recursion starting at a maneuver anomaly event.

    Draws the navigation estimate, checks it against the raw path
    constraints (the recursive-feasibility rule), solves the planning
    problem warm-started from the previous recursion, executes the
    corrupted first-node impulses, and propagates the truth to the next
    event under freshly drawn radiation-pressure multipliers while
    sampling a dense constraint audit.  When the estimate is infeasible
    the step halts before solving and nothing is executed.

    A solve that ends without convergence still executes its best
    accepted plan; the record keeps the status and flags.

    Raises:
        RuntimeError: If the truth propagation fails.
        ValueError: If `t_k_sec` is not at a maneuver anomaly of the
            reference or the reference span cannot hold the horizon.
    """
    x_truth = np.asarray(x_truth_km, dtype=float).ravel().copy()
    m = x_truth.size // 6
    x_est = sample_navigation(rng, ucfg, x_truth)
    est_values = constraint_values(cset, t_k_sec, x_est, model)
    feasible = not bool(np.any(est_values > 0.0))
    if not feasible:
        record = RecursionRecord(
            index=index, t_start_sec=t_k_sec, t_end_sec=t_k_sec,
            x_truth_km=x_truth, x_est_km=x_est,
            estimate_values=est_values, estimate_feasible=False,
            executed=False, commanded_m_s=np.zeros((m, 3)),
            executed_m_s=np.zeros((m, 3)), srp_scale=np.ones(m))
        return StepOutcome(record=record, audit=None,
                           x_truth_next_km=x_truth, warm_next=warm,
                           halted=True)

    instance = build_instance(
        reference, t_k_sec, x_est, model, cset, n_rev=n_rev,
        eps_r_km=eps_r_km, eps_v_m_s=eps_v_m_s, u_max_m_s=u_max_m_s)
    warm_sol = None
    if warm is not None:
        warm_sol = warm_start_from_previous(instance, warm)
    cfg = scp_cfg if scp_cfg is not None else mission_scp_config()
    result = scp.solve(instance, cfg, warm=warm_sol)

    commanded = result.plan.first_node_impulses_m_s()
    executed = np.empty_like(commanded)
    for i in range(m):
        executed[i] = corrupt_control(rng, ucfg, commanded[i])
    srp_scale = perturb_srp(rng, ucfg, m)

    t_next = float(instance.t_nodes_sec[1])
    x_dep = x_truth.copy()
    for i in range(m):
        x_dep[6 * i + 3:6 * i + 6] += executed[i] / 1000.0
    times = np.linspace(t_k_sec, t_next, audit_per_segment + 1)
    states = propagate_dense(model, times, x_dep, rtol=1.0e-12,
                             atol=1.0e-14, srp_scale=srp_scale)
    values = constraint_values_batch(cset, times, states, model)
    apolune = reference.segment_is_apolune(t_k_sec, t_next)
    row_applies = np.array([apolune or not row.apolune_only
                            for row in cset.rows()], dtype=bool)
    audit = SegmentAudit(index=index, apolune=apolune,
                         row_applies=row_applies, t_sec=times,
                         states_km=states, values=values)

    plan_ok = (result.final_violation <= PLAN_FEAS_TOL
               and result.status not in ("subproblem-failure",
                                         "propagation-failure"))
    record = RecursionRecord(
        index=index, t_start_sec=t_k_sec, t_end_sec=t_next,
        x_truth_km=x_truth, x_est_km=x_est, estimate_values=est_values,
        estimate_feasible=True, executed=True, commanded_m_s=commanded,
        executed_m_s=executed, srp_scale=srp_scale,
        scp_status=result.status, scp_converged=result.converged,
        scp_iterations=result.iterations,
        plan_cost_m_s=result.plan.total_cost_m_s, plan_feasible=plan_ok,
        trace_csv=result.trace_csv())
    return StepOutcome(record=record, audit=audit,
                       x_truth_next_km=states[-1].copy(),
                       warm_next=result.solution, halted=False)


@dataclass
class MissionLog:
    """Complete log of one closed-loop mission sample.

    Records and audits are index aligned except that a halted recursion
    contributes a record with no audit.  `stop_reason` is empty for a
    mission that ran its full schedule, "estimate-infeasible" when a
    recursion's estimate violated the raw path constraints, and
    "propagation-failure" when the truth propagation failed.
    """

    experiment: str
    sample_index: int
    seed_repr: str
    n_vehicles: int
    constraint_labels: tuple[str, ...]
    planned_recursions: int
    records: list[RecursionRecord] = field(default_factory=list)
    audits: list[SegmentAudit] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def premature_stop(self) -> bool:
        return bool(self.stop_reason)

    @property
    def completed_recursions(self) -> int:
        """Recursions that executed their maneuvers."""
        return sum(1 for r in self.records if r.executed)

    @property
    def success(self) -> bool:
        """Whether every planned recursion ran with a feasible estimate."""
        return (self.completed_recursions == self.planned_recursions
                and all(r.estimate_feasible for r in self.records))

    @property
    def any_scp_not_converged(self) -> bool:
        return any(r.executed and not r.scp_converged for r in self.records)

    @property
    def cumulative_dv_m_s(self) -> np.ndarray:
        """Sum of executed impulse magnitudes per vehicle."""
        out = np.zeros(self.n_vehicles)
        for r in self.records:
            out += np.linalg.norm(r.executed_m_s, axis=1)
        return out

    @property
    def total_cost_m_s(self) -> float:
        return float(self.cumulative_dv_m_s.sum())

    def worst_violation_by_row(self) -> np.ndarray:
        """Largest applicable raw value per constraint row over all audits.

        Rows that never applied report -inf.
        """
        out = np.full(len(self.constraint_labels), -math.inf)
        for audit in self.audits:
            if audit.values.size == 0:
                continue
            seg_max = audit.values.max(axis=0)
            out[audit.row_applies] = np.maximum(out[audit.row_applies],
                                                seg_max[audit.row_applies])
        return out

    def worst_violation(self) -> float:
        """Largest applicable raw value over the whole mission."""
        per_row = self.worst_violation_by_row()
        return float(per_row.max()) if per_row.size else -math.inf

    def validate(self) -> None:
        """Check the structural invariants of the log.

        Raises:
            ValueError: If epochs are not monotone, records and audits are
                misaligned, or any logged state is not finite.
        """
        starts = [r.t_start_sec for r in self.records]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("recursion epochs must be strictly increasing")
        executed = [r for r in self.records if r.executed]
        if len(executed) != len(self.audits):
            raise ValueError("each executed recursion needs one audit")
        for r, audit in zip(executed, self.audits):
            if audit.index != r.index:
                raise ValueError("audit order must follow record order")
            if not np.all(np.diff(audit.t_sec) > 0.0):
                raise ValueError("audit epochs must be strictly increasing")
            if audit.t_sec[0] != r.t_start_sec \
                    or audit.t_sec[-1] != r.t_end_sec:
                raise ValueError("audit span must match the recursion span")
            if not np.all(np.isfinite(audit.states_km)):
                raise ValueError("audit states must be finite")

    def write_bundle(self, directory) -> None:
        """Write the log as a directory of delimited files.

        Produces `maneuvers.csv`, `truth_trajectory.csv`,
        `constraint_audit.csv`, `scp_traces.csv`, and `summary.json`.
        """
        os.makedirs(directory, exist_ok=True)

        path = os.path.join(directory, "maneuvers.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("recursion,t_sec,vehicle,"
                    "commanded_x_m_s,commanded_y_m_s,commanded_z_m_s,"
                    "executed_x_m_s,executed_y_m_s,executed_z_m_s,"
                    "commanded_mag_m_s,executed_mag_m_s,plan_cost_m_s,"
                    "scp_status,scp_iterations,scp_converged,"
                    "estimate_feasible,executed\n")
            for r in self.records:
                for i in range(self.n_vehicles):
                    cmd = r.commanded_m_s[i]
                    act = r.executed_m_s[i]
                    cols = [str(r.index), repr(float(r.t_start_sec)), str(i)]
                    cols += [repr(float(v)) for v in cmd]
                    cols += [repr(float(v)) for v in act]
                    cols += [repr(float(np.linalg.norm(cmd))),
                             repr(float(np.linalg.norm(act))),
                             repr(float(r.plan_cost_m_s)),
                             r.scp_status or "not-solved",
                             str(r.scp_iterations),
                             str(int(r.scp_converged)),
                             str(int(r.estimate_feasible)),
                             str(int(r.executed))]
                    f.write(",".join(cols) + "\n")

        path = os.path.join(directory, "truth_trajectory.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("recursion,t_sec,vehicle,rx_km,ry_km,rz_km,"
                    "vx_km_s,vy_km_s,vz_km_s\n")
            for audit in self.audits:
                for k in range(audit.t_sec.size):
                    for i in range(self.n_vehicles):
                        x = audit.states_km[k, 6 * i:6 * i + 6]
                        cols = [str(audit.index),
                                repr(float(audit.t_sec[k])), str(i)]
                        cols += [repr(float(v)) for v in x]
                        f.write(",".join(cols) + "\n")

        path = os.path.join(directory, "constraint_audit.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("recursion,t_sec,apolune_window,label,applies,"
                    "value,violated\n")
            for audit in self.audits:
                for c, label in enumerate(self.constraint_labels):
                    applies = bool(audit.row_applies[c])
                    for k in range(audit.t_sec.size):
                        value = float(audit.values[k, c])
                        violated = int(applies and value > 0.0)
                        f.write(f"{audit.index},"
                                f"{float(audit.t_sec[k])!r},"
                                f"{int(audit.apolune)},{label},"
                                f"{int(applies)},{value!r},{violated}\n")

        path = os.path.join(directory, "scp_traces.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("recursion," + TRACE_HEADER + "\n")
            for r in self.records:
                if not r.trace_csv:
                    continue
                for line in r.trace_csv.splitlines()[1:]:
                    f.write(f"{r.index},{line}\n")

        worst = self.worst_violation()
        summary = {
            "experiment": self.experiment,
            "sample_index": self.sample_index,
            "seed": self.seed_repr,
            "n_vehicles": self.n_vehicles,
            "planned_recursions": self.planned_recursions,
            "completed_recursions": self.completed_recursions,
            "success": self.success,
            "premature_stop": self.premature_stop,
            "stop_reason": self.stop_reason,
            "constraint_labels": list(self.constraint_labels),
            "cumulative_dv_m_s": [float(v) for v in self.cumulative_dv_m_s],
            "total_cost_m_s": self.total_cost_m_s,
            "total_cost_cm_s": 100.0 * self.total_cost_m_s,
            "any_scp_not_converged": self.any_scp_not_converged,
            "max_raw_violation": None if math.isinf(worst) else worst,
            "start_epoch_sec": (self.records[0].t_start_sec
                                if self.records else None),
            "end_epoch_sec": (self.records[-1].t_end_sec
                              if self.records else None),
        }
        path = os.path.join(directory, "summary.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")


def run_mission(seed, ecfg: ExperimentConfig,
                ucfg: UncertaintyConfig | None = None,
                reference: ReferenceOrbit | None = None,
                model: ForceModel | None = None, *,
                scp_cfg: ScpConfig | None = None,
                audit_per_segment: int = 1000,
                sample_index: int = 0) -> MissionLog:
    """Fly one closed-loop mission sample and log it.

    The mission starts at the reference's first apolune-window entry and
    runs two recursions per revolution.  The insertion state of each
    vehicle is the reference plus its desired offset (configured in the
    RTN axes of the reference at the start epoch) plus insertion noise.
    The mission ends early when a recursion's estimate violates the raw
    path constraints or the truth propagation fails.

    Args:
        seed: Seed for this sample's random stream (anything accepted by
            `numpy.random.default_rng`).
        ecfg: Experiment definition.
        ucfg: Dispersion magnitudes; defaults to the standard values.
        reference: Tracked reference; defaults to the bundled orbit.
        model: Truth and planning force model; defaults to the bundled
            harmonics field with third bodies and radiation pressure.
        scp_cfg: Solver parameters; defaults to the standard values.
        audit_per_segment: Dense audit sample count per segment (the grid
            adds one endpoint).
        sample_index: Identifier recorded in the log.

    Raises:
        ValueError: If the reference span cannot hold the mission plus
            the final prediction horizon.
    """
    ucfg = ucfg if ucfg is not None else UncertaintyConfig()
    reference = reference if reference is not None else bundled_reference()
    model = model if model is not None else default_force_model()
    rng = np.random.default_rng(seed)
    cset = ecfg.constraint_set()

    t0 = reference.find_anomaly_crossing(
        math.radians(START_ANOMALY_DEG), reference.t0_sec + 600.0)
    period = reference.period_sec()
    span_needed = (ecfg.revolutions + ecfg.n_rev_horizon) * period
    if t0 + span_needed > reference.tf_sec + 0.5 * period:
        raise ValueError("reference span is too short for the mission "
                         "plus its final prediction horizon")

    x_ref0 = reference.state(t0)
    basis = rtn_basis(x_ref0)
    offsets_rtn = ecfg.insertion_offsets_rtn_km()
    truth = np.empty(6 * ecfg.n_vehicles)
    for i in range(ecfg.n_vehicles):
        dx_inr = np.concatenate([basis.T @ offsets_rtn[i, :3],
                                 basis.T @ offsets_rtn[i, 3:]])
        truth[6 * i:6 * i + 6] = sample_insertion(rng, ucfg, x_ref0, dx_inr)

    log = MissionLog(
        experiment=ecfg.experiment, sample_index=sample_index,
        seed_repr=" ".join(str(seed).split()), n_vehicles=ecfg.n_vehicles,
        constraint_labels=cset.labels(),
        planned_recursions=ecfg.recursions)

    t_k = t0
    warm: ReferenceSolution | None = None
    for k in range(ecfg.recursions):
        try:
            outcome = mpc_step(
                reference, model, cset, ucfg, t_k, truth, rng, index=k,
                n_rev=ecfg.n_rev_horizon, eps_r_km=ecfg.eps_r_km,
                eps_v_m_s=ecfg.eps_v_m_s, u_max_m_s=ecfg.u_max_m_s,
                scp_cfg=scp_cfg, warm=warm,
                audit_per_segment=audit_per_segment)
        except RuntimeError:
            log.stop_reason = "propagation-failure"
            break
        log.records.append(outcome.record)
        if outcome.halted:
            log.stop_reason = "estimate-infeasible"
            break
        assert outcome.audit is not None
        log.audits.append(outcome.audit)
        truth = outcome.x_truth_next_km
        t_k = outcome.record.t_end_sec
        warm = outcome.warm_next
    return log


@dataclass(frozen=True)
class SampleSummary:
    """Cost and outcome digest of one mission sample."""

    index: int
    success: bool
    completed_recursions: int
    planned_recursions: int
    dv_m_s: tuple[float, ...]
    total_m_s: float
    stop_reason: str
    any_scp_not_converged: bool
    worst_violation: float

    @classmethod
    def from_log(cls, log: MissionLog) -> "SampleSummary":
        return cls(index=log.sample_index, success=log.success,
                   completed_recursions=log.completed_recursions,
                   planned_recursions=log.planned_recursions,
                   dv_m_s=tuple(float(v) for v in log.cumulative_dv_m_s),
                   total_m_s=log.total_cost_m_s,
                   stop_reason=log.stop_reason,
                   any_scp_not_converged=log.any_scp_not_converged,
                   worst_violation=log.worst_violation())


@dataclass
class MonteCarloReport:
    """Aggregated statistics of a Monte Carlo batch.

    Cost statistics are in cm/s and cover successful samples only; the
    spread column is the sample standard deviation (one delta degree of
    freedom), reported as zero with fewer than two successful samples,
    and the dispersion bound column is mean plus three standard
    deviations.
    """

    experiment: str
    master_seed: int
    n_vehicles: int
    samples: int
    summaries: list[SampleSummary]
    logs: list[MissionLog] | None = None

    @property
    def success_count(self) -> int:
        return sum(1 for s in self.summaries if s.success)

    @property
    def average_successful_recursions(self) -> float:
        """Mean completed recursions over all samples."""
        if not self.summaries:
            return 0.0
        return float(np.mean([s.completed_recursions
                              for s in self.summaries]))

    def cost_matrix_cm_s(self) -> np.ndarray:
        """Per-vehicle-and-total costs of successful samples, cm/s.

        Shape (n_success, n_vehicles + 1); the last column is the total.
        """
        rows = [list(s.dv_m_s) + [s.total_m_s]
                for s in self.summaries if s.success]
        if not rows:
            return np.zeros((0, self.n_vehicles + 1))
        return 100.0 * np.asarray(rows)

    def statistics_cm_s(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean, standard deviation, and mean plus three deviations."""
        costs = self.cost_matrix_cm_s()
        n = costs.shape[0]
        if n == 0:
            zeros = np.zeros(self.n_vehicles + 1)
            return zeros, zeros.copy(), zeros.copy()
        mean = costs.mean(axis=0)
        std = costs.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
        return mean, std, mean + 3.0 * std

    def table_csv(self) -> str:
        """One-row report with the statistic-by-vehicle column set."""
        mean, std, three = self.statistics_cm_s()
        names = [f"sc{i + 1}" for i in range(self.n_vehicles)] + ["total"]
        header = []
        values: list[str] = []
        for stat, arr in (("mean", mean), ("stdv", std), ("3sigma", three)):
            for name, v in zip(names, arr):
                header.append(f"{stat}_{name}")
                values.append(repr(float(v)))
        header += ["successful_cases", "samples",
                   "avg_successful_recursions"]
        values += [str(self.success_count), str(self.samples),
                   repr(self.average_successful_recursions)]
        return ",".join(header) + "\n" + ",".join(values) + "\n"


def sample_seed(master_seed: int, sample_index: int) -> np.random.SeedSequence:
    """Independent per-sample seed, a pure function of its arguments.

    Streams are derived by fixed splitting, so sample draws do not depend
    on scheduling or worker count.
    """
    return np.random.SeedSequence(entropy=master_seed,
                                  spawn_key=(sample_index,))


def run_monte_carlo(ecfg: ExperimentConfig,
                    ucfg: UncertaintyConfig | None = None,
                    reference: ReferenceOrbit | None = None,
                    model: ForceModel | None = None, *,
                    samples: int | None = None,
                    master_seed: int | None = None, jobs: int = 1,
                    scp_cfg: ScpConfig | None = None,
                    audit_per_segment: int = 1000,
                    bundle_dir=None, keep_logs: bool = False
                    ) -> MonteCarloReport:
    """Run a batch of mission samples and aggregate their statistics.

    Samples run concurrently when `jobs` exceeds one; each worker owns
    its mission log and the aggregation is a single reduction in sample
    order, so the report is identical for any worker count.  When
    `bundle_dir` is set, each sample writes its log bundle into
    `<bundle_dir>/sample_NNN`.

    Args:
        ecfg: Experiment definition (its `samples` field is the default
            count).
        ucfg: Dispersion magnitudes; defaults to the standard values (its
            `master_seed` is the default seed).
        reference: Tracked reference; defaults to the bundled orbit.
        model: Force model; defaults to the bundled one.
        samples: Sample-count override.
        master_seed: Seed override for the per-sample stream splitting.
        jobs: Worker-thread count.
        scp_cfg: Solver parameters.
        audit_per_segment: Dense audit sample count per segment.
        bundle_dir: Directory for per-sample log bundles, or None.
        keep_logs: Keep every mission log on the report (memory heavy for
            large batches).
    """
    ucfg = ucfg if ucfg is not None else UncertaintyConfig()
    reference = reference if reference is not None else bundled_reference()
    model = model if model is not None else default_force_model()
    n_samples = samples if samples is not None else ecfg.samples
    seed0 = master_seed if master_seed is not None else ucfg.master_seed
    if n_samples < 1:
        raise ValueError("sample count must be positive")
    if jobs < 1:
        raise ValueError("jobs must be positive")

    def _one(i: int) -> tuple[SampleSummary, MissionLog | None]:
        log = run_mission(sample_seed(seed0, i), ecfg, ucfg, reference,
                          model, scp_cfg=scp_cfg,
                          audit_per_segment=audit_per_segment,
                          sample_index=i)
        if bundle_dir is not None:
            log.write_bundle(os.path.join(bundle_dir, f"sample_{i:03d}"))
        summary = SampleSummary.from_log(log)
        return summary, (log if keep_logs else None)

    if jobs == 1:
        results = [_one(i) for i in range(n_samples)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, range(n_samples)))

    summaries = [summary for summary, _ in results]
    logs = [log for _, log in results] if keep_logs else None
    return MonteCarloReport(experiment=ecfg.experiment, master_seed=seed0,
                            n_vehicles=ecfg.n_vehicles, samples=n_samples,
                            summaries=summaries, logs=logs)
