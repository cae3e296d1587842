"""Formation path constraints and their gradual tightening schedule.

Two constraint families act on every unordered vehicle pair: bounded
separation (a floor enforced everywhere and a ceiling enforced only while the
reference is in its apolune window) and a bounded Sun phase angle (both
bounds apolune-only).  Values are signed so that zero or negative means
satisfied.  A time-growing margin can be added to each family so that
solutions keep slack deeper in a prediction horizon.

Unit policy: configuration surfaces use km and degrees; evaluation routines
use km and radians; the compiled kernels use nondimensional length.  The
margin schedule is not scale-invariant, so the kernel packing rescales the
rate along with the margin to reproduce the km/radian arithmetic exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Literal

import numpy as np

from . import ephemeris
from . import kernels
from .dynamics import ForceModel
from .units import DU_KM, TU_S

FAMILY_SEP_MIN = kernels.FAM_SEP_MIN
FAMILY_SEP_MAX = kernels.FAM_SEP_MAX
FAMILY_PHASE_MIN = kernels.FAM_PHASE_MIN
FAMILY_PHASE_MAX = kernels.FAM_PHASE_MAX

_FAMILY_NAME = {
    FAMILY_SEP_MIN: "separation_min",
    FAMILY_SEP_MAX: "separation_max",
    FAMILY_PHASE_MIN: "phase_min",
    FAMILY_PHASE_MAX: "phase_max",
}

_COS_CLAMP = 1.0 - 1.0e-12


@dataclass(frozen=True)
class TighteningSpec:
    """Margin schedule for one constraint family.

    The margin carries the same unit as the constraint value it tightens
    (km for separation families, radians for phase families).  The schedule
    starts at zero, grows monotonically with elapsed horizon fraction, and
    saturates at the margin; a larger rate saturates faster.

    Attributes:
        margin: Asymptotic margin added to the constraint value.
        rate: Dimensionless growth rate.
        enabled: False turns the schedule off (margin contributes nothing).
    """

    margin: float
    rate: float
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.margin < 0.0:
            raise ValueError("tightening margin must be nonnegative")
        if self.rate < 0.0:
            raise ValueError("tightening rate must be nonnegative")


def tightening_margin(t_sec: float, t0_sec: float, tn_sec: float,
                      spec: TighteningSpec) -> float:
    """Margin added to a constraint at epoch t over the horizon [t0, tn].

    Zero exactly at the horizon start, monotone in t, and bounded above by
    `spec.margin`.  Returns 0 when the schedule is disabled, the margin is
    zero, or the horizon is empty.  The elapsed fraction is clamped to
    [0, 1] so epochs outside the horizon use the boundary values.
    """
    if not spec.enabled or spec.margin <= 0.0 or tn_sec <= t0_sec:
        return 0.0
    ratio = (t_sec - t0_sec) / (tn_sec - t0_sec)
    ratio = min(max(ratio, 0.0), 1.0)
    m, k = spec.margin, spec.rate
    # Equivalent to m - 1/(k*ratio + 1/m), but exactly zero at the
    # horizon start and never negative in floating point.
    return m * m * k * ratio / (m * k * ratio + 1.0)


def tightened_value(g_value: float, t_sec: float, t0_sec: float,
                    tn_sec: float, spec: TighteningSpec) -> float:
    """Constraint value with the schedule margin added (g + margin)."""
    return g_value + tightening_margin(t_sec, t0_sec, tn_sec, spec)


@dataclass(frozen=True)
class ConstraintRow:
    """One scalar path constraint in solver order.

    Bounds and margins are in internal units: km for separation rows and
    radians for phase rows.
    """

    index: int
    family: int
    pair: tuple[int, int]
    bound: float
    weight: float
    tightening: TighteningSpec
    apolune_only: bool
    label: str


@dataclass(frozen=True)
class ConstraintSet:
    """Path-constraint configuration for an M-vehicle formation.

    Angle bounds and angle margins are degrees here at the configuration
    surface; every evaluation routine converts to radians internally.  The
    enforcement windows are fixed by family: the separation floor applies
    everywhere, while the separation ceiling and both phase bounds apply
    only on apolune segments of the reference.

    Attributes:
        n_vehicles: Formation size M; constraints act on all C(M, 2) pairs.
        sep_min_km: Minimum pairwise separation, enforced at all times.
        sep_max_km: Maximum pairwise separation, apolune segments only.
        phase_min_deg: Minimum Sun phase angle, apolune segments only.
        phase_max_deg: Maximum Sun phase angle, apolune segments only.
        include_separation: Activate both separation families.
        include_phase: Activate both phase-angle families.
        enforcement: "continuous" integrates violations between nodes;
            "nodes-only" checks constraints pointwise at control nodes.
        sep_weight: Quadratic violation weight for separation slacks.
        phase_weight: Quadratic violation weight for phase slacks.
        sep_min_tightening: Margin schedule for the separation floor (km).
        sep_max_tightening: Margin schedule for the separation ceiling (km).
        phase_min_tightening_deg: Schedule for the phase floor (degrees).
        phase_max_tightening_deg: Schedule for the phase ceiling (degrees).
    """

    n_vehicles: int
    sep_min_km: float = 10.0
    sep_max_km: float = 150.0
    phase_min_deg: float = 30.0
    phase_max_deg: float = 150.0
    include_separation: bool = True
    include_phase: bool = False
    enforcement: Literal["continuous", "nodes-only"] = "continuous"
    sep_weight: float = 1.0
    phase_weight: float = 1.0e-4
    sep_min_tightening: TighteningSpec = TighteningSpec(25.0, 1.0e5)
    sep_max_tightening: TighteningSpec = TighteningSpec(100.0, 1.0e5)
    phase_min_tightening_deg: TighteningSpec = TighteningSpec(30.0, 1.0e5)
    phase_max_tightening_deg: TighteningSpec = TighteningSpec(30.0, 1.0e5)

    def __post_init__(self) -> None:
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be at least 1")
        if self.include_separation and not 0.0 < self.sep_min_km < self.sep_max_km:
            raise ValueError("separation bounds require 0 < floor < ceiling")
        if self.include_phase and not 0.0 < self.phase_min_deg < self.phase_max_deg < 180.0:
            raise ValueError("phase bounds require 0 < floor < ceiling < 180 deg")
        if self.sep_weight < 0.0 or self.phase_weight < 0.0:
            raise ValueError("violation weights must be nonnegative")
        if self.enforcement not in ("continuous", "nodes-only"):
            raise ValueError("enforcement must be 'continuous' or 'nodes-only'")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Unordered vehicle pairs (a, b) with a < b."""
        return tuple(combinations(range(self.n_vehicles), 2))

    def rows(self) -> tuple[ConstraintRow, ...]:
        """Scalar constraints in solver order (family-major, then by pair)."""
        out: list[ConstraintRow] = []
        families: list[tuple[int, float, float, TighteningSpec, bool]] = []
        if self.include_separation:
            families.append((FAMILY_SEP_MIN, self.sep_min_km, self.sep_weight,
                             self.sep_min_tightening, False))
            families.append((FAMILY_SEP_MAX, self.sep_max_km, self.sep_weight,
                             self.sep_max_tightening, True))
        if self.include_phase:
            phase_min = TighteningSpec(
                math.radians(self.phase_min_tightening_deg.margin),
                self.phase_min_tightening_deg.rate,
                self.phase_min_tightening_deg.enabled)
            phase_max = TighteningSpec(
                math.radians(self.phase_max_tightening_deg.margin),
                self.phase_max_tightening_deg.rate,
                self.phase_max_tightening_deg.enabled)
            families.append((FAMILY_PHASE_MIN, math.radians(self.phase_min_deg),
                             self.phase_weight, phase_min, True))
            families.append((FAMILY_PHASE_MAX, math.radians(self.phase_max_deg),
                             self.phase_weight, phase_max, True))
        for family, bound, weight, spec, apo in families:
            for pair in self.pairs:
                out.append(ConstraintRow(
                    index=len(out), family=family, pair=pair, bound=bound,
                    weight=weight, tightening=spec, apolune_only=apo,
                    label=f"{_FAMILY_NAME[family]}[{pair[0]}-{pair[1]}]"))
        return tuple(out)

    @property
    def n_constraints(self) -> int:
        """Number of scalar path constraints."""
        n_fam = (2 if self.include_separation else 0) + (2 if self.include_phase else 0)
        return n_fam * len(self.pairs)

    def labels(self) -> tuple[str, ...]:
        """Human-readable row labels in solver order."""
        return tuple(row.label for row in self.rows())

    def kernel_params(self, t0_sec: float = 0.0, tn_sec: float = 0.0) -> tuple:
        """Pack the constraint block consumed by the compiled kernels.

        Lengths go to nondimensional units.  The margin schedule is not
        scale-invariant, so separation rows rescale the rate by the length
        unit along with the margin; the packed schedule then reproduces the
        km-arithmetic margin exactly.  Phase rows are already in radians,
        the kernel's native angle unit.

        Args:
            t0_sec: Horizon start epoch (margin is zero here).
            tn_sec: Horizon end epoch (margin saturates here).

        Returns:
            Constraint tuple in the compiled-kernel layout.
        """
        rows = self.rows()
        n_con = len(rows)
        pair_a = np.array([r.pair[0] for r in rows], dtype=np.int64)
        pair_b = np.array([r.pair[1] for r in rows], dtype=np.int64)
        fam = np.array([r.family for r in rows], dtype=np.int64)
        bound = np.empty(n_con)
        wgt = np.empty(n_con)
        eta = np.empty(n_con)
        kappa = np.empty(n_con)
        apo = np.zeros(n_con, dtype=np.int64)
        for k, row in enumerate(rows):
            is_sep = row.family in (FAMILY_SEP_MIN, FAMILY_SEP_MAX)
            scale = DU_KM if is_sep else 1.0
            bound[k] = row.bound / scale
            wgt[k] = row.weight
            if row.tightening.enabled and row.tightening.margin > 0.0:
                eta[k] = row.tightening.margin / scale
                kappa[k] = row.tightening.rate * scale
            else:
                eta[k] = 0.0
                kappa[k] = 0.0
            apo[k] = 1 if row.apolune_only else 0
        return (self.n_vehicles, n_con, pair_a, pair_b, fam, bound, wgt,
                eta, kappa, apo, t0_sec / TU_S, tn_sec / TU_S)


def pair_separation_km(states_km: np.ndarray, pair: tuple[int, int]) -> float:
    """Distance between two vehicles of a stacked state, km."""
    x = np.asarray(states_km, dtype=float).ravel()
    a, b = pair
    return float(np.linalg.norm(x[6 * a:6 * a + 3] - x[6 * b:6 * b + 3]))


def separation_violation_km(states_km: np.ndarray, pair: tuple[int, int],
                            limit_km: float,
                            bound: Literal["min", "max"]) -> float:
    """Signed separation-constraint value, km (negative means satisfied).

    The floor form is limit minus distance; the ceiling form is distance
    minus limit.
    """
    dist = pair_separation_km(states_km, pair)
    if bound == "min":
        return limit_km - dist
    if bound == "max":
        return dist - limit_km
    raise ValueError("bound must be 'min' or 'max'")


def sun_phase_angle_rad(t_sec: float, states_km: np.ndarray,
                        pair: tuple[int, int], model: ForceModel) -> float:
    """Angle at vehicle a between the lines of sight to b and to the Sun.

    Returns a value in [0, pi]: 0 when b sits sunward of a, pi when b sits
    anti-sunward.  The two vehicles must not be coincident.
    """
    x = np.asarray(states_km, dtype=float).ravel()
    a, b = pair
    r_a = x[6 * a:6 * a + 3]
    r_b = x[6 * b:6 * b + 3]
    to_b = r_b - r_a
    dist = np.linalg.norm(to_b)
    if dist == 0.0:
        raise ValueError("phase angle undefined for a coincident pair")
    sun = ephemeris.body_state(model.ephemeris, ephemeris.Body.SUN, t_sec).r_km
    to_sun = sun - r_a
    cosang = float(to_b @ to_sun / (dist * np.linalg.norm(to_sun)))
    cosang = min(max(cosang, -_COS_CLAMP), _COS_CLAMP)
    return math.acos(cosang)


def constraint_values(cset: ConstraintSet, t_sec: float,
                      states_km: np.ndarray, model: ForceModel) -> np.ndarray:
    """Raw constraint values in solver order (no tightening, no windowing).

    Separation rows are km, phase rows are radians; zero or negative means
    satisfied.
    """
    rows = cset.rows()
    out = np.empty(len(rows))
    for k, row in enumerate(rows):
        if row.family == FAMILY_SEP_MIN:
            out[k] = separation_violation_km(states_km, row.pair, row.bound, "min")
        elif row.family == FAMILY_SEP_MAX:
            out[k] = separation_violation_km(states_km, row.pair, row.bound, "max")
        else:
            phi = sun_phase_angle_rad(t_sec, states_km, row.pair, model)
            if row.family == FAMILY_PHASE_MIN:
                out[k] = row.bound - phi
            else:
                out[k] = phi - row.bound
    return out


def tightened_values(cset: ConstraintSet, t_sec: float, states_km: np.ndarray,
                     model: ForceModel, t0_sec: float,
                     tn_sec: float) -> np.ndarray:
    """Constraint values with each family's margin schedule added."""
    raw = constraint_values(cset, t_sec, states_km, model)
    for k, row in enumerate(cset.rows()):
        raw[k] += tightening_margin(t_sec, t0_sec, tn_sec, row.tightening)
    return raw


def constraint_values_batch(cset: ConstraintSet, t_sec: np.ndarray,
                            states_km: np.ndarray,
                            model: ForceModel) -> np.ndarray:
    """Raw constraint values along a trajectory, shape (n_times, n_rows).

    Row/column conventions match `constraint_values` applied at each epoch;
    separation columns are km, phase columns are radians.  Separation rows
    are evaluated with array arithmetic; phase rows loop over epochs only
    for the Sun position.  A coincident pair yields NaN in phase columns
    where the scalar routine would raise.
    """
    t = np.asarray(t_sec, dtype=float).ravel()
    x = np.asarray(states_km, dtype=float)
    if x.shape != (t.size, 6 * cset.n_vehicles):
        raise ValueError("states must be (n_times, 6 * n_vehicles)")
    rows = cset.rows()
    out = np.empty((t.size, len(rows)))
    sun_km = None
    if any(r.family in (FAMILY_PHASE_MIN, FAMILY_PHASE_MAX) for r in rows):
        sun_km = np.empty((t.size, 3))
        for k in range(t.size):
            sun_km[k] = ephemeris.body_state(
                model.ephemeris, ephemeris.Body.SUN, float(t[k])).r_km
    for c, row in enumerate(rows):
        a, b = row.pair
        r_a = x[:, 6 * a:6 * a + 3]
        r_b = x[:, 6 * b:6 * b + 3]
        if row.family in (FAMILY_SEP_MIN, FAMILY_SEP_MAX):
            dist = np.linalg.norm(r_a - r_b, axis=1)
            if row.family == FAMILY_SEP_MIN:
                out[:, c] = row.bound - dist
            else:
                out[:, c] = dist - row.bound
        else:
            to_b = r_b - r_a
            to_sun = sun_km - r_a
            den = (np.linalg.norm(to_b, axis=1)
                   * np.linalg.norm(to_sun, axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                cosang = np.einsum("ij,ij->i", to_b, to_sun) / den
            cosang = np.clip(cosang, -_COS_CLAMP, _COS_CLAMP)
            phi = np.arccos(cosang)
            if row.family == FAMILY_PHASE_MIN:
                out[:, c] = row.bound - phi
            else:
                out[:, c] = phi - row.bound
    return out


def constraint_gradient(cset: ConstraintSet, index: int, t_sec: float,
                        states_km: np.ndarray,
                        model: ForceModel) -> np.ndarray:
    """Analytic gradient of one constraint wrt the stacked state.

    Returns a length-6M array.  Separation rows are dimensionless per km of
    position; phase rows are radians per km.  Velocity entries are zero.
    """
    row = cset.rows()[index]
    x = np.asarray(states_km, dtype=float).ravel()
    grad = np.zeros(6 * cset.n_vehicles)
    a, b = row.pair
    r_a = x[6 * a:6 * a + 3]
    r_b = x[6 * b:6 * b + 3]
    if row.family in (FAMILY_SEP_MIN, FAMILY_SEP_MAX):
        delta = r_a - r_b
        dist = np.linalg.norm(delta)
        if dist == 0.0:
            raise ValueError("separation gradient undefined at zero distance")
        sign = 1.0 if row.family == FAMILY_SEP_MAX else -1.0
        grad[6 * a:6 * a + 3] = sign * delta / dist
        grad[6 * b:6 * b + 3] = -sign * delta / dist
        return grad
    sun = ephemeris.body_state(model.ephemeris, ephemeris.Body.SUN, t_sec).r_km
    to_b = r_b - r_a
    to_sun = sun - r_a
    n_b = np.linalg.norm(to_b)
    n_sun = np.linalg.norm(to_sun)
    if n_b == 0.0:
        raise ValueError("phase gradient undefined for a coincident pair")
    u_b = to_b / n_b
    u_sun = to_sun / n_sun
    cosang = float(u_b @ u_sun)
    cosang = min(max(cosang, -_COS_CLAMP), _COS_CLAMP)
    dphi_dcos = -1.0 / math.sqrt(1.0 - cosang * cosang)
    dcos_db = (u_sun - cosang * u_b) / n_b
    dcos_da = -(u_sun - cosang * u_b) / n_b - (u_b - cosang * u_sun) / n_sun
    sign = 1.0 if row.family == FAMILY_PHASE_MAX else -1.0
    grad[6 * b:6 * b + 3] = sign * dphi_dcos * dcos_db
    grad[6 * a:6 * a + 3] = sign * dphi_dcos * dcos_da
    return grad
