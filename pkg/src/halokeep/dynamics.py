"""High-fidelity lunar force model: configuration and propagation front end.

Motion is expressed in a Moon-centered inertial frame.  On top of the central
point mass the model stacks a degree/order-limited spherical-harmonics field
rotating with the lunar principal axes, point-mass Earth and Sun third-body
accelerations including the indirect term, and cannonball solar radiation
pressure without eclipse modeling.  The heavy numerics run inside compiled
kernels in nondimensional units; this module packs configuration objects into
the kernel parameter tuples and converts inputs and outputs between physical
and internal units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ephemeris import (
    AnalyticEphemeris,
    Body,
    EphemerisModel,
    TabulatedEphemeris,
    _orbit_plane_basis,
    _pole_base,
)
from .gravity import HarmonicField
from .units import (
    AU_KM,
    DU_KM,
    MU_EARTH_KM3_S2,
    MU_MOON_KM3_S2,
    MU_SUN_KM3_S2,
    P_SRP_N_M2,
    TU_S,
    VU_KM_S,
)
from . import kernels

_BODY_INDEX = {Body.EARTH: kernels.BODY_EARTH, Body.SUN: kernels.BODY_SUN}


@dataclass(frozen=True)
class SrpParams:
    """Cannonball solar-radiation-pressure parameters.

    Attributes:
        cr: Reflectivity coefficient.
        area_to_mass_m2_kg: Exposed area per unit spacecraft mass.
        pressure_n_m2: Radiation pressure at one astronomical unit.
    """

    cr: float = 1.3
    area_to_mass_m2_kg: float = 0.01
    pressure_n_m2: float = P_SRP_N_M2

    def accel_1au_km_s2(self) -> float:
        """Acceleration magnitude at exactly one astronomical unit."""
        return self.pressure_n_m2 * self.cr * self.area_to_mass_m2_kg * 1.0e-3


@dataclass(frozen=True)
class ForceModel:
    """Force-model description in physical units.

    Setting a gravitational parameter to zero removes that term, which keeps
    reduced models (two-body, gravity-only) expressible through the same
    interface.  `srp=None` disables radiation pressure.

    Attributes:
        ephemeris: Perturbing-body ephemeris and lunar orientation.
        harmonics: Spherical-harmonics field, or None for point-mass gravity.
        nmax: Truncation degree applied to `harmonics`.
        mu_moon_km3_s2: Central gravitational parameter.
        mu_earth_km3_s2: Earth third-body parameter (0 disables).
        mu_sun_km3_s2: Sun third-body parameter (0 disables).
        srp: Radiation-pressure parameters, or None to disable.
    """

    ephemeris: EphemerisModel = field(default_factory=AnalyticEphemeris)
    harmonics: HarmonicField | None = None
    nmax: int = 4
    mu_moon_km3_s2: float = MU_MOON_KM3_S2
    mu_earth_km3_s2: float = MU_EARTH_KM3_S2
    mu_sun_km3_s2: float = MU_SUN_KM3_S2
    srp: SrpParams | None = field(default_factory=SrpParams)

    def srp_coeff_nd(self) -> float:
        """Nondimensional radiation-pressure coefficient (0 when disabled).

        The kernel acceleration is `k * dhat / d**2` with d the Sun-to-craft
        distance, so k carries the one-AU magnitude times AU squared.
        """
        if self.srp is None:
            return 0.0
        a_nd = self.srp.accel_1au_km_s2() / DU_KM * TU_S * TU_S
        return a_nd * (AU_KM / DU_KM) ** 2

    def kernel_params(self, n_vehicles: int = 1,
                      srp_scale: np.ndarray | None = None) -> tuple:
        """Pack the model into the flat nondimensional kernel tuple.

        Args:
            n_vehicles: Number of spacecraft propagated together.
            srp_scale: Optional per-vehicle multipliers on the nominal
                radiation-pressure coefficient (shape `(n_vehicles,)`).

        Returns:
            The `dyn` tuple consumed by the compiled kernels.
        """
        mu = self.mu_moon_km3_s2 / MU_MOON_KM3_S2
        if self.harmonics is not None and self.nmax >= 2:
            fld = self.harmonics.truncated(self.nmax)
            nmax = fld.nmax
            rm = fld.radius_km / DU_KM
            cnm = np.ascontiguousarray(fld.cnm)
            snm = np.ascontiguousarray(fld.snm)
        else:
            nmax = 0
            rm = 1.0
            cnm = np.zeros((1, 1))
            snm = np.zeros((1, 1))
        orient = self.ephemeris.orientation
        pole = np.asarray(orient.pole, dtype=float)
        pole = pole / np.linalg.norm(pole)
        pa_base = _pole_base(pole)
        mu_bodies = np.zeros(2)
        mu_bodies[kernels.BODY_EARTH] = self.mu_earth_km3_s2 / MU_MOON_KM3_S2
        mu_bodies[kernels.BODY_SUN] = self.mu_sun_km3_s2 / MU_MOON_KM3_S2
        coeff = self.srp_coeff_nd()
        srp_coeff = np.full(n_vehicles, coeff)
        if srp_scale is not None:
            srp_coeff *= np.asarray(srp_scale, dtype=float)
        eph_radius = np.zeros(2)
        eph_rate = np.zeros(2)
        eph_phase = np.zeros(2)
        eph_p = np.zeros((2, 3))
        eph_q = np.zeros((2, 3))
        tab_t = np.zeros((2, 2))
        tab_r = np.zeros((2, 2, 3))
        tab_v = np.zeros((2, 2, 3))
        tab_n = np.full(2, 2, dtype=np.int64)
        if isinstance(self.ephemeris, TabulatedEphemeris):
            eph_kind = 1
            npts = max(len(tab[0]) for tab in self.ephemeris.tables.values())
            tab_t = np.zeros((2, npts))
            tab_r = np.zeros((2, npts, 3))
            tab_v = np.zeros((2, npts, 3))
            tab_n = np.zeros(2, dtype=np.int64)
            for body, ib in _BODY_INDEX.items():
                if body not in self.ephemeris.tables:
                    continue
                t_knots, r_knots, v_knots = self.ephemeris.tables[body]
                n = len(t_knots)
                tab_n[ib] = n
                tab_t[ib, :n] = t_knots / TU_S
                tab_r[ib, :n] = r_knots / DU_KM
                tab_v[ib, :n] = v_knots / VU_KM_S
        else:
            eph_kind = 0
            for body, ib in _BODY_INDEX.items():
                orbit = self.ephemeris.earth if body is Body.EARTH else self.ephemeris.sun
                eph_radius[ib] = orbit.radius_km / DU_KM
                eph_rate[ib] = orbit.rate_rad_s * TU_S
                eph_phase[ib] = orbit.phase0_rad
                p, q = _orbit_plane_basis(orbit.inclination_rad, orbit.node_rad)
                eph_p[ib] = p
                eph_q[ib] = q
        return (mu, rm, nmax, cnm, snm, pole, pa_base,
                orient.rate_rad_s * TU_S, orient.phase0_rad,
                mu_bodies, eph_kind, eph_radius, eph_rate, eph_phase,
                eph_p, eph_q, tab_t, tab_r, tab_v, tab_n, srp_coeff)


def no_constraints(n_vehicles: int) -> tuple:
    """Empty constraint tuple for propagation without slack dynamics."""
    zi = np.zeros(0, dtype=np.int64)
    zf = np.zeros(0)
    return (n_vehicles, 0, zi, zi, zi, zf, zf, zf, zf, zi, 0.0, 0.0)


def _check_positions(x_nd: np.ndarray, n_vehicles: int) -> None:
    for i in range(n_vehicles):
        if np.linalg.norm(x_nd[6 * i:6 * i + 3]) == 0.0:
            raise ValueError("state at the gravitational singularity (r = 0)")


def _to_nd(x_km: np.ndarray) -> np.ndarray:
    x = np.asarray(x_km, dtype=float).ravel().copy()
    n = x.size // 6
    for i in range(n):
        x[6 * i:6 * i + 3] /= DU_KM
        x[6 * i + 3:6 * i + 6] /= VU_KM_S
    return x


def _to_km(x_nd: np.ndarray) -> np.ndarray:
    x = np.asarray(x_nd, dtype=float).copy()
    n = x.size // 6
    for i in range(n):
        x[6 * i:6 * i + 3] *= DU_KM
        x[6 * i + 3:6 * i + 6] *= VU_KM_S
    return x


def acceleration(model: ForceModel, t_sec: float, r_km: np.ndarray,
                 srp_scale: float = 1.0) -> np.ndarray:
    """Total inertial acceleration at a position, in km/s^2."""
    dyn = model.kernel_params(1, np.array([srp_scale]))
    r_nd = np.asarray(r_km, dtype=float) / DU_KM
    if np.linalg.norm(r_nd) == 0.0:
        raise ValueError("state at the gravitational singularity (r = 0)")
    a = np.empty(3)
    g = np.empty((3, 3))
    kernels.accel_vehicle(t_sec / TU_S, r_nd, 0, dyn, False, a, g)
    return a * DU_KM / TU_S**2


def acceleration_jacobian(model: ForceModel, t_sec: float, r_km: np.ndarray,
                          srp_scale: float = 1.0) -> np.ndarray:
    """Gradient of the acceleration wrt position, in 1/s^2."""
    dyn = model.kernel_params(1, np.array([srp_scale]))
    r_nd = np.asarray(r_km, dtype=float) / DU_KM
    if np.linalg.norm(r_nd) == 0.0:
        raise ValueError("state at the gravitational singularity (r = 0)")
    a = np.empty(3)
    g = np.empty((3, 3))
    kernels.accel_vehicle(t_sec / TU_S, r_nd, 0, dyn, True, a, g)
    return g / TU_S**2


def state_jacobian(model: ForceModel, t_sec: float, x_km: np.ndarray,
                   srp_scale: float = 1.0) -> np.ndarray:
    """Jacobian of the state derivative wrt the state, 6x6 in SI-mixed units."""
    amat = np.zeros((6, 6))
    amat[:3, 3:] = np.eye(3)
    amat[3:, :3] = acceleration_jacobian(model, t_sec,
                                         np.asarray(x_km)[:3], srp_scale)
    return amat


def propagate(model: ForceModel, t0_sec: float, t1_sec: float,
              x0_km: np.ndarray, rtol: float = 1.0e-12, atol: float = 1.0e-14,
              srp_scale: np.ndarray | None = None) -> np.ndarray:
    """Propagate stacked spacecraft states between two epochs.

    Args:
        model: Force model.
        t0_sec: Initial epoch.
        t1_sec: Final epoch (may precede `t0_sec`).
        x0_km: Stacked states, shape `(6 * n,)`, km and km/s.
        rtol: Relative integration tolerance.
        atol: Absolute integration tolerance.
        srp_scale: Optional per-vehicle radiation-pressure multipliers.

    Returns:
        Stacked states at `t1_sec` in the same layout.

    Raises:
        RuntimeError: If the adaptive integrator cannot reach the target
            epoch within its step budget.
    """
    x0 = np.asarray(x0_km, dtype=float).ravel()
    n = x0.size // 6
    dyn = model.kernel_params(n, srp_scale)
    y0 = _to_nd(x0)
    _check_positions(y0, n)
    y1, status, _ = kernels.propagate_adaptive(
        0, t0_sec / TU_S, t1_sec / TU_S, y0, rtol, atol, dyn,
        no_constraints(n), 0)
    if status != 0:
        raise RuntimeError(f"integration failed with status {status}")
    return _to_km(y1)


def propagate_dense(model: ForceModel, times_sec: np.ndarray,
                    x0_km: np.ndarray, rtol: float = 1.0e-12,
                    atol: float = 1.0e-14,
                    srp_scale: np.ndarray | None = None) -> np.ndarray:
    """Propagate sequentially through a time grid, returning every state.

    `times_sec[0]` is the epoch of `x0_km`; the output row k holds the state
    at `times_sec[k]` (row 0 is the initial state).
    """
    times = np.asarray(times_sec, dtype=float)
    x0 = np.asarray(x0_km, dtype=float).ravel()
    n = x0.size // 6
    dyn = model.kernel_params(n, srp_scale)
    y0 = _to_nd(x0)
    _check_positions(y0, n)
    ys, status = kernels.propagate_sequence(
        0, times / TU_S, y0, rtol, atol, dyn, no_constraints(n), 0)
    if status != 0:
        raise RuntimeError(f"integration failed with status {status}")
    out = np.empty_like(ys)
    for k in range(ys.shape[0]):
        out[k] = _to_km(ys[k])
    return out


def propagate_with_stm(model: ForceModel, t0_sec: float, t1_sec: float,
                       x0_km: np.ndarray, rtol: float = 1.0e-12,
                       atol: float = 1.0e-12,
                       srp_scale: np.ndarray | None = None
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Propagate states together with per-vehicle state-transition matrices.

    Returns:
        Tuple of the stacked final states (km, km/s) and an array of shape
        `(n, 6, 6)` holding each vehicle's transition matrix in physical
        units (km, km/s at both ends).
    """
    x0 = np.asarray(x0_km, dtype=float).ravel()
    n = x0.size // 6
    dyn = model.kernel_params(n, srp_scale)
    cons = no_constraints(n)
    y0 = np.zeros(6 * n + 36 * n)
    y0[:6 * n] = _to_nd(x0)
    _check_positions(y0, n)
    for i in range(n):
        y0[6 * n + 36 * i:6 * n + 36 * (i + 1)] = np.eye(6).ravel()
    y1, status, _ = kernels.propagate_adaptive(
        2, t0_sec / TU_S, t1_sec / TU_S, y0, rtol, atol, dyn, cons, 0)
    if status != 0:
        raise RuntimeError(f"integration failed with status {status}")
    x1 = _to_km(y1[:6 * n])
    scale = np.array([DU_KM] * 3 + [VU_KM_S] * 3)
    stms = np.empty((n, 6, 6))
    for i in range(n):
        phi = y1[6 * n + 36 * i:6 * n + 36 * (i + 1)].reshape(6, 6)
        stms[i] = phi * scale[:, None] / scale[None, :]
    return x1, stms


def true_anomaly(x_km: np.ndarray, mu_km3_s2: float = MU_MOON_KM3_S2) -> float:
    """Osculating true anomaly of an inertial state, in [0, 2*pi)."""
    x = np.asarray(x_km, dtype=float)
    return float(kernels.true_anomaly_rv(
        x[:3] / DU_KM, x[3:6] / VU_KM_S, mu_km3_s2 / MU_MOON_KM3_S2))
