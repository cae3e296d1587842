"""Ephemerides of the perturbing bodies in a Moon-centered inertial frame.

Two interchangeable models are provided.  The analytic model puts Earth on a
circular (optionally inclined) two-body orbit about the Moon and the Sun on a
circular orbit whose rate reproduces the mean synodic geometry; both are
closed-form and infinitely smooth.  The tabulated model interpolates a state
table with cubic Hermite segments so externally generated ephemerides can be
swapped in without touching the dynamics.

Time is measured in seconds since the mission reference epoch.  States are
km and km/s in the inertial frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .units import (
    AU_KM,
    EARTH_MOON_DIST_KM,
    MU_EARTH_KM3_S2,
    MU_MOON_KM3_S2,
    SYNODIC_MONTH_S,
)

EPHEMERIS_CSV_HEADER = ["t_sec", "body", "rx_km", "ry_km", "rz_km", "vx_kms", "vy_kms", "vz_kms"]


class Body(Enum):
    EARTH = "earth"
    SUN = "sun"


class EphemerisRangeError(ValueError):
    """Epoch falls outside the validity range of a tabulated ephemeris."""


class UnknownBodyError(KeyError):
    """Requested body is not carried by the ephemeris model."""


@dataclass(frozen=True)
class BodyState:
    """Inertial state of a perturbing body: km and km/s."""

    r_km: np.ndarray
    v_km_s: np.ndarray


def _orbit_plane_basis(inclination_rad: float, node_rad: float) -> tuple[np.ndarray, np.ndarray]:
    """In-plane unit vectors (p, q) of a circular orbit tilted by inclination about
    the line of nodes at `node_rad` from +x."""
    cn, sn = math.cos(node_rad), math.sin(node_rad)
    ci, si = math.cos(inclination_rad), math.sin(inclination_rad)
    p = np.array([cn, sn, 0.0])
    # q = (pole x p) with pole tilted by the inclination
    q = np.array([-sn * ci, cn * ci, si])
    return p, q


@dataclass(frozen=True)
class CircularOrbit:
    """Circular orbit of a body about the Moon: closed-form state."""

    radius_km: float
    rate_rad_s: float
    phase0_rad: float
    inclination_rad: float = 0.0
    node_rad: float = 0.0

    def state(self, t_sec: float) -> BodyState:
        p, q = _orbit_plane_basis(self.inclination_rad, self.node_rad)
        ang = self.rate_rad_s * t_sec + self.phase0_rad
        c, s = math.cos(ang), math.sin(ang)
        r = self.radius_km * (c * p + s * q)
        v = self.radius_km * self.rate_rad_s * (-s * p + c * q)
        return BodyState(r, v)


@dataclass(frozen=True)
class LunarOrientation:
    """Uniform rotation of the lunar principal axes about a fixed pole.

    The +x principal axis starts at `phase0_rad` from inertial +x (measured
    about the pole) and rotates at the sidereal rate, which for a tidally
    locked Moon equals the Earth orbit's mean motion.
    """

    pole: np.ndarray
    rate_rad_s: float
    phase0_rad: float

    def rotation(self, t_sec: float) -> np.ndarray:
        """Rotation matrix taking principal-axes components to inertial."""
        k = self.pole / np.linalg.norm(self.pole)
        ang = self.rate_rad_s * t_sec + self.phase0_rad
        c, s = math.cos(ang), math.sin(ang)
        kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
        rod = c * np.eye(3) + s * kx + (1.0 - c) * np.outer(k, k)
        # Base orientation: principal +x at phase0 in the plane normal to the pole
        return rod @ _pole_base(k)


def _pole_base(k: np.ndarray) -> np.ndarray:
    """Right-handed base triad with +z along the pole."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(k @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    x = ref - (ref @ k) * k
    x /= np.linalg.norm(x)
    y = np.cross(k, x)
    return np.column_stack([x, y, k])


def default_earth_orbit(phase0_rad: float = math.pi, inclination_rad: float = 0.0,
                        node_rad: float = 0.0) -> CircularOrbit:
    """Earth orbit consistent with two-body relative motion about the Moon."""
    n = math.sqrt((MU_EARTH_KM3_S2 + MU_MOON_KM3_S2) / EARTH_MOON_DIST_KM**3)
    return CircularOrbit(EARTH_MOON_DIST_KM, n, phase0_rad, inclination_rad, node_rad)


def default_sun_orbit(phase0_rad: float = 0.0, inclination_rad: float = 0.0,
                      node_rad: float = 0.0) -> CircularOrbit:
    """Sun orbit whose rate reproduces the mean synodic month."""
    n_earth = math.sqrt((MU_EARTH_KM3_S2 + MU_MOON_KM3_S2) / EARTH_MOON_DIST_KM**3)
    n_sun = n_earth - 2.0 * math.pi / SYNODIC_MONTH_S
    return CircularOrbit(AU_KM, n_sun, phase0_rad, inclination_rad, node_rad)


def default_lunar_orientation() -> LunarOrientation:
    """Tidally locked rotation about the default Earth-orbit normal (+z)."""
    n_earth = math.sqrt((MU_EARTH_KM3_S2 + MU_MOON_KM3_S2) / EARTH_MOON_DIST_KM**3)
    return LunarOrientation(np.array([0.0, 0.0, 1.0]), n_earth, math.pi)


@dataclass(frozen=True)
class AnalyticEphemeris:
    """Closed-form circular-orbit ephemeris for Earth and Sun."""

    earth: CircularOrbit = field(default_factory=default_earth_orbit)
    sun: CircularOrbit = field(default_factory=default_sun_orbit)
    orientation: LunarOrientation = field(default_factory=default_lunar_orientation)

    def body_state(self, body: Body, t_sec: float) -> BodyState:
        if body is Body.EARTH:
            return self.earth.state(t_sec)
        if body is Body.SUN:
            return self.sun.state(t_sec)
        raise UnknownBodyError(body)

    def synodic_period_s(self) -> float:
        """Period of the Sun direction as seen from the rotating Earth-Moon frame."""
        return 2.0 * math.pi / abs(self.earth.rate_rad_s - self.sun.rate_rad_s)


def _hermite_eval(t_knots: np.ndarray, r_knots: np.ndarray, v_knots: np.ndarray,
                  t: float) -> tuple[np.ndarray, np.ndarray]:
    """Cubic Hermite interpolation of (r, v); exact at the knots."""
    i = int(np.searchsorted(t_knots, t, side="right")) - 1
    i = min(max(i, 0), len(t_knots) - 2)
    h = t_knots[i + 1] - t_knots[i]
    s = (t - t_knots[i]) / h
    h00 = (2.0 * s - 3.0) * s * s + 1.0
    h10 = ((s - 2.0) * s + 1.0) * s
    h01 = (3.0 - 2.0 * s) * s * s
    h11 = (s - 1.0) * s * s
    d00 = (6.0 * s - 6.0) * s / h
    d10 = (3.0 * s - 4.0) * s / h + 1.0 / h
    d01 = (6.0 - 6.0 * s) * s / h
    d11 = (3.0 * s - 2.0) * s / h
    r0, r1 = r_knots[i], r_knots[i + 1]
    v0, v1 = v_knots[i], v_knots[i + 1]
    r = h00 * r0 + (h10 * h) * v0 + h01 * r1 + (h11 * h) * v1
    v = d00 * r0 + (d10 * h) * v0 + d01 * r1 + (d11 * h) * v1
    return r, v


@dataclass(frozen=True)
class TabulatedEphemeris:
    """Cubic-Hermite interpolated state tables per body.

    Tables map each body to (t_sec, r_km, v_km_s) arrays sorted by time.
    Queries outside [t0, tf] raise EphemerisRangeError.  Queries exactly at a
    grid node return the stored state bit-exactly.
    """

    tables: dict[Body, tuple[np.ndarray, np.ndarray, np.ndarray]]
    orientation: LunarOrientation = field(default_factory=default_lunar_orientation)

    def body_state(self, body: Body, t_sec: float) -> BodyState:
        if body not in self.tables:
            raise UnknownBodyError(body)
        t_knots, r_knots, v_knots = self.tables[body]
        if t_sec < t_knots[0] or t_sec > t_knots[-1]:
            raise EphemerisRangeError(
                f"epoch {t_sec} s outside tabulated range [{t_knots[0]}, {t_knots[-1]}]"
            )
        j = int(np.searchsorted(t_knots, t_sec))
        if j < len(t_knots) and t_knots[j] == t_sec:
            return BodyState(r_knots[j].copy(), v_knots[j].copy())
        r, v = _hermite_eval(t_knots, r_knots, v_knots, t_sec)
        return BodyState(r, v)


EphemerisModel = AnalyticEphemeris | TabulatedEphemeris


def body_state(model: EphemerisModel, body: Body, t_sec: float) -> BodyState:
    """State of a perturbing body at an epoch (km, km/s)."""
    return model.body_state(body, t_sec)


def sample_to_table(model: AnalyticEphemeris, t0_sec: float, tf_sec: float,
                    step_sec: float) -> TabulatedEphemeris:
    """Sample an analytic model onto a uniform grid as a tabulated model."""
    n = max(2, int(math.ceil((tf_sec - t0_sec) / step_sec)) + 1)
    t = np.linspace(t0_sec, tf_sec, n)
    tables = {}
    for body in (Body.EARTH, Body.SUN):
        r = np.empty((n, 3))
        v = np.empty((n, 3))
        for k, tk in enumerate(t):
            st = model.body_state(body, float(tk))
            r[k], v[k] = st.r_km, st.v_km_s
        tables[body] = (t.copy(), r, v)
    return TabulatedEphemeris(tables, model.orientation)


def write_ephemeris_csv(path: str, model: TabulatedEphemeris) -> None:
    """Write a tabulated ephemeris in the interchange CSV schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPHEMERIS_CSV_HEADER)
        for body in sorted(model.tables, key=lambda b: b.value):
            t_knots, r_knots, v_knots = model.tables[body]
            for k in range(len(t_knots)):
                w.writerow([repr(float(t_knots[k])), body.value]
                           + [repr(float(x)) for x in r_knots[k]]
                           + [repr(float(x)) for x in v_knots[k]])


def read_ephemeris_csv(path: str) -> TabulatedEphemeris:
    """Read the interchange CSV schema written by `write_ephemeris_csv`."""
    rows: dict[Body, list[tuple[float, list[float], list[float]]]] = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != EPHEMERIS_CSV_HEADER:
            raise ValueError(f"bad ephemeris header: {header}")
        for row in rd:
            body = Body(row[1])
            rows.setdefault(body, []).append(
                (float(row[0]), [float(x) for x in row[2:5]], [float(x) for x in row[5:8]])
            )
    tables = {}
    for body, recs in rows.items():
        recs.sort(key=lambda rec: rec[0])
        t = np.array([rec[0] for rec in recs])
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"non-increasing epochs for body {body.value}")
        r = np.array([rec[1] for rec in recs])
        v = np.array([rec[2] for rec in recs])
        tables[body] = (t, r, v)
    return TabulatedEphemeris(tables)
