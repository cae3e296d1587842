"""Physical constants and the nondimensional unit system.

All internal dynamics run in canonical lunar units: the distance unit DU is
10^4 km and the time unit TU is chosen so the Moon's gravitational parameter
is exactly 1.  Public interfaces (CSV files, config, logs) use km, km/s and
seconds; conversion helpers live here so the scaling is defined in one place.
"""

from __future__ import annotations

import math

# Gravitational parameters, km^3/s^2
MU_MOON_KM3_S2 = 4902.800118
MU_EARTH_KM3_S2 = 398600.4418
MU_SUN_KM3_S2 = 1.32712440018e11

# Geometry, km
R_MOON_KM = 1738.0
EARTH_MOON_DIST_KM = 384400.0
AU_KM = 1.496e8

# Solar radiation pressure at 1 AU, N/m^2
P_SRP_N_M2 = 4.56e-6

SECONDS_PER_DAY = 86400.0
SYNODIC_MONTH_S = 29.530588 * SECONDS_PER_DAY

# Canonical units: mu_moon == 1 in nondimensional form
DU_KM = 1.0e4
TU_S = math.sqrt(DU_KM**3 / MU_MOON_KM3_S2)
VU_KM_S = DU_KM / TU_S


def km_to_du(x_km: float) -> float:
    """Length: km -> DU."""
    return x_km / DU_KM


def du_to_km(x_du: float) -> float:
    """Length: DU -> km."""
    return x_du * DU_KM


def kms_to_vu(v_km_s: float) -> float:
    """Speed: km/s -> DU/TU."""
    return v_km_s / VU_KM_S


def vu_to_kms(v_vu: float) -> float:
    """Speed: DU/TU -> km/s."""
    return v_vu * VU_KM_S


def s_to_tu(t_s: float) -> float:
    """Time: seconds -> TU."""
    return t_s / TU_S


def tu_to_s(t_tu: float) -> float:
    """Time: TU -> seconds."""
    return t_tu * TU_S


def mu_to_nd(mu_km3_s2: float) -> float:
    """Gravitational parameter: km^3/s^2 -> DU^3/TU^2."""
    return mu_km3_s2 * TU_S**2 / DU_KM**3


def accel_to_nd(a_km_s2: float) -> float:
    """Acceleration: km/s^2 -> DU/TU^2."""
    return a_km_s2 * TU_S**2 / DU_KM
