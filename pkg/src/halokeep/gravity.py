"""Lunar gravity-field coefficient tables.

Coefficients are stored internally in unnormalized form because the
acceleration recursion consumes unnormalized values.  The CSV interchange
format carries either convention and declares it in the header line along
with the reference radius:

    # normalization=normalized4pi radius_km=1738.0
    n,m,Cnm,Snm
    2,0,-9.08845e-05,0.0
    ...

The bundled table holds degree/order 4 values of the modern lunar field
class, expressed in the lunar principal-axes frame (so C21 = S21 = S22 = 0).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

BUNDLED_FIELD = "moon_sh_deg4.csv"
_HEADER_COLS = ["n", "m", "Cnm", "Snm"]


@dataclass(frozen=True)
class HarmonicField:
    """Unnormalized spherical-harmonic coefficients through degree/order nmax."""

    nmax: int
    radius_km: float
    cnm: np.ndarray
    snm: np.ndarray

    def truncated(self, nmax: int) -> "HarmonicField":
        if nmax > self.nmax:
            raise ValueError(f"table only carries degree {self.nmax}, requested {nmax}")
        return HarmonicField(nmax, self.radius_km,
                             self.cnm[: nmax + 1, : nmax + 1].copy(),
                             self.snm[: nmax + 1, : nmax + 1].copy())


def normalization_factor(n: int, m: int) -> float:
    """Factor converting a 4pi-normalized coefficient to unnormalized form."""
    delta = 1.0 if m == 0 else 0.0
    return math.sqrt((2.0 - delta) * (2 * n + 1) * math.factorial(n - m)
                     / math.factorial(n + m))


def load_harmonics(path) -> HarmonicField:
    """Load a coefficient CSV, converting to unnormalized form if needed."""
    with open(path, newline="") as fh:
        meta_line = fh.readline().strip()
        if not meta_line.startswith("#"):
            raise ValueError("missing normalization/radius header line")
        meta = dict(tok.split("=", 1) for tok in meta_line.lstrip("# ").split())
        normalization = meta.get("normalization")
        if normalization not in ("unnormalized", "normalized4pi"):
            raise ValueError(f"unknown normalization: {normalization!r}")
        radius_km = float(meta["radius_km"])
        rd = csv.reader(fh)
        header = next(rd)
        if header != _HEADER_COLS:
            raise ValueError(f"bad coefficient header: {header}")
        rows = [(int(r[0]), int(r[1]), float(r[2]), float(r[3])) for r in rd]
    nmax = max(r[0] for r in rows)
    cnm = np.zeros((nmax + 1, nmax + 1))
    snm = np.zeros((nmax + 1, nmax + 1))
    cnm[0, 0] = 1.0
    for n, m, c, s in rows:
        if m > n:
            raise ValueError(f"order {m} exceeds degree {n}")
        fac = normalization_factor(n, m) if normalization == "normalized4pi" else 1.0
        cnm[n, m] = fac * c
        snm[n, m] = fac * s
    return HarmonicField(nmax, radius_km, cnm, snm)


def save_harmonics(path, field: HarmonicField) -> None:
    """Write a coefficient CSV in unnormalized convention."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# normalization=unnormalized radius_km={field.radius_km!r}\n")
        w = csv.writer(fh)
        w.writerow(_HEADER_COLS)
        for n in range(2, field.nmax + 1):
            for m in range(n + 1):
                w.writerow([n, m, repr(float(field.cnm[n, m])), repr(float(field.snm[n, m]))])


def bundled_field() -> HarmonicField:
    """Degree-4 lunar field shipped with the package."""
    with resources.as_file(resources.files("halokeep.data") / BUNDLED_FIELD) as p:
        return load_harmonics(p)
