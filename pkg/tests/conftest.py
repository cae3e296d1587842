"""Shared fixtures: force models and the bundled reference trajectory."""

from __future__ import annotations

import numpy as np
import pytest

from halokeep.dynamics import ForceModel
from halokeep.gravity import bundled_field
from halokeep.reference import ReferenceOrbit, bundled_reference


@pytest.fixture(scope="session")
def model() -> ForceModel:
    """Full force model with the bundled harmonics field."""
    return ForceModel(harmonics=bundled_field())


@pytest.fixture(scope="session")
def point_mass_model() -> ForceModel:
    """Central-body gravity only, no third bodies, no radiation pressure."""
    return ForceModel(harmonics=None, mu_earth_km3_s2=0.0, mu_sun_km3_s2=0.0,
                      srp=None)


@pytest.fixture(scope="session")
def reference(model: ForceModel) -> ReferenceOrbit:
    """Bundled multi-revolution reference trajectory."""
    return bundled_reference()


def formation_states(center_km: np.ndarray, offsets_km: np.ndarray,
                     velocity_km_s: np.ndarray | None = None) -> np.ndarray:
    """Stack vehicle states around a common center for constraint tests."""
    n = offsets_km.shape[0]
    out = np.zeros(6 * n)
    for i in range(n):
        out[6 * i:6 * i + 3] = center_km + offsets_km[i]
        if velocity_km_s is not None:
            out[6 * i + 3:6 * i + 6] = velocity_km_s
    return out
