"""Rotating reference frames used for geometry checks and reporting.

All frames share the Moon-centered origin and are defined by right-handed
orthonormal triads expressed in inertial coordinates:

* EM: x toward the Moon (anti-Earth), z along the Earth orbit normal.
* SM: same construction with the Sun in place of Earth.
* RTN: radial / transverse / normal triad of a reference orbit state.
* PA: lunar principal axes (uniform rotation about a fixed pole).

`transform` rotates free vectors (positions relative to the common origin,
velocities already expressed relative to the target frame's rotation are the
caller's concern; only the orientation change is applied here).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .ephemeris import Body, EphemerisModel, body_state


class Frame(Enum):
    INERTIAL = "inertial"
    EM = "em"
    SM = "sm"
    RTN = "rtn"
    PA = "pa"


@dataclass(frozen=True)
class FrameBasis:
    """Orthonormal triad: columns of `axes` are the frame unit vectors in
    inertial coordinates."""

    frame: Frame
    axes: np.ndarray

    def to_frame(self, v_inertial: np.ndarray) -> np.ndarray:
        return self.axes.T @ v_inertial

    def from_frame(self, v_frame: np.ndarray) -> np.ndarray:
        return self.axes @ v_frame


def _two_vector_triad(d: np.ndarray, v: np.ndarray) -> np.ndarray:
    e1 = -d / np.linalg.norm(d)
    h = np.cross(d, v)
    e3 = h / np.linalg.norm(h)
    e2 = np.cross(e3, e1)
    return np.column_stack([e1, e2, e3])


def rtn_triad(r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Radial / transverse / normal triad of an orbit state."""
    e1 = r / np.linalg.norm(r)
    h = np.cross(r, v)
    e3 = h / np.linalg.norm(h)
    e2 = np.cross(e3, e1)
    return np.column_stack([e1, e2, e3])


def frame_basis(model: EphemerisModel, frame: Frame, t_sec: float,
                ref_state: tuple[np.ndarray, np.ndarray] | None = None) -> FrameBasis:
    """Basis of `frame` at an epoch.

    RTN needs `ref_state = (r_km, v_km_s)` of the reference spacecraft; the
    other frames are fully determined by the ephemeris model.
    """
    if frame is Frame.INERTIAL:
        return FrameBasis(frame, np.eye(3))
    if frame is Frame.EM:
        st = body_state(model, Body.EARTH, t_sec)
        return FrameBasis(frame, _two_vector_triad(st.r_km, st.v_km_s))
    if frame is Frame.SM:
        st = body_state(model, Body.SUN, t_sec)
        return FrameBasis(frame, _two_vector_triad(st.r_km, st.v_km_s))
    if frame is Frame.RTN:
        if ref_state is None:
            raise ValueError("RTN basis needs a reference orbit state")
        return FrameBasis(frame, rtn_triad(ref_state[0], ref_state[1]))
    if frame is Frame.PA:
        return FrameBasis(frame, model.orientation.rotation(t_sec))
    raise ValueError(f"unsupported frame: {frame}")


def transform(basis_from: FrameBasis, basis_to: FrameBasis, v: np.ndarray) -> np.ndarray:
    """Re-express a free vector given in `basis_from` components in `basis_to`."""
    return basis_to.axes.T @ (basis_from.axes @ v)
