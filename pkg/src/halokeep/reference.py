"""Reference orbit: generation, dense storage, and anomaly bookkeeping.

The reference trajectory is a bounded multi-revolution orbit of the full
force model that shadows the restricted-three-body seed.  It is computed by
multiple shooting with least-norm updates: patch points spaced in osculating
true anomaly are corrected until every arc joins its successor, leaving the
trajectory free to drift toward the nearest naturally bounded solution
instead of pinning any single state.

The result is stored on a dense time grid whose spacing follows the anomaly
rate (capped in time), with exact integrated states at the knots so cubic
Hermite interpolation stays far below meter-level error everywhere.  The
grid also carries the unwrapped osculating true anomaly, which all maneuver
and window scheduling is built on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lstsq

from . import cr3bp, kernels
from .dynamics import ForceModel, no_constraints
from .ephemeris import _hermite_eval
from .units import DU_KM, MU_MOON_KM3_S2, TU_S, VU_KM_S

APOLUNE_ENTRY_DEG = 160.0
APOLUNE_EXIT_DEG = 200.0


def rotating_to_inertial(state_rot: np.ndarray, t_canonical: float,
                         mu: float) -> np.ndarray:
    """Rotating barycentric canonical state to Moon-centered inertial km.

    The rotating frame is aligned with the inertial axes at t = 0 and spins
    about +z at the canonical unit rate, matching an Earth ephemeris that
    starts on the -x axis.
    """
    r_rel = state_rot[:3] - np.array([1.0 - mu, 0.0, 0.0])
    v_rel = state_rot[3:6] + np.array([-r_rel[1], r_rel[0], 0.0])
    ang = t_canonical
    c, s = math.cos(ang), math.sin(ang)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    r_in = rz @ r_rel * cr3bp.L_CR3BP_KM
    v_in = rz @ v_rel * cr3bp.L_CR3BP_KM * cr3bp.N_CR3BP_RAD_S
    return np.concatenate([r_in, v_in])


def rtn_basis(state_km: np.ndarray) -> np.ndarray:
    """Orthonormal radial-tangential-normal triad at a reference state.

    Rows are the radial (along position), tangential (completing the
    right-handed triad, near the velocity direction), and normal (along
    the orbital angular momentum) unit vectors, so `basis @ w` expresses
    an inertial vector `w` in RTN coordinates and `basis.T @ w_rtn` maps
    back.

    Raises:
        ValueError: If the position is zero or position and velocity are
            parallel, leaving the triad undefined.
    """
    x = np.asarray(state_km, dtype=float).ravel()
    r = x[:3]
    h = np.cross(r, x[3:6])
    r_norm = np.linalg.norm(r)
    h_norm = np.linalg.norm(h)
    if r_norm == 0.0 or h_norm == 0.0:
        raise ValueError("RTN basis undefined for a degenerate state")
    rhat = r / r_norm
    nhat = h / h_norm
    return np.vstack((rhat, np.cross(nhat, rhat), nhat))


def _anomaly_of_states(states_km: np.ndarray) -> np.ndarray:
    """Osculating true anomaly of each row of an (n, 6) state array."""
    out = np.empty(states_km.shape[0])
    for i, x in enumerate(states_km):
        out[i] = kernels.true_anomaly_rv(x[:3] / DU_KM, x[3:] / VU_KM_S, 1.0)
    return out


def _unwrap_increasing(theta: np.ndarray) -> np.ndarray:
    """Unwrap a [0, 2*pi) anomaly sequence into a monotone series."""
    out = theta.copy()
    offset = 0.0
    for i in range(1, len(out)):
        if theta[i] < theta[i - 1] - math.pi:
            offset += 2.0 * math.pi
        out[i] = theta[i] + offset
    return out


def _seed_patch_times(seed: cr3bp.HaloOrbit, patches_per_rev: int,
                      n_revs: int) -> tuple[np.ndarray, np.ndarray]:
    """Anomaly-uniform patch epochs and states from the seed orbit.

    Returns:
        Tuple of patch epochs in seconds and the matching Moon-centered
        inertial states in km and km/s, stacked over `n_revs` revolutions.
    """
    n_fine = 2000
    ts = np.linspace(0.0, seed.period, n_fine + 1)
    sol = solve_ivp(cr3bp.cr3bp_rhs, (0.0, seed.period), seed.state0,
                    args=(seed.mu,), method="DOP853", rtol=1.0e-12,
                    atol=1.0e-12, t_eval=ts, dense_output=True)
    states_in = np.array([
        rotating_to_inertial(sol.y[:, i], ts[i], seed.mu)
        for i in range(n_fine + 1)
    ])
    theta = _unwrap_increasing(_anomaly_of_states(states_in))
    theta -= theta[0]
    # Invert theta(t) on one revolution for the anomaly-uniform epochs
    t_of_theta = lambda th: np.interp(th, theta, ts)
    step = 2.0 * math.pi / patches_per_rev
    t_patch = []
    for rev in range(n_revs):
        for j in range(patches_per_rev):
            t_patch.append(rev * seed.period + t_of_theta(j * step))
    t_patch.append(n_revs * seed.period)
    t_patch = np.array(t_patch)
    states = np.empty((len(t_patch), 6))
    for i, t in enumerate(t_patch):
        t_mod = t % seed.period
        rot = sol.sol(t_mod)
        states[i] = rotating_to_inertial(rot, t, seed.mu)
    return t_patch * cr3bp.T_CR3BP_S, states


@dataclass
class ReferenceOrbit:
    """Densely sampled reference trajectory with anomaly bookkeeping.

    Attributes:
        t_sec: Knot epochs, strictly increasing.
        states_km: Knot states (km, km/s), shape (n, 6).
        theta_unwrapped: Monotone osculating true anomaly at the knots.
    """

    t_sec: np.ndarray
    states_km: np.ndarray
    theta_unwrapped: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.theta_unwrapped is None:
            self.theta_unwrapped = _unwrap_increasing(
                _anomaly_of_states(self.states_km))

    @property
    def t0_sec(self) -> float:
        return float(self.t_sec[0])

    @property
    def tf_sec(self) -> float:
        return float(self.t_sec[-1])

    def state(self, t_sec: float) -> np.ndarray:
        """Interpolated state at an epoch (km, km/s); exact at the knots."""
        if t_sec < self.t_sec[0] or t_sec > self.t_sec[-1]:
            raise ValueError(
                f"epoch {t_sec} s outside the reference span "
                f"[{self.t_sec[0]}, {self.t_sec[-1]}]")
        j = int(np.searchsorted(self.t_sec, t_sec))
        if j < len(self.t_sec) and self.t_sec[j] == t_sec:
            return self.states_km[j].copy()
        r, v = _hermite_eval(self.t_sec, self.states_km[:, :3],
                             self.states_km[:, 3:], t_sec)
        return np.concatenate([r, v])

    def anomaly(self, t_sec: float) -> float:
        """Osculating true anomaly at an epoch, in [0, 2*pi)."""
        x = self.state(t_sec)
        return float(kernels.true_anomaly_rv(x[:3] / DU_KM, x[3:] / VU_KM_S,
                                             1.0))

    def anomaly_unwrapped(self, t_sec: float) -> float:
        """Unwrapped anomaly at an epoch, consistent with the knot series."""
        j = int(np.searchsorted(self.t_sec, t_sec))
        if j < len(self.t_sec) and self.t_sec[j] == t_sec:
            return float(self.theta_unwrapped[j])
        j = min(max(j, 1), len(self.t_sec) - 1)
        base = self.theta_unwrapped[j - 1]
        th = self.anomaly(t_sec)
        delta = (th - base) % (2.0 * math.pi)
        return float(base + delta)

    def find_anomaly_crossing(self, theta_target_rad: float,
                              t_after_sec: float,
                              tol_sec: float = 1.0e-6) -> float:
        """Next epoch after `t_after_sec` where the anomaly hits a target.

        The target is interpreted modulo one revolution; the search walks the
        monotone unwrapped anomaly series and bisects inside one knot
        interval.

        Raises:
            ValueError: If the crossing lies outside the stored span.
        """
        th_after = self.anomaly_unwrapped(t_after_sec)
        two_pi = 2.0 * math.pi
        k = math.ceil((th_after - theta_target_rad) / two_pi)
        th_goal = theta_target_rad + k * two_pi
        if th_goal < th_after:
            th_goal += two_pi
        if th_goal > self.theta_unwrapped[-1]:
            raise ValueError("anomaly crossing beyond the reference span")
        j = int(np.searchsorted(self.theta_unwrapped, th_goal))
        lo = max(self.t_sec[j - 1], t_after_sec)
        hi = self.t_sec[min(j, len(self.t_sec) - 1)]
        f_lo = self.anomaly_unwrapped(lo) - th_goal
        while hi - lo > tol_sec:
            mid = 0.5 * (lo + hi)
            f_mid = self.anomaly_unwrapped(mid) - th_goal
            if (f_lo <= 0.0) == (f_mid <= 0.0):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def segment_is_apolune(self, t_start_sec: float, t_end_sec: float) -> bool:
        """Whether a shooting segment lies inside the apolune window.

        Segments are built to sit entirely on one side of the window
        boundaries, so the midpoint anomaly decides.
        """
        th = math.degrees(self.anomaly(0.5 * (t_start_sec + t_end_sec)))
        return APOLUNE_ENTRY_DEG <= th <= APOLUNE_EXIT_DEG

    def period_sec(self) -> float:
        """Mean time per revolution over the stored span."""
        revs = (self.theta_unwrapped[-1] - self.theta_unwrapped[0]) \
            / (2.0 * math.pi)
        return float((self.t_sec[-1] - self.t_sec[0]) / revs)

    def to_csv(self, path) -> None:
        """Write the dense grid as delimited text (exact round trip)."""
        with open(path, "w", encoding="utf-8") as f:
            f.write("t_sec,rx_km,ry_km,rz_km,vx_kms,vy_kms,vz_kms\n")
            for t, x in zip(self.t_sec, self.states_km):
                cols = ",".join(repr(float(v)) for v in x)
                f.write(f"{float(t)!r},{cols}\n")

    @classmethod
    def from_csv(cls, path) -> "ReferenceOrbit":
        """Read a grid written by `to_csv`."""
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        if data.ndim == 1:
            data = data[None, :]
        return cls(t_sec=data[:, 0].copy(),
                   states_km=data[:, 1:7].copy())


BUNDLED_REFERENCE = "reference_nrho.csv"

_BUNDLED_CACHE: dict[str, ReferenceOrbit] = {}


def bundled_reference() -> ReferenceOrbit:
    """Load the multi-revolution reference shipped with the package.

    The parsed grid is cached per process; callers share one instance and
    must not mutate it.
    """
    if BUNDLED_REFERENCE not in _BUNDLED_CACHE:
        from importlib import resources

        ref = resources.files("halokeep.data").joinpath(BUNDLED_REFERENCE)
        with resources.as_file(ref) as path:
            _BUNDLED_CACHE[BUNDLED_REFERENCE] = ReferenceOrbit.from_csv(path)
    return _BUNDLED_CACHE[BUNDLED_REFERENCE]


def _dense_times_from_seed(seed: cr3bp.HaloOrbit, n_revs: int,
                           theta_step_deg: float,
                           dt_max_sec: float) -> np.ndarray:
    """Anomaly-paced dense grid epochs covering the generated span."""
    n_fine = 4000
    ts = np.linspace(0.0, seed.period, n_fine + 1)
    sol = solve_ivp(cr3bp.cr3bp_rhs, (0.0, seed.period), seed.state0,
                    args=(seed.mu,), method="DOP853", rtol=1.0e-11,
                    atol=1.0e-11, t_eval=ts)
    states_in = np.array([
        rotating_to_inertial(sol.y[:, i], ts[i], seed.mu)
        for i in range(n_fine + 1)
    ])
    theta = _unwrap_increasing(_anomaly_of_states(states_in))
    theta -= theta[0]
    step = math.radians(theta_step_deg)
    n_steps = int(round(2.0 * math.pi / step))
    t_rev = [np.interp(j * step, theta, ts) for j in range(n_steps)]
    t_rev.append(seed.period)
    # Enforce the time-step cap inside each anomaly interval
    t_grid = [0.0]
    for rev in range(n_revs):
        base = rev * seed.period
        for j in range(n_steps):
            t_a = base + t_rev[j]
            t_b = base + t_rev[j + 1]
            span = (t_b - t_a) * cr3bp.T_CR3BP_S
            n_sub = max(1, int(math.ceil(span / dt_max_sec)))
            for srec in range(1, n_sub + 1):
                t_grid.append(t_a + (t_b - t_a) * srec / n_sub)
    return np.array(t_grid) * cr3bp.T_CR3BP_S


def generate_reference(model: ForceModel, n_revs: int = 17,
                       patches_per_rev: int = 12,
                       seed: cr3bp.HaloOrbit | None = None,
                       defect_tol_du: float = 1.0e-8, max_iter: int = 60,
                       theta_step_deg: float = 0.5,
                       dt_max_sec: float = 1000.0,
                       rtol: float = 1.0e-12, atol: float = 1.0e-14,
                       verbose: bool = False) -> ReferenceOrbit:
    """Generate the bounded reference trajectory in the full force model.

    Args:
        model: Force model the reference must be ballistic in.
        n_revs: Revolutions to cover.
        patches_per_rev: Shooting patches per revolution, anomaly-spaced.
        seed: Restricted-problem seed orbit (bundled one when None).
        defect_tol_du: Convergence threshold on the largest position or
            velocity defect, nondimensional.
        max_iter: Least-norm Newton iteration cap.
        theta_step_deg: Dense-grid anomaly spacing.
        dt_max_sec: Dense-grid time-step cap.
        rtol: Integration relative tolerance.
        atol: Integration absolute tolerance.
        verbose: Print per-iteration defect norms.

    Returns:
        The corrected, densely sampled reference orbit.

    Raises:
        RuntimeError: If the defects do not converge.
    """
    if seed is None:
        seed = cr3bp.bundled_seed()
    t_patch_sec, guess_km = _seed_patch_times(seed, patches_per_rev, n_revs)
    dyn = model.kernel_params(1)
    cons = no_constraints(1)
    t_nd = t_patch_sec / TU_S

    guess_nd = np.empty_like(guess_km)
    guess_nd[:, :3] = guess_km[:, :3] / DU_KM
    guess_nd[:, 3:] = guess_km[:, 3:] / VU_KM_S

    def correct_prefix(x: np.ndarray, label: str) -> np.ndarray:
        """Least-norm Newton on the continuity defects of a patch prefix."""
        n_pat = x.shape[0]

        def propagate_all(xs):
            ends = np.empty((n_pat - 1, 6))
            stms = np.empty((n_pat - 1, 6, 6))
            for i in range(n_pat - 1):
                y0 = np.zeros(42)
                y0[:6] = xs[i]
                y0[6:] = np.eye(6).ravel()
                y1, status, _ = kernels.propagate_adaptive(
                    2, t_nd[i], t_nd[i + 1], y0, rtol, atol, dyn, cons, 0)
                if status != 0:
                    raise RuntimeError(f"arc {i} failed with status {status}")
                ends[i] = y1[:6]
                stms[i] = y1[6:].reshape(6, 6)
            return ends, stms

        ends, stms = propagate_all(x)
        d = (ends - x[1:]).ravel()
        d_norm = np.abs(d).max()
        for it in range(max_iter):
            if verbose:
                print(f"  shooting {label} iter {it}: max defect {d_norm:.3e}")
            if d_norm < defect_tol_du:
                return x
            jac = np.zeros((6 * (n_pat - 1), 6 * n_pat))
            for i in range(n_pat - 1):
                jac[6 * i:6 * i + 6, 6 * i:6 * i + 6] = stms[i]
                jac[6 * i:6 * i + 6, 6 * (i + 1):6 * (i + 1) + 6] = -np.eye(6)
            delta = lstsq(jac, -d, lapack_driver="gelsd")[0]
            alpha = 1.0
            for _ in range(10):
                x_t = x + alpha * delta.reshape(n_pat, 6)
                ends_t, stms_t = propagate_all(x_t)
                d_t = (ends_t - x_t[1:]).ravel()
                if np.abs(d_t).max() < d_norm:
                    x, ends, stms, d = x_t, ends_t, stms_t, d_t
                    d_norm = np.abs(d).max()
                    break
                alpha *= 0.5
            else:
                raise RuntimeError("reference shooting line search stalled")
        raise RuntimeError("reference shooting did not converge")

    # March in revolutions.  Appended patches are seeded by replaying the
    # last converged revolution advanced by the frame rotation over one seed
    # period: the orbit is near-stationary in the rotating frame, so the
    # replica is bounded by construction and keeps the corrector from
    # drifting onto an escaping continuation.  A ballistic extension would
    # satisfy continuity exactly while diverging, and the analytic guess
    # alone dephases after a few revolutions.
    ang = seed.period
    c, s = math.cos(ang), math.sin(ang)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def replica(state: np.ndarray) -> np.ndarray:
        out = np.empty(6)
        out[:3] = rz @ state[:3]
        out[3:] = rz @ state[3:]
        return out

    revs_first = min(3, n_revs)
    revs_step = 1
    x = correct_prefix(guess_nd[:revs_first * patches_per_rev + 1].copy(),
                       f"revs 1-{revs_first}")
    revs_done = revs_first
    while revs_done < n_revs:
        revs_next = min(revs_done + revs_step, n_revs)
        n_add = (revs_next - revs_done) * patches_per_rev
        grown = np.vstack([x, np.empty((n_add, 6))])
        for i in range(x.shape[0], grown.shape[0]):
            grown[i] = replica(grown[i - patches_per_rev])
        x = correct_prefix(grown, f"revs 1-{revs_next}")
        revs_done = revs_next

    # Dense grid with exact states: sequential integration through all knots
    t_dense = _dense_times_from_seed(seed, n_revs, theta_step_deg, dt_max_sec)
    t_dense = t_dense[t_dense <= t_patch_sec[-1] + 1.0e-9]
    y0 = np.empty(6)
    y0[:] = x[0]
    ys, status = kernels.propagate_sequence(
        0, t_dense / TU_S, y0, rtol, atol, dyn, cons, 0)
    if status != 0:
        raise RuntimeError(f"dense sampling failed with status {status}")
    states = np.empty_like(ys)
    states[:, :3] = ys[:, :3] * DU_KM
    states[:, 3:] = ys[:, 3:] * VU_KM_S
    return ReferenceOrbit(t_sec=t_dense, states_km=states)
