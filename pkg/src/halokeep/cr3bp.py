"""Circular restricted three-body utilities for seeding the reference orbit.

Works in the classic rotating barycentric frame with canonical units (the
primary separation, the inverse mean motion, and the combined gravitational
parameter all equal one).  Provides the equations of motion with variational
dynamics, a third-order analytic seed for collinear-point halo orbits, a
multiple-shooting differential corrector built on the perpendicular-crossing
symmetry, and pseudo-arclength continuation along the halo family down to a
prescribed period.  The result is the starting guess that the high-fidelity
reference generator refines.

Multiple shooting is load-bearing here: the small halos where the analytic
seed is valid are so unstable that a half-period single-shooting corrector
steps out of the convergence basin.

Run `python3 -m halokeep.cr3bp` to regenerate the bundled seed table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .units import EARTH_MOON_DIST_KM, MU_EARTH_KM3_S2, MU_MOON_KM3_S2

MU_CR3BP = MU_MOON_KM3_S2 / (MU_EARTH_KM3_S2 + MU_MOON_KM3_S2)
L_CR3BP_KM = EARTH_MOON_DIST_KM
N_CR3BP_RAD_S = math.sqrt((MU_EARTH_KM3_S2 + MU_MOON_KM3_S2)
                          / EARTH_MOON_DIST_KM**3)
T_CR3BP_S = 1.0 / N_CR3BP_RAD_S

BUNDLED_SEED = "nrho_cr3bp_seed.csv"


@dataclass(frozen=True)
class HaloOrbit:
    """Periodic orbit defined by a perpendicular plane crossing.

    Attributes:
        state0: Rotating-frame state at the y = 0 crossing, canonical units;
            the y, vx, and vz components are exactly zero.
        period: Orbit period in canonical time.
        mu: Mass ratio the orbit was corrected under.
    """

    state0: np.ndarray
    period: float
    mu: float


def cr3bp_rhs(t: float, s: np.ndarray, mu: float) -> np.ndarray:
    """Rotating-frame equations of motion, canonical units."""
    x, y, z, vx, vy, vz = s
    r1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    r2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    c1 = (1.0 - mu) / r1**3
    c2 = mu / r2**3
    ax = x + 2.0 * vy - c1 * (x + mu) - c2 * (x - 1.0 + mu)
    ay = y - 2.0 * vx - c1 * y - c2 * y
    az = -c1 * z - c2 * z
    return np.array([vx, vy, vz, ax, ay, az])


def cr3bp_jacobian(s: np.ndarray, mu: float) -> np.ndarray:
    """Jacobian of the equations of motion wrt the state."""
    x, y, z = s[:3]
    amat = np.zeros((6, 6))
    amat[:3, 3:] = np.eye(3)
    amat[3, 4] = 2.0
    amat[4, 3] = -2.0
    uxx = np.zeros((3, 3))
    for mu_b, xb in ((1.0 - mu, -mu), (mu, 1.0 - mu)):
        d = np.array([x - xb, y, z])
        dn = np.linalg.norm(d)
        uxx += mu_b * (3.0 * np.outer(d, d) / dn**5 - np.eye(3) / dn**3)
    uxx[0, 0] += 1.0
    uxx[1, 1] += 1.0
    amat[3:, :3] = uxx
    return amat


def cr3bp_rhs_stm(t: float, s: np.ndarray, mu: float) -> np.ndarray:
    """Equations of motion augmented with the 6x6 variational block."""
    ds = np.empty(42)
    ds[:6] = cr3bp_rhs(t, s[:6], mu)
    amat = cr3bp_jacobian(s[:6], mu)
    phi = s[6:].reshape(6, 6)
    ds[6:] = (amat @ phi).ravel()
    return ds


def jacobi_constant(state: np.ndarray, mu: float) -> float:
    """Jacobi integral of a rotating-frame state."""
    x, y, z, vx, vy, vz = state
    r1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    r2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    return (x * x + y * y + 2.0 * (1.0 - mu) / r1 + 2.0 * mu / r2
            - (vx * vx + vy * vy + vz * vz))


def l2_position(mu: float) -> float:
    """x coordinate of the collinear point beyond the smaller primary."""
    def f(gam: float) -> float:
        return (gam**5 + (3.0 - mu) * gam**4 + (3.0 - 2.0 * mu) * gam**3
                - mu * gam**2 - 2.0 * mu * gam - mu)

    gam = brentq(f, 1.0e-6, 0.5, xtol=1.0e-15)
    return 1.0 - mu + gam


def richardson_seed(mu: float, az_km: float,
                    northern: bool = False) -> tuple[np.ndarray, float]:
    """Third-order analytic halo seed at the far collinear point.

    Args:
        mu: Mass ratio.
        az_km: Out-of-plane amplitude in kilometers.
        northern: Family branch selector.

    Returns:
        Tuple of the rotating-frame state at the perpendicular crossing and
        the estimated period, both in canonical units.
    """
    gam = l2_position(mu) - (1.0 - mu)

    def c(n: int) -> float:
        return (mu + (-1.0) ** n * (1.0 - mu) * gam ** (n + 1)
                / (1.0 + gam) ** (n + 1)) / gam**3

    c2, c3, c4 = c(2), c(3), c(4)
    lam2 = ((2.0 - c2) + math.sqrt((c2 - 2.0) ** 2
                                   + 4.0 * (c2 - 1.0) * (1.0 + 2.0 * c2))) / 2.0
    lam = math.sqrt(lam2)
    k = 2.0 * lam / (lam2 + 1.0 - c2)
    d1 = (3.0 * lam2 / k) * (k * (6.0 * lam2 - 1.0) - 2.0 * lam)
    d2 = (8.0 * lam2 / k) * (k * (11.0 * lam2 - 1.0) - 2.0 * lam)
    a21 = 3.0 * c3 * (k * k - 2.0) / (4.0 * (1.0 + 2.0 * c2))
    a22 = 3.0 * c3 / (4.0 * (1.0 + 2.0 * c2))
    a23 = -(3.0 * c3 * lam / (4.0 * k * d1)) * (3.0 * k**3 * lam
                                                - 6.0 * k * (k - lam) + 4.0)
    a24 = -(3.0 * c3 * lam / (4.0 * k * d1)) * (2.0 + 3.0 * k * lam)
    b21 = -(3.0 * c3 * lam / (2.0 * d1)) * (3.0 * k * lam - 4.0)
    b22 = 3.0 * c3 * lam / d1
    d21 = -c3 / (2.0 * lam2)
    a31 = (-(9.0 * lam / (4.0 * d2))
           * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k))
           + ((9.0 * lam2 + 1.0 - c2) / (2.0 * d2))
           * (3.0 * c3 * (2.0 * a23 - k * b21) + c4 * (2.0 + 3.0 * k * k)))
    a32 = (-(1.0 / d2)
           * ((9.0 * lam / 4.0) * (4.0 * c3 * (k * a24 - b22) + k * c4)
              + 1.5 * (9.0 * lam2 + 1.0 - c2)
              * (c3 * (k * b22 + d21 - 2.0 * a24) - c4)))
    b31 = ((3.0 / (8.0 * d2))
           * (8.0 * lam * (3.0 * c3 * (k * b21 - 2.0 * a23)
                           - c4 * (2.0 + 3.0 * k * k))
              + (9.0 * lam2 + 1.0 + 2.0 * c2)
              * (4.0 * c3 * (k * a23 - b21) + k * c4 * (4.0 + k * k))))
    b32 = ((1.0 / d2)
           * (9.0 * lam * (c3 * (k * b22 + d21 - 2.0 * a24) - c4)
              + 0.375 * (9.0 * lam2 + 1.0 + 2.0 * c2)
              * (4.0 * c3 * (k * a24 - b22) + k * c4)))
    d31 = (3.0 / (64.0 * lam2)) * (4.0 * c3 * a24 + c4)
    d32 = (3.0 / (64.0 * lam2)) * (4.0 * c3 * (a23 - d21)
                                   + c4 * (4.0 + k * k))
    denom = 2.0 * lam * (lam * (1.0 + k * k) - 2.0 * k)
    s1 = (1.5 * c3 * (2.0 * a21 * (k * k - 2.0) - a23 * (k * k + 2.0)
                      - 2.0 * k * b21)
          - 0.375 * c4 * (3.0 * k**4 - 8.0 * k * k + 8.0)) / denom
    s2 = (1.5 * c3 * (2.0 * a22 * (k * k - 2.0) + a24 * (k * k + 2.0)
                      + 2.0 * k * b22 + 5.0 * d21)
          + 0.375 * c4 * (12.0 - k * k)) / denom
    a1 = -1.5 * c3 * (2.0 * a21 + a23 + 5.0 * d21) - 0.375 * c4 * (12.0 - k * k)
    a2 = 1.5 * c3 * (a24 - 2.0 * a22) + 1.125 * c4
    l1 = a1 + 2.0 * lam2 * s1
    l2 = a2 + 2.0 * lam2 * s2
    delta = lam2 - c2

    az = az_km / (L_CR3BP_KM * gam)
    ax2 = (-delta - l2 * az * az) / l1
    if ax2 <= 0.0:
        raise ValueError("out-of-plane amplitude outside the analytic range")
    ax = math.sqrt(ax2)
    omega = 1.0 + s1 * ax * ax + s2 * az * az
    period = 2.0 * math.pi / (lam * omega)
    dn = 1.0 if northern else -1.0

    # State at tau1 = 0 (perpendicular crossing)
    x = (a21 * ax * ax + a22 * az * az - ax + (a23 * ax * ax - a24 * az * az)
         + (a31 * ax**3 - a32 * ax * az * az))
    z = dn * (az - 2.0 * d21 * ax * az + (d32 * az * ax * ax - d31 * az**3))
    dt1 = lam * omega
    vy = (k * ax * dt1 + (b21 * ax * ax - b22 * az * az) * 2.0 * dt1
          + (b31 * ax**3 - b32 * ax * az * az) * 3.0 * dt1)
    state = np.array([l2_position(mu) + gam * x, 0.0, gam * z,
                      0.0, gam * vy, 0.0])
    return state, period


def first_plane_crossing(state0: np.ndarray, mu: float,
                         rtol: float = 1.0e-12, atol: float = 1.0e-12
                         ) -> tuple[float, np.ndarray]:
    """Integrate to the next y = 0 crossing with y moving opposite to vy(0).

    Returns:
        Tuple of the crossing time and crossing state.
    """
    direction = -1.0 if state0[4] > 0.0 else 1.0

    def plane(t: float, s: np.ndarray, mu_: float) -> float:
        return s[1]

    plane.terminal = True
    plane.direction = direction
    sol = solve_ivp(cr3bp_rhs, (0.0, 12.0), state0, args=(mu,),
                    method="DOP853", rtol=rtol, atol=atol, events=plane)
    if not sol.t_events[0].size:
        raise RuntimeError("no plane crossing found within the time window")
    return float(sol.t_events[0][0]), sol.y_events[0][0].copy()


def _integrate_arc(s0: np.ndarray, h: float, mu: float, rtol: float,
                   atol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """End state, transition matrix, and end-state derivative for one arc."""
    y0 = np.concatenate([s0, np.eye(6).ravel()])
    sol = solve_ivp(cr3bp_rhs_stm, (0.0, h), y0, args=(mu,),
                    method="DOP853", rtol=rtol, atol=atol)
    sf = sol.y[:6, -1].copy()
    phi = sol.y[6:, -1].reshape(6, 6).copy()
    return sf, phi, cr3bp_rhs(0.0, sf, mu)


def _ms_residual(nodes: np.ndarray, h: float, mu: float, rtol: float,
                 atol: float) -> tuple[np.ndarray, list]:
    """Multiple-shooting residual over the half period.

    The residual stacks the 6-dim continuity defects of every interior arc
    junction and the three perpendicular-crossing conditions (y, vx, vz) at
    the end of the last arc.
    """
    n_arcs = nodes.shape[0]
    arcs = [_integrate_arc(nodes[i], h, mu, rtol, atol) for i in range(n_arcs)]
    res = np.empty(6 * (n_arcs - 1) + 3)
    for i in range(n_arcs - 1):
        res[6 * i:6 * i + 6] = arcs[i][0] - nodes[i + 1]
    sf = arcs[-1][0]
    res[-3:] = (sf[1], sf[3], sf[5])
    return res, arcs


def _ms_newton(nodes: np.ndarray, h: float, mu: float, free0: tuple,
               extra: tuple | None, tol: float = 1.0e-12, max_iter: int = 40,
               rtol: float = 1.0e-12, atol: float = 1.0e-12
               ) -> tuple[np.ndarray, float, int]:
    """Damped Newton solve of the multiple-shooting system.

    Unknowns are the free components of the first node, all interior nodes,
    and the common arc duration.  The system is square when two first-node
    components are free; with three free components a caller-supplied extra
    constraint row closes it.

    Args:
        nodes: Initial patch states, shape (n_arcs, 6); nodes[0] must have
            y = vx = vz = 0.
        h: Initial arc duration (half period / n_arcs).
        mu: Mass ratio.
        free0: Free component indices of the first node.
        extra: Optional (residual_fn, row_fn) pair closing the system; both
            take (nodes, h) and return a scalar and a row over the unknown
            vector respectively.
        tol: Convergence threshold on the residual maximum.
        max_iter: Iteration cap.
        rtol: Integration relative tolerance.
        atol: Integration absolute tolerance.

    Returns:
        Tuple (corrected nodes, corrected arc duration, iterations used).

    Raises:
        RuntimeError: If the iteration fails to converge.
    """
    n_arcs = nodes.shape[0]
    nf0 = len(free0)
    n_unknown = nf0 + 6 * (n_arcs - 1) + 1
    n_res = 6 * (n_arcs - 1) + 3 + (1 if extra is not None else 0)
    if n_res != n_unknown:
        raise ValueError("multiple-shooting system is not square")

    def col_slice(i: int) -> slice:
        return slice(nf0 + 6 * (i - 1), nf0 + 6 * i)

    nodes = nodes.copy()
    res, arcs = _ms_residual(nodes, h, mu, rtol, atol)
    if extra is not None:
        res = np.append(res, extra[0](nodes, h))
    rn = np.linalg.norm(res)
    for it in range(max_iter):
        if np.abs(res).max() < tol:
            return nodes, h, it
        jac = np.zeros((n_unknown, n_unknown))
        for i in range(n_arcs):
            sf, phi, fend = arcs[i]
            rows = (slice(6 * i, 6 * i + 6) if i < n_arcs - 1
                    else slice(6 * (n_arcs - 1), 6 * (n_arcs - 1) + 3))
            pick = (1, 3, 5) if i == n_arcs - 1 else tuple(range(6))
            if i == 0:
                jac[rows, :nf0] = phi[np.ix_(pick, free0)]
            else:
                jac[rows, col_slice(i)] = phi[pick, :]
            if i < n_arcs - 1:
                jac[rows, col_slice(i + 1)] = -np.eye(6)
            jac[rows, -1] = fend[list(pick)]
        if extra is not None:
            jac[-1] = extra[1](nodes, h)
        step = np.linalg.solve(jac, -res)
        alpha = 1.0
        for _ in range(12):
            trial = nodes.copy()
            trial[0, list(free0)] += alpha * step[:nf0]
            trial[1:] += step[nf0:-1].reshape(n_arcs - 1, 6) * alpha
            h_t = h + alpha * step[-1]
            res_t, arcs_t = _ms_residual(trial, h_t, mu, rtol, atol)
            if extra is not None:
                res_t = np.append(res_t, extra[0](trial, h_t))
            if np.linalg.norm(res_t) < rn:
                nodes, h, res, arcs, rn = trial, h_t, res_t, arcs_t, \
                    np.linalg.norm(res_t)
                break
            alpha *= 0.5
        else:
            raise RuntimeError("multiple-shooting line search stalled")
    raise RuntimeError("multiple-shooting corrector did not converge")


def _seed_nodes(state0: np.ndarray, t_half: float, n_arcs: int, mu: float,
                rtol: float = 1.0e-12, atol: float = 1.0e-12) -> np.ndarray:
    """Patch-point guesses by sampling the seed trajectory."""
    ts = np.linspace(0.0, t_half, n_arcs + 1)[:-1]
    sol = solve_ivp(cr3bp_rhs, (0.0, t_half), state0, args=(mu,),
                    method="DOP853", rtol=rtol, atol=atol, t_eval=ts)
    return np.ascontiguousarray(sol.y.T)


def correct_halo(state0: np.ndarray, mu: float, fix: str = "z",
                 period_guess: float | None = None, n_arcs: int = 8,
                 tol: float = 1.0e-12, max_iter: int = 40) -> HaloOrbit:
    """Differentially correct a perpendicular-crossing periodic orbit.

    Args:
        state0: Initial guess with y = vx = vz = 0, canonical units.
        mu: Mass ratio.
        fix: Which first-node coordinate to hold ("z" adjusts x0 and vy0,
            "x" adjusts z0 and vy0).
        period_guess: Estimated period; when None it is taken from the first
            plane crossing of the guess trajectory.
        n_arcs: Shooting arcs over the half period.
        tol: Convergence threshold on the residual maximum.
        max_iter: Iteration cap.

    Returns:
        The corrected orbit.
    """
    s0 = np.asarray(state0, dtype=float).copy()
    if period_guess is None:
        t_half = first_plane_crossing(s0, mu)[0]
    else:
        t_half = period_guess / 2.0
    nodes = _seed_nodes(s0, t_half, n_arcs, mu)
    free0 = {"z": (0, 4), "x": (2, 4)}[fix]
    nodes, h, _ = _ms_newton(nodes, t_half / n_arcs, mu, free0, None,
                             tol=tol, max_iter=max_iter)
    return HaloOrbit(nodes[0].copy(), 2.0 * n_arcs * h, mu)


def continue_to_period(period_target: float, mu: float = MU_CR3BP,
                       az0_km: float = 12000.0, ds0: float = 0.01,
                       n_arcs: int = 8, verbose: bool = False) -> HaloOrbit:
    """March along the halo family until the period matches the target.

    Starts from two analytically seeded, corrected family members and runs
    pseudo-arclength continuation toward shorter periods, then lands exactly
    on the target with a Newton solve that carries the period as an explicit
    constraint.

    Args:
        period_target: Desired period in canonical time.
        mu: Mass ratio.
        az0_km: Out-of-plane amplitude of the first analytic seed.
        ds0: Initial arclength step in (x0, z0, vy0) space.
        n_arcs: Shooting arcs over the half period.
        verbose: Print family members as they are corrected.

    Returns:
        The family member with the requested period.
    """
    def solve_member(nodes_guess, h_guess, extra):
        return _ms_newton(nodes_guess, h_guess, mu, (0, 2, 4), extra)

    def member_from_seed(az_km):
        seed, per = richardson_seed(mu, az_km)
        nodes = _seed_nodes(seed, per / 2.0, n_arcs, mu)
        free0 = (0, 4)
        nodes, h, _ = _ms_newton(nodes, per / (2 * n_arcs), mu, free0, None)
        return nodes, h

    nodes_a, h_a = member_from_seed(az0_km)
    nodes_b, h_b = member_from_seed(az0_km + 2000.0)
    period = 2.0 * n_arcs * h_b
    if verbose:
        print(f"  family start: period {2 * n_arcs * h_a:.6f} -> {period:.6f}")
    ds = ds0
    guard = 0
    while period > period_target:
        u_a = nodes_a[0][[0, 2, 4]]
        u_b = nodes_b[0][[0, 2, 4]]
        tangent = (u_b - u_a) / np.linalg.norm(u_b - u_a)
        fac = ds / np.linalg.norm(u_b - u_a)
        nodes_guess = nodes_b + fac * (nodes_b - nodes_a)
        h_guess = h_b + fac * (h_b - h_a)
        u_pred = nodes_guess[0][[0, 2, 4]]

        def arc_res(nodes, h):
            return (nodes[0][[0, 2, 4]] - u_pred) @ tangent

        def arc_row(nodes, h):
            row = np.zeros(3 + 6 * (n_arcs - 1) + 1)
            row[:3] = tangent
            return row

        try:
            nodes_new, h_new, _ = solve_member(nodes_guess, h_guess,
                                               (arc_res, arc_row))
        except RuntimeError:
            ds *= 0.5
            guard += 1
            if guard > 200:
                raise
            continue
        nodes_a, h_a = nodes_b, h_b
        nodes_b, h_b = nodes_new, h_new
        period_prev, period = 2.0 * n_arcs * h_a, 2.0 * n_arcs * h_b
        if verbose:
            print(f"  z0 {nodes_b[0][2]:+.6f}  period {period:.6f}  ds {ds:.4f}")
        if ds < 0.03:
            ds *= 1.4
        guard += 1
        if guard > 500:
            raise RuntimeError("continuation exceeded its step budget")

    # Land exactly on the target period
    frac = (period_prev - period_target) / (period_prev - period)
    nodes_guess = nodes_a + frac * (nodes_b - nodes_a)
    h_guess = h_a + frac * (h_b - h_a)

    def per_res(nodes, h):
        return 2.0 * n_arcs * h - period_target

    def per_row(nodes, h):
        row = np.zeros(3 + 6 * (n_arcs - 1) + 1)
        row[-1] = 2.0 * n_arcs
        return row

    nodes_f, h_f, _ = solve_member(nodes_guess, h_guess, (per_res, per_row))
    state0 = nodes_f[0].copy()
    state0[[1, 3, 5]] = 0.0
    return HaloOrbit(state0, 2.0 * n_arcs * h_f, mu)


def perilune_radius_km(orbit: HaloOrbit, n_samples: int = 4000) -> float:
    """Minimum Moon-centered radius over one period, in kilometers."""
    ts = np.linspace(0.0, orbit.period, n_samples)
    sol = solve_ivp(cr3bp_rhs, (0.0, orbit.period), orbit.state0,
                    args=(orbit.mu,), method="DOP853", rtol=1.0e-12,
                    atol=1.0e-12, t_eval=ts)
    moon = np.array([1.0 - orbit.mu, 0.0, 0.0])
    r = np.linalg.norm(sol.y[:3].T - moon, axis=1)
    return float(r.min() * L_CR3BP_KM)


def mirror_z(orbit: HaloOrbit) -> HaloOrbit:
    """Mirror image across the orbit plane of the primaries.

    Mapping z to -z (and vz to -vz, which is zero at the crossing) turns a
    northern family member into its southern twin and vice versa.
    """
    state = orbit.state0.copy()
    state[2] = -state[2]
    state[5] = -state[5]
    return HaloOrbit(state, orbit.period, orbit.mu)


def save_seed_csv(path, orbit: HaloOrbit) -> None:
    """Write a one-row seed table (canonical units)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("mu,x0,z0,vy0,period\n")
        f.write(f"{float(orbit.mu)!r},{float(orbit.state0[0])!r},"
                f"{float(orbit.state0[2])!r},{float(orbit.state0[4])!r},"
                f"{float(orbit.period)!r}\n")


def load_seed_csv(path) -> HaloOrbit:
    """Read a seed table written by `save_seed_csv`."""
    with open(path, "r", encoding="utf-8") as f:
        f.readline()
        mu, x0, z0, vy0, period = (float(v) for v in f.readline().split(","))
    return HaloOrbit(np.array([x0, 0.0, z0, 0.0, vy0, 0.0]), period, mu)


def bundled_seed() -> HaloOrbit:
    """Load the seed orbit shipped with the package."""
    from importlib import resources

    ref = resources.files("halokeep.data").joinpath(BUNDLED_SEED)
    with resources.as_file(ref) as path:
        return load_seed_csv(path)


def main() -> None:
    """Regenerate the bundled seed orbit table."""
    import pathlib

    target = pathlib.Path(__file__).parent / "data" / BUNDLED_SEED
    orbit = continue_to_period(1.5111, verbose=True)
    # Southern-family convention: the far arc dips below the orbit plane
    ts = np.linspace(0.0, orbit.period, 2001)
    sol = solve_ivp(cr3bp_rhs, (0.0, orbit.period), orbit.state0,
                    args=(orbit.mu,), method="DOP853", rtol=1.0e-12,
                    atol=1.0e-12, t_eval=ts)
    moon = np.array([1.0 - orbit.mu, 0.0, 0.0])
    radii = np.linalg.norm(sol.y[:3].T - moon, axis=1)
    if sol.y[2, np.argmax(radii)] > 0.0:
        orbit = mirror_z(orbit)
    rp = perilune_radius_km(orbit)
    print(f"period {orbit.period:.10f}  perilune {rp:.1f} km  "
          f"jacobi {jacobi_constant(orbit.state0, orbit.mu):.6f}")
    save_seed_csv(target, orbit)
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
