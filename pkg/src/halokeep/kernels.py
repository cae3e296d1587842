"""Compiled numerical core.

Everything on the propagation hot path lives here as numba kernels working in
nondimensional units: perturbing-body evaluation, the force model and its
analytic state Jacobian, path-constraint values/gradients, the augmented slack
dynamics, and an embedded Runge-Kutta 7(8) driver with adaptive step control.

Parameters are passed as two flat tuples so the kernels stay object-free:

``dyn`` (force model)::

    (mu, rm, nmax, cnm, snm, pa_pole, pa_base, pa_rate, pa_phase,
     mu_bodies, eph_kind, eph_radius, eph_rate, eph_phase, eph_p, eph_q,
     tab_t, tab_r, tab_v, tab_n, srp_coeff)

``cons`` (path constraints and tightening)::

    (n_veh, n_con, pair_a, pair_b, fam, bound, wgt, eta, kappa,
     apo_only, t0_h, tn_h)

Constraint family codes: 0 minimum separation, 1 maximum separation,
2 minimum Sun phase angle, 3 maximum Sun phase angle.  ``srp_coeff`` is per
vehicle so truth propagation can carry perturbed reflectance parameters.
State layouts by propagation mode:

* mode 0: concatenated spacecraft states, dim 6*n_veh
* mode 1: mode 0 plus n_con constraint-violation slacks
* mode 2: mode 1 plus per-vehicle 6x6 transition blocks and the slack-row
  sensitivity block, dim 6*n_veh + n_con + 36*n_veh + 6*n_veh*n_con
"""

from __future__ import annotations

import numpy as np
from numba import njit

BODY_EARTH = 0
BODY_SUN = 1

FAM_SEP_MIN = 0
FAM_SEP_MAX = 1
FAM_PHASE_MIN = 2
FAM_PHASE_MAX = 3

_COS_CLAMP = 1.0 - 1.0e-12

# Fehlberg 7(8) embedded pair, 13 stages.  The 8th-order weights are used to
# advance the solution; the error estimate is h*(41/840)*(k0 + k10 - k11 - k12).
_RK_C = np.array([0.0, 2/27, 1/9, 1/6, 5/12, 1/2, 5/6, 1/6, 2/3, 1/3, 1.0, 0.0, 1.0])
_RK_A = np.zeros((13, 12))
_RK_A[1, 0] = 2/27
_RK_A[2, :2] = (1/36, 1/12)
_RK_A[3, :3] = (1/24, 0.0, 1/8)
_RK_A[4, :4] = (5/12, 0.0, -25/16, 25/16)
_RK_A[5, :5] = (1/20, 0.0, 0.0, 1/4, 1/5)
_RK_A[6, :6] = (-25/108, 0.0, 0.0, 125/108, -65/27, 125/54)
_RK_A[7, :7] = (31/300, 0.0, 0.0, 0.0, 61/225, -2/9, 13/900)
_RK_A[8, :8] = (2.0, 0.0, 0.0, -53/6, 704/45, -107/9, 67/90, 3.0)
_RK_A[9, :9] = (-91/108, 0.0, 0.0, 23/108, -976/135, 311/54, -19/60, 17/6, -1/12)
_RK_A[10, :10] = (2383/4100, 0.0, 0.0, -341/164, 4496/1025, -301/82, 2133/4100,
                  45/82, 45/164, 18/41)
_RK_A[11, :11] = (3/205, 0.0, 0.0, 0.0, 0.0, -6/41, -3/205, -3/41, 3/41, 6/41, 0.0)
_RK_A[12, :12] = (-1777/4100, 0.0, 0.0, -341/164, 4496/1025, -289/82, 2193/4100,
                  51/82, 33/164, 12/41, 0.0, 1.0)
_RK_B8 = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 34/105, 9/35, 9/35, 9/280, 9/280,
                   0.0, 41/840, 41/840])


@njit(cache=True, nogil=True)
def _searchsorted_left(arr, n, t):
    """Index of the segment containing t in arr[:n] (clamped)."""
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if arr[mid] <= t:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def body_pos_vel(ib, t, dyn, r_out, v_out):
    """Perturbing-body state in nondimensional units."""
    (mu, rm, nmax, cnm, snm, pa_pole, pa_base, pa_rate, pa_phase,
     mu_bodies, eph_kind, eph_radius, eph_rate, eph_phase, eph_p, eph_q,
     tab_t, tab_r, tab_v, tab_n, srp_coeff) = dyn
    if eph_kind == 0:
        ang = eph_rate[ib] * t + eph_phase[ib]
        c = np.cos(ang)
        s = np.sin(ang)
        a = eph_radius[ib]
        w = eph_rate[ib]
        for k in range(3):
            r_out[k] = a * (c * eph_p[ib, k] + s * eph_q[ib, k])
            v_out[k] = a * w * (-s * eph_p[ib, k] + c * eph_q[ib, k])
    else:
        n = tab_n[ib]
        i = _searchsorted_left(tab_t[ib], n, t)
        h = tab_t[ib, i + 1] - tab_t[ib, i]
        s = (t - tab_t[ib, i]) / h
        h00 = (2.0 * s - 3.0) * s * s + 1.0
        h10 = ((s - 2.0) * s + 1.0) * s
        h01 = (3.0 - 2.0 * s) * s * s
        h11 = (s - 1.0) * s * s
        d00 = (6.0 * s - 6.0) * s / h
        d10 = (3.0 * s - 4.0) * s / h + 1.0 / h
        d01 = (6.0 - 6.0 * s) * s / h
        d11 = (3.0 * s - 2.0) * s / h
        for k in range(3):
            r0 = tab_r[ib, i, k]
            r1 = tab_r[ib, i + 1, k]
            v0 = tab_v[ib, i, k]
            v1 = tab_v[ib, i + 1, k]
            r_out[k] = h00 * r0 + (h10 * h) * v0 + h01 * r1 + (h11 * h) * v1
            v_out[k] = d00 * r0 + (d10 * h) * v0 + d01 * r1 + (d11 * h) * v1


@njit(cache=True, nogil=True)
def pa_rotation(t, dyn, rot_out):
    """Principal-axes to inertial rotation at time t (3x3 into rot_out)."""
    (mu, rm, nmax, cnm, snm, pa_pole, pa_base, pa_rate, pa_phase,
     mu_bodies, eph_kind, eph_radius, eph_rate, eph_phase, eph_p, eph_q,
     tab_t, tab_r, tab_v, tab_n, srp_coeff) = dyn
    ang = pa_rate * t + pa_phase
    c = np.cos(ang)
    s = np.sin(ang)
    kx, ky, kz = pa_pole[0], pa_pole[1], pa_pole[2]
    rod = np.empty((3, 3))
    rod[0, 0] = c + (1.0 - c) * kx * kx
    rod[0, 1] = (1.0 - c) * kx * ky - s * kz
    rod[0, 2] = (1.0 - c) * kx * kz + s * ky
    rod[1, 0] = (1.0 - c) * ky * kx + s * kz
    rod[1, 1] = c + (1.0 - c) * ky * ky
    rod[1, 2] = (1.0 - c) * ky * kz - s * kx
    rod[2, 0] = (1.0 - c) * kz * kx - s * ky
    rod[2, 1] = (1.0 - c) * kz * ky + s * kx
    rod[2, 2] = c + (1.0 - c) * kz * kz
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += rod[i, k] * pa_base[k, j]
            rot_out[i, j] = acc


@njit(cache=True, nogil=True)
def _vw_recursion(x, y, z, rm, nlim, v, w):
    """Unnormalized V/W solid-harmonic functions through degree nlim."""
    r2 = x * x + y * y + z * z
    xf = x * rm / r2
    yf = y * rm / r2
    zf = z * rm / r2
    rf = rm * rm / r2
    v[0, 0] = rm / np.sqrt(r2)
    w[0, 0] = 0.0
    for m in range(1, nlim + 1):
        v[m, m] = (2 * m - 1) * (xf * v[m - 1, m - 1] - yf * w[m - 1, m - 1])
        w[m, m] = (2 * m - 1) * (xf * w[m - 1, m - 1] + yf * v[m - 1, m - 1])
    for m in range(nlim + 1):
        for n in range(m + 1, nlim + 1):
            v[n, m] = (2 * n - 1) / (n - m) * zf * v[n - 1, m]
            w[n, m] = (2 * n - 1) / (n - m) * zf * w[n - 1, m]
            if n - m > 1:
                v[n, m] -= (n + m - 1) / (n - m) * rf * v[n - 2, m]
                w[n, m] -= (n + m - 1) / (n - m) * rf * w[n - 2, m]


@njit(cache=True, nogil=True)
def _dv_dx(n, m, v, w, rm):
    """(dV/dx, dW/dx) of V_nm using level-(n+1) values."""
    if m == 0:
        return -v[n + 1, 1] / rm, 0.0
    f = (n - m + 2.0) * (n - m + 1.0)
    dv = 0.5 * (-v[n + 1, m + 1] + f * v[n + 1, m - 1]) / rm
    dw = 0.5 * (-w[n + 1, m + 1] + f * w[n + 1, m - 1]) / rm
    return dv, dw


@njit(cache=True, nogil=True)
def _dv_dy(n, m, v, w, rm):
    if m == 0:
        return -w[n + 1, 1] / rm, 0.0
    f = (n - m + 2.0) * (n - m + 1.0)
    dv = 0.5 * (-w[n + 1, m + 1] - f * w[n + 1, m - 1]) / rm
    dw = 0.5 * (v[n + 1, m + 1] + f * v[n + 1, m - 1]) / rm
    return dv, dw


@njit(cache=True, nogil=True)
def _dv_dz(n, m, v, w, rm):
    f = n - m + 1.0
    return -f * v[n + 1, m] / rm, -f * w[n + 1, m] / rm


@njit(cache=True, nogil=True)
def sh_accel_grad(r_pa, mu, rm, nmax, cnm, snm, want_grad, a_out, g_out):
    """Spherical-harmonic acceleration (and optionally its position gradient)
    beyond the point mass, in the principal-axes frame."""
    nlim = nmax + 2 if want_grad else nmax + 1
    v = np.zeros((nlim + 1, nlim + 1))
    w = np.zeros((nlim + 1, nlim + 1))
    _vw_recursion(r_pa[0], r_pa[1], r_pa[2], rm, nlim, v, w)
    fac = mu / (rm * rm)
    ax = 0.0
    ay = 0.0
    az = 0.0
    for i in range(3):
        a_out[i] = 0.0
        if want_grad:
            for j in range(3):
                g_out[i, j] = 0.0
    for n in range(2, nmax + 1):
        for m in range(n + 1):
            c = cnm[n, m]
            s = snm[n, m]
            if c == 0.0 and s == 0.0:
                continue
            if m == 0:
                ax += fac * (-c * v[n + 1, 1])
                ay += fac * (-c * w[n + 1, 1])
                az += fac * (n + 1.0) * (-c * v[n + 1, 0])
            else:
                f = (n - m + 2.0) * (n - m + 1.0)
                ax += fac * 0.5 * ((-c * v[n + 1, m + 1] - s * w[n + 1, m + 1])
                                   + f * (c * v[n + 1, m - 1] + s * w[n + 1, m - 1]))
                ay += fac * 0.5 * ((-c * w[n + 1, m + 1] + s * v[n + 1, m + 1])
                                   + f * (-c * w[n + 1, m - 1] + s * v[n + 1, m - 1]))
                az += fac * (n - m + 1.0) * (-c * v[n + 1, m] - s * w[n + 1, m])
            if want_grad:
                # Differentiate each level-(n+1) term again via the same identities.
                for axis in range(3):
                    if m == 0:
                        if axis == 0:
                            dv1, dw1 = _dv_dx(n + 1, 1, v, w, rm)
                            dv0, dw0 = _dv_dx(n + 1, 0, v, w, rm)
                        elif axis == 1:
                            dv1, dw1 = _dv_dy(n + 1, 1, v, w, rm)
                            dv0, dw0 = _dv_dy(n + 1, 0, v, w, rm)
                        else:
                            dv1, dw1 = _dv_dz(n + 1, 1, v, w, rm)
                            dv0, dw0 = _dv_dz(n + 1, 0, v, w, rm)
                        g_out[0, axis] += fac * (-c * dv1)
                        g_out[1, axis] += fac * (-c * dw1)
                        g_out[2, axis] += fac * (n + 1.0) * (-c * dv0)
                    else:
                        f = (n - m + 2.0) * (n - m + 1.0)
                        if axis == 0:
                            dvp, dwp = _dv_dx(n + 1, m + 1, v, w, rm)
                            dvm, dwm = _dv_dx(n + 1, m - 1, v, w, rm)
                            dvc, dwc = _dv_dx(n + 1, m, v, w, rm)
                        elif axis == 1:
                            dvp, dwp = _dv_dy(n + 1, m + 1, v, w, rm)
                            dvm, dwm = _dv_dy(n + 1, m - 1, v, w, rm)
                            dvc, dwc = _dv_dy(n + 1, m, v, w, rm)
                        else:
                            dvp, dwp = _dv_dz(n + 1, m + 1, v, w, rm)
                            dvm, dwm = _dv_dz(n + 1, m - 1, v, w, rm)
                            dvc, dwc = _dv_dz(n + 1, m, v, w, rm)
                        g_out[0, axis] += fac * 0.5 * ((-c * dvp - s * dwp)
                                                       + f * (c * dvm + s * dwm))
                        g_out[1, axis] += fac * 0.5 * ((-c * dwp + s * dvp)
                                                       + f * (-c * dwm + s * dvm))
                        g_out[2, axis] += fac * (n - m + 1.0) * (-c * dvc - s * dwc)
    a_out[0] = ax
    a_out[1] = ay
    a_out[2] = az


@njit(cache=True, nogil=True)
def accel_vehicle(t, r, iv, dyn, want_grad, a_out, g_out):
    """Total inertial acceleration of vehicle iv at position r (nondim), and
    optionally the 3x3 gradient wrt position."""
    (mu, rm, nmax, cnm, snm, pa_pole, pa_base, pa_rate, pa_phase,
     mu_bodies, eph_kind, eph_radius, eph_rate, eph_phase, eph_p, eph_q,
     tab_t, tab_r, tab_v, tab_n, srp_coeff) = dyn
    for i in range(3):
        a_out[i] = 0.0
        if want_grad:
            for j in range(3):
                g_out[i, j] = 0.0
    rn2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    rn = np.sqrt(rn2)
    # Central point mass
    if mu != 0.0:
        rn3 = rn2 * rn
        for i in range(3):
            a_out[i] -= mu * r[i] / rn3
        if want_grad:
            rn5 = rn3 * rn2
            for i in range(3):
                for j in range(3):
                    g_out[i, j] += mu * 3.0 * r[i] * r[j] / rn5
                g_out[i, i] -= mu / rn3
    # Harmonics beyond the point mass, evaluated in the principal-axes frame
    if nmax >= 2 and mu != 0.0:
        rot = np.empty((3, 3))
        pa_rotation(t, dyn, rot)
        r_pa = np.empty(3)
        for i in range(3):
            r_pa[i] = rot[0, i] * r[0] + rot[1, i] * r[1] + rot[2, i] * r[2]
        a_pa = np.empty(3)
        g_pa = np.empty((3, 3))
        sh_accel_grad(r_pa, mu, rm, nmax, cnm, snm, want_grad, a_pa, g_pa)
        for i in range(3):
            acc = 0.0
            for k in range(3):
                acc += rot[i, k] * a_pa[k]
            a_out[i] += acc
        if want_grad:
            tmp = np.empty((3, 3))
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += rot[i, k] * g_pa[k, j]
                    tmp[i, j] = acc
            for i in range(3):
                for j in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += tmp[i, k] * rot[j, k]
                    g_out[i, j] += acc
    # Third bodies and solar radiation pressure
    rb = np.empty(3)
    vb = np.empty(3)
    d = np.empty(3)
    for ib in range(2):
        mub = mu_bodies[ib]
        need_srp = ib == BODY_SUN and srp_coeff[iv] != 0.0
        if mub == 0.0 and not need_srp:
            continue
        body_pos_vel(ib, t, dyn, rb, vb)
        for i in range(3):
            d[i] = r[i] - rb[i]
        dn2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        dn = np.sqrt(dn2)
        dn3 = dn2 * dn
        dn5 = dn3 * dn2
        if mub != 0.0:
            bn2 = rb[0] * rb[0] + rb[1] * rb[1] + rb[2] * rb[2]
            bn3 = bn2 * np.sqrt(bn2)
            for i in range(3):
                a_out[i] -= mub * (d[i] / dn3 + rb[i] / bn3)
            if want_grad:
                for i in range(3):
                    for j in range(3):
                        g_out[i, j] += mub * 3.0 * d[i] * d[j] / dn5
                    g_out[i, i] -= mub / dn3
        if need_srp:
            k_srp = srp_coeff[iv]
            for i in range(3):
                a_out[i] += k_srp * d[i] / dn3
            if want_grad:
                for i in range(3):
                    for j in range(3):
                        g_out[i, j] -= k_srp * 3.0 * d[i] * d[j] / dn5
                    g_out[i, i] += k_srp / dn3


@njit(cache=True, nogil=True)
def zeta_kernel(t, t0, tn, eta, kappa):
    """Constraint-tightening margin at time t for a horizon [t0, tn]."""
    if eta <= 0.0 or tn <= t0:
        return 0.0
    tr = (t - t0) / (tn - t0)
    if tr < 0.0:
        tr = 0.0
    elif tr > 1.0:
        tr = 1.0
    # Equivalent to eta - 1/(kappa*tr + 1/eta), but exactly zero at the
    # horizon start and never negative in floating point.
    return eta * eta * kappa * tr / (eta * kappa * tr + 1.0)


@njit(cache=True, nogil=True)
def constraint_value_grad(t, x, ell, cons, dyn, want_grad, grad_out):
    """Raw value of path constraint ell at stacked state x; optionally the
    gradient row wrt the full stacked state (zeroed then filled)."""
    (n_veh, n_con, pair_a, pair_b, fam, bound, wgt, eta, kappa,
     apo_only, t0_h, tn_h) = cons
    ia = pair_a[ell]
    ib = pair_b[ell]
    fm = fam[ell]
    if want_grad:
        for k in range(6 * n_veh):
            grad_out[k] = 0.0
    dx = x[6 * ia + 0] - x[6 * ib + 0]
    dy = x[6 * ia + 1] - x[6 * ib + 1]
    dz = x[6 * ia + 2] - x[6 * ib + 2]
    dn = np.sqrt(dx * dx + dy * dy + dz * dz)
    if fm == FAM_SEP_MIN or fm == FAM_SEP_MAX:
        sign = 1.0 if fm == FAM_SEP_MAX else -1.0
        g = sign * (dn - bound[ell])
        if want_grad and dn > 0.0:
            grad_out[6 * ia + 0] = sign * dx / dn
            grad_out[6 * ia + 1] = sign * dy / dn
            grad_out[6 * ia + 2] = sign * dz / dn
            grad_out[6 * ib + 0] = -sign * dx / dn
            grad_out[6 * ib + 1] = -sign * dy / dn
            grad_out[6 * ib + 2] = -sign * dz / dn
        return g
    # Sun phase angle of the (ia -> ib) baseline seen from vehicle ia
    rs = np.empty(3)
    vs = np.empty(3)
    body_pos_vel(BODY_SUN, t, dyn, rs, vs)
    lab = np.empty(3)
    las = np.empty(3)
    for k in range(3):
        lab[k] = x[6 * ib + k] - x[6 * ia + k]
        las[k] = rs[k] - x[6 * ia + k]
    nab = np.sqrt(lab[0] ** 2 + lab[1] ** 2 + lab[2] ** 2)
    nas = np.sqrt(las[0] ** 2 + las[1] ** 2 + las[2] ** 2)
    for k in range(3):
        lab[k] /= nab
        las[k] /= nas
    c = lab[0] * las[0] + lab[1] * las[1] + lab[2] * las[2]
    if c > _COS_CLAMP:
        c = _COS_CLAMP
    elif c < -_COS_CLAMP:
        c = -_COS_CLAMP
    phi = np.arccos(c)
    sign = 1.0 if fm == FAM_PHASE_MAX else -1.0
    g = sign * (phi - bound[ell])
    if want_grad:
        dphi_dc = -1.0 / np.sqrt(1.0 - c * c)
        for k in range(3):
            dc_db = (las[k] - c * lab[k]) / nab
            dc_da = -(las[k] - c * lab[k]) / nab - (lab[k] - c * las[k]) / nas
            grad_out[6 * ib + k] = sign * dphi_dc * dc_db
            grad_out[6 * ia + k] = sign * dphi_dc * dc_da
    return g


@njit(cache=True, nogil=True)
def constraint_tilde(t, x, ell, cons, dyn, seg_apo, want_grad, grad_out):
    """Tightened, window-gated constraint value (NaN-free: inactive -> -inf
    is represented by returning a large negative number)."""
    (n_veh, n_con, pair_a, pair_b, fam, bound, wgt, eta, kappa,
     apo_only, t0_h, tn_h) = cons
    if apo_only[ell] == 1 and seg_apo == 0:
        if want_grad:
            for k in range(6 * n_veh):
                grad_out[k] = 0.0
        return -1.0e30
    g = constraint_value_grad(t, x, ell, cons, dyn, want_grad, grad_out)
    return g + zeta_kernel(t, t0_h, tn_h, eta[ell], kappa[ell])


@njit(cache=True, nogil=True)
def rhs(mode, t, y, dyn, cons, seg_apo, out):
    """Time derivative of the propagation state for the given mode."""
    (n_veh, n_con, pair_a, pair_b, fam, bound, wgt, eta, kappa,
     apo_only, t0_h, tn_h) = cons
    nx = 6 * n_veh
    a = np.empty(3)
    g3 = np.empty((3, 3))
    want_grad = mode == 2
    jac = np.empty((n_veh, 3, 3))
    for iv in range(n_veh):
        r = y[6 * iv: 6 * iv + 3]
        accel_vehicle(t, r, iv, dyn, want_grad, a, g3)
        for k in range(3):
            out[6 * iv + k] = y[6 * iv + 3 + k]
            out[6 * iv + 3 + k] = a[k]
        if want_grad:
            for i in range(3):
                for j in range(3):
                    jac[iv, i, j] = g3[i, j]
    if mode == 0:
        return
    # Slack growth: violation of the tightened constraint, squared
    grad = np.empty(nx)
    for ell in range(n_con):
        gt = constraint_tilde(t, y[:nx], ell, cons, dyn, seg_apo, want_grad, grad)
        viol = gt if gt > 0.0 else 0.0
        out[nx + ell] = wgt[ell] * viol * viol
        if want_grad and viol > 0.0:
            for k in range(nx):
                grad[k] *= 2.0 * wgt[ell] * viol
        elif want_grad:
            for k in range(nx):
                grad[k] = 0.0
        if want_grad:
            # Slack sensitivity row: d(ydot_ell)/dZ0 = row . Phi_x(t)
            base_phi = nx + n_con
            base_yx = base_phi + 36 * n_veh
            for iv in range(n_veh):
                for j in range(6):
                    acc = 0.0
                    for i in range(6):
                        if grad[6 * iv + i] != 0.0:
                            acc += grad[6 * iv + i] * y[base_phi + 36 * iv + 6 * i + j]
                    out[base_yx + 6 * n_veh * ell + 6 * iv + j] = acc
    if mode == 1:
        return
    # Per-vehicle transition blocks: dPhi = A Phi with A = [[0, I], [G, 0]]
    base_phi = nx + n_con
    for iv in range(n_veh):
        b = base_phi + 36 * iv
        for j in range(6):
            # Rows 0..2: velocity rows of Phi
            out[b + 0 * 6 + j] = y[b + 3 * 6 + j]
            out[b + 1 * 6 + j] = y[b + 4 * 6 + j]
            out[b + 2 * 6 + j] = y[b + 5 * 6 + j]
            for i in range(3):
                acc = 0.0
                for k in range(3):
                    acc += jac[iv, i, k] * y[b + k * 6 + j]
                out[b + (3 + i) * 6 + j] = acc


@njit(cache=True, nogil=True)
def rk78_step(mode, t, y, h, dyn, cons, seg_apo, work):
    """One embedded RK7(8) step.  Returns (y_new, err_raw) where err_raw is
    the unscaled error vector in work[13]."""
    nd = y.shape[0]
    for i in range(nd):
        work[13, i] = y[i]
    rhs(mode, t, y, dyn, cons, seg_apo, work[0])
    for st in range(1, 13):
        for i in range(nd):
            acc = 0.0
            for j in range(st):
                aij = _RK_A[st, j]
                if aij != 0.0:
                    acc += aij * work[j, i]
            work[13, i] = y[i] + h * acc
        rhs(mode, t + _RK_C[st] * h, work[13], dyn, cons, seg_apo, work[st])
    ynew = np.empty(nd)
    for i in range(nd):
        acc = 0.0
        for j in range(13):
            bj = _RK_B8[j]
            if bj != 0.0:
                acc += bj * work[j, i]
        ynew[i] = y[i] + h * acc
        work[13, i] = h * (41.0 / 840.0) * (work[0, i] + work[10, i]
                                            - work[11, i] - work[12, i])
    return ynew


@njit(cache=True, nogil=True)
def propagate_adaptive(mode, t0, t1, y0, rtol, atol, dyn, cons, seg_apo):
    """Adaptive RK7(8) propagation from t0 to t1.

    Returns (y, status, nsteps); status 0 on success, 1 if the step size
    underflowed, 2 if the step budget was exhausted.
    """
    nd = y0.shape[0]
    y = y0.copy()
    if t1 == t0:
        return y, 0, 0
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    h = direction * min(1.0e-2, span)
    hmin = span * 1.0e-14
    t = t0
    work = np.empty((14, nd))
    nsteps = 0
    max_steps = 2_000_000
    while direction * (t1 - t) > 0.0:
        if direction * (t + h - t1) > 0.0:
            h = t1 - t
        ynew = rk78_step(mode, t, y, h, dyn, cons, seg_apo, work)
        # Scaled RMS error
        err = 0.0
        for i in range(nd):
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            e = work[13, i] / sc
            err += e * e
        err = np.sqrt(err / nd)
        if err <= 1.0 or abs(h) <= hmin:
            t = t + h
            y = ynew
        nsteps += 1
        if nsteps >= max_steps:
            return y, 2, nsteps
        if err > 0.0:
            fac = 0.9 * err ** (-1.0 / 8.0)
            if fac < 0.2:
                fac = 0.2
            elif fac > 5.0:
                fac = 5.0
        else:
            fac = 5.0
        h = h * fac
        if abs(h) < hmin:
            h = direction * hmin
    return y, 0, nsteps


@njit(cache=True, nogil=True)
def propagate_sequence(mode, times, y0, rtol, atol, dyn, cons, seg_apo):
    """Propagate through a strictly ordered time sequence, returning the state
    at every entry (times[0] is y0's epoch)."""
    npts = times.shape[0]
    nd = y0.shape[0]
    outs = np.empty((npts, nd))
    outs[0] = y0
    y = y0.copy()
    status = 0
    for k in range(1, npts):
        y, st, _ = propagate_adaptive(mode, times[k - 1], times[k], y,
                                      rtol, atol, dyn, cons, seg_apo)
        if st != 0:
            status = st
        outs[k] = y
    return outs, status


@njit(cache=True, nogil=True)
def true_anomaly_rv(r, v, mu):
    """Osculating true anomaly in [0, 2pi) from an inertial state."""
    rn = np.sqrt(r[0] ** 2 + r[1] ** 2 + r[2] ** 2)
    hx = r[1] * v[2] - r[2] * v[1]
    hy = r[2] * v[0] - r[0] * v[2]
    hz = r[0] * v[1] - r[1] * v[0]
    h2 = hx * hx + hy * hy + hz * hz
    h = np.sqrt(h2)
    vr = (r[0] * v[0] + r[1] * v[1] + r[2] * v[2]) / rn
    nu = np.arctan2(h * vr, h2 / rn - mu)
    if nu < 0.0:
        nu += 2.0 * np.pi
    return nu
