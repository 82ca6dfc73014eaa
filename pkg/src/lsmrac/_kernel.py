"""Flat-state closed-loop integrator, JIT-compiled with numba.

State layout: [plant; model output; prefilter; u-filters; y-filters; lag
channels; parameter blocks; packed covariance blocks; packed regressor-energy
blocks]. Covariance blocks are stored as upper triangles, so symmetry is
structural rather than enforced. The right-hand side mirrors the reference
modules in ``dynamics`` and ``controller`` operation by operation; a
consistency test keeps the two paths honest.
"""

import numpy as np
from numba import njit

LAW_LS = 0
LAW_MMRAC = 1
LAW_GRADIENT = 2

TERM_CONST = 0
TERM_SINE = 1
TERM_SQUARE = 2


@njit(cache=True, nogil=True)
def _rhs(t, x, dx, u_out,
         Ap, Bp, Cp, am, bm, pf_on, pf_poles, pf_zero,
         term_ch, term_kind, term_a, term_w, term_p,
         law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
         Lam, g, info_on, m, nu, n_p, L, base,
         o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
         th_off, rp_off,
         rraw, rf, y, e0, ch, xib, omb, w, v):
    # reference signal
    for i in range(m):
        rraw[i] = 0.0
    for q in range(term_ch.size):
        c = term_ch[q]
        kd = term_kind[q]
        if kd == TERM_CONST:
            rraw[c] += term_a[q]
        elif kd == TERM_SINE:
            rraw[c] += term_a[q] * np.sin(term_w[q] * t + term_p[q])
        else:
            sv = np.sin(term_w[q] * t)
            if sv > 0.0:
                rraw[c] += term_a[q]
            elif sv < 0.0:
                rraw[c] -= term_a[q]

    # reference prefilter: unit feedthrough plus residue state
    if pf_on == 1:
        for i in range(m):
            xf = x[o_xf + i]
            rf[i] = rraw[i] + xf
            dx[o_xf + i] = -pf_poles[i] * xf + (pf_zero - pf_poles[i]) * rraw[i]
    else:
        for i in range(m):
            rf[i] = rraw[i]

    # plant output and tracking error
    for i in range(m):
        s = 0.0
        for jj in range(n_p):
            s += Cp[i, jj] * x[o_xp + jj]
        y[i] = s
        e0[i] = s - x[o_ym + i]

    # shared regressor channels [v1; v2; y; r; u_2..u_m]
    k = nu - 1
    nv = m * k
    for jj in range(nv):
        ch[jj] = x[o_v1 + jj]
        ch[nv + jj] = x[o_v2 + jj]
    for i in range(m):
        ch[2 * nv + i] = y[i]
        ch[2 * nv + m + i] = rf[i]

    # leakage switch on the full parameter norm
    sig = 0.0
    if sigma_on == 1:
        s2 = 0.0
        n_th = th_off[m]
        for jj in range(n_th):
            s2 += x[o_th + jj] * x[o_th + jj]
        if np.sqrt(s2) > sigma_m0:
            sig = sigma_max

    # per-output blocks, last output first: u_i feeds only lower blocks
    for b in range(m - 1, -1, -1):
        Nb = L - b
        to = o_th + th_off[b]
        ro = o_r + rp_off[b]
        for aa in range(Nb):
            ia = aa if aa < base else aa + b
            xib[aa] = x[o_xi + ia]
            omb[aa] = ch[ia]
            w[aa] = 0.0

        # w = R_b @ regressor (packed symmetric matvec)
        p = ro
        if law == LAW_GRADIENT:
            for rr in range(Nb):
                for cc in range(rr, Nb):
                    val = x[p]
                    w[rr] += val * omb[cc]
                    if cc != rr:
                        w[cc] += val * omb[rr]
                    p += 1
        else:
            for rr in range(Nb):
                for cc in range(rr, Nb):
                    val = x[p]
                    w[rr] += val * xib[cc]
                    if cc != rr:
                        w[cc] += val * xib[rr]
                    p += 1

        coef = -sign_d[b] * e0[b]
        if law == LAW_LS:
            coef *= gamma
        for aa in range(Nb):
            dx[to + aa] = coef * w[aa]

        if sig > 0.0:
            gscale = gamma if law == LAW_LS else 1.0
            for aa in range(Nb):
                v[aa] = 0.0
            p = ro
            for rr in range(Nb):
                for cc in range(rr, Nb):
                    val = x[p]
                    v[rr] += val * x[to + cc]
                    if cc != rr:
                        v[cc] += val * x[to + rr]
                    p += 1
            for aa in range(Nb):
                dx[to + aa] -= sig * gscale * v[aa]

        # control entry for this output
        acc = 0.0
        for aa in range(Nb):
            acc += omb[aa] * x[to + aa]
        if law != LAW_GRADIENT:
            for aa in range(Nb):
                acc += xib[aa] * dx[to + aa]
        u_out[b] = acc
        if b >= 1:
            ch[base + b - 1] = acc

        # covariance derivative
        p = ro
        if law == LAW_LS:
            for rr in range(Nb):
                for cc in range(rr, Nb):
                    dx[p] = -w[rr] * w[cc]
                    p += 1
        else:
            for rr in range(Nb):
                for cc in range(rr, Nb):
                    dx[p] = 0.0
                    p += 1

        # accumulated regressor energy (diagnostic integral)
        if info_on == 1:
            p = o_j + rp_off[b]
            for rr in range(Nb):
                xr = xib[rr]
                for cc in range(rr, Nb):
                    dx[p] = xr * xib[cc]
                    p += 1

    # plant state
    for i in range(n_p):
        acc = 0.0
        for jj in range(n_p):
            acc += Ap[i, jj] * x[o_xp + jj]
        for jj in range(m):
            acc += Bp[i, jj] * u_out[jj]
        dx[o_xp + i] = acc

    # reference model (internal pole per channel)
    for i in range(m):
        dx[o_ym + i] = -am[i] * x[o_ym + i] + bm[i] * rf[i]

    # state-variable filters
    for i in range(m):
        ov1 = o_v1 + i * k
        ov2 = o_v2 + i * k
        for aa in range(k):
            a1 = 0.0
            a2 = 0.0
            for cc in range(k):
                a1 += Lam[aa, cc] * x[ov1 + cc]
                a2 += Lam[aa, cc] * x[ov2 + cc]
            dx[ov1 + aa] = a1 + g[aa] * u_out[i]
            dx[ov2 + aa] = a2 + g[aa] * y[i]

    # lag filter on the shared channels
    for jj in range(L):
        dx[o_xi + jj] = -ell0 * x[o_xi + jj] + ch[jj]


@njit(cache=True, nogil=True)
def run_kernel(x0, h, n_steps, stride, div_limit,
               Ap, Bp, Cp, am, bm, pf_on, pf_poles, pf_zero,
               term_ch, term_kind, term_a, term_w, term_p,
               law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
               Lam, g, info_on, m, nu, n_p, L, base,
               o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
               th_off, rp_off):
    """Integrate the closed loop with fixed-step RK4 and record samples.

    Returns (trec, rec, urec, n_filled, status, t_fail); status 0 means the
    run completed, 1 means a state left the divergence envelope (partial
    records up to n_filled remain valid).
    """
    dim = x0.size
    x = x0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    xt = np.empty(dim)
    u1 = np.empty(m)
    ut = np.empty(m)
    rraw = np.empty(m)
    rf = np.empty(m)
    y = np.empty(m)
    e0 = np.empty(m)
    ch = np.empty(L)
    xib = np.empty(L)
    omb = np.empty(L)
    w = np.empty(L)
    v = np.empty(L)

    n_rec = n_steps // stride + 1
    trec = np.empty(n_rec)
    rec = np.empty((n_rec, dim))
    urec = np.empty((n_rec, m))
    irec = 0
    status = 0
    t_fail = 0.0

    for k in range(n_steps):
        t = k * h
        _rhs(t, x, k1, u1, Ap, Bp, Cp, am, bm, pf_on, pf_poles, pf_zero,
             term_ch, term_kind, term_a, term_w, term_p,
             law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
             Lam, g, info_on, m, nu, n_p, L, base,
             o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
             th_off, rp_off, rraw, rf, y, e0, ch, xib, omb, w, v)
        if k % stride == 0:
            trec[irec] = t
            rec[irec, :] = x
            urec[irec, :] = u1
            irec += 1
        for jj in range(dim):
            xt[jj] = x[jj] + 0.5 * h * k1[jj]
        _rhs(t + 0.5 * h, xt, k2, ut, Ap, Bp, Cp, am, bm, pf_on, pf_poles,
             pf_zero, term_ch, term_kind, term_a, term_w, term_p,
             law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
             Lam, g, info_on, m, nu, n_p, L, base,
             o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
             th_off, rp_off, rraw, rf, y, e0, ch, xib, omb, w, v)
        for jj in range(dim):
            xt[jj] = x[jj] + 0.5 * h * k2[jj]
        _rhs(t + 0.5 * h, xt, k3, ut, Ap, Bp, Cp, am, bm, pf_on, pf_poles,
             pf_zero, term_ch, term_kind, term_a, term_w, term_p,
             law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
             Lam, g, info_on, m, nu, n_p, L, base,
             o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
             th_off, rp_off, rraw, rf, y, e0, ch, xib, omb, w, v)
        for jj in range(dim):
            xt[jj] = x[jj] + h * k3[jj]
        _rhs(t + h, xt, k4, ut, Ap, Bp, Cp, am, bm, pf_on, pf_poles, pf_zero,
             term_ch, term_kind, term_a, term_w, term_p,
             law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
             Lam, g, info_on, m, nu, n_p, L, base,
             o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
             th_off, rp_off, rraw, rf, y, e0, ch, xib, omb, w, v)
        sixth = h / 6.0
        for jj in range(dim):
            x[jj] += sixth * (k1[jj] + 2.0 * k2[jj] + 2.0 * k3[jj] + k4[jj])

        bad = False
        for jj in range(dim):
            xv = x[jj]
            if xv != xv or xv > div_limit or xv < -div_limit:
                bad = True
                break
        if bad:
            status = 1
            t_fail = (k + 1) * h
            return trec, rec, urec, irec, status, t_fail

    _rhs(n_steps * h, x, k1, u1, Ap, Bp, Cp, am, bm, pf_on, pf_poles, pf_zero,
         term_ch, term_kind, term_a, term_w, term_p,
         law, ell0, gamma, sign_d, sigma_on, sigma_max, sigma_m0,
         Lam, g, info_on, m, nu, n_p, L, base,
         o_xp, o_ym, o_xf, o_v1, o_v2, o_xi, o_th, o_r, o_j,
         th_off, rp_off, rraw, rf, y, e0, ch, xib, omb, w, v)
    trec[irec] = n_steps * h
    rec[irec, :] = x
    urec[irec, :] = u1
    irec += 1
    return trec, rec, urec, irec, status, t_fail
