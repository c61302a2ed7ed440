"""Compiled batched simulators for the reduced-order hybrid models.

Each kernel integrates the six-state hybrid (motor current, motor angle,
motor speed, controller integral, rail position, rail velocity) with
classic RK4 at a fixed substep, one batch member per candidate fault
vector, and records the seven output channels on the coarse grid. The
formulas mirror the reference plant exactly on the plant side (actuator,
contact, stops, faults); the rail chain is replaced by the surrogate
force laws.

Unlike the full plant, the hybrid has no stiff segment modes (the rail
mass is two orders heavier than one segment), so an explicit integrator
at 1 ms is stable across the whole fault-parameter search box.

Plant scalars arrive as a flat float64 array with the PP_* layout below;
fault vectors as rows (gap_left, gap_right, b_extra, sigma_obs, x_obs)
holding the values after fault application (gaps are totals)."""

import math

import numpy as np
from numba import njit

PP_R, PP_L, PP_KT, PP_KE, PP_JM, PP_BM, PP_KP, PP_KI, PP_VSAT = range(9)
PP_CCAM, PP_RODX0, PP_KC, PP_DC, PP_EPS, PP_XMIN, PP_XMAX, PP_KSTOP, PP_WOBS = range(9, 18)
N_PP = 18

PENALTY = 1e9


@njit(cache=True)
def _interp_ref(t, knots_t, knots_w):
    n = knots_t.shape[0]
    if t <= knots_t[0]:
        return knots_w[0]
    if t >= knots_t[n - 1]:
        return knots_w[n - 1]
    j = np.searchsorted(knots_t, t)
    # knots_t[j-1] < t <= knots_t[j]
    t0, t1 = knots_t[j - 1], knots_t[j]
    w0, w1 = knots_w[j - 1], knots_w[j]
    return w0 + (w1 - w0) * (t - t0) / (t1 - t0)


@njit(cache=True)
def _ramp(s, eps):
    return 0.5 * (s + math.sqrt(s * s + eps * eps))


@njit(cache=True)
def _ramp_d(s, eps):
    return 0.5 * (1.0 + s / math.sqrt(s * s + eps * eps))


@njit(cache=True)
def _sat(u, v_sat):
    a = 0.8 * v_sat
    width = 0.4 * v_sat
    au = abs(u)
    s = (au - a) / width
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    mag = a + width * (s - s * s * s + 0.5 * s * s * s * s)
    val = mag if au > mag else au
    if u < 0.0:
        val = -val
    omss = 1.0 - s
    slope = omss * omss * (1.0 + 2.0 * s)
    return val, slope


@njit(cache=True)
def _plant_side(i, th, w, ei, x, v, wref, pp, gapL, gapR, b_extra, sigma, x_obs):
    """Actuator, contact, stop, and fault forces shared by every hybrid.

    Returns (di, dth, dw, dei, F_rod, F_ext) where F_ext is the net
    exogenous force available to the rail element."""
    x_rod = pp[PP_RODX0] + pp[PP_CCAM] * th
    v_rod = pp[PP_CCAM] * w
    eps = pp[PP_EPS]
    dL = x_rod - gapL - x
    dR = x - x_rod - gapR
    F_rod = (pp[PP_KC] * _ramp(dL, eps) + pp[PP_DC] * _ramp_d(dL, eps) * (v_rod - v)
             - pp[PP_KC] * _ramp(dR, eps) - pp[PP_DC] * _ramp_d(dR, eps) * (v - v_rod))
    F_stop = pp[PP_KSTOP] * (_ramp(x - pp[PP_XMAX], eps) - _ramp(pp[PP_XMIN] - x, eps))
    r = (x - x_obs) / pp[PP_WOBS]
    F_fault = (b_extra + sigma * math.exp(-r * r)) * v
    err = wref - w
    u_raw = pp[PP_KP] * err + pp[PP_KI] * ei
    u, slope = _sat(u_raw, pp[PP_VSAT])
    di = (u - pp[PP_R] * i - pp[PP_KE] * w) / pp[PP_L]
    dw = (pp[PP_KT] * i - pp[PP_BM] * w - pp[PP_CCAM] * F_rod) / pp[PP_JM]
    dei = err * slope
    F_ext = F_rod - F_stop - F_fault
    return di, w, dw, dei, F_rod, F_ext


@njit(cache=True)
def _poly_cd(x, v, sp):
    dx = x - sp[7]
    F_c = sp[1] * dx + sp[2] * dx ** 3 + sp[3] * dx ** 5
    F_d = sp[4] * v + sp[5] * v ** 3 + sp[6] * v ** 5
    return F_c + F_d


@njit(cache=True)
def _posmap_cd(x, v, x_fix, sW0, sb0, sW1, sb1, sscale, dW0, db0, dW1, db1, dscale):
    h = sb0.shape[0]
    c = sb1
    for j in range(h):
        c += sW1[j] * math.tanh(sW0[j, 0] * x + sb0[j])
    c *= sscale
    d = db1
    for j in range(h):
        d += dW1[j] * math.tanh(dW0[j, 0] * x + dW0[j, 1] * v + db0[j])
    d *= dscale
    return c * c * (x - x_fix) + d * d * v


@njit(cache=True)
def sim_poly_batch(fault, z0, knots_t, knots_w, pp, sp, n_out, m_sub, dt):
    """fault (B, 5), z0 (6,), sp: poly parameter layout
    [m, c0, c1, c2, d0, d1, d2, x_fix]. Returns (out (B, n_out, 7),
    flags (B,)) with channels (i, theta, omega, F, x, v, a)."""
    B = fault.shape[0]
    out = np.empty((B, n_out, 7))
    flags = np.zeros(B, dtype=np.int64)
    m_s = sp[0]
    for b in range(B):
        gapL, gapR, bex, sig, xo = fault[b, 0], fault[b, 1], fault[b, 2], fault[b, 3], fault[b, 4]
        i, th, w, ei, x, v = z0[0], z0[1], z0[2], z0[3], z0[4], z0[5]
        for k in range(n_out):
            t = k * m_sub * dt
            wref = _interp_ref(t, knots_t, knots_w)
            di, dth, dw, dei, F_rod, F_ext = _plant_side(
                i, th, w, ei, x, v, wref, pp, gapL, gapR, bex, sig, xo)
            a = (F_ext - _poly_cd(x, v, sp)) / m_s
            out[b, k, 0] = i
            out[b, k, 1] = th
            out[b, k, 2] = w
            out[b, k, 3] = F_rod
            out[b, k, 4] = x
            out[b, k, 5] = v
            out[b, k, 6] = a
            if k == n_out - 1:
                break
            for s in range(m_sub):
                ts = (k * m_sub + s) * dt
                # stage 1
                wr = _interp_ref(ts, knots_t, knots_w)
                d1i, d1t, d1w, d1e, _, Fx = _plant_side(i, th, w, ei, x, v, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d1x = v
                d1v = (Fx - _poly_cd(x, v, sp)) / m_s
                # stage 2
                wr = _interp_ref(ts + 0.5 * dt, knots_t, knots_w)
                i2 = i + 0.5 * dt * d1i
                t2 = th + 0.5 * dt * d1t
                w2 = w + 0.5 * dt * d1w
                e2 = ei + 0.5 * dt * d1e
                x2 = x + 0.5 * dt * d1x
                v2 = v + 0.5 * dt * d1v
                d2i, d2t, d2w, d2e, _, Fx = _plant_side(i2, t2, w2, e2, x2, v2, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d2x = v2
                d2v = (Fx - _poly_cd(x2, v2, sp)) / m_s
                # stage 3
                i3 = i + 0.5 * dt * d2i
                t3 = th + 0.5 * dt * d2t
                w3 = w + 0.5 * dt * d2w
                e3 = ei + 0.5 * dt * d2e
                x3 = x + 0.5 * dt * d2x
                v3 = v + 0.5 * dt * d2v
                d3i, d3t, d3w, d3e, _, Fx = _plant_side(i3, t3, w3, e3, x3, v3, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d3x = v3
                d3v = (Fx - _poly_cd(x3, v3, sp)) / m_s
                # stage 4
                wr = _interp_ref(ts + dt, knots_t, knots_w)
                i4 = i + dt * d3i
                t4 = th + dt * d3t
                w4 = w + dt * d3w
                e4 = ei + dt * d3e
                x4 = x + dt * d3x
                v4 = v + dt * d3v
                d4i, d4t, d4w, d4e, _, Fx = _plant_side(i4, t4, w4, e4, x4, v4, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d4x = v4
                d4v = (Fx - _poly_cd(x4, v4, sp)) / m_s
                c = dt / 6.0
                i += c * (d1i + 2.0 * (d2i + d3i) + d4i)
                th += c * (d1t + 2.0 * (d2t + d3t) + d4t)
                w += c * (d1w + 2.0 * (d2w + d3w) + d4w)
                ei += c * (d1e + 2.0 * (d2e + d3e) + d4e)
                x += c * (d1x + 2.0 * (d2x + d3x) + d4x)
                v += c * (d1v + 2.0 * (d2v + d3v) + d4v)
            if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(i)):
                flags[b] = 1
                for kk in range(k + 1, n_out):
                    for cc in range(7):
                        out[b, kk, cc] = np.nan
                break
    return out, flags


@njit(cache=True)
def sim_posmap_batch(fault, z0, knots_t, knots_w, pp, m_s, x_fix,
                     sW0, sb0, sW1, sb1, sscale, dW0, db0, dW1, db1, dscale,
                     n_out, m_sub, dt):
    """Squared-net element; same contract as sim_poly_batch."""
    B = fault.shape[0]
    out = np.empty((B, n_out, 7))
    flags = np.zeros(B, dtype=np.int64)
    for b in range(B):
        gapL, gapR, bex, sig, xo = fault[b, 0], fault[b, 1], fault[b, 2], fault[b, 3], fault[b, 4]
        i, th, w, ei, x, v = z0[0], z0[1], z0[2], z0[3], z0[4], z0[5]
        for k in range(n_out):
            t = k * m_sub * dt
            wref = _interp_ref(t, knots_t, knots_w)
            di, dth, dw, dei, F_rod, F_ext = _plant_side(
                i, th, w, ei, x, v, wref, pp, gapL, gapR, bex, sig, xo)
            a = (F_ext - _posmap_cd(x, v, x_fix, sW0, sb0, sW1, sb1, sscale,
                                    dW0, db0, dW1, db1, dscale)) / m_s
            out[b, k, 0] = i
            out[b, k, 1] = th
            out[b, k, 2] = w
            out[b, k, 3] = F_rod
            out[b, k, 4] = x
            out[b, k, 5] = v
            out[b, k, 6] = a
            if k == n_out - 1:
                break
            for s in range(m_sub):
                ts = (k * m_sub + s) * dt
                wr = _interp_ref(ts, knots_t, knots_w)
                d1i, d1t, d1w, d1e, _, Fx = _plant_side(i, th, w, ei, x, v, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d1x = v
                d1v = (Fx - _posmap_cd(x, v, x_fix, sW0, sb0, sW1, sb1, sscale,
                                       dW0, db0, dW1, db1, dscale)) / m_s
                wr = _interp_ref(ts + 0.5 * dt, knots_t, knots_w)
                i2 = i + 0.5 * dt * d1i
                t2 = th + 0.5 * dt * d1t
                w2 = w + 0.5 * dt * d1w
                e2 = ei + 0.5 * dt * d1e
                x2 = x + 0.5 * dt * d1x
                v2 = v + 0.5 * dt * d1v
                d2i, d2t, d2w, d2e, _, Fx = _plant_side(i2, t2, w2, e2, x2, v2, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d2x = v2
                d2v = (Fx - _posmap_cd(x2, v2, x_fix, sW0, sb0, sW1, sb1, sscale,
                                       dW0, db0, dW1, db1, dscale)) / m_s
                i3 = i + 0.5 * dt * d2i
                t3 = th + 0.5 * dt * d2t
                w3 = w + 0.5 * dt * d2w
                e3 = ei + 0.5 * dt * d2e
                x3 = x + 0.5 * dt * d2x
                v3 = v + 0.5 * dt * d2v
                d3i, d3t, d3w, d3e, _, Fx = _plant_side(i3, t3, w3, e3, x3, v3, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d3x = v3
                d3v = (Fx - _posmap_cd(x3, v3, x_fix, sW0, sb0, sW1, sb1, sscale,
                                       dW0, db0, dW1, db1, dscale)) / m_s
                wr = _interp_ref(ts + dt, knots_t, knots_w)
                i4 = i + dt * d3i
                t4 = th + dt * d3t
                w4 = w + dt * d3w
                e4 = ei + dt * d3e
                x4 = x + dt * d3x
                v4 = v + dt * d3v
                d4i, d4t, d4w, d4e, _, Fx = _plant_side(i4, t4, w4, e4, x4, v4, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d4x = v4
                d4v = (Fx - _posmap_cd(x4, v4, x_fix, sW0, sb0, sW1, sb1, sscale,
                                       dW0, db0, dW1, db1, dscale)) / m_s
                c = dt / 6.0
                i += c * (d1i + 2.0 * (d2i + d3i) + d4i)
                th += c * (d1t + 2.0 * (d2t + d3t) + d4t)
                w += c * (d1w + 2.0 * (d2w + d3w) + d4w)
                ei += c * (d1e + 2.0 * (d2e + d3e) + d4e)
                x += c * (d1x + 2.0 * (d2x + d3x) + d4x)
                v += c * (d1v + 2.0 * (d2v + d3v) + d4v)
            if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(i)):
                flags[b] = 1
                for kk in range(k + 1, n_out):
                    for cc in range(7):
                        out[b, kk, cc] = np.nan
                break
    return out, flags


@njit(cache=True)
def _causal_net(x, v, a, W0, b0, W1, b1):
    F = b1
    dF = 0.0
    for j in range(b0.shape[0]):
        z = W0[j, 0] * x + W0[j, 1] * v + W0[j, 2] * a + b0[j]
        tz = math.tanh(z)
        F += W1[j] * tz
        dF += W1[j] * (1.0 - tz * tz) * W0[j, 2]
    return F, dF


@njit(cache=True)
def _solve_accel(x, v, F_avail, a_init, W0, b0, W1, b1):
    """Root of F_net(x, v, a) = F_avail in a. Newton from the warm start
    with a step clamp, bisection fallback on a wide bracket. Returns
    (a, ok)."""
    tol = 1e-9 * (1.0 + abs(F_avail))
    a = a_init
    for _ in range(40):
        F, dF = _causal_net(x, v, a, W0, b0, W1, b1)
        g = F_avail - F
        if abs(g) < tol:
            return a, True
        if dF == 0.0 or not math.isfinite(dF):
            break
        step = g / dF
        if step > 1e5:
            step = 1e5
        elif step < -1e5:
            step = -1e5
        a = a + step
        if not math.isfinite(a):
            break
    lo, hi = -1e6, 1e6
    Flo, _ = _causal_net(x, v, lo, W0, b0, W1, b1)
    Fhi, _ = _causal_net(x, v, hi, W0, b0, W1, b1)
    glo = F_avail - Flo
    ghi = F_avail - Fhi
    if glo == 0.0:
        return lo, True
    if ghi == 0.0:
        return hi, True
    if (glo > 0.0) == (ghi > 0.0):
        return 0.0, False
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        Fm, _ = _causal_net(x, v, mid, W0, b0, W1, b1)
        gm = F_avail - Fm
        if abs(gm) < tol or (hi - lo) < 1e-12 * (1.0 + abs(mid)):
            return mid, True
        if (gm > 0.0) == (glo > 0.0):
            lo = mid
            glo = gm
        else:
            hi = mid
    return 0.5 * (lo + hi), True


@njit(cache=True)
def sim_causal_batch(fault, z0, knots_t, knots_w, pp, W0, b0, W1, b1,
                     n_out, m_sub, dt):
    """Causal-net element: the rail acceleration solves the implicit
    force relation each stage. Same output contract as sim_poly_batch."""
    B = fault.shape[0]
    out = np.empty((B, n_out, 7))
    flags = np.zeros(B, dtype=np.int64)
    for b in range(B):
        gapL, gapR, bex, sig, xo = fault[b, 0], fault[b, 1], fault[b, 2], fault[b, 3], fault[b, 4]
        i, th, w, ei, x, v = z0[0], z0[1], z0[2], z0[3], z0[4], z0[5]
        a_warm = 0.0
        failed = False
        for k in range(n_out):
            t = k * m_sub * dt
            wref = _interp_ref(t, knots_t, knots_w)
            di, dth, dw, dei, F_rod, F_ext = _plant_side(
                i, th, w, ei, x, v, wref, pp, gapL, gapR, bex, sig, xo)
            a, ok = _solve_accel(x, v, F_ext, a_warm, W0, b0, W1, b1)
            out[b, k, 0] = i
            out[b, k, 1] = th
            out[b, k, 2] = w
            out[b, k, 3] = F_rod
            out[b, k, 4] = x
            out[b, k, 5] = v
            out[b, k, 6] = a
            if not ok:
                flags[b] = 1
                for kk in range(k + 1, n_out):
                    for cc in range(7):
                        out[b, kk, cc] = np.nan
                break
            if k == n_out - 1:
                break
            for s in range(m_sub):
                ts = (k * m_sub + s) * dt
                wr = _interp_ref(ts, knots_t, knots_w)
                d1i, d1t, d1w, d1e, _, Fx = _plant_side(i, th, w, ei, x, v, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d1x = v
                d1v, ok = _solve_accel(x, v, Fx, a_warm, W0, b0, W1, b1)
                if not ok:
                    failed = True
                    break
                a_warm = d1v
                wr = _interp_ref(ts + 0.5 * dt, knots_t, knots_w)
                i2 = i + 0.5 * dt * d1i
                t2 = th + 0.5 * dt * d1t
                w2 = w + 0.5 * dt * d1w
                e2 = ei + 0.5 * dt * d1e
                x2 = x + 0.5 * dt * d1x
                v2 = v + 0.5 * dt * d1v
                d2i, d2t, d2w, d2e, _, Fx = _plant_side(i2, t2, w2, e2, x2, v2, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d2x = v2
                d2v, ok = _solve_accel(x2, v2, Fx, a_warm, W0, b0, W1, b1)
                if not ok:
                    failed = True
                    break
                i3 = i + 0.5 * dt * d2i
                t3 = th + 0.5 * dt * d2t
                w3 = w + 0.5 * dt * d2w
                e3 = ei + 0.5 * dt * d2e
                x3 = x + 0.5 * dt * d2x
                v3 = v + 0.5 * dt * d2v
                d3i, d3t, d3w, d3e, _, Fx = _plant_side(i3, t3, w3, e3, x3, v3, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d3x = v3
                d3v, ok = _solve_accel(x3, v3, Fx, d2v, W0, b0, W1, b1)
                if not ok:
                    failed = True
                    break
                wr = _interp_ref(ts + dt, knots_t, knots_w)
                i4 = i + dt * d3i
                t4 = th + dt * d3t
                w4 = w + dt * d3w
                e4 = ei + dt * d3e
                x4 = x + dt * d3x
                v4 = v + dt * d3v
                d4i, d4t, d4w, d4e, _, Fx = _plant_side(i4, t4, w4, e4, x4, v4, wr,
                                                        pp, gapL, gapR, bex, sig, xo)
                d4x = v4
                d4v, ok = _solve_accel(x4, v4, Fx, d3v, W0, b0, W1, b1)
                if not ok:
                    failed = True
                    break
                c = dt / 6.0
                i += c * (d1i + 2.0 * (d2i + d3i) + d4i)
                th += c * (d1t + 2.0 * (d2t + d3t) + d4t)
                w += c * (d1w + 2.0 * (d2w + d3w) + d4w)
                ei += c * (d1e + 2.0 * (d2e + d3e) + d4e)
                x += c * (d1x + 2.0 * (d2x + d3x) + d4x)
                v += c * (d1v + 2.0 * (d2v + d3v) + d4v)
                a_warm = d4v
            if failed or not (math.isfinite(x) and math.isfinite(v) and math.isfinite(i)):
                flags[b] = 1
                for kk in range(k + 1, n_out):
                    for cc in range(7):
                        out[b, kk, cc] = np.nan
                break
    return out, flags


# ---------------------------------------------------------------------------
# force-driven element integration for fitting and validation
#
# The acausal fits minimize trajectory error of the bare element driven by
# a recorded force, so the kernels below integrate (x, v) together with
# forward sensitivities d(x, v)/d(theta). Integrating the augmented system
# with the same RK4 stages makes the sensitivities the exact derivative of
# the discrete trajectory, which is what lets the pre-flight check demand
# finite-difference agreement to a few orders below the tolerance.


@njit(cache=True)
def _poly_aug_rhs(z, F_t, th):
    """Augmented RHS for theta = [m, c0, c1, c2, d0, d1, d2, x_fix]:
    z = [x, v, Sx(8), Sv(8)]."""
    x = z[0]
    v = z[1]
    m = th[0]
    dxf = x - th[7]
    dx2 = dxf * dxf
    v2 = v * v
    F_c = th[1] * dxf + th[2] * dxf * dx2 + th[3] * dxf * dx2 * dx2
    F_d = th[4] * v + th[5] * v * v2 + th[6] * v * v2 * v2
    dFdx = th[1] + 3.0 * th[2] * dx2 + 5.0 * th[3] * dx2 * dx2
    dFdv = th[4] + 3.0 * th[5] * v2 + 5.0 * th[6] * v2 * v2
    acc = (F_t - F_c - F_d) / m
    out = np.empty(18)
    out[0] = v
    out[1] = acc
    for j in range(8):
        if j == 0:
            dth = acc          # d(acc)/dm = -acc/m, folded into the sum
        elif j == 1:
            dth = dxf
        elif j == 2:
            dth = dxf * dx2
        elif j == 3:
            dth = dxf * dx2 * dx2
        elif j == 4:
            dth = v
        elif j == 5:
            dth = v * v2
        elif j == 6:
            dth = v * v2 * v2
        else:
            dth = -dFdx
        sxj = z[2 + j]
        svj = z[10 + j]
        out[2 + j] = svj
        out[10 + j] = -(dFdx * sxj + dFdv * svj + dth) / m
    return out


@njit(cache=True)
def fit_sim_poly(th, F_rec, x0, v0, m_sub, dt):
    """Trajectory and sensitivities of the polynomial element driven by
    the recorded force (linearly interpolated between samples).

    Returns (xs, vs, Sx (n, 8), Sv (n, 8), flag)."""
    n = F_rec.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    Sx = np.empty((n, 8))
    Sv = np.empty((n, 8))
    z = np.zeros(18)
    z[0] = x0
    z[1] = v0
    flag = 0
    for k in range(n):
        xs[k] = z[0]
        vs[k] = z[1]
        for j in range(8):
            Sx[k, j] = z[2 + j]
            Sv[k, j] = z[10 + j]
        if not np.all(np.isfinite(z)):
            flag = 1
            for kk in range(k, n):
                xs[kk] = np.nan
                vs[kk] = np.nan
            break
        if k == n - 1:
            break
        F0 = F_rec[k]
        dF = F_rec[k + 1] - F0
        for s in range(m_sub):
            Fa = F0 + dF * (s / m_sub)
            Fm = F0 + dF * ((s + 0.5) / m_sub)
            Fb = F0 + dF * ((s + 1.0) / m_sub)
            k1 = _poly_aug_rhs(z, Fa, th)
            k2 = _poly_aug_rhs(z + 0.5 * dt * k1, Fm, th)
            k3 = _poly_aug_rhs(z + 0.5 * dt * k2, Fm, th)
            k4 = _poly_aug_rhs(z + dt * k3, Fb, th)
            z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return xs, vs, Sx, Sv, flag


@njit(cache=True)
def _posmap_aug_rhs(z, F_t, th, h):
    """Augmented RHS for the squared-net element. th follows the flat
    layout [m, x_fix, spring(4h+2), damper(4h+2)]; z = [x, v, Sx(P),
    Sv(P)] with P = 2 + 2*(4h+2)."""
    per = 4 * h + 2
    P = 2 + 2 * per
    x = z[0]
    v = z[1]
    m = th[0]
    dxf = x - th[1]

    # spring net at u = (x, 0)
    so = 2
    c_rawsum = th[so + 4 * h]
    c_dx = 0.0
    c_t = np.empty(h)
    c_s2 = np.empty(h)
    for i in range(h):
        zi = th[so + 2 * i] * x + th[so + 2 * h + i]
        ti = math.tanh(zi)
        c_t[i] = ti
        c_s2[i] = 1.0 - ti * ti
        c_rawsum += th[so + 3 * h + i] * ti
    c_scale = th[so + 4 * h + 1]
    c = c_scale * c_rawsum
    for i in range(h):
        c_dx += c_scale * th[so + 3 * h + i] * c_s2[i] * th[so + 2 * i]

    # damper net at u = (x, v)
    do = 2 + per
    d_rawsum = th[do + 4 * h]
    d_dx = 0.0
    d_dv = 0.0
    d_t = np.empty(h)
    d_s2 = np.empty(h)
    for i in range(h):
        zi = th[do + 2 * i] * x + th[do + 2 * i + 1] * v + th[do + 2 * h + i]
        ti = math.tanh(zi)
        d_t[i] = ti
        d_s2[i] = 1.0 - ti * ti
        d_rawsum += th[do + 3 * h + i] * ti
    d_scale = th[do + 4 * h + 1]
    d = d_scale * d_rawsum
    for i in range(h):
        w1s = d_scale * th[do + 3 * h + i] * d_s2[i]
        d_dx += w1s * th[do + 2 * i]
        d_dv += w1s * th[do + 2 * i + 1]

    F_cd = c * c * dxf + d * d * v
    dFdx = 2.0 * c * c_dx * dxf + c * c + 2.0 * d * d_dx * v
    dFdv = 2.0 * d * d_dv * v + d * d
    acc = (F_t - F_cd) / m

    # dF/dtheta, nonzero blocks only
    dth = np.zeros(P)
    dth[1] = -c * c
    cc = 2.0 * c * dxf
    for i in range(h):
        w1s = c_scale * th[so + 3 * h + i] * c_s2[i]
        dth[so + 2 * i] = cc * w1s * x
        dth[so + 2 * h + i] = cc * w1s
        dth[so + 3 * h + i] = cc * c_scale * c_t[i]
    dth[so + 4 * h] = cc * c_scale
    dth[so + 4 * h + 1] = cc * c_rawsum
    dd = 2.0 * d * v
    for i in range(h):
        w1s = d_scale * th[do + 3 * h + i] * d_s2[i]
        dth[do + 2 * i] = dd * w1s * x
        dth[do + 2 * i + 1] = dd * w1s * v
        dth[do + 2 * h + i] = dd * w1s
        dth[do + 3 * h + i] = dd * d_scale * d_t[i]
    dth[do + 4 * h] = dd * d_scale
    dth[do + 4 * h + 1] = dd * d_rawsum

    out = np.empty(2 + 2 * P)
    out[0] = v
    out[1] = acc
    for j in range(P):
        extra = acc if j == 0 else 0.0
        sxj = z[2 + j]
        svj = z[2 + P + j]
        out[2 + j] = svj
        out[2 + P + j] = -(dFdx * sxj + dFdv * svj + dth[j] + extra) / m
    return out


@njit(cache=True)
def fit_sim_posmap(th, h, F_rec, x0, v0, m_sub, dt):
    """Posmap twin of fit_sim_poly. Returns (xs, vs, Sx (n, P),
    Sv (n, P), flag) with P = 2 + 2*(4h+2)."""
    per = 4 * h + 2
    P = 2 + 2 * per
    n = F_rec.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    Sx = np.empty((n, P))
    Sv = np.empty((n, P))
    z = np.zeros(2 + 2 * P)
    z[0] = x0
    z[1] = v0
    flag = 0
    for k in range(n):
        xs[k] = z[0]
        vs[k] = z[1]
        for j in range(P):
            Sx[k, j] = z[2 + j]
            Sv[k, j] = z[2 + P + j]
        if not np.all(np.isfinite(z)):
            flag = 1
            for kk in range(k, n):
                xs[kk] = np.nan
                vs[kk] = np.nan
            break
        if k == n - 1:
            break
        F0 = F_rec[k]
        dF = F_rec[k + 1] - F0
        for s in range(m_sub):
            Fa = F0 + dF * (s / m_sub)
            Fm = F0 + dF * ((s + 0.5) / m_sub)
            Fb = F0 + dF * ((s + 1.0) / m_sub)
            k1 = _posmap_aug_rhs(z, Fa, th, h)
            k2 = _posmap_aug_rhs(z + 0.5 * dt * k1, Fm, th, h)
            k3 = _posmap_aug_rhs(z + 0.5 * dt * k2, Fm, th, h)
            k4 = _posmap_aug_rhs(z + dt * k3, Fb, th, h)
            z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return xs, vs, Sx, Sv, flag


@njit(cache=True)
def element_sim_poly(th, F_rec, x0, v0, m_sub, dt):
    """Trajectory-only run of the polynomial element: (xs, vs, flag)."""
    n = F_rec.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    x = x0
    v = v0
    flag = 0
    m = th[0]
    for k in range(n):
        xs[k] = x
        vs[k] = v
        if not (np.isfinite(x) and np.isfinite(v)):
            flag = 1
            for kk in range(k, n):
                xs[kk] = np.nan
                vs[kk] = np.nan
            break
        if k == n - 1:
            break
        F0 = F_rec[k]
        dF = F_rec[k + 1] - F0
        for s in range(m_sub):
            Fa = F0 + dF * (s / m_sub)
            Fm = F0 + dF * ((s + 0.5) / m_sub)
            Fb = F0 + dF * ((s + 1.0) / m_sub)
            cd1 = _poly_cd(x, v, th)
            a1 = (Fa - cd1) / m
            x2 = x + 0.5 * dt * v
            v2 = v + 0.5 * dt * a1
            a2 = (Fm - _poly_cd(x2, v2, th)) / m
            x3 = x + 0.5 * dt * v2
            v3 = v + 0.5 * dt * a2
            a3 = (Fm - _poly_cd(x3, v3, th)) / m
            x4 = x + dt * v3
            v4 = v + dt * a3
            a4 = (Fb - _poly_cd(x4, v4, th)) / m
            x = x + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return xs, vs, flag


@njit(cache=True)
def element_sim_posmap(th, h, F_rec, x0, v0, m_sub, dt):
    """Trajectory-only run of the squared-net element: (xs, vs, flag)."""
    per = 4 * h + 2
    n = F_rec.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    m = th[0]
    x_fix = th[1]
    sW0 = np.empty((h, 2))
    sb0 = np.empty(h)
    sW1 = np.empty(h)
    dW0 = np.empty((h, 2))
    db0 = np.empty(h)
    dW1 = np.empty(h)
    so = 2
    do = 2 + per
    for i in range(h):
        sW0[i, 0] = th[so + 2 * i]
        sW0[i, 1] = th[so + 2 * i + 1]
        sb0[i] = th[so + 2 * h + i]
        sW1[i] = th[so + 3 * h + i]
        dW0[i, 0] = th[do + 2 * i]
        dW0[i, 1] = th[do + 2 * i + 1]
        db0[i] = th[do + 2 * h + i]
        dW1[i] = th[do + 3 * h + i]
    sb1 = th[so + 4 * h]
    sscale = th[so + 4 * h + 1]
    db1 = th[do + 4 * h]
    dscale = th[do + 4 * h + 1]

    x = x0
    v = v0
    flag = 0
    for k in range(n):
        xs[k] = x
        vs[k] = v
        if not (np.isfinite(x) and np.isfinite(v)):
            flag = 1
            for kk in range(k, n):
                xs[kk] = np.nan
                vs[kk] = np.nan
            break
        if k == n - 1:
            break
        F0 = F_rec[k]
        dF = F_rec[k + 1] - F0
        for s in range(m_sub):
            Fa = F0 + dF * (s / m_sub)
            Fm = F0 + dF * ((s + 0.5) / m_sub)
            Fb = F0 + dF * ((s + 1.0) / m_sub)
            cd1 = _posmap_cd(x, v, x_fix, sW0, sb0, sW1, sb1, sscale,
                             dW0, db0, dW1, db1, dscale)
            a1 = (Fa - cd1) / m
            x2 = x + 0.5 * dt * v
            v2 = v + 0.5 * dt * a1
            a2 = (Fm - _posmap_cd(x2, v2, x_fix, sW0, sb0, sW1, sb1, sscale,
                                  dW0, db0, dW1, db1, dscale)) / m
            x3 = x + 0.5 * dt * v2
            v3 = v + 0.5 * dt * a2
            a3 = (Fm - _posmap_cd(x3, v3, x_fix, sW0, sb0, sW1, sb1, sscale,
                                  dW0, db0, dW1, db1, dscale)) / m
            x4 = x + dt * v3
            v4 = v + dt * a3
            a4 = (Fb - _posmap_cd(x4, v4, x_fix, sW0, sb0, sW1, sb1, sscale,
                                  dW0, db0, dW1, db1, dscale)) / m
            x = x + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return xs, vs, flag


@njit(cache=True)
def element_sim_causal(W0, b0, W1, b1, F_rec, x0, v0, m_sub, dt):
    """Causal element driven by a recorded force: at every stage the
    acceleration solves net(x, v, a) = F(t), then (x, v) advance with
    RK4. Returns (xs, vs, accs, flag)."""
    n = F_rec.shape[0]
    xs = np.empty(n)
    vs = np.empty(n)
    accs = np.empty(n)
    x = x0
    v = v0
    a_warm = 0.0
    flag = 0
    for k in range(n):
        a_warm, ok = _solve_accel(x, v, F_rec[k], a_warm, W0, b0, W1, b1)
        xs[k] = x
        vs[k] = v
        accs[k] = a_warm
        if not ok or not (np.isfinite(x) and np.isfinite(v)):
            flag = 1
            for kk in range(k, n):
                xs[kk] = np.nan
                vs[kk] = np.nan
                accs[kk] = np.nan
            break
        if k == n - 1:
            break
        F0 = F_rec[k]
        dF = F_rec[k + 1] - F0
        for s in range(m_sub):
            Fa = F0 + dF * (s / m_sub)
            Fm = F0 + dF * ((s + 0.5) / m_sub)
            Fb = F0 + dF * ((s + 1.0) / m_sub)
            a1, ok1 = _solve_accel(x, v, Fa, a_warm, W0, b0, W1, b1)
            x2 = x + 0.5 * dt * v
            v2 = v + 0.5 * dt * a1
            a2, ok2 = _solve_accel(x2, v2, Fm, a1, W0, b0, W1, b1)
            x3 = x + 0.5 * dt * v2
            v3 = v + 0.5 * dt * a2
            a3, ok3 = _solve_accel(x3, v3, Fm, a2, W0, b0, W1, b1)
            x4 = x + dt * v3
            v4 = v + dt * a3
            a4, ok4 = _solve_accel(x4, v4, Fb, a3, W0, b0, W1, b1)
            if not (ok1 and ok2 and ok3 and ok4):
                x = np.nan
                v = np.nan
                break
            x = x + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            a_warm = a4
    return xs, vs, accs, flag
