"""Iterative no-U-turn trajectory builder.

The same source runs as plain Python (any callable target) and compiled with
numba (jitted targets). All randomness is supplied up front: ``u_dir`` and
``u_top`` hold one uniform per doubling, ``u_leaf`` one per leapfrog step.

Target signature: ``target(z, params) -> (log_density, gradient)``.
"""

import math

import numba
import numpy as np

DIVERGENCE_THRESHOLD = 1000.0


def _logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _kinetic(p, inv_mass):
    s = 0.0
    for i in range(p.shape[0]):
        s += p[i] * p[i] * inv_mass[i]
    return 0.5 * s


def _uturn(z_minus, z_plus, p_minus, p_plus, inv_mass):
    a = 0.0
    b = 0.0
    for i in range(z_minus.shape[0]):
        d = z_plus[i] - z_minus[i]
        a += d * inv_mass[i] * p_minus[i]
        b += d * inv_mass[i] * p_plus[i]
    return a < 0.0 or b < 0.0


def _nuts_core(z0, lp0, g0, p0, eps, inv_mass, max_depth, u_dir, u_top, u_leaf, target, params):
    n = z0.shape[0]
    h0 = -lp0 + _kinetic(p0, inv_mass)
    z_m = z0.copy()
    p_m = p0.copy()
    g_m = g0.copy()
    z_p = z0.copy()
    p_p = p0.copy()
    g_p = g0.copy()
    z_new = z0.copy()
    g_new = g0.copy()
    lp_new = lp0
    log_w = 0.0
    sum_alpha = 0.0
    n_alpha = 0
    divergent = False
    ck_z = np.empty((max_depth + 1, n))
    ck_p = np.empty((max_depth + 1, n))
    leaf = 0
    depth_done = 0
    for depth in range(max_depth):
        direction = 1.0 if u_dir[depth] < 0.5 else -1.0
        if direction > 0:
            z = z_p.copy()
            p = p_p.copy()
            g = g_p.copy()
        else:
            z = z_m.copy()
            p = p_m.copy()
            g = g_m.copy()
        sub_log_w = -math.inf
        sub_z = z
        sub_g = g
        sub_lp = lp0
        ok = True
        n_steps = 1 << depth
        for k in range(n_steps):
            # leapfrog
            p = p + (0.5 * direction * eps) * g
            z = z + (direction * eps) * inv_mass * p
            lp, g = target(z, params)
            p = p + (0.5 * direction * eps) * g
            if math.isfinite(lp):
                dh = -lp + _kinetic(p, inv_mass) - h0
                if not math.isfinite(dh):
                    dh = math.inf
            else:
                dh = math.inf
            sum_alpha += math.exp(-dh) if dh > 0.0 else 1.0
            n_alpha += 1
            if dh > DIVERGENCE_THRESHOLD:
                divergent = True
                ok = False
                break
            lw = -dh
            new_sub = _logaddexp(sub_log_w, lw)
            if math.log(u_leaf[leaf]) < lw - new_sub:
                sub_z = z
                sub_g = g
                sub_lp = lp
            leaf += 1
            sub_log_w = new_sub
            # sub-subtree bookkeeping: leaf k starts subtrees of size 2**i when
            # k % 2**i == 0 and ends them when (k + 1) % 2**i == 0
            for i in range(1, depth + 1):
                size = 1 << i
                if k % size == 0:
                    ck_z[i] = z
                    ck_p[i] = p
            for i in range(1, depth + 1):
                size = 1 << i
                if (k + 1) % size == 0:
                    if direction > 0:
                        turned = _uturn(ck_z[i], z, ck_p[i], p, inv_mass)
                    else:
                        turned = _uturn(z, ck_z[i], p, ck_p[i], inv_mass)
                    if turned:
                        ok = False
                        break
            if not ok:
                break
        depth_done = depth + 1
        if not ok:
            break
        if math.log(u_top[depth]) < sub_log_w - log_w:
            z_new = sub_z
            g_new = sub_g
            lp_new = sub_lp
        log_w = _logaddexp(log_w, sub_log_w)
        if direction > 0:
            z_p = z
            p_p = p
            g_p = g
        else:
            z_m = z
            p_m = p
            g_m = g
        if _uturn(z_m, z_p, p_m, p_p, inv_mass):
            break
    return z_new, lp_new, g_new, sum_alpha, n_alpha, divergent, depth_done


def _x_target(z, params):
    """log p(x | y, C) in z = log x coordinates, Jacobian included, constants
    dropped; ``params = (y, B, k, lam, lam_d, s2, r_exp, n_x)``."""
    y, B, k, lam, lam_d, s2, r_exp, n_x = params
    n = z.shape[0]
    x = np.exp(z)
    for i in range(n):
        if not (x[i] > 0.0 and math.isfinite(x[i])):
            return -math.inf, np.full(n, np.nan)
    r = y - B @ x
    lp = -(r @ r) / (2.0 * s2)
    gx = (B.T @ r) / s2
    log_lam = math.log(lam)
    sz = 0.0
    for i in range(n):
        xl = math.exp(k * (z[i] - log_lam))  # (x / lam) ** k
        lp -= xl
        sz += z[i]
        gx[i] -= k * xl / x[i]
    lp += k * sz
    if lam_d > 0.0:
        c = lam_d * n_x
        sqrt_case = r_exp == 0.5
        for i in range(n - 1):
            a = x[i]
            b = x[i + 1]
            s = a + b
            sr = 1.0 / math.sqrt(s) if sqrt_case else s ** (-r_exp)
            d = b - a
            ad = abs(d)
            lp -= c * ad * sr
            sgn = 1.0 if d > 0 else (-1.0 if d < 0 else 0.0)
            common = r_exp * ad * sr / s
            gx[i] -= c * (-sgn * sr - common)
            gx[i + 1] -= c * (sgn * sr - common)
    g = gx * x + k
    return lp, g


nuts_core_py = _nuts_core

_jit = numba.njit(cache=True, fastmath=False)
_logaddexp = _jit(_logaddexp)
_kinetic = _jit(_kinetic)
_uturn = _jit(_uturn)
x_target_jit = _jit(_x_target)
nuts_core_jit = _jit(_nuts_core)
x_target_py = _x_target
