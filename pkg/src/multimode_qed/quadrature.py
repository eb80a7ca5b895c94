"""Compiled quadrature kernels: principal-value transform, Filon transform,
and the product-trapezoidal Volterra stepper."""
from __future__ import annotations

import numpy as np
from numba import njit

RESEED = 128        # exact phase recomputation interval of the Filon recurrence
SERIES_THETA = 0.05


@njit(cache=True)
def pv_subtracted(src_w, src_f, src_wt, tgt_w, tgt_f, tgt_df, omega_max):
    """P-integral over [0, omega_max] of f(x) / (w - x) at each target w.

    Singularity subtraction: int (f(x) - f(w)) / (w - x) dx by the source
    quadrature rule plus f(w) ln(w / (omega_max - w)) in closed form. A
    source node coinciding with the target contributes -f'(w).
    """
    nt = tgt_w.size
    ns = src_w.size
    out = np.empty(nt)
    for i in range(nt):
        w = tgt_w[i]
        fw = tgt_f[i]
        tol = 1e-13 * (1.0 + abs(w))
        acc = 0.0
        for j in range(ns):
            d = w - src_w[j]
            if abs(d) <= tol:
                acc -= src_wt[j] * tgt_df[i]
            else:
                acc += src_wt[j] * (src_f[j] - fw) / d
        if fw != 0.0 and 0.0 < w < omega_max:
            acc += fw * np.log(w / (omega_max - w))
        out[i] = acc
    return out


@njit(cache=True)
def _panel_filon(w, f, t):
    """Direct panel-by-panel form; exact, robust for small t, slow."""
    acc = 0.0 + 0.0j
    for j in range(w.size - 1):
        h = w[j + 1] - w[j]
        theta = h * t
        p0 = np.exp(-1j * w[j] * t)
        p1 = np.exp(-1j * w[j + 1] * t)
        if abs(theta) < SERIES_THETA:
            x = -1j * theta
            a_plus = 0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x * (
                1.0 / 720.0 + x * (1.0 / 5040.0 + x / 40320.0)))))
            a_minus = np.conj(a_plus)
        else:
            e = p1 * np.conj(p0)
            inv = 1.0 / theta
            a_plus = (1.0 - e) * inv * inv - 1j * inv
            a_minus = (1.0 - np.conj(e)) * inv * inv + 1j * inv
        acc += h * (f[j] * p0 * a_plus + f[j + 1] * p1 * a_minus)
    return acc


@njit(cache=True)
def filon_transform(w, f, t0, dt, nt):
    """int f_lin(x) exp(-i x t) dx for t = t0 + k dt, k < nt.

    f_lin is the piecewise-linear interpolant of (w, f), integrated exactly.
    Two integrations by parts turn the panel sum into boundary terms plus
    sum_j (s_{j-1} - s_j) exp(-i w_j t) / t^2 with s_j the panel slopes, so
    each t costs one complex multiply-add per node. Where that form loses
    more than ~1e-11 relative accuracy to cancellation (small t) the direct
    panel rule is used. Phases advance by recurrence, reseeded every RESEED
    steps.
    """
    n = w.size
    out = np.empty(nt, dtype=np.complex128)
    s = np.empty(n - 1)
    for j in range(n - 1):
        s[j] = (f[j + 1] - f[j]) / (w[j + 1] - w[j])
    D = np.zeros(n)
    for j in range(1, n - 1):
        D[j] = s[j - 1] - s[j]
    variation = 0.0
    scale = 0.0
    for j in range(n):
        variation += abs(D[j])
    for j in range(n - 1):
        scale += 0.5 * (abs(f[j]) + abs(f[j + 1])) * (w[j + 1] - w[j])
    variation += abs(s[0]) + abs(s[n - 2])
    # rounding of the summed form ~ eps * variation / t^2
    t_direct = np.sqrt(1e-16 * variation / (1e-11 * max(scale, 1e-300)))

    P = np.empty(n, dtype=np.complex128)
    Q = np.empty(n, dtype=np.complex128)
    for j in range(n):
        Q[j] = np.exp(-1j * w[j] * dt)
    for k in range(nt):
        t = t0 + k * dt
        if abs(t) <= t_direct:
            out[k] = _panel_filon(w, f, t)
            continue
        if k % RESEED == 0 or abs(t - dt) <= t_direct:
            for j in range(n):
                P[j] = np.exp(-1j * w[j] * t)
        acc = 0.0 + 0.0j
        for j in range(1, n - 1):
            acc += D[j] * P[j]
        acc += s[n - 2] * P[n - 1] - s[0] * P[0]
        inv = 1.0 / t
        out[k] = acc * inv * inv + 1j * inv * (f[n - 1] * P[n - 1] - f[0] * P[0])
        for j in range(n):
            P[j] *= Q[j]
    return out


@njit(cache=True)
def volterra_trapezoid(K, dt):
    """Solve c' = -int_0^t K(t - s) c(s) ds, c(0) = 1, on a uniform grid.

    Trapezoidal rule for the memory integral and for the time step; the
    newest point enters implicitly through K(0) and is solved for directly.
    """
    n = K.size
    c = np.empty(n, dtype=np.complex128)
    c[0] = 1.0
    y_prev = 0.0 + 0.0j
    denom = 1.0 + 0.25 * dt * dt * K[0]
    for m in range(1, n):
        s = 0.5 * K[m] * c[0]
        for j in range(1, m):
            s += K[m - j] * c[j]
        c[m] = (c[m - 1] + 0.5 * dt * y_prev - 0.5 * dt * dt * s) / denom
        y_prev = -dt * (s + 0.5 * K[0] * c[m])
    return c
