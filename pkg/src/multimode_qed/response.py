"""Lamb shift, Laplace-domain kernel U, its resonances and the bound-state test."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .grids import march_nodes, merge_nodes
from .model import EmitterConfig, FrequencyGrid, NumericalPreconditionError
from .quadrature import pv_subtracted
from .spectral import SpectralTable, coupling_strength, inner_reflection

log = logging.getLogger(__name__)

_GL_LO = np.polynomial.legendre.leggauss(24)
_GL_HI = np.polynomial.legendre.leggauss(48)
MAX_PANELS = 200_000


# --------------------------------------------------------------------------
# Lamb shift

def _gauss(f, a, b, rule):
    x, wt = rule
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    vals = f(nodes.ravel()).reshape(nodes.shape)
    return half * (vals @ wt)


def adaptive_integral(f, breaks, rel_tol: float, abs_floor: float = 0.0):
    """Vectorized adaptive Gauss-Legendre integral of f over sorted breakpoints.

    Each panel is accepted when its 24- and 48-point estimates agree to the
    panel's share of ``rel_tol`` times the integral of |f|; otherwise it is
    bisected. Returns (value, error_estimate).
    """
    breaks = np.unique(np.asarray(breaks, dtype=float))
    a, b = breaks[:-1], breaks[1:]
    total = 0.0
    err = 0.0
    scale = None
    while a.size:
        if a.size > MAX_PANELS:
            raise NumericalPreconditionError("adaptive quadrature did not converge")
        lo = _gauss(f, a, b, _GL_LO)
        hi = _gauss(f, a, b, _GL_HI)
        if scale is None:
            scale = max(float(np.sum(np.abs(hi))), abs_floor)
        diff = np.abs(hi - lo)
        target = rel_tol * scale * np.maximum((b - a) / (breaks[-1] - breaks[0]), 1e-3)
        ok = diff <= np.maximum(target, 1e-15 * np.abs(hi))
        total += float(np.sum(hi[ok]))
        err += float(np.sum(diff[ok]))
        mid = 0.5 * (a[~ok] + b[~ok])
        a, b = np.concatenate([a[~ok], mid]), np.concatenate([mid, b[~ok]])
    return total, err


def _panel_breaks(spectral: SpectralTable, omega: float) -> np.ndarray:
    omega_max = spectral.omega_max
    centers, hw = (np.asarray(v, dtype=float) for v in spectral.features)
    extra = [np.array([0.0, omega_max, omega]), np.linspace(0.0, omega_max, 2 + int(omega_max))]
    for k in (0.0, 1.0, 3.0, 10.0, 30.0):
        extra += [centers - k * hw, centers + k * hw]
    # a small panel around the target keeps nodes clear of the 0/0 point
    h = 1e-3 * (hw.min() if hw.size else 1.0)
    extra.append(np.array([omega - h, omega + h]))
    nodes = np.concatenate(extra)
    return nodes[(nodes >= 0) & (nodes <= omega_max)]


def _rho_majorant(omega, spectral: SpectralTable):
    r = np.abs(inner_reflection(omega, spectral.cavity))
    return 2.0 * (1.0 + r) / (np.pi * (1.0 - r))


def tail_bound(omega: float, spectral: SpectralTable) -> float:
    """Upper bound on |delta| contributed by frequencies above omega_max."""
    omega_max = spectral.omega_max
    if omega >= omega_max:
        return math.inf

    def majorant(x):
        return float(_rho_majorant(x, spectral) * coupling_strength(x, spectral.emitter)) / (x - omega)

    val, _ = integrate.quad(majorant, omega_max, np.inf, limit=200)
    return val / np.pi


def lamb_shift(omega, spectral: SpectralTable, rel_tol: float = 1e-8):
    """delta(w) = (1/pi) P int_0^inf F(x) / (w - x) dx by adaptive quadrature.

    F is evaluated exactly (not interpolated). The pole is removed by
    subtracting F(w); the subtracted constant integrates in closed form.
    """
    scalar = np.ndim(omega) == 0
    out = []
    for w in np.atleast_1d(np.asarray(omega, dtype=float)):
        if not 0 < w < spectral.omega_max:
            raise ValueError(f"lamb_shift needs 0 < omega < omega_max (got {w})")
        fw = float(spectral(np.array([w]))[0])
        dfw = float(spectral.derivative(np.array([w]))[0])

        def g(x, w=w, fw=fw, dfw=dfw):
            d = w - x
            with np.errstate(divide="ignore", invalid="ignore"):
                v = (spectral(x) - fw) / d
            return np.where(np.abs(d) < 1e-12 * w, -dfw, v)

        val, _ = adaptive_integral(g, _panel_breaks(spectral, w), rel_tol,
                                   abs_floor=abs(fw) * 1e-3)
        delta = (val + fw * math.log(w / (spectral.omega_max - w))) / np.pi
        bound = tail_bound(w, spectral)
        if bound > rel_tol * max(abs(delta), 1.0):
            log.warning("Lamb shift tail above omega_max may reach %.3g", bound)
        out.append(delta)
    return out[0] if scalar else np.array(out)


def _simpson(spectral: SpectralTable) -> np.ndarray:
    if "simpson" not in spectral.cache:
        spectral.cache["simpson"] = spectral.grid.simpson_weights
    return spectral.cache["simpson"]


def lamb_shift_at(omega, spectral: SpectralTable) -> np.ndarray:
    """Lamb shift at arbitrary frequencies from the sampled F (Simpson rule)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    grid = spectral.grid
    fw = spectral(w)
    dfw = spectral.derivative(w)
    return pv_subtracted(grid.omega, spectral.F, _simpson(spectral), w, fw, dfw,
                         spectral.omega_max) / np.pi


def lamb_shift_table(spectral: SpectralTable) -> np.ndarray:
    """Lamb shift at every node of the spectral grid; cached on the table."""
    if "delta" not in spectral.cache:
        grid = spectral.grid
        dF = spectral.derivative(grid.omega)
        spectral.cache["delta"] = pv_subtracted(grid.omega, spectral.F, _simpson(spectral),
                                                grid.omega, spectral.F, dF,
                                                spectral.omega_max) / np.pi
    return spectral.cache["delta"]


# --------------------------------------------------------------------------
# kernel

def kernel_values(omega, F, delta, emitter: EmitterConfig, gamma: float | None = None,
                  eps_reg: float = 0.0):
    """U = F / ((w - w_a - gamma delta)^2 + (gamma F + eps)^2)."""
    g = emitter.gamma if gamma is None else gamma
    w = np.asarray(omega, dtype=float)
    den = (w - emitter.omega_a - g * delta) ** 2 + (g * F + eps_reg) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(F > 0, F / den, 0.0)
    if not np.all(np.isfinite(U)):
        raise NumericalPreconditionError("kernel denominator vanishes; set eps_reg > 0")
    return U


def kernel(omega, spectral: SpectralTable, gamma: float | None = None,
           eps_reg: float = 0.0, rel_tol: float = 1e-8):
    """U(w) pointwise, with the Lamb shift from adaptive quadrature."""
    w = np.asarray(omega, dtype=float)
    delta = lamb_shift(w, spectral, rel_tol)
    return kernel_values(w, spectral(w), delta, spectral.emitter, gamma, eps_reg)


# --------------------------------------------------------------------------
# resonances

@dataclass(frozen=True)
class ResonanceSet:
    """Roots of w - w_a - gamma delta(w) with their classification.

    ``width`` is gamma F(w_r); ``height`` is U(w_r); ``kind`` is "resonant"
    where U peaks at the root and "suppressed" where it has a minimum.
    ``marginal`` flags roots where the simpler proximity rule (an F
    maximum within half a width of the root means suppressed) disagrees
    with the curvature test or sits within 10 % of its threshold.
    """

    omega: np.ndarray
    width: np.ndarray
    height: np.ndarray
    kind: np.ndarray
    marginal: np.ndarray
    slope: np.ndarray = field(repr=False)
    curvature: np.ndarray = field(repr=False)

    def __len__(self):
        return self.omega.size

    @property
    def resonant(self) -> np.ndarray:
        return self.omega[self.kind == "resonant"]

    @property
    def n_resonant(self) -> int:
        return int(np.sum(self.kind == "resonant"))

    @property
    def n_suppressed(self) -> int:
        return int(np.sum(self.kind == "suppressed"))

    def resonant_widths(self) -> np.ndarray:
        """Half-width of each resonant U peak, gamma F / |1 - gamma delta'|."""
        sel = self.kind == "resonant"
        return self.width[sel] / np.abs(self.slope[sel])


def _root_function(spectral: SpectralTable, gamma: float):
    w_a = spectral.emitter.omega_a

    def h(w):
        return np.asarray(w) - w_a - gamma * lamb_shift_at(w, spectral)
    return h


def find_resonances(spectral: SpectralTable, gamma: float | None = None,
                    eps_reg: float = 0.0, xtol: float = 1e-10) -> ResonanceSet:
    """Bracket sign changes on the spectral grid and bisect each to ``xtol``."""
    g = spectral.emitter.gamma if gamma is None else gamma
    if g == 0 and eps_reg == 0:
        # the only root is w_a and U degenerates to a delta function there
        one = np.ones(1)
        return ResonanceSet(omega=one * spectral.emitter.omega_a, width=0 * one,
                            height=np.inf * one, kind=np.array(["resonant"]),
                            marginal=np.zeros(1, bool), slope=one, curvature=-2 * one)
    w = spectral.omega
    h_nodes = w - spectral.emitter.omega_a - g * lamb_shift_table(spectral)
    h = _root_function(spectral, g)
    roots = []
    for i in np.nonzero(np.sign(h_nodes[:-1]) * np.sign(h_nodes[1:]) <= 0)[0]:
        if h_nodes[i] == 0:
            roots.append(w[i])
        elif h_nodes[i + 1] != 0:
            roots.append(optimize.brentq(lambda x: float(h(x)[0]), w[i], w[i + 1],
                                         xtol=xtol, rtol=4 * np.finfo(float).eps))
    roots = np.array([r for r in roots if r > 0])
    return classify_roots(roots, spectral, g, eps_reg)


def classify_roots(roots, spectral: SpectralTable, gamma: float,
                   eps_reg: float = 0.0) -> ResonanceSet:
    roots = np.asarray(roots, dtype=float)
    F = spectral(roots)
    width = gamma * F
    centers, hw = (np.asarray(v, dtype=float) for v in spectral.features)
    n = roots.size
    slope = np.empty(n)
    curv = np.empty(n)
    height = np.empty(n)
    for k, r in enumerate(roots):
        near = hw[np.argmin(np.abs(centers - r))] if hw.size else 1.0
        s = 1e-3 * min(near, 1.0)
        d3 = lamb_shift_at(np.array([r - s, r, r + s]), spectral)
        slope[k] = 1.0 - gamma * (d3[2] - d3[0]) / (2 * s)
        peak_w = width[k] / max(abs(slope[k]), 1e-300)
        e = min(0.05 * peak_w, s) if peak_w > 0 else s
        pts = np.array([r - e, r, r + e])
        d = d3 if e == s else lamb_shift_at(pts, spectral)
        U = kernel_values(pts, spectral(pts), d, spectral.emitter, gamma, eps_reg)
        height[k] = U[1]
        u2 = (U[0] - 2 * U[1] + U[2]) / (e * e * U[1]) if U[1] > 0 else 0.0
        # dimensionless curvature, -2 at the top of a Lorentzian peak
        curv[k] = u2 * peak_w * peak_w
    kind = np.where(curv < 0, "resonant", "suppressed")
    # proximity rule: an F maximum within half a width of the root
    dist = (np.min(np.abs(roots[:, None] - centers[None, :]), axis=1)
            if centers.size else np.full(n, np.inf))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dist / (0.5 * width)
    marginal = ((ratio <= 1.0) != (kind == "suppressed")) | (np.abs(ratio - 1.0) < 0.1)
    return ResonanceSet(omega=roots, width=width, height=height, kind=kind,
                        marginal=marginal, slope=slope, curvature=curv)


# --------------------------------------------------------------------------
# response table

@dataclass(frozen=True)
class ResponseTable:
    grid: FrequencyGrid
    F: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    gamma: float
    resonances: ResonanceSet = field(repr=False)
    spectral: SpectralTable = field(repr=False)

    @property
    def omega(self) -> np.ndarray:
        return self.grid.omega

    def sum_rule(self) -> float:
        """(gamma/pi) int U dw, which equals c(0) = 1."""
        return self.gamma / np.pi * float(self.grid.integrate(self.U))


def build_response(spectral: SpectralTable, gamma: float | None = None,
                   peak_points: int = 20, t_end: float | None = None,
                   eps_reg: float = 0.0) -> ResponseTable:
    """Tabulate delta and U on the spectral grid refined around the U peaks.

    Each resonant root adds ``peak_points`` nodes per half-width of its U
    peak; ``t_end`` caps the background spacing at pi / (4 t_end).
    """
    g = spectral.emitter.gamma if gamma is None else gamma
    res = find_resonances(spectral, g, eps_reg)
    base = spectral.omega
    delta_base = lamb_shift_table(spectral)
    sel = res.kind == "resonant"
    pw = np.minimum(res.width[sel], res.width[sel] / np.abs(res.slope[sel]))
    pw = pw[pw > 0]
    centers = res.omega[sel][res.width[sel] > 0]
    peak_nodes = []
    h_bg = float(np.max(np.diff(base)))
    if t_end is not None:
        h_bg = min(h_bg, math.pi / (4.0 * t_end))
    for c, w in zip(centers, pw):
        reach = 10.0 * w + peak_points * h_bg
        lo, hi = max(0.0, c - reach), min(spectral.omega_max, c + reach)
        peak_nodes.append(march_nodes(lo, hi, [c], [w], peak_points, h_bg))
    peak_nodes = np.concatenate(peak_nodes) if peak_nodes else np.empty(0)
    background = np.empty(0)
    if t_end is not None and h_bg < 0.99 * np.max(np.diff(base)):
        # fill only the gaps of the spectral grid wider than h_bg
        gaps = np.nonzero(np.diff(base) > h_bg)[0]
        fill = [base[i] + h_bg * np.arange(1, int(np.ceil((base[i + 1] - base[i]) / h_bg)))
                for i in gaps]
        background = np.concatenate(fill) if fill else background
    grid = merge_nodes(base, peak_nodes, background, omega_max=spectral.omega_max)
    w = grid.omega
    on_base = np.isin(w, base)
    direct = ~on_base & np.isin(w, peak_nodes)
    smooth = ~on_base & ~direct
    idx = np.searchsorted(base, w[on_base])
    delta = np.empty_like(w)
    F = np.empty_like(w)
    delta[on_base] = delta_base[idx]
    F[on_base] = spectral.F[idx]
    if np.any(direct):
        delta[direct] = lamb_shift_at(w[direct], spectral)
    if np.any(smooth):
        # background nodes lie where the spectral grid is coarsest and delta smooth
        delta[smooth] = CubicSpline(base, delta_base)(w[smooth])
    F[~on_base] = spectral(w[~on_base])
    U = kernel_values(w, F, delta, spectral.emitter, g, eps_reg)
    return ResponseTable(grid=grid, F=F, delta=delta, U=U, gamma=g,
                         resonances=res, spectral=spectral)


# --------------------------------------------------------------------------
# bound state

@dataclass(frozen=True)
class BoundStateReport:
    gamma: float
    gamma_crit: float
    exists: bool
    omega_j: float = float("nan")
    residual: float = float("nan")
    weight: float = float("nan")


def inverse_moment(spectral: SpectralTable, shift: float, power: int = 1) -> float:
    """int_0^omega_max F(w) / (w + shift)^power dw on the spectral grid."""
    w = spectral.omega
    F = spectral.F.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = F / (w + shift) ** power
    if shift == 0 and w[0] == 0:
        # F vanishes linearly at w = 0
        vals[0] = float(spectral.derivative(np.array([0.0]))[0]) if power == 1 else vals[1]
    return float(np.dot(_simpson(spectral), vals))


def critical_gamma(spectral: SpectralTable) -> float:
    """gamma_crit = pi w_a / int F(w)/w dw."""
    return math.pi * spectral.emitter.omega_a / inverse_moment(spectral, 0.0)


def bound_state(spectral: SpectralTable, gamma: float | None = None,
                tol: float = 1e-10) -> BoundStateReport:
    """Pole of the resolvent below w = 0, at w = -w_j.

    It exists iff gamma > gamma_crit; then w_j + w_a = (gamma/pi) int F/(w + w_j)
    is solved by bracketing. ``weight`` is the residue |c(inf)|.
    """
    g = spectral.emitter.gamma if gamma is None else gamma
    gc = critical_gamma(spectral)
    if g <= gc:
        return BoundStateReport(gamma=g, gamma_crit=gc, exists=False)
    w_a = spectral.emitter.omega_a

    def pole(x):
        return x + w_a - g / np.pi * inverse_moment(spectral, x)

    hi = w_a
    while pole(hi) < 0:
        hi *= 2.0
    root = optimize.brentq(pole, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    residual = abs(pole(root))
    if residual > tol * max(1.0, w_a):
        raise NumericalPreconditionError(f"bound-state residual {residual:.3g} above tolerance")
    weight = 1.0 / (1.0 + g / np.pi * inverse_moment(spectral, root, 2))
    return BoundStateReport(gamma=g, gamma_crit=gc, exists=True, omega_j=root,
                            residual=residual, weight=weight)
