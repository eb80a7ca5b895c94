"""Mirror reflection, 1D Green's function, LDOPS and the spectral function F."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import CavityConfig, EmitterConfig, FrequencyGrid, NumericsConfig

log = logging.getLogger(__name__)

SOURCES = ("closed_form", "green_function")


def mirror_reflection(omega, eta):
    """Reflection amplitude i w eta / (2 - i w eta) of a thin delta mirror."""
    x = 1j * np.asarray(omega, dtype=float) * eta
    return x / (2.0 - x)


def coupling_strength(omega, emitter: EmitterConfig):
    """|g(w)|^2 = (pi/2) w exp(-(w - w_a)^2 / (2 w_c^2))."""
    w = np.asarray(omega, dtype=float)
    return 0.5 * np.pi * w * np.exp(-((w - emitter.omega_a) ** 2) / (2.0 * emitter.omega_c ** 2))


# --------------------------------------------------------------------------
# transfer-matrix Green's function

def _propagate(u, du, length, k):
    """Advance (u, u') of u'' + k^2 u = 0 by ``length`` (may be negative)."""
    c = np.cos(k * length)
    s = np.sin(k * length)
    return c * u + s / k * du, -k * s * u + c * du


def _mirror_layers(cavity: CavityConfig):
    """Left and right mirror as ((x0, x1, n) slab) or (x, eta) sheet."""
    L = cavity.L
    if cavity.mirror_mode == "finite":
        return ("slab", -cavity.d, 0.0, cavity.n), ("slab", L, L + cavity.d, cavity.n)
    return ("sheet", 0.0, cavity.eta), ("sheet", L, cavity.eta)


def _outer_edges(cavity: CavityConfig):
    if cavity.mirror_mode == "finite":
        return -cavity.d, cavity.L + cavity.d
    return 0.0, cavity.L


def _through_mirror(u, du, w, mirror, leftward: bool):
    if mirror[0] == "sheet":
        # u'' + w^2 u + eta w^2 delta(x - x_m) u = 0: u' jumps by -eta w^2 u
        jump = mirror[2] * w ** 2 * u
        return u, (du + jump) if leftward else (du - jump)
    _, x0, x1, n = mirror
    return _propagate(u, du, (x0 - x1) if leftward else (x1 - x0), n * w)


def _fundamental_solutions(x, w, cavity: CavityConfig):
    """Outgoing-left and outgoing-right solutions (value, slope) at x in the gap."""
    left, right = _mirror_layers(cavity)
    x_left, x_right = _outer_edges(cavity)
    L = cavity.L
    one = np.ones_like(w, dtype=complex)

    # outgoing to the right: exp(i w (x - x_right)) beyond the right mirror
    u, du = one, 1j * w * one
    u, du = _through_mirror(u, du, w, right, leftward=True)
    uR, duR = _propagate(u, du, x - L, w)

    # outgoing to the left: exp(-i w (x - x_left)) before the left mirror
    u, du = one, -1j * w * one
    u, du = _through_mirror(u, du, w, left, leftward=False)
    uL, duL = _propagate(u, du, x, w)
    return (uL, duL), (uR, duR)


@dataclass(frozen=True)
class GreenEvaluation:
    omega: np.ndarray
    G: np.ndarray
    rho: np.ndarray


def green_function(x_a: float, omega, cavity: CavityConfig) -> GreenEvaluation:
    """Retarded Green's function G+(x_a, x_a, w) of (d^2 + n^2 w^2) G = -delta.

    The LDOPS is rho = (2 w / pi) |Im G+|; with this sign convention Im G+ is
    positive, so the modulus only fixes the orientation.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(w <= 0):
        raise ValueError("green_function needs omega > 0")
    if not 0 < x_a < cavity.L:
        raise ValueError(f"x_a must lie inside (0, {cavity.L})")
    (uL, duL), (uR, duR) = _fundamental_solutions(x_a, w, cavity)
    wronskian = uL * duR - duL * uR
    G = -uL * uR / wronskian
    rho = 2.0 * w / np.pi * np.abs(G.imag)
    return GreenEvaluation(omega=w, G=G, rho=rho)


def check_green_sign(G: np.ndarray) -> None:
    """Im G+ must keep one sign over a grid; anything else is a solver fault."""
    im = G.imag
    if np.any(im > 0) and np.any(im < 0):
        raise RuntimeError("Im G+ changes sign over the grid")


def ldops_closed_form(omega, cavity: CavityConfig):
    """Midpoint LDOPS from the closed-form Fabry-Perot expression.

    Finite mirrors use the printed slab formula; delta mirrors use its
    n -> inf, d -> 0 limit at fixed eta = n^2 d.
    """
    if not cavity.centered:
        raise ValueError("closed_form LDOPS is only valid at x_a = L/2")
    w = np.asarray(omega, dtype=float)
    L = cavity.L
    if cavity.mirror_mode == "finite":
        n, d = cavity.n, cavity.d
        nd = w * n * d
        den = ((n ** 2 + 1) ** 2 - (n ** 2 - 1) ** 2 * np.cos(2 * nd)
               + 2 * (n ** 4 - 1) * np.cos(w * L) * np.sin(nd) ** 2
               + 2 * n * (n ** 2 - 1) * np.sin(w * L) * np.sin(2 * nd))
        return 4.0 * n ** 2 / (np.pi * den)
    a = cavity.eta * w
    den = 2.0 + a ** 2 * (1.0 + np.cos(w * L)) + 2.0 * a * np.sin(w * L)
    return 2.0 / (np.pi * den)


def ldops(omega, cavity: CavityConfig, source: str = "green_function"):
    w = np.asarray(omega, dtype=float)
    if source == "closed_form":
        return ldops_closed_form(w, cavity)
    if source != "green_function":
        raise ValueError(f"unknown source {source!r}")
    out = np.zeros_like(w)
    pos = w > 0
    if np.any(pos):
        out[pos] = green_function(cavity.x_a, w[pos], cavity).rho
    return out


def spectral_values(omega, cavity: CavityConfig, emitter: EmitterConfig,
                    source: str = "green_function"):
    """F(w) = rho(x_a, w) |g(w)|^2 evaluated pointwise."""
    return ldops(omega, cavity, source) * coupling_strength(omega, emitter)


# --------------------------------------------------------------------------
# cavity resonances (used to place grid nodes)

def inner_reflection(omega, cavity: CavityConfig):
    """Reflection amplitude of the right mirror seen from inside, referenced at x = L."""
    w = np.asarray(omega, dtype=float)
    if cavity.mirror_mode == "delta":
        return mirror_reflection(w, cavity.eta)
    _, right = _mirror_layers(cavity)
    one = np.ones_like(w, dtype=complex)
    u, du = _through_mirror(one, 1j * w * one, w, right, leftward=True)
    # u = A + B, u' = i w (A - B) at x = L; r = B / A
    A = 0.5 * (u + du / (1j * w))
    B = 0.5 * (u - du / (1j * w))
    return B / A


def cavity_resonances(cavity: CavityConfig, omega_max: float, r_min: float = 0.3):
    """Fabry-Perot resonances (both parities) below ``omega_max``.

    Returns (centers, half_widths); the half-width is the amplitude decay
    rate -ln|r| / L. Resonances of nearly transparent mirrors (|r| < r_min)
    are dropped.
    """
    L = cavity.L
    h = math.pi / (16.0 * L)
    w = np.arange(h, omega_max + h, h)

    def phase_test(x):
        return np.imag(inner_reflection(x, cavity) * np.exp(1j * np.asarray(x) * L))

    vals = phase_test(w)
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    centers = []
    for i in idx:
        root = brentq(lambda x: float(phase_test(x)), w[i], w[i + 1], xtol=1e-13)
        r = inner_reflection(root, cavity)
        # Im(r e^{i w L}) also vanishes where r itself passes through zero
        if abs(r) >= r_min:
            centers.append(root)
    centers = np.array(centers)
    hw = -np.log(np.abs(inner_reflection(centers, cavity))) / L
    return centers, hw


def resonance_frequency(cavity: CavityConfig, index: int) -> float:
    """Frequency of the index-th symmetric resonance (near (2 index - 1) pi / L).

    Located as the LDOPS maximum at the cavity center.
    """
    L = cavity.L
    guess = (2 * index - 1) * math.pi / L
    centers, hw = cavity_resonances(cavity, guess + math.pi / L)
    k = int(np.argmin(np.abs(centers - guess)))
    c, width = centers[k], hw[k]
    probe = CavityConfig(L=L, mirror_mode=cavity.mirror_mode, eta=cavity.eta if cavity.mirror_mode == "delta" else None,
                         n=cavity.n, d=cavity.d, x_a=0.5 * L)
    res = minimize_scalar(lambda x: -float(ldops(np.array([x]), probe)[0]),
                          bounds=(c - 2 * width, c + 2 * width), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x)


# --------------------------------------------------------------------------
# spectral table

@dataclass(frozen=True)
class SpectralTable:
    """F sampled on a frequency grid, with the configs needed to re-evaluate it."""

    grid: FrequencyGrid
    F: np.ndarray = field(repr=False)
    source: str
    cavity: CavityConfig
    emitter: EmitterConfig
    features: tuple = field(default=((), ()), repr=False)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if F.shape != self.grid.omega.shape:
            raise ValueError("F and grid differ in length")
        if np.any(F < 0):
            raise ValueError("spectral function must be non-negative")
        F.setflags(write=False)
        object.__setattr__(self, "F", F)

    @property
    def omega(self) -> np.ndarray:
        return self.grid.omega

    @property
    def omega_max(self) -> float:
        return float(self.grid.omega[-1])

    def __call__(self, omega):
        """Exact F at arbitrary frequencies (not interpolated)."""
        return spectral_values(omega, self.cavity, self.emitter, self.source)

    def derivative(self, omega, rel_step: float = 1e-6):
        w = np.asarray(omega, dtype=float)
        h = rel_step * np.maximum(1.0, np.abs(w))
        lo = np.maximum(w - h, 0.0)
        return (self(w + h) - self(lo)) / (w + h - lo)


def resolved_resonances(cavity: CavityConfig, emitter: EmitterConfig,
                        numerics: NumericsConfig):
    """Cavity resonances that actually peak in F at the emitter position.

    Modes with a node at x_a (rho below twice the free-space value at the
    resonance) and modes whose spectral weight is below quad_rel_tol of
    the emitter's total are dropped.
    """
    centers, hw = cavity_resonances(cavity, numerics.omega_max)
    if centers.size == 0:
        return centers, hw
    peaked = ldops(centers, cavity) > 2.0 / np.pi
    weight = np.pi * coupling_strength(centers, emitter)
    total = np.pi * coupling_strength(emitter.omega_a, emitter) * emitter.omega_c
    keep = peaked & (weight >= numerics.quad_rel_tol * total)
    return centers[keep], hw[keep]


def feature_density(numerics: NumericsConfig) -> int:
    """Nodes per half-width used for cavity resonances of F."""
    return max(4, int(numerics.peak_points) // 2)


def spectral_grid(cavity: CavityConfig, emitter: EmitterConfig, numerics: NumericsConfig,
                  spacing: float | None = None, features=None) -> FrequencyGrid:
    """Nodes resolving every relevant cavity resonance below omega_max.

    ``spacing`` is the background spacing, pi / (4 t_end) by default.
    """
    from .grids import feature_grid
    if features is None:
        features = resolved_resonances(cavity, emitter, numerics)
    if spacing is None:
        spacing = math.pi / (4.0 * numerics.t_end)
    centers, hw = features
    return feature_grid(numerics.omega_max, centers, hw, spacing, feature_density(numerics))


def spectral_function(grid: FrequencyGrid, cavity: CavityConfig, emitter: EmitterConfig,
                      source: str = "green_function", features=None) -> SpectralTable:
    """Sample F on ``grid`` from the Green's function or the closed form."""
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}")
    if source == "closed_form" and not cavity.centered:
        raise ValueError("closed_form source requires x_a = L/2")
    w = grid.omega
    F = np.zeros_like(w)
    pos = w > 0
    if source == "green_function":
        ev = green_function(cavity.x_a, w[pos], cavity)
        check_green_sign(ev.G)
        F[pos] = ev.rho * coupling_strength(w[pos], emitter)
    else:
        F[pos] = spectral_values(w[pos], cavity, emitter, source)
    if features is None:
        features = ((), ())
    return SpectralTable(grid=grid, F=F, source=source, cavity=cavity,
                         emitter=emitter, features=features)


def build_spectral_table(cavity: CavityConfig, emitter: EmitterConfig,
                         numerics: NumericsConfig, source: str = "green_function",
                         spacing: float | None = None) -> SpectralTable:
    """Adaptive grid plus sampled F; the usual entry point."""
    features = resolved_resonances(cavity, emitter, numerics)
    grid = spectral_grid(cavity, emitter, numerics, spacing=spacing, features=features)
    return spectral_function(grid, cavity, emitter, source, features=features)
