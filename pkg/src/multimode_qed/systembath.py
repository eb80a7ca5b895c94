"""System-and-bath model: discrete symmetric cavity modes damped by one
external continuum in the Markov approximation.

In the frame a_l = c_l exp(-i (w_l - w_a) t) the equations are linear with
constant coefficients,

    c'   = -i sum_l g_l a_l
    a_l' = -i (w_l - w_a) a_l - i conj(g_l) c + sum_m Gamma_lm a_m,

and are integrated with classical RK4 at a fixed step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from .model import (AmplitudeTrace, CavityConfig, ConfigError, EmitterConfig,
                    NumericalPreconditionError, NumericsConfig)

log = logging.getLogger(__name__)


def coupling_constant(gamma: float) -> float:
    """Dipole constant mu of the mode model for a given gamma.

    mu = sqrt(gamma / 2) makes the single-mode splitting 2|g| equal
    sqrt(2 w_a gamma) at w_l = w_a.
    """
    return math.sqrt(gamma / 2.0)


def cutoff(omega, emitter: EmitterConfig):
    """f_c(w) = exp(-(w - w_a)^2 / (4 w_c^2))."""
    w = np.asarray(omega, dtype=float)
    return np.exp(-((w - emitter.omega_a) ** 2) / (4.0 * emitter.omega_c ** 2))


def _channel_weight(omega, eta: float):
    """h(w) = 1 / (w (1 + eta^2 w^2)); W_l W_m^* = s_l s_m sqrt(w_l w_m) f_l f_m h / (pi L)."""
    w = np.asarray(omega, dtype=float)
    return 1.0 / (w * (1.0 + (eta * w) ** 2))


def channel_pv(x, eta: float, omega_min: float):
    """P int_{omega_min}^inf h(w) / (w - x) dw in closed form (partial fractions).

    1 / (w (1 + a w^2) (w - x)) = A/w + B/(w - x) + (C w + D)/(1 + a w^2)
    with a = eta^2; the logarithms cancel at infinity.
    """
    x = np.asarray(x, dtype=float)
    a = eta * eta
    A = -1.0 / x
    B = _channel_weight(x, eta)
    C = -(A + B) * a
    D = A * a * x + C * x
    sa = math.sqrt(a)

    def antideriv(w):
        return (A * np.log(w) + B * np.log(np.abs(w - x))
                + C / (2 * a) * np.log1p(a * w * w) + D / sa * np.arctan(sa * w))

    at_inf = C / (2 * a) * math.log(a) + D / sa * (0.5 * math.pi)
    return at_inf - antideriv(omega_min)


def channel_pv_numeric(x: float, eta: float, omega_min: float, upper: float,
                       n: int = 200_001) -> tuple[float, float]:
    """Same integral by singularity subtraction on [omega_min, upper].

    Returns (value, tail_bound); beyond ``upper`` the integrand is below
    1 / (eta^2 w^3) so the tail is at most 1 / (2 eta^2 upper^2).
    """
    # geometric nodes follow the 1/w behaviour of h near omega_min
    w = np.geomspace(omega_min, upper, n)
    hx = float(_channel_weight(x, eta))
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (_channel_weight(w, eta) - hx) / (w - x)
    near = np.abs(w - x) < 1e-12 * x
    if np.any(near):
        eps = 1e-6 * x
        g[near] = (float(_channel_weight(x + eps, eta)) - float(_channel_weight(x - eps, eta))) / (2 * eps)
    val = trapezoid(g, w)
    val += hx * math.log((upper - x) / (x - omega_min))
    return float(val), 1.0 / (2.0 * eta ** 2 * upper ** 2)


@dataclass(frozen=True)
class ModeBasis:
    """Retained symmetric modes, their couplings and the damping matrix."""

    index: np.ndarray
    omega: np.ndarray
    g: np.ndarray = field(repr=False)
    f_c: np.ndarray = field(repr=False)
    Gamma: np.ndarray = field(repr=False)
    omega_min_bath: float
    mu: float

    def __post_init__(self):
        if self.omega.size == 0:
            raise ConfigError("mode_cut retains no cavity modes")
        if np.any(np.diff(self.omega) <= 0):
            raise ValueError("mode frequencies must increase")
        if np.any(np.diag(self.Gamma).real > 0):
            raise ValueError("diagonal damping must be dissipative")

    def __len__(self) -> int:
        return self.omega.size


def build_mode_basis(cavity: CavityConfig, emitter: EmitterConfig, numerics: NumericsConfig,
                     mu: float | None = None, shift: bool = True) -> ModeBasis:
    """Symmetric modes w_l = pi (2 l - 1) / L with f_c(w_l)^2 >= mode_cut.

    ``shift=False`` drops the principal-value (frequency shift) part of Gamma.
    """
    if cavity.mirror_mode != "delta":
        raise ConfigError("the mode model needs delta mirrors (eta)")
    if not cavity.centered:
        raise ConfigError("the mode model needs the emitter at x_a = L/2")
    L = cavity.L
    mu = coupling_constant(emitter.gamma) if mu is None else mu
    # f_c^2 >= mode_cut  <=>  |w - w_a| <= w_c sqrt(2 ln(1/mode_cut))
    reach = emitter.omega_c * math.sqrt(2.0 * math.log(1.0 / numerics.mode_cut))
    lam_max = int(math.floor(((emitter.omega_a + reach) * L / math.pi + 1) / 2))
    lam = np.arange(1, max(lam_max, 1) + 1)
    w = math.pi * (2 * lam - 1) / L
    f = cutoff(w, emitter)
    keep = f ** 2 >= numerics.mode_cut
    lam, w, f = lam[keep], w[keep], f[keep]
    if lam.size == 0:
        raise ConfigError("mode_cut retains no cavity modes")
    eta = cavity.eta
    v = (-1.0) ** lam * np.sqrt(w) * f
    kappa = -_channel_weight(w, eta).astype(complex)
    if shift:
        kappa = kappa + 1j * channel_pv(w, eta, numerics.omega_min_bath) / math.pi
    # Gamma_lm = v_l v_m (-h(w_m) + i PV(w_m) / pi) / L
    Gamma = np.outer(v, v * kappa) / L
    g = 1j * mu * np.sqrt(w / L) * f
    return ModeBasis(index=lam, omega=w, g=g, f_c=f, Gamma=Gamma,
                     omega_min_bath=numerics.omega_min_bath, mu=mu)


def generator(basis: ModeBasis, emitter: EmitterConfig) -> np.ndarray:
    """Matrix A of y' = A y for y = (c, a_1, ..., a_M)."""
    m = len(basis)
    A = np.zeros((m + 1, m + 1), dtype=complex)
    A[0, 1:] = -1j * basis.g
    A[1:, 0] = -1j * np.conj(basis.g)
    A[1:, 1:] = basis.Gamma - 1j * np.diag(basis.omega - emitter.omega_a)
    return A


@dataclass(frozen=True)
class BathTrace:
    times: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    c_modes: np.ndarray = field(repr=False)
    basis: ModeBasis = field(repr=False)

    @property
    def norm(self) -> np.ndarray:
        return np.abs(self.c) ** 2 + np.sum(np.abs(self.c_modes) ** 2, axis=1)

    @property
    def abs2(self) -> np.ndarray:
        return np.abs(self.c) ** 2

    def amplitude_trace(self) -> AmplitudeTrace:
        return AmplitudeTrace(self.times, self.c, "systembath")


def evolve_bath(basis: ModeBasis, emitter: EmitterConfig, t_end: float = 20.0,
                dt: float = 1e-3) -> BathTrace:
    """Fixed-step RK4 from c(0) = 1, c_l(0) = 0.

    For a linear autonomous system one RK4 step is multiplication by the
    degree-4 Taylor polynomial of exp(dt A), which is formed once.
    """
    from .dynamics import time_grid
    t = time_grid(t_end, dt)
    A = generator(basis, emitter)
    detuning = float(np.max(np.abs(basis.omega - emitter.omega_a)))
    if dt * detuning > 1.0:
        raise NumericalPreconditionError(
            f"dt = {dt} does not resolve the mode detuning {detuning:.4g}; need dt <= {1 / detuning:.3g}")
    hA = dt * A
    step = np.eye(A.shape[0], dtype=complex)
    term = step.copy()
    for k in range(1, 5):
        term = term @ hA / k
        step = step + term
    y = np.zeros((t.size, A.shape[0]), dtype=complex)
    y[0, 0] = 1.0
    for n in range(1, t.size):
        y[n] = step @ y[n - 1]
    # back to the amplitudes of the ansatz: c_l = a_l exp(i (w_l - w_a) t)
    phase = np.exp(1j * np.outer(t, basis.omega - emitter.omega_a))
    trace = BathTrace(times=t, c=y[:, 0], c_modes=y[:, 1:] * phase, basis=basis)
    norm = trace.norm
    rise = float(np.max(np.diff(norm))) if norm.size > 1 else 0.0
    if rise > 0:
        log.info("norm increases by up to %.3g per step", rise)
    if np.max(norm) > 1.0 + 1e-2:
        log.warning("norm exceeds 1 by %.3g", float(np.max(norm) - 1.0))
    return trace


def _memory_factor(x, s):
    """(exp(-i x s) - 1) / x, finite at x = 0 where it equals -i s."""
    half = 0.5 * x * s
    return -s * (np.sin(half) * np.sinc(half / np.pi) + 1j * np.sinc(x * s / np.pi))


def evolve_bath_volterra(basis: ModeBasis, emitter: EmitterConfig, t_end: float,
                         dt: float) -> BathTrace:
    """Direct trapezoidal solution of the coupled integral equations.

    O(N^2 M^2) work; only meant for short horizons as a cross-check of the
    RK4 route. The memory factor (exp(-i x s) - 1)/x is evaluated without
    cancellation, so a mode exactly at w_a is handled.
    """
    from .dynamics import time_grid
    t = time_grid(t_end, dt)
    n, m = t.size, len(basis)
    x = basis.omega - emitter.omega_a
    g, G = basis.g, basis.Gamma
    c = np.zeros(n, dtype=complex)
    cl = np.zeros((n, m), dtype=complex)
    c[0] = 1.0
    w = np.full(n, dt)
    w[0] = 0.5 * dt

    def mode_phase(tau):
        # exp(-i (w_m - w_l) tau) as an (l, m) matrix
        return np.exp(-1j * np.subtract.outer(-basis.omega, -basis.omega) * tau)

    src = np.zeros(m, dtype=complex)     # sum_{j<k} w_j exp(i x tau_j) c_j
    hist = np.zeros(m, dtype=complex)    # sum_{j<k} w_j (Gamma o P(tau_j)) c_l(tau_j)
    for k in range(1, n):
        tk = t[k]
        past = slice(0, k)
        mem = _memory_factor(x[:, None], tk - t[None, past])           # (l, j)
        # the memory factor vanishes at tau = t, so c(t_k) is explicit
        term1 = -1j * np.sum(np.abs(g) ** 2 * (mem @ (w[past] * c[past])))
        drive = np.exp(-1j * np.outer(t[past], x)) * cl[past]          # (j, l')
        term2 = np.sum(g[:, None] * G * (mem @ (w[past, None] * drive)))
        c[k] = 1.0 + term1 + term2

        j = k - 1
        src += w[j] * np.exp(1j * x * t[j]) * c[j]
        hist += w[j] * (G * mode_phase(t[j])) @ cl[j]
        rhs = -1j * np.conj(g) * (src + 0.5 * dt * np.exp(1j * x * tk) * c[k]) + hist
        lhs = np.eye(m) - 0.5 * dt * G * mode_phase(tk)
        cl[k] = np.linalg.solve(lhs, rhs)
    return BathTrace(times=t, c=c, c_modes=cl, basis=basis)


# --------------------------------------------------------------------------
# comparison with the single-equation route

@dataclass(frozen=True)
class PeakComparison:
    times_a: np.ndarray
    times_b: np.ndarray
    heights_a: np.ndarray
    heights_b: np.ndarray
    peak_time_offsets: np.ndarray
    peak_height_ratios: np.ndarray
    structural_disagreement: bool
    period_a: float
    period_b: float

    def as_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}

    @property
    def period_ratio(self) -> float:
        return self.period_a / self.period_b


def _peaks(times, abs2, prominence):
    idx, _ = find_peaks(abs2, prominence=prominence)
    idx = idx[times[idx] > 0]
    return times[idx], abs2[idx]


def peak_period(peak_times) -> float:
    """Least-squares spacing of the sequence 0, t_1, t_2, ...; nan without peaks."""
    seq = np.concatenate(([0.0], np.asarray(peak_times, dtype=float)))
    if seq.size < 2:
        return float("nan")
    return float(np.polyfit(np.arange(seq.size), seq, 1)[0])


def compare_with_primary(bath, primary: AmplitudeTrace, prominence: float = 0.02) -> PeakComparison:
    """Pair the |c|^2 peaks of two traces in order and report offsets and ratios.

    ``bath`` may be a BathTrace or an AmplitudeTrace. Peak counts that differ
    by more than one are reported as a structural disagreement.
    """
    if not np.allclose(bath.times[[0, -1]], primary.times[[0, -1]]):
        raise ValueError("traces cover different time ranges")
    ta, ha = _peaks(bath.times, np.abs(bath.c) ** 2, prominence)
    tb, hb = _peaks(primary.times, primary.abs2, prominence)
    k = min(ta.size, tb.size)
    return PeakComparison(times_a=ta, times_b=tb, heights_a=ha, heights_b=hb,
                          peak_time_offsets=ta[:k] - tb[:k],
                          peak_height_ratios=ha[:k] / hb[:k],
                          structural_disagreement=abs(ta.size - tb.size) > 1,
                          period_a=peak_period(ta), period_b=peak_period(tb))
