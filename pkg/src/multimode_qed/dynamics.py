"""Time evolution of the excited-state amplitude by two independent routes.

The Laplace route inverts the tabulated kernel U with a panel-exact Filon
rule. The Volterra route builds the memory kernel K(tau) from F alone and
steps the integro-differential equation with product trapezoidal weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import AmplitudeTrace, BoundStateError, EmitterConfig, NumericalPreconditionError
from .quadrature import filon_transform, volterra_trapezoid
from .response import ResponseTable, bound_state
from .spectral import SpectralTable

log = logging.getLogger(__name__)


def time_grid(t_end: float, dt: float) -> np.ndarray:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise NumericalPreconditionError(f"t_end = {t_end} is not a multiple of dt = {dt}")
    return dt * np.arange(n + 1)


def kernel_bandwidth(spectral: SpectralTable) -> float:
    """RMS spread of F about w_a, the dominant oscillation rate of K(tau)."""
    w = spectral.omega
    wts = spectral.grid.weights
    norm = float(np.dot(wts, spectral.F))
    if norm == 0:
        return 0.0
    return math.sqrt(float(np.dot(wts, spectral.F * (w - spectral.emitter.omega_a) ** 2)) / norm)


def check_step(spectral: SpectralTable, dt: float) -> None:
    """dt must resolve the kernel: dt <= 1 / (4 x RMS bandwidth of F)."""
    bw = kernel_bandwidth(spectral)
    if bw > 0 and dt > 1.0 / (4.0 * bw):
        raise NumericalPreconditionError(
            f"dt = {dt} too coarse for the spectral bandwidth {bw:.4g}; "
            f"need dt <= {1.0 / (4.0 * bw):.3g}")


# --------------------------------------------------------------------------
# Laplace route

def evolve_laplace(response: ResponseTable, emitter: EmitterConfig | None = None,
                   t_end: float = 20.0, dt: float = 1e-3) -> AmplitudeTrace:
    """c(t) = (gamma/pi) int U(w) exp(-i (w - w_a) t) dw.

    Raises BoundStateError above the critical coupling, where the branch
    cut alone no longer represents c(t).
    """
    emitter = response.spectral.emitter if emitter is None else emitter
    t = time_grid(t_end, dt)
    if response.gamma == 0:
        return AmplitudeTrace(t, np.ones_like(t, dtype=complex), "laplace")
    report = bound_state(response.spectral, response.gamma)
    if report.exists:
        raise BoundStateError(
            f"gamma = {response.gamma} exceeds gamma_crit = {report.gamma_crit:.6g}; "
            "a bound-state pole exists and the Laplace route does not include it. "
            "Use the volterra solver instead.")
    x = response.omega - emitter.omega_a
    c = response.gamma / np.pi * filon_transform(x, response.U, 0.0, dt, t.size)
    trace = AmplitudeTrace(t, c, "laplace")
    trace.check_invariants(tol_initial=1e-4)
    return trace


# --------------------------------------------------------------------------
# Volterra route

@dataclass(frozen=True)
class MemoryKernel:
    """K(tau) = (gamma/pi) int F(w) exp(-i (w - w_a) tau) dw on a uniform grid."""

    tau: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    gamma: float

    def __post_init__(self):
        if self.tau.shape != self.K.shape:
            raise ValueError("tau and K differ in length")

    @property
    def dt(self) -> float:
        return float(self.tau[1] - self.tau[0])

    def check_invariants(self, rtol: float = 1e-10) -> None:
        k0 = self.K[0]
        if self.gamma > 0:
            if k0.real <= 0 or abs(k0.imag) > rtol * k0.real:
                raise NumericalPreconditionError("K(0) must be real and positive")
            if np.max(np.abs(self.K)) > k0.real * (1 + 1e-9):
                raise NumericalPreconditionError("|K(tau)| exceeds K(0)")


def build_memory_kernel(spectral: SpectralTable, emitter: EmitterConfig | None = None,
                        dt: float = 1e-3, t_end: float = 20.0,
                        gamma: float | None = None) -> MemoryKernel:
    emitter = spectral.emitter if emitter is None else emitter
    g = emitter.gamma if gamma is None else gamma
    tau = time_grid(t_end, dt)
    if g == 0:
        return MemoryKernel(tau, np.zeros_like(tau, dtype=complex), 0.0)
    check_step(spectral, dt)
    x = spectral.omega - emitter.omega_a
    K = g / np.pi * filon_transform(x, spectral.F, 0.0, dt, tau.size)
    # the tau = 0 value is a plain integral; drop round-off in the phase sum
    K[0] = K[0].real
    kernel = MemoryKernel(tau, K, g)
    kernel.check_invariants()
    return kernel


def evolve_volterra(kernel: MemoryKernel) -> AmplitudeTrace:
    """Solve c' = -int_0^t K(t - s) c(s) ds with c(0) = 1."""
    c = volterra_trapezoid(np.ascontiguousarray(kernel.K), kernel.dt)
    trace = AmplitudeTrace(kernel.tau.copy(), c, "volterra")
    trace.check_invariants()
    return trace


def cross_check(a: AmplitudeTrace, b: AmplitudeTrace) -> float:
    """Sup-norm deviation max_t |c_a(t) - c_b(t)| on identical time grids."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError("traces are on different time grids")
    return float(np.max(np.abs(a.c - b.c)))
