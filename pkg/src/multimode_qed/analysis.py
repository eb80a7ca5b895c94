"""Regime classification and scalar observables from response tables and traces."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks

from .dynamics import build_memory_kernel, evolve_laplace, evolve_volterra, time_grid
from .model import AmplitudeTrace, CavityConfig, EmitterConfig, NumericalPreconditionError, NumericsConfig
from .response import ResonanceSet, build_response, find_resonances, lamb_shift_at
from .spectral import SpectralTable, build_spectral_table

log = logging.getLogger(__name__)

REGIMES = ("weak", "strong_single_mode", "multimode_strong")
SOLVERS = ("laplace", "volterra", "systembath")
SWEEP_PARAMETERS = ("gamma", "eta", "x_a")
# destruction series at gamma = 1.44; the second is the literal alternative
ETA_SERIES = (0.1, 0.03, 0.015)
ETA_SERIES_LITERAL = (0.9, 0.3, 0.015)
SWEEP_COLUMNS = ("param_value", "regime", "resonance_count", "purcell_rate", "rabi_freq",
                 "first_revival_t", "first_revival_h")


@dataclass(frozen=True)
class Revival:
    t: float
    height: float


@dataclass(frozen=True)
class RegimeReport:
    """Regime label plus the scalar observables that characterise it.

    ``rabi_frequency`` is sqrt(2 w_a gamma) and is only set for the
    strong single-mode regime. ``within_fsr`` records whether two resonant
    roots lie within 2 pi of w_a.
    """

    regime: str
    resonance_count: int
    purcell_rate: float
    lamb_shift_at_omega_a: float
    rabi_frequency: float | None = None
    revival_times: tuple = ()
    revival_heights: tuple = ()
    within_fsr: bool = True

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if np.any(np.diff(self.revival_times) <= 0):
            raise ValueError("revival times must increase strictly")

    def as_dict(self) -> dict:
        return {"regime": self.regime, "resonance_count": self.resonance_count,
                "purcell_rate": self.purcell_rate,
                "lamb_shift_at_omega_a": self.lamb_shift_at_omega_a,
                "rabi_frequency": self.rabi_frequency,
                "revival_times": list(self.revival_times),
                "revival_heights": list(self.revival_heights),
                "within_fsr": self.within_fsr}


def find_revivals(trace: AmplitudeTrace, prominence: float = 0.02) -> list[Revival]:
    """Interior maxima of |c|^2 with at least the given prominence."""
    p = trace.abs2
    idx, _ = find_peaks(p, prominence=prominence)
    idx = idx[trace.times[idx] > 0]
    return [Revival(float(trace.times[i]), float(p[i])) for i in idx]


def classify(resonances: ResonanceSet, spectral: SpectralTable, gamma: float | None = None,
             trace: AmplitudeTrace | None = None, prominence: float = 0.02) -> RegimeReport:
    """Label the regime by the number of resonant roots.

    One resonant root is weak coupling, two are strong single-mode
    coupling and three or more are multimode strong coupling. A set with
    no resonant root (only possible with a regularised kernel) counts as weak.
    """
    g = spectral.emitter.gamma if gamma is None else gamma
    w_a = spectral.emitter.omega_a
    count = resonances.n_resonant
    res = resonances.resonant
    within = bool(np.all(np.abs(res - w_a) <= 2 * math.pi)) if res.size else True
    if count >= 3:
        regime = "multimode_strong"
    elif count == 2:
        regime = "strong_single_mode"
    else:
        regime = "weak"
    F_a = float(spectral(np.array([w_a]))[0])
    delta_a = float(lamb_shift_at(np.array([w_a]), spectral)[0])
    revivals = find_revivals(trace, prominence) if trace is not None else []
    return RegimeReport(
        regime=regime, resonance_count=count,
        purcell_rate=2.0 * g * F_a, lamb_shift_at_omega_a=g * delta_a,
        rabi_frequency=math.sqrt(2.0 * w_a * g) if regime == "strong_single_mode" else None,
        revival_times=tuple(r.t for r in revivals),
        revival_heights=tuple(r.height for r in revivals),
        within_fsr=within)


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit ln|c|^2 = a - rate t over a window.

    ``monotone`` is False when |c|^2 rises by more than ``rise_tol`` between
    samples or shows a peak of the revival prominence; the fit is then rejected.
    """

    rate: float
    intercept: float
    monotone: bool
    max_rise: float
    window: tuple

    @property
    def rejected(self) -> bool:
        return not self.monotone


def fit_decay(trace: AmplitudeTrace, window: tuple[float, float] | None = None,
              rise_tol: float = 1e-3, prominence: float = 0.02) -> DecayFit:
    t = trace.times
    lo, hi = (t[0], t[-1]) if window is None else window
    if lo < t[0] - 1e-12 or hi > t[-1] + 1e-12 or hi <= lo:
        raise NumericalPreconditionError(
            f"window [{lo}, {hi}] is not inside the trace [{t[0]}, {t[-1]}]")
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    p = trace.abs2[sel]
    if p.size < 2:
        raise NumericalPreconditionError("window holds fewer than two samples")
    if np.min(p) < 1e-14:
        raise NumericalPreconditionError("|c|^2 drops below 1e-14 inside the window")
    slope, intercept = np.polyfit(t[sel], np.log(p), 1)
    rise = float(max(np.max(np.diff(p)), 0.0))
    peaks, _ = find_peaks(p, prominence=prominence)
    monotone = rise <= rise_tol and peaks.size == 0
    if not monotone:
        log.info("non-monotone |c|^2 in the fit window (max rise %.3g)", rise)
    return DecayFit(rate=float(-slope), intercept=float(intercept), monotone=monotone,
                    max_rise=rise, window=(float(lo), float(hi)))


# --------------------------------------------------------------------------
# full pipeline and sweeps

@dataclass
class PipelineResult:
    spectral: SpectralTable
    resonances: ResonanceSet
    report: RegimeReport
    trace: AmplitudeTrace
    extra: dict = field(default_factory=dict)


def evolve(solver: str, cavity: CavityConfig, emitter: EmitterConfig, numerics: NumericsConfig,
           spectral: SpectralTable | None = None) -> AmplitudeTrace:
    """Run one solver on [0, t_end] with the configured step."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    t_end, dt = numerics.t_end, numerics.dt
    if solver == "systembath":
        from .systembath import build_mode_basis, evolve_bath
        return evolve_bath(build_mode_basis(cavity, emitter, numerics), emitter,
                           t_end, dt).amplitude_trace()
    if spectral is None:
        spectral = build_spectral_table(cavity, emitter, numerics)
    if solver == "laplace":
        if emitter.gamma == 0:
            # U collapses to a delta function at w_a; c stays 1
            t = time_grid(t_end, dt)
            return AmplitudeTrace(t, np.ones_like(t, dtype=complex), "laplace")
        response = build_response(spectral, emitter.gamma, numerics.peak_points,
                                  eps_reg=numerics.eps_reg)
        return evolve_laplace(response, emitter, t_end, dt)
    kernel = build_memory_kernel(spectral, emitter, dt, t_end, emitter.gamma)
    return evolve_volterra(kernel)


def run_pipeline(cavity: CavityConfig, emitter: EmitterConfig, numerics: NumericsConfig,
                 solver: str = "laplace", spectral: SpectralTable | None = None,
                 prominence: float = 0.02) -> PipelineResult:
    if spectral is None:
        spectral = build_spectral_table(cavity, emitter, numerics)
    res = find_resonances(spectral, emitter.gamma, numerics.eps_reg)
    trace = evolve(solver, cavity, emitter, numerics, spectral)
    report = classify(res, spectral, emitter.gamma, trace, prominence)
    return PipelineResult(spectral=spectral, resonances=res, report=report, trace=trace)


@dataclass(frozen=True)
class SweepRow:
    param_value: float
    report: RegimeReport | None
    error: str | None = None

    def as_csv(self) -> dict:
        r = self.report
        if r is None:
            return {"param_value": self.param_value, "regime": "error", "resonance_count": "",
                    "purcell_rate": "", "rabi_freq": "", "first_revival_t": "",
                    "first_revival_h": ""}
        return {"param_value": self.param_value, "regime": r.regime,
                "resonance_count": r.resonance_count, "purcell_rate": r.purcell_rate,
                "rabi_freq": "" if r.rabi_frequency is None else r.rabi_frequency,
                "first_revival_t": r.revival_times[0] if r.revival_times else "",
                "first_revival_h": r.revival_heights[0] if r.revival_heights else ""}


def _with_parameter(cavity, emitter, numerics, parameter, value):
    if parameter == "gamma":
        return cavity, replace(emitter, gamma=value), numerics
    if parameter == "eta":
        if cavity.mirror_mode != "delta":
            raise ValueError("an eta sweep needs delta mirrors")
        return replace(cavity, eta=value), emitter, numerics
    return replace(cavity, x_a=value), emitter, numerics


def _sweep_point(args) -> SweepRow:
    cavity, emitter, numerics, parameter, value, solver = args
    try:
        c, e, n = _with_parameter(cavity, emitter, numerics, parameter, value)
        n.validate_against(c, e)
        report = run_pipeline(c, e, n, solver).report
        return SweepRow(value, report)
    except Exception as exc:   # recorded per point; the sweep continues
        log.warning("sweep point %s = %g failed: %s", parameter, value, exc)
        return SweepRow(value, None, f"{type(exc).__name__}: {exc}")


def sweep(parameter: str, values, cavity: CavityConfig, emitter: EmitterConfig,
          numerics: NumericsConfig, solver: str = "laplace", workers: int = 1) -> list[SweepRow]:
    """One full pipeline run per value; failures are recorded per row.

    Points are independent; ``workers > 1`` runs them in separate processes.
    A gamma sweep shares one spectral table, since F does not depend on gamma.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    values = [float(v) for v in values]
    if not values:
        return []
    if parameter == "gamma" and workers <= 1:
        spectral = build_spectral_table(cavity, emitter, numerics)
        rows = []
        for v in values:
            try:
                e = replace(emitter, gamma=v)
                rows.append(SweepRow(v, run_pipeline(cavity, e, numerics, solver,
                                                     spectral=spectral).report))
            except Exception as exc:
                log.warning("sweep point gamma = %g failed: %s", v, exc)
                rows.append(SweepRow(v, None, f"{type(exc).__name__}: {exc}"))
        return rows
    jobs = [(cavity, emitter, numerics, parameter, v, solver) for v in values]
    if workers <= 1:
        return [_sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_point, jobs))


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.as_csv().items()})


def _fmt(value):
    if isinstance(value, float):
        return repr(value) if not math.isfinite(value) else f"{value:.17g}"
    return value
