"""Configuration types, presets and config-file ingestion.

All quantities are dimensionless: the cavity length is the unit of length
(c = 1), time is measured in units of the half round-trip time L/c and
frequencies in its inverse.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


class NumericalPreconditionError(RuntimeError):
    """A numerical precondition (step size, grid size, window) is violated."""


class BoundStateError(RuntimeError):
    """The coupling exceeds the critical value; a bound-state pole exists."""


def _require(cond: bool, key: str, bound: str, value) -> None:
    if not cond:
        raise ConfigError(f"{key} must be {bound} (got {value!r})")


@dataclass(frozen=True)
class CavityConfig:
    """Symmetric Fabry-Perot cavity bounded by two thin mirrors.

    ``mirror_mode`` is ``"delta"`` (transparency ``eta`` only) or ``"finite"``
    (dielectric slabs of index ``n`` and width ``d`` placed just outside the
    vacuum gap ``[0, L]``).
    """

    L: float = 1.0
    mirror_mode: str = "delta"
    eta: Optional[float] = 0.1
    n: Optional[float] = None
    d: Optional[float] = None
    x_a: Optional[float] = None

    def __post_init__(self):
        _require(self.L > 0, "L", "> 0", self.L)
        if self.x_a is None:
            object.__setattr__(self, "x_a", 0.5 * self.L)
        _require(0 < self.x_a < self.L, "x_a", f"in (0, {self.L})", self.x_a)
        if self.mirror_mode == "delta":
            _require(self.eta is not None and self.eta > 0, "eta", "> 0", self.eta)
        elif self.mirror_mode == "finite":
            _require(self.n is not None and self.n > 1, "n", "> 1", self.n)
            _require(self.d is not None and 0 < self.d < self.L / 10,
                     "d", f"in (0, {self.L / 10})", self.d)
            object.__setattr__(self, "eta", self.n ** 2 * self.d)
        else:
            raise ConfigError(f"mirror_mode must be 'delta' or 'finite' (got {self.mirror_mode!r})")

    @property
    def derived_eta(self) -> float:
        """Transparency factor n^2 d (equal to ``eta`` in delta mode)."""
        return float(self.eta)

    @property
    def centered(self) -> bool:
        return abs(self.x_a - 0.5 * self.L) <= 1e-12 * self.L


@dataclass(frozen=True)
class EmitterConfig:
    omega_a: float
    gamma: float
    omega_c: Optional[float] = None

    def __post_init__(self):
        _require(self.omega_a > 0, "omega_a", "> 0", self.omega_a)
        _require(self.gamma >= 0, "gamma", ">= 0", self.gamma)
        if self.omega_c is None:
            object.__setattr__(self, "omega_c", 2.0 * self.omega_a)
        _require(self.omega_c > 0, "omega_c", "> 0", self.omega_c)


@dataclass(frozen=True)
class NumericsConfig:
    omega_max: float
    quad_rel_tol: float = 1e-8
    peak_points: int = 20
    dt: float = 1e-3
    t_end: float = 20.0
    omega_min_bath: float = 0.1 * math.pi
    mode_cut: float = 1e-8
    eps_reg: float = 0.0

    def __post_init__(self):
        _require(self.dt > 0, "dt", "> 0", self.dt)
        _require(self.t_end > 0, "t_end", "> 0", self.t_end)
        _require(self.quad_rel_tol > 0, "quad_rel_tol", "> 0", self.quad_rel_tol)
        _require(int(self.peak_points) >= 2, "peak_points", ">= 2", self.peak_points)
        _require(0 < self.mode_cut < 1, "mode_cut", "in (0, 1)", self.mode_cut)
        _require(self.eps_reg >= 0, "eps_reg", ">= 0", self.eps_reg)

    def validate_against(self, cavity: CavityConfig, emitter: EmitterConfig) -> None:
        _require(self.omega_max > emitter.omega_a, "omega_max",
                 f"> omega_a = {emitter.omega_a}", self.omega_max)
        _require(0 < self.omega_min_bath < math.pi / cavity.L, "omega_min_bath",
                 f"in (0, pi/L = {math.pi / cavity.L})", self.omega_min_bath)


def default_omega_max(emitter: EmitterConfig) -> float:
    # Gaussian factor exp(-32) < 2e-14 at omega_a + 8 omega_c
    return emitter.omega_a + 8.0 * emitter.omega_c


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing, non-negative frequency nodes."""

    omega: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("frequency grid needs at least two nodes")
        if w[0] < 0:
            raise ValueError("frequency grid must start at omega >= 0")
        if np.any(np.diff(w) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    def __len__(self) -> int:
        return self.omega.size

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal weights of the piecewise-linear interpolant."""
        h = np.diff(self.omega)
        wts = np.zeros_like(self.omega)
        wts[:-1] += 0.5 * h
        wts[1:] += 0.5 * h
        return wts

    @property
    def simpson_weights(self) -> np.ndarray:
        """Composite Simpson weights for non-uniform nodes.

        Intended for smoothly graded grids (neighbouring spacings within a
        factor of two); an odd trailing interval uses the 3-point correction.
        """
        x = self.omega
        h = np.diff(x)
        wts = np.zeros_like(x)
        m = (h.size // 2) * 2
        h0, h1 = h[0:m:2], h[1:m:2]
        s = (h0 + h1) / 6.0
        np.add.at(wts, np.arange(0, m, 2), s * (2.0 - h1 / h0))
        np.add.at(wts, np.arange(1, m, 2), s * (h0 + h1) ** 2 / (h0 * h1))
        np.add.at(wts, np.arange(2, m + 1, 2), s * (2.0 - h0 / h1))
        if h.size % 2:
            if h.size == 1:
                return self.weights
            h0, h1 = h[-2], h[-1]
            wts[-1] += (2 * h1 ** 2 + 3 * h0 * h1) / (6 * (h0 + h1))
            wts[-2] += (h1 ** 2 + 3 * h0 * h1) / (6 * h0)
            wts[-3] -= h1 ** 3 / (6 * h0 * (h0 + h1))
        return wts

    def integrate(self, values: np.ndarray, rule: str = "trapezoid") -> complex | float:
        wts = self.simpson_weights if rule == "simpson" else self.weights
        return np.dot(wts, values)


@dataclass(frozen=True)
class AmplitudeTrace:
    """Excited-state amplitude c(t) on a uniform time grid."""

    times: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    solver_tag: str = "laplace"

    def __post_init__(self):
        if self.solver_tag not in ("laplace", "volterra", "systembath"):
            raise ValueError(f"unknown solver tag {self.solver_tag!r}")
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.c, dtype=complex)
        if t.shape != c.shape:
            raise ValueError("times and amplitudes differ in length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "c", c)

    @property
    def abs2(self) -> np.ndarray:
        return np.abs(self.c) ** 2

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def check_invariants(self, tol_initial: float = 1e-9, tol_norm: float = 1e-3) -> None:
        if abs(abs(self.c[0]) - 1.0) > tol_initial:
            raise NumericalPreconditionError(f"|c(0)| = {abs(self.c[0])!r} differs from 1")
        excess = np.max(np.abs(self.c)) - 1.0
        if excess > tol_norm:
            raise NumericalPreconditionError(f"|c(t)| exceeds 1 by {excess:.3g}")


# --------------------------------------------------------------------------
# config files

_NUMERIC_DEFAULTS = {
    "quad_rel_tol": 1e-8,
    "peak_points": 20,
    "dt": 1e-3,
    "t_end": 20.0,
    "mode_cut": 1e-8,
    "eps_reg": 0.0,
}

_KNOWN_KEYS = {"omega_a", "gamma", "omega_c", "eta", "n", "d", "x_a", "L",
               "omega_max", "omega_min_bath", "resonance_index",
               *_NUMERIC_DEFAULTS}


def _number(raw: dict, key: str, default=None):
    if key not in raw or raw[key] is None:
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number (got {value!r})")
    return float(value)


def configs_from_dict(raw: dict) -> tuple[CavityConfig, EmitterConfig, NumericsConfig]:
    """Build and validate the three config objects from a flat key/value map."""
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    L = _number(raw, "L", 1.0)
    x_a = _number(raw, "x_a")
    if "n" in raw or "d" in raw:
        if "eta" in raw:
            raise ConfigError("give either eta or (n, d), not both")
        if "n" not in raw or "d" not in raw:
            raise ConfigError("finite mirrors need both n and d")
        cavity = CavityConfig(L=L, mirror_mode="finite", eta=None,
                              n=_number(raw, "n"), d=_number(raw, "d"), x_a=x_a)
    else:
        if "eta" not in raw:
            raise ConfigError("missing key eta (or n, d)")
        cavity = CavityConfig(L=L, mirror_mode="delta", eta=_number(raw, "eta"), x_a=x_a)

    if "gamma" not in raw:
        raise ConfigError("missing key gamma")
    if "resonance_index" in raw:
        if "omega_a" in raw:
            raise ConfigError("give either omega_a or resonance_index, not both")
        index = raw["resonance_index"]
        if not isinstance(index, int) or index < 1:
            raise ConfigError(f"resonance_index must be an integer >= 1 (got {index!r})")
        from .spectral import resonance_frequency
        omega_a = resonance_frequency(cavity, index)
    elif "omega_a" in raw:
        omega_a = _number(raw, "omega_a")
    else:
        raise ConfigError("missing key omega_a (or resonance_index)")
    emitter = EmitterConfig(omega_a=omega_a, gamma=_number(raw, "gamma"),
                            omega_c=_number(raw, "omega_c"))

    kwargs = {k: _number(raw, k, v) for k, v in _NUMERIC_DEFAULTS.items()}
    kwargs["peak_points"] = int(kwargs["peak_points"])
    numerics = NumericsConfig(
        omega_max=_number(raw, "omega_max", default_omega_max(emitter)),
        omega_min_bath=_number(raw, "omega_min_bath", 0.1 * math.pi / L),
        **kwargs,
    )
    numerics.validate_against(cavity, emitter)
    return cavity, emitter, numerics


def load_config(path) -> tuple[CavityConfig, EmitterConfig, NumericsConfig]:
    """Read a JSON config file; absent numeric keys take their defaults."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return configs_from_dict(raw)


def config_to_dict(cavity: CavityConfig, emitter: EmitterConfig,
                   numerics: NumericsConfig) -> dict:
    out = {"L": cavity.L, "x_a": cavity.x_a}
    if cavity.mirror_mode == "finite":
        out.update(n=cavity.n, d=cavity.d)
    else:
        out["eta"] = cavity.eta
    out.update(omega_a=emitter.omega_a, gamma=emitter.gamma, omega_c=emitter.omega_c)
    out.update(asdict(numerics))
    return out


def save_config(path, cavity: CavityConfig, emitter: EmitterConfig,
                numerics: NumericsConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cavity, emitter, numerics), indent=2) + "\n")


# --------------------------------------------------------------------------
# presets

PRESET_GAMMA = {"weak": 4e-6, "strong": 2.5e-3, "multimode": 1.44}
PRESET_ETA = {"weak": 0.1, "strong": 0.1, "multimode": 0.1, "fig5": 0.18}
FIG5_GAMMAS = (2.5e-3, 1.44)
PRESET_OMEGA_A = 19.0 * math.pi


def preset(name: str, gamma: Optional[float] = None, resonance_index: Optional[int] = None,
           **numerics_overrides) -> tuple[CavityConfig, EmitterConfig, NumericsConfig]:
    """Parameter sets of the three coupling regimes and the mirror comparison.

    The emitter sits at w_a = 19 pi. ``fig5`` accepts ``gamma`` in
    {2.5e-3, 1.44} (default 1.44). ``resonance_index`` instead tunes w_a to
    the LDOPS maximum of that symmetric cavity resonance.
    """
    if name not in PRESET_ETA:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_ETA)}")
    if name == "fig5":
        gamma = FIG5_GAMMAS[1] if gamma is None else gamma
        if not any(math.isclose(gamma, g) for g in FIG5_GAMMAS):
            raise ConfigError(f"fig5 gamma must be one of {FIG5_GAMMAS} (got {gamma!r})")
    elif gamma is None:
        gamma = PRESET_GAMMA[name]
    cavity = CavityConfig(L=1.0, mirror_mode="delta", eta=PRESET_ETA[name])
    if resonance_index is None:
        omega_a = PRESET_OMEGA_A
    else:
        from .spectral import resonance_frequency
        omega_a = resonance_frequency(cavity, resonance_index)
    emitter = EmitterConfig(omega_a=omega_a, gamma=gamma, omega_c=2.0 * omega_a)
    numerics = NumericsConfig(omega_max=default_omega_max(emitter),
                              omega_min_bath=0.1 * math.pi / cavity.L)
    if numerics_overrides:
        numerics = replace(numerics, **numerics_overrides)
    numerics.validate_against(cavity, emitter)
    return cavity, emitter, numerics
