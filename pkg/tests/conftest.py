"""Shared, lazily built tables and traces.

The weak, strong and multimode presets share one cavity, so a single
spectral table serves all three; only gamma differs downstream.
"""
from __future__ import annotations

import time

import pytest

from multimode_qed.dynamics import build_memory_kernel, evolve_laplace, evolve_volterra
from multimode_qed.model import preset
from multimode_qed.response import build_response
from multimode_qed.spectral import build_spectral_table

ACCEPTANCE: dict[str, str] = {}


def record(key: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


class Lab:
    """Memoised pipeline stages with their wall times."""

    def __init__(self):
        self._cache = {}
        self.seconds = {}

    def _get(self, key, build):
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = build()
            self.seconds[key] = time.perf_counter() - t0
        return self._cache[key]

    def configs(self, name, gamma=None, **kw):
        return preset(name, gamma=gamma, **kw)

    def spectral(self, name="multimode", eta=None, x_a=None):
        def build():
            cav, em, num = preset(name)
            if eta is not None or x_a is not None:
                from dataclasses import replace
                cav = replace(cav, **{k: v for k, v in (("eta", eta), ("x_a", x_a)) if v is not None})
            return build_spectral_table(cav, em, num)
        return self._get(("spectral", name, eta, x_a), build)

    def response(self, gamma, name="multimode", eta=None, x_a=None):
        return self._get(("response", name, gamma, eta, x_a),
                         lambda: build_response(self.spectral(name, eta, x_a), gamma))

    def laplace(self, gamma, name="multimode", t_end=20.0, dt=1e-3, eta=None, x_a=None):
        return self._get(("laplace", name, gamma, t_end, dt, eta, x_a),
                         lambda: evolve_laplace(self.response(gamma, name, eta, x_a),
                                                t_end=t_end, dt=dt))

    def volterra(self, gamma, name="multimode", t_end=20.0, dt=1e-3):
        def build():
            sp = self.spectral(name)
            return evolve_volterra(build_memory_kernel(sp, dt=dt, t_end=t_end, gamma=gamma))
        return self._get(("volterra", name, gamma, t_end, dt), build)

    def elapsed(self, *keys):
        return sum(self.seconds.get(k, 0.0) for k in keys)


@pytest.fixture(scope="session")
def lab():
    return Lab()
