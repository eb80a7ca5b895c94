import math

import numpy as np
import pytest

from multimode_qed.analysis import find_revivals, fit_decay
from multimode_qed.dynamics import (build_memory_kernel, check_step, cross_check, evolve_laplace,
                                    evolve_volterra, kernel_bandwidth, time_grid)
from multimode_qed.model import AmplitudeTrace, CavityConfig, NumericalPreconditionError, preset
from multimode_qed.response import build_response
from multimode_qed.spectral import build_spectral_table


@pytest.fixture(scope="module")
def free_space():
    cav, em, num = preset("multimode", gamma=0.01)
    return build_spectral_table(CavityConfig(eta=1e-7), em, num)


def test_time_grid():
    assert time_grid(1.0, 0.25).tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(NumericalPreconditionError):
        time_grid(1.0, 0.3)


def test_step_precondition(lab):
    sp = lab.spectral()
    bw = kernel_bandwidth(sp)
    check_step(sp, 0.9 / (4 * bw))
    with pytest.raises(NumericalPreconditionError, match="dt"):
        build_memory_kernel(sp, dt=0.01, t_end=1.0, gamma=1.0)


def test_memory_kernel_invariants(lab):
    k = build_memory_kernel(lab.spectral(), dt=1e-3, t_end=2.0, gamma=1.44)
    assert k.K[0].imag == 0 and k.K[0].real > 0
    assert np.max(np.abs(k.K)) <= k.K[0].real
    # K(0) is the plain integral of F
    assert k.K[0].real == pytest.approx(1.44 / math.pi * lab.spectral().grid.integrate(lab.spectral().F),
                                        rel=1e-6)


def test_free_space_kernel_decays_monotonically(free_space):
    k = build_memory_kernel(free_space, dt=1e-4, t_end=0.2, gamma=0.01)
    mag = np.abs(k.K)
    live = mag > 1e-8 * mag[0]
    assert np.all(np.diff(mag[live]) <= 1e-12 * mag[0])


def test_free_space_decay_rate_in_both_routes(free_space):
    em = free_space.emitter
    rate = 2 * 0.01 * float(free_space(np.array([em.omega_a]))[0])
    lap = evolve_laplace(build_response(free_space, 0.01), t_end=10.0, dt=1e-3)
    vol = evolve_volterra(build_memory_kernel(free_space, dt=1e-3, t_end=10.0, gamma=0.01))
    for tr in (lap, vol):
        fit = fit_decay(tr, (1.0, 10.0))
        assert fit.monotone
        assert fit.rate == pytest.approx(rate, rel=0.01)
    assert cross_check(lap, vol) < 1e-3


def test_zero_coupling(lab):
    k = build_memory_kernel(lab.spectral(), gamma=0.0, t_end=1.0)
    assert np.all(evolve_volterra(k).c == 1)


def test_off_center_emitter_revives_less(lab):
    mid = find_revivals(lab.laplace(1.44, t_end=3.0))
    off = find_revivals(lab.laplace(1.44, t_end=3.0, x_a=0.25))
    h_mid = max(r.height for r in mid if 0.8 < r.t < 1.2)
    h_off = max((r.height for r in off if 0.8 < r.t < 1.2), default=0.0)
    assert h_off < h_mid


def test_cross_check_requires_same_grid():
    a = AmplitudeTrace(np.linspace(0, 1, 5), np.ones(5))
    b = AmplitudeTrace(np.linspace(0, 1, 6), np.ones(6))
    with pytest.raises(ValueError):
        cross_check(a, b)
    assert cross_check(a, a) == 0
