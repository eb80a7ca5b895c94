import math

import numpy as np
import pytest

from multimode_qed.dynamics import build_memory_kernel, evolve_laplace, evolve_volterra
from multimode_qed.model import BoundStateError, PRESET_GAMMA
from multimode_qed.response import (bound_state, critical_gamma, find_resonances, kernel,
                                    kernel_values, lamb_shift, lamb_shift_at, lamb_shift_table)

W_A = 19 * math.pi
G_WEAK, G_STRONG, G_MULTI = (PRESET_GAMMA[k] for k in ("weak", "strong", "multimode"))


def test_table_lamb_shift_close_to_adaptive(lab):
    sp = lab.spectral()
    x = np.array([5.0, 40.0, W_A, 61.3, 150.0, 400.0])
    ref = lamb_shift(x, sp)
    assert np.allclose(lamb_shift_at(x, sp), ref, rtol=1e-5, atol=1e-4)
    idx = np.searchsorted(sp.omega, x)
    assert np.allclose(lamb_shift_table(sp)[idx], lamb_shift(sp.omega[idx], sp), rtol=1e-5, atol=1e-4)


def test_lamb_shift_far_below_resonances_is_negative(lab):
    # below the band every F contribution pulls delta down
    assert lamb_shift(np.array([0.5]), lab.spectral())[0] < 0


def test_kernel_at_root_equals_inverse_width(lab):
    sp = lab.spectral()
    res = find_resonances(sp, G_STRONG)
    U = kernel(res.omega, sp, G_STRONG)
    assert np.allclose(U, 1 / (G_STRONG ** 2 * sp(res.omega)), rtol=1e-9)
    assert np.allclose(res.height, U, rtol=1e-6)


def test_kernel_regularisation():
    class Em:
        omega_a, gamma = 10.0, 1.0
    U = kernel_values(np.array([10.0]), np.array([0.0]), np.array([0.0]), Em, eps_reg=1e-3)
    assert U[0] == 0.0
    U = kernel_values(np.array([10.5]), np.array([0.0]), np.array([0.0]), Em, eps_reg=1e-3)
    assert np.isfinite(U[0])


def test_weak_has_one_resonance(lab):
    res = find_resonances(lab.spectral(), G_WEAK)
    near = np.abs(res.omega - W_A) < math.pi
    assert np.sum(near) == 1 and res.kind[near][0] == "resonant"
    assert res.n_resonant == 1


def test_multimode_alternation_and_spacing(lab):
    res = find_resonances(lab.spectral(), G_MULTI)
    assert len(res) > 3
    window = np.abs(res.omega - W_A) < 25
    kinds = res.kind[window]
    assert np.all(kinds[1:] != kinds[:-1])
    resonant = res.omega[window][kinds == "resonant"]
    assert resonant.size >= 5
    assert np.all(np.abs(np.diff(resonant) / (2 * math.pi) - 1) < 0.05)


@pytest.mark.parametrize("gamma", [G_STRONG, G_MULTI])
def test_resonant_roots_sit_on_U_maxima(lab, gamma):
    # F varies across a U peak, so its top is offset slightly from the root
    sp = lab.spectral()
    res = find_resonances(sp, gamma)
    for w_r, hw in zip(res.resonant, res.resonant_widths()):
        if abs(w_r - W_A) > 25:
            continue
        x = np.append(w_r + hw * np.linspace(-3, 3, 601), w_r)
        U = kernel_values(x, sp(x), lamb_shift_at(x, sp), sp.emitter, gamma)
        assert U[-1] >= 0.95 * U.max()
        assert abs(x[np.argmax(U)] - w_r) <= 0.25 * hw


def test_suppressed_roots_sit_near_F_maxima(lab):
    sp = lab.spectral()
    res = find_resonances(sp, G_MULTI)
    centers = np.asarray(sp.features[0])
    sup = res.omega[(res.kind == "suppressed") & (np.abs(res.omega - W_A) < 25)]
    assert sup.size >= 3
    for w in sup:
        assert np.min(np.abs(centers - w)) < 0.5


def test_sum_rule_multimode(lab):
    assert lab.response(G_MULTI).sum_rule() == pytest.approx(1.0, abs=1e-4)


def test_critical_gamma_and_no_bound_state_at_presets(lab):
    sp = lab.spectral()
    gc = critical_gamma(sp)
    assert gc > G_MULTI
    assert not bound_state(sp, G_MULTI).exists


def test_bound_state_residue_matches_volterra_asymptote(lab):
    sp = lab.spectral()
    g = 2 * critical_gamma(sp)
    rep = bound_state(sp, g)
    assert rep.exists and rep.residual <= 1e-10 and 0 < rep.weight < 1
    trace = evolve_volterra(build_memory_kernel(sp, dt=1e-3, t_end=10.0, gamma=g))
    late = np.abs(trace.c[trace.times > 8])
    assert late.mean() == pytest.approx(rep.weight, rel=0.02)


def test_laplace_refuses_bound_state(lab):
    sp = lab.spectral()
    with pytest.raises(BoundStateError, match="volterra"):
        evolve_laplace(lab.response(1.1 * critical_gamma(sp)), t_end=1.0)
