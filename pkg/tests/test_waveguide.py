"""Tract propagation, glottal coupling, noise, and lip-load checks."""

import math
import os

import numpy as np
import pytest
from scipy.signal import lfilter

from subvox import waveguide as wg
from subvox.dataset import sample_params
from subvox.errors import SimulationFault

from helpers import (lip_analog_responses, lip_band_error_db,
                     lip_discrete_responses, plugback_residual, rel_err)

C = wg.DEFAULT_CONSTANTS


# ---------------------------------------------------------------------------
# tracts

def test_tract_quantizes_length_and_gain():
    tr = wg.UniformTract(17.46, 3.0, 0.9984)
    k = int(round(17.46 * C.f_sim / C.c))
    assert tr.k == k
    assert tr.length == pytest.approx(k * C.c / C.f_sim)
    assert tr.gain == pytest.approx(0.9984 ** tr.length)


def test_tract_delays_both_directions():
    tr = wg.UniformTract(10.0, 3.0, 1.0)   # lossless
    k = tr.k
    hits = []
    f_out, b_out = tr.step(1.0, -2.0)
    hits.append((f_out, b_out))
    for _ in range(2 * k):
        hits.append(tr.step(0.0, 0.0))
    outs = np.array(hits)
    # the pushed pair emerges exactly k samples later, unchanged
    assert outs[k, 0] == 1.0 and outs[k, 1] == -2.0
    assert np.all(outs[:k] == 0.0) and np.all(outs[k + 1:] == 0.0)


def test_tract_attenuation_applied_per_traversal():
    tr = wg.UniformTract(10.0, 3.0, 0.999)
    tr.push(1.0, 0.0)
    for _ in range(tr.k - 1):
        tr.push(0.0, 0.0)
    f_out, _ = tr.outputs()
    assert f_out == pytest.approx(0.999 ** tr.length)


def test_tract_validation_and_reset():
    with pytest.raises(ValueError):
        wg.UniformTract(0.0, 3.0, 0.999)
    with pytest.raises(ValueError):
        wg.UniformTract(10.0, 3.0, 1.1)
    with pytest.raises(ValueError):
        wg.UniformTract(0.05, 3.0, 0.999)   # shorter than one section
    tr = wg.UniformTract(10.0, 3.0, 0.999)
    tr.push(5.0, 5.0)
    tr.reset()
    assert tr.outputs() == (0.0, 0.0)


# ---------------------------------------------------------------------------
# glottal coupling

def test_pressure_recovery_peak_and_endpoints():
    assert wg.pressure_recovery(0.0, 4.0) == 0.0
    assert wg.pressure_recovery(2.0, 4.0) == 0.5
    assert wg.pressure_recovery(4.0, 4.0) == 0.0


def test_glottal_flow_zero_cases_and_sign():
    assert wg.glottal_flow(0.0, 500.0, -200.0, 3.0, 2.0) == 0.0
    assert wg.glottal_flow(-0.1, 500.0, -200.0, 3.0, 2.0) == 0.0
    assert wg.glottal_flow(0.1, 123.0, 123.0, 3.0, 2.0) == 0.0
    u_pos = wg.glottal_flow(0.1, 500.0, -200.0, 3.0, 2.0)
    u_neg = wg.glottal_flow(0.1, -200.0, 500.0, 3.0, 2.0)
    assert u_pos > 0.0
    assert u_neg == pytest.approx(-u_pos)


def test_glottal_flow_monotone_in_drop_and_area():
    drops = [10.0, 100.0, 1000.0, 10000.0]
    us = [wg.glottal_flow(0.08, dp, 0.0, 3.0, 2.0) for dp in drops]
    assert all(b > a for a, b in zip(us, us[1:]))
    areas = [0.02, 0.05, 0.1, 0.2]
    us = [wg.glottal_flow(a, 1000.0, 0.0, 3.0, 2.0) for a in areas]
    assert all(b > a for a, b in zip(us, us[1:]))


def test_glottal_flow_plugback_residual_random_draws():
    rng = np.random.default_rng(10)
    a_star = 3.0 * 2.0 / 5.0
    for _ in range(500):
        a = rng.uniform(0.001, 0.4)
        dp = rng.uniform(-20000, 20000)
        u = wg.glottal_flow(a, dp, 0.0, 3.0, 2.0)
        if u == 0.0:
            continue
        ke = wg.pressure_recovery(a, 3.0)
        dp_rec = C.rho * (u * u * (1 - ke) / (4 * a * a)
                          + abs(u) * C.c / (2 * a_star))
        assert abs(abs(dp) - dp_rec) / max(1.0, abs(dp)) < 1e-10


def test_glottal_flow_rejects_non_finite():
    with pytest.raises(SimulationFault):
        wg.glottal_flow(float("nan"), 1.0, 0.0, 3.0, 2.0)
    with pytest.raises(SimulationFault):
        wg.glottal_flow(0.1, float("inf"), 0.0, 3.0, 2.0)


def test_glottis_scatter_wave_jump_identities():
    u = 137.0
    f_e, b_s = wg.glottis_scatter(u, 500.0, -200.0, 3.0, 2.0)
    assert f_e - (-200.0) == pytest.approx(C.rho * C.c / 3.0 * u)
    assert 500.0 - b_s == pytest.approx(C.rho * C.c / 2.0 * u)
    assert wg.glottis_scatter(0.0, 500.0, -200.0, 3.0, 2.0) == (-200.0, 500.0)


def test_lung_reflection_literal_and_fixed_point():
    assert wg.lung_reflect(100.0, 8000.0) == pytest.approx(
        0.9 * 8000.0 - 0.8 * 100.0)
    # a pressure wave p = P_L/2 on both legs is self-consistent at dc
    p = 0.9 * 8000.0 / 1.8
    assert wg.lung_reflect(p, 8000.0) == pytest.approx(p)


# ---------------------------------------------------------------------------
# turbulence noise

def test_noise_render_variance_and_continuity():
    cfg = wg.NoiseConfig(S0=900.0, delta=0.3, f_c=1000.0)
    noise = wg.TurbulenceNoise(cfg, 1.2, rng=np.random.default_rng(0))
    y = noise.render(400000)
    pole = math.exp(-2 * math.pi * 1000.0 / C.f_sim)
    want_var = 900.0 * (1 - pole) ** 2 / (1 - pole ** 2)
    assert y.var() == pytest.approx(want_var, rel=0.05)
    # chunked rendering continues the same stream
    n2 = wg.TurbulenceNoise(cfg, 1.2, rng=np.random.default_rng(0))
    y2 = np.concatenate([n2.render(1000), n2.render(399000)])
    assert np.array_equal(y, y2)


def test_noise_follows_one_pole_lfilter():
    cfg = wg.NoiseConfig(S0=400.0, delta=0.5, f_c=700.0)
    noise = wg.TurbulenceNoise(cfg, 1.0, rng=np.random.default_rng(1))
    y = noise.render(2000)
    white = np.random.default_rng(1).standard_normal(2000)
    pole = math.exp(-2 * math.pi * 700.0 / C.f_sim)
    gain = (1 - pole) * math.sqrt(400.0)
    ref = lfilter([gain], [1.0, -pole], white)
    assert np.allclose(y, ref, atol=1e-12)


def test_noise_reynolds_gate_switches_attenuation():
    cfg = wg.NoiseConfig(S0=900.0, delta=0.25, f_c=1000.0, Re_c=1200.0)
    noise = wg.TurbulenceNoise(cfg, 1.0, rng=np.random.default_rng(2))
    u_crit = 1200.0 * C.mu * 1.0 / C.rho
    assert noise.reynolds(u_crit) == pytest.approx(1200.0)
    assert noise.gate(u_crit * 1.01, 2.0) == 2.0
    assert noise.gate(u_crit * 0.99, 2.0) == 0.5
    assert noise.gate(0.0, 2.0) == 0.5


def test_noise_config_validation():
    with pytest.raises(ValueError):
        wg.NoiseConfig(S0=-1.0, delta=0.3)
    with pytest.raises(ValueError):
        wg.NoiseConfig(S0=1.0, delta=1.5)
    with pytest.raises(ValueError):
        wg.NoiseConfig(S0=1.0, delta=0.3, f_c=0.0)


# ---------------------------------------------------------------------------
# lip radiation

def test_lip_dc_limits():
    lip = wg.LipRadiation(3.0)
    p_o = b_r = 0.0
    for _ in range(20000):
        p_o, b_r = lip.step(1.0)
    assert p_o == pytest.approx(0.0, abs=1e-9)
    assert b_r == pytest.approx(-1.0, abs=1e-9)


def test_lip_output_identity_and_filter_equivalence():
    lip = wg.LipRadiation(2.0)
    rng = np.random.default_rng(3)
    x = rng.standard_normal(500)
    po = np.empty(500)
    br = np.empty(500)
    for i, v in enumerate(x):
        po[i], br[i] = lip.step(v)
    # the output port pressure is exactly the incident plus reflected wave
    assert np.max(np.abs(po - (x + br))) < 1e-12
    bb, ab = wg.LipRadiation(2.0).po_ba()
    assert np.allclose(po, lfilter(bb, ab, x), atol=1e-12)
    bb, ab = wg.LipRadiation(2.0).br_ba()
    assert np.allclose(br, lfilter(bb, ab, x), atol=1e-12)


def test_lip_tracks_analog_load_within_tenth_db():
    for A_e in (1.0, 1.7, 2.5, 3.3, 4.1, 5.0):
        assert lip_band_error_db(A_e) < 0.1


def test_lip_stable_and_passive_even_outside_fit_range():
    freqs = np.linspace(1.0, C.f_sim / 2 - 1.0, 2000)
    for A_e in (0.3, 0.8, 5.6, 12.0):
        lip = wg.LipRadiation(A_e)
        assert abs(lip.a1) < 1.0
        g_d, _ = lip_discrete_responses(lip, freqs, C.f_sim)
        assert np.max(np.abs(g_d)) <= 1.0 + 1e-9
    with pytest.raises(ValueError):
        wg.LipRadiation(0.0)


def test_lip_high_frequency_reflectance_approaches_resistive_limit():
    lip = wg.LipRadiation(3.0)
    g_a, _ = lip_analog_responses(3.0, np.array([15000.0]))
    g_d, _ = lip_discrete_responses(lip, np.array([15000.0]), C.f_sim)
    # outside the fitted band the filter should still be roughly right
    assert abs(abs(g_d[0]) - abs(g_a[0])) < 0.1


# ---------------------------------------------------------------------------
# full synthesis

def test_backends_agree():
    assert "python" in wg.available_backends()
    if "ext" not in wg.available_backends():
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(4)
    for M in (1, 3):
        p = sample_params(rng, M)
        se = wg.simulate(p, duration=0.25, backend="ext")
        sp = wg.simulate(p, duration=0.25, backend="python")
        assert rel_err(se.samples, sp.samples, floor=1e-3) < 1e-9


def test_simulate_deterministic_and_labeled():
    rng = np.random.default_rng(5)
    p = sample_params(rng, 2)
    s1 = wg.simulate(p, duration=0.2)
    s2 = wg.simulate(p, duration=0.2)
    assert np.array_equal(s1.samples, s2.samples)
    assert s1.rate == 44100
    assert s1.meta["M"] == 2 and s1.meta["f_o"] == p.f_o
    assert len(s1) == int(round(0.2 * 44100))
    assert np.all(np.isfinite(s1.samples))


def test_simulate_returns_area_and_it_is_nonnegative():
    rng = np.random.default_rng(6)
    p = sample_params(rng, 4)
    sig, area = wg.simulate(p, duration=0.2, return_area=True)
    assert area.shape == (len(sig),)
    assert area.min() >= 0.0
    assert area.max() > 0.0


@pytest.mark.parametrize("backend", ["ext", "python"])
def test_simulate_faults_carry_sample_index(backend):
    if backend == "ext" and "ext" not in wg.available_backends():
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(7)
    p = sample_params(rng, 1)
    p.P_L = float("nan")
    with pytest.raises(SimulationFault) as exc:
        wg.simulate(p, duration=0.05, backend=backend)
    assert exc.value.sample_index >= 0


def test_simulate_fault_index_matches_across_backends():
    if "ext" not in wg.available_backends():
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(8)
    p = sample_params(rng, 2)
    p.P_L = float("inf")
    idx = {}
    for backend in ("ext", "python"):
        with pytest.raises(SimulationFault) as exc:
            wg.simulate(p, duration=0.05, backend=backend)
        idx[backend] = exc.value.sample_index
    assert idx["ext"] == idx["python"]


def test_simulate_backend_selection_env(monkeypatch):
    monkeypatch.delenv("SUBVOX_NO_EXT", raising=False)
    if "ext" in wg.available_backends():
        assert wg.default_backend() == "ext"
    monkeypatch.setenv("SUBVOX_NO_EXT", "1")
    assert wg.default_backend() == "python"
    with pytest.raises(ValueError):
        rng = np.random.default_rng(9)
        wg.simulate(sample_params(rng, 1), duration=0.1, backend="mystery")


def test_simulate_short_plugback_loop_consistency():
    rng = np.random.default_rng(11)
    p = sample_params(rng, 2)
    worst, n_open = plugback_residual(p, 1500)
    assert n_open > 100
    assert worst < 1e-10
