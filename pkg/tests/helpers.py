"""Oracles and scaffolding shared by the test modules.

Everything here is deliberately naive (triple loops, closed forms,
finite differences) so the fast production paths are checked against
independent implementations.
"""

import contextlib
import io
import math

import numpy as np

from subvox import waveguide
from subvox.cli import main as cli_main


def rel_err(a, b, floor=1e-8):
    """Worst elementwise relative difference with a small-denominator floor."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# finite-difference gradient checks

def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x (float64 array)."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f()
        flat[i] = keep - h
        fm = f()
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def gradcheck_layer(layer, x, rng, check_params=True, h=1e-6):
    """Max relative error of layer.backward against finite differences.

    Uses the scalar J = sum(forward(x) * R) for a fixed random R, so
    backward(R) is exactly dJ/dx and the parameter gradients are
    dJ/dparam.  The layer must be built with float64 tensors.
    """
    y0 = layer.forward(x, training=True)
    r = rng.standard_normal(y0.shape)

    def j():
        return float(np.sum(layer.forward(x, training=True) * r))

    gx = layer.backward(r)
    errs = [rel_err(gx, fd_grad(j, x, h=h))]
    if check_params and hasattr(layer, "gradients"):
        layer.forward(x, training=True)
        layer.backward(r)
        analytic = [g.copy() for g in layer.gradients()]
        params = [p for _, p in layer.parameters()]
        for p, g in zip(params, analytic):
            errs.append(rel_err(g, fd_grad(j, p, h=h)))
    return max(errs)


# ---------------------------------------------------------------------------
# naive layer references

def naive_conv1d(x, w, b):
    """Triple-loop valid cross-correlation, (B, C, N) x (O, C, K)."""
    bs, c, n = x.shape
    o, c2, k = w.shape
    assert c == c2
    n_out = n - k + 1
    y = np.zeros((bs, o, n_out), dtype=float)
    for bi in range(bs):
        for oi in range(o):
            for t in range(n_out):
                acc = 0.0
                for ci in range(c):
                    for ki in range(k):
                        acc += w[oi, ci, ki] * x[bi, ci, t + ki]
                y[bi, oi, t] = acc + b[oi]
    return y


def naive_maxpool2(x):
    """Pairwise max along the last axis, odd tail dropped."""
    n = (x.shape[-1] // 2) * 2
    pairs = x[..., :n].reshape(x.shape[:-1] + (n // 2, 2))
    return pairs.max(axis=-1)


# ---------------------------------------------------------------------------
# glottal-flow plug-back oracle

def plugback_residual(params, n_samples, consts=waveguide.DEFAULT_CONSTANTS,
                      n_y=21, n_z=15, f_c=1000.0):
    """Worst relative pressure-balance residual over a short synthesis.

    Re-runs the per-sample loop with the public primitives, and at each
    sample plugs the flow back into the Bernoulli balance: with
    k_e = 2(a/A_e)(1 - a/A_e) and A* = A_e A_s/(A_e + A_s), the flow u
    must satisfy

        |f_s - b_e| = rho * (u^2 (1 - k_e) / (4 a^2) + |u| c / (2 A*)).

    Returns (worst residual, number of samples with the glottis open).
    """
    from subvox import kinematics

    geom = kinematics.VocalFoldGeometry(
        L=params.L, T=params.T, xi_m=params.xi_m, Q_a=params.Q_a,
        Q_s=params.Q_s, Q_b=params.Q_b, Q_p=params.Q_p, R_zn=params.R_zn)
    mod = kinematics.ModulationSpec(
        M=params.M, f_o=params.f_o, eps_am=params.eps_am,
        eps_fm=params.eps_fm, phi_am=params.phi_am, phi_fm=params.phi_fm)
    grid = kinematics.FoldGrid.uniform(geom, n_y, n_z)
    t = np.arange(n_samples) / consts.f_sim
    area = kinematics.glottal_area_series(geom, mod, grid, t)

    cfg = waveguide.NoiseConfig(S0=params.S0, delta=params.delta, f_c=f_c)
    rng = np.random.default_rng(params.rng_seed)
    noise = waveguide.TurbulenceNoise(cfg, geom.L, consts, rng=rng)
    nu = noise.render(n_samples)

    sub = waveguide.UniformTract(params.L_sub, params.A_s, params.alpha,
                                 consts)
    sup = waveguide.UniformTract(params.L_sup, params.A_e, params.alpha,
                                 consts)
    lip = waveguide.LipRadiation(params.A_e, consts)

    a_star = params.A_e * params.A_s / (params.A_e + params.A_s)
    worst = 0.0
    n_open = 0
    for i in range(n_samples):
        a = area[i]
        f_s, b_L = sub.outputs()
        f_r, b_e = sup.outputs()
        u = waveguide.glottal_flow(a, f_s, b_e, params.A_e, params.A_s,
                                   consts)
        if a > 0.0 and u != 0.0:
            n_open += 1
            ke = waveguide.pressure_recovery(a, params.A_e)
            dp_rec = consts.rho * (u * u * (1.0 - ke) / (4.0 * a * a)
                                   + abs(u) * consts.c / (2.0 * a_star))
            dp = abs(f_s - b_e)
            worst = max(worst, abs(dp - dp_rec) / max(1.0, dp))
        u_g = u + noise.gate(u, nu[i])
        f_e, b_s = waveguide.glottis_scatter(u_g, f_s, b_e, params.A_e,
                                             params.A_s, consts)
        p_o, b_r = lip.step(f_r)
        f_L = waveguide.lung_reflect(b_L, params.P_L)
        sub.push(f_L, b_s)
        sup.push(f_e, b_r)
    return worst, n_open


# ---------------------------------------------------------------------------
# analog lip-radiation responses (the discretization target)

def lip_analog_responses(A_e, freqs, consts=waveguide.DEFAULT_CONSTANTS):
    """(reflectance, transmittance) of the radiation load at freqs (Hz)."""
    R_r = 128.0 / (9.0 * math.pi ** 2)
    L_r = 8.0 / (3.0 * math.pi * consts.c) * math.sqrt(A_e / math.pi)
    s = 2j * math.pi * np.asarray(freqs, dtype=float)
    z_r = s * L_r * R_r / (R_r + s * L_r)
    gamma = (z_r - 1.0) / (z_r + 1.0)
    return gamma, 1.0 + gamma


def lip_discrete_responses(lip, freqs, rate):
    """(reflectance, transmittance) of a LipRadiation at freqs (Hz)."""
    z = np.exp(2j * math.pi * np.asarray(freqs, dtype=float) / rate)
    bp, ap = lip.po_ba()
    br, ar = lip.br_ba()
    t_d = (bp[0] + bp[1] / z) / (ap[0] + ap[1] / z)
    g_d = (br[0] + br[1] / z) / (ar[0] + ar[1] / z)
    return g_d, t_d


def lip_band_error_db(A_e, f_max=4000.0, n=800,
                      consts=waveguide.DEFAULT_CONSTANTS):
    """Worst |dB| deviation of both lip responses below f_max."""
    freqs = np.linspace(5.0, f_max, n)
    lip = waveguide.LipRadiation(A_e, consts)
    g_a, t_a = lip_analog_responses(A_e, freqs, consts)
    g_d, t_d = lip_discrete_responses(lip, freqs, consts.f_sim)
    e_g = np.abs(20.0 * np.log10(np.abs(g_d) / np.abs(g_a)))
    e_t = np.abs(20.0 * np.log10(np.abs(t_d) / np.abs(t_a)))
    return float(max(e_g.max(), e_t.max()))


# ---------------------------------------------------------------------------
# tone amplitude measurement (lock-in)

def tone_amplitude(x, rate, freq):
    """Amplitude of the freq component of x over whole cycles."""
    x = np.asarray(x, dtype=float)
    n_cycles = int(math.floor(x.size * freq / rate))
    if n_cycles < 1:
        raise ValueError("signal too short for this tone")
    n = int(round(n_cycles * rate / freq))
    t = np.arange(n) / rate
    ref = np.exp(-2j * math.pi * freq * t)
    return 2.0 * abs(np.mean(x[:n] * ref))


# ---------------------------------------------------------------------------
# CLI driver

def run_cli(argv):
    """Run the CLI in-process; returns (exit_code, stdout, stderr)."""
    out = io.StringIO()
    err = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = cli_main([str(a) for a in argv])
        except SystemExit as exc:   # argparse usage failures
            code = exc.code if isinstance(exc.code, int) else 2
    return code, out.getvalue(), err.getvalue()
