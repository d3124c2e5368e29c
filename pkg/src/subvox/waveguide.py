"""Wave-reflection vocal tract synthesis driven by the kinematic folds.

Sub- and supraglottal tracts are uniform bidirectional delay lines
(pressure waves, dyn/cm^2) with per-traversal attenuation.  The glottis
couples them through a Bernoulli flow with vena-contracta pressure
recovery, plus a Reynolds-gated turbulence flow component.  The lips
terminate in a first-order discrete piston-radiation load; the lungs
reflect with a fixed coefficient around a constant driving pressure.

CGS units throughout: cm, g, s, dyn/cm^2 for pressures, cm^3/s for
flows.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from . import kinematics
from .dsp import Signal
from .errors import SimulationFault

try:
    from . import _speedups
except ImportError:  # pure-python fallback only
    _speedups = None


@dataclass(frozen=True)
class PhysicalConstants:
    """Air/tissue constants and the synthesis rate."""

    c: float = 35000.0        # speed of sound, cm/s
    rho: float = 0.00114      # air density, g/cm^3
    mu: float = 1.86e-4       # air shear viscosity, g/(cm*s)
    f_sim: float = 44100.0    # synthesis sample rate, S/s

    @property
    def spatial_quantum(self):
        """Tract length per sample of delay, cm (about 0.794 cm)."""
        return self.c / self.f_sim


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass
class NoiseConfig:
    """Aspiration noise settings.

    S0: power of the white stream driving the turbulence lowpass,
        (cm^3/s)^2.
    delta: sub-critical attenuation of the noise injection.
    f_c: lowpass corner of the noise shaping filter, Hz.
    Re_c: Reynolds number threshold for full injection.
    """

    S0: float
    delta: float
    f_c: float = 1000.0
    Re_c: float = 1200.0
    seed: int | None = None

    def __post_init__(self):
        if self.S0 < 0:
            raise ValueError("S0 must be non-negative")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not self.f_c > 0:
            raise ValueError("f_c must be positive")


class UniformTract:
    """Uniform-area tract as a pair of delay lines.

    The length is quantized to a whole number of one-sample sections
    (c/f_sim cm each) and the per-traversal gain is alpha raised to the
    quantized length.
    """

    def __init__(self, length, area, alpha, consts=DEFAULT_CONSTANTS):
        if length <= 0 or area <= 0:
            raise ValueError("length and area must be positive")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        self.k = int(round(length * consts.f_sim / consts.c))
        if self.k < 1:
            raise ValueError("tract shorter than one delay section")
        self.length = self.k * consts.c / consts.f_sim
        self.area = float(area)
        self.gain = alpha ** self.length
        self.fwd = np.zeros(self.k)
        self.bwd = np.zeros(self.k)
        self._idx = 0

    def reset(self):
        self.fwd[:] = 0.0
        self.bwd[:] = 0.0
        self._idx = 0

    def outputs(self):
        """Attenuated waves leaving the tract this sample."""
        i = self._idx
        return self.gain * self.fwd[i], self.gain * self.bwd[i]

    def push(self, f_in, b_in):
        """Waves entering the tract this sample."""
        i = self._idx
        self.fwd[i] = f_in
        self.bwd[i] = b_in
        self._idx = (i + 1) % self.k

    def step(self, f_in, b_in):
        out = self.outputs()
        self.push(f_in, b_in)
        return out


def pressure_recovery(a, A_e):
    """Pressure recovery coefficient k_e at the glottal exit.

    Peaks at 0.5 when a = A_e/2, so 1 - k_e stays >= 0.5 for any area.
    """
    x = a / A_e
    return 2.0 * x * (1.0 - x)


def glottal_flow(a, f_s, b_e, A_e, A_s, consts=DEFAULT_CONSTANTS):
    """Bernoulli glottal flow u (cm^3/s) for area a and port waves.

    Solves the pressure balance across the glottis for the flow,
    taking the root with u = 0 at zero transglottal pressure and
    sign(u) = sign(f_s - b_e).  Negative drops reuse the same
    magnitude formula on |f_s - b_e|, mirrored.
    """
    if not (math.isfinite(a) and math.isfinite(f_s) and math.isfinite(b_e)):
        raise SimulationFault(-1, "non-finite glottal flow inputs")
    if a <= 0.0:
        return 0.0
    ke = pressure_recovery(a, A_e)
    a_star = (A_e * A_s) / (A_e + A_s)
    ratio = a / a_star
    dp = f_s - b_e
    root = math.sqrt(ratio * ratio
                     + 4.0 * (1.0 - ke) * abs(dp) / (consts.c * consts.c * consts.rho))
    mag = (a * consts.c / (1.0 - ke)) * (root - ratio)
    if dp > 0.0:
        return mag
    if dp < 0.0:
        return -mag
    return 0.0


def glottis_scatter(u_g, f_s, b_e, A_e, A_s, consts=DEFAULT_CONSTANTS):
    """Outgoing port waves (f_e, b_s) given the total glottal flow."""
    rc = consts.rho * consts.c
    return b_e + (rc / A_e) * u_g, f_s - (rc / A_s) * u_g


def lung_reflect(b_L, P_L):
    """Forward wave launched at the lung end."""
    return 0.9 * P_L - 0.8 * b_L


class TurbulenceNoise:
    """Reynolds-gated aspiration noise flow.

    The full-strength noise is a white Gaussian stream of rms sqrt(S0)
    shaped by a unit-dc-gain one-pole lowpass at cfg.f_c, so the power
    rolls off -20 dB/decade and the flow stays a few percent of the
    deterministic glottal pulse.  (Scaling the stream to put the dc PSD
    itself at S0 makes the noise swamp the harmonics and flattens the
    subharmonic-to-harmonic ratios of every draw toward 0 dB, which
    contradicts the measured per-M SHR spreads; see the noise level
    test.)  Injection is attenuated by cfg.delta while
    Re = u*rho/(L*mu) stays at or below cfg.Re_c.
    """

    def __init__(self, cfg, fold_length, consts=DEFAULT_CONSTANTS, rng=None):
        self.cfg = cfg
        self.consts = consts
        self.re_coeff = consts.rho / (fold_length * consts.mu)
        self.pole = math.exp(-2.0 * math.pi * cfg.f_c / consts.f_sim)
        self.gain = (1.0 - self.pole) * math.sqrt(cfg.S0)
        self.rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self._prev = 0.0

    def render(self, n):
        """Next n samples of the full-strength (ungated) noise flow."""
        white = self.rng.standard_normal(n)
        y, zf = lfilter([self.gain], [1.0, -self.pole], white,
                        zi=[self.pole * self._prev])
        self._prev = y[-1] if n else self._prev
        return y

    def reynolds(self, u):
        return u * self.re_coeff

    def gate(self, u, nu):
        """Apply the Reynolds gate to a full-strength noise sample."""
        return nu if self.reynolds(u) > self.cfg.Re_c else self.cfg.delta * nu

    def sample(self, u):
        """Draw one gated noise flow sample given the current flow."""
        return self.gate(u, self.render(1)[0])


class LipRadiation:
    """Piston-in-baffle radiation load at the lips, first-order discrete.

    The normalized load is an inertance L_r in parallel with a
    resistance R_r; the reflectance and the port-pressure
    transmittance share one first-order state, with transmittance
    g*(1 - 1/z)/(1 + a1/z) and reflectance forced to transmittance
    minus one so p_o = f_r + b_r holds exactly.  dc limits are exact
    (reflected wave -> -f_r, output pressure -> 0).

    A plain or prewarped bilinear transform of the load cannot keep
    both responses within 0.1 dB of the analog pair below 4 kHz when
    the load corner sits near the band edge (frequency warping costs
    up to 0.24 dB on one or the other).  Instead (a1, g) follow cubic
    fits, in the pole frequency nu (cycles/sample), to per-area
    minimax solutions computed offline against the analog magnitude
    responses; worst deviation is 0.083 dB below 4 kHz for mouth
    areas in [1, 5] cm^2 at 44.1 kHz.  nu is clamped to the fitted
    interval, so far outside that range the filter degrades gently
    but stays stable and passive.
    """

    R_r = 128.0 / (9.0 * math.pi ** 2)
    _NU_LO = 0.0657974982026002
    _NU_HI = 0.17408381713429952
    _A1_FIT = (19.228160870009226, -15.376471022478812,
               6.089338526306576, -0.9936575621486584)
    _G_FIT = (-9.095809222954022, 7.808064848916675,
              -3.5688370260590365, 1.1830058052717607)

    def __init__(self, A_e, consts=DEFAULT_CONSTANTS):
        if A_e <= 0:
            raise ValueError("A_e must be positive")
        self.L_r = 8.0 / (3.0 * math.pi * consts.c) * math.sqrt(A_e / math.pi)
        nu = self.R_r / (2.0 * math.pi * self.L_r * (self.R_r + 1.0)
                         * consts.f_sim)
        nu = min(max(nu, self._NU_LO), self._NU_HI)
        c3, c2, c1, c0 = self._A1_FIT
        self.a1 = ((c3 * nu + c2) * nu + c1) * nu + c0
        c3, c2, c1, c0 = self._G_FIT
        g = ((c3 * nu + c2) * nu + c1) * nu + c0
        self.po_g = g
        self.br0 = g - 1.0
        self.br1 = -(g + self.a1)
        assert abs(self.a1) < 1.0
        self._w = 0.0

    def reset(self):
        self._w = 0.0

    def step(self, f_r):
        """One sample; returns (p_o, b_r)."""
        w = f_r - self.a1 * self._w
        p_o = self.po_g * (w - self._w)
        b_r = self.br0 * w + self.br1 * self._w
        self._w = w
        return p_o, b_r

    def po_ba(self):
        """(b, a) of the f_r -> p_o transfer."""
        return [self.po_g, -self.po_g], [1.0, self.a1]

    def br_ba(self):
        """(b, a) of the f_r -> b_r transfer."""
        return [self.br0, self.br1], [1.0, self.a1]


def available_backends():
    return ("ext", "python") if _speedups is not None else ("python",)


def default_backend():
    if _speedups is not None and not os.environ.get("SUBVOX_NO_EXT"):
        return "ext"
    return "python"


def _simulate_python(n, area, nu, sub, sup, lip, noise, A_e, A_s, P_L, consts,
                     out):
    """Reference per-sample loop; area and noise are precomputed."""
    for i in range(n):
        a = area[i]
        f_s, b_L = sub.outputs()
        f_r, b_e = sup.outputs()
        try:
            u = glottal_flow(a, f_s, b_e, A_e, A_s, consts)
        except SimulationFault:
            return i
        u_g = u + noise.gate(u, nu[i])
        f_e, b_s = glottis_scatter(u_g, f_s, b_e, A_e, A_s, consts)
        p_o, b_r = lip.step(f_r)
        f_L = lung_reflect(b_L, P_L)
        sub.push(f_L, b_s)
        sup.push(f_e, b_r)
        out[i] = p_o
        if not (math.isfinite(u_g) and math.isfinite(p_o)):
            return i
    return -1


def simulate(params, duration=1.1, consts=DEFAULT_CONSTANTS, n_y=21, n_z=15,
             f_c=1000.0, backend="auto", return_area=False):
    """Synthesize the output pressure signal for one parameter record.

    params is a SynthParams-like record (see the dataset module) with
    fold geometry, modulation, noise, tract and lung fields plus
    rng_seed.  Returns a Signal at consts.f_sim; with return_area=True
    also returns the glottal area series (cm^2).

    Raises SimulationFault if the state goes non-finite.
    """
    if backend == "auto":
        backend = default_backend()
    if backend not in ("ext", "python"):
        raise ValueError("backend must be 'auto', 'ext' or 'python'")
    if backend == "ext" and _speedups is None:
        raise RuntimeError("compiled backend not available")
    n = int(round(duration * consts.f_sim))
    if n < 1:
        raise ValueError("duration too short")

    geom = kinematics.VocalFoldGeometry(
        L=params.L, T=params.T, xi_m=params.xi_m, Q_a=params.Q_a,
        Q_s=params.Q_s, Q_b=params.Q_b, Q_p=params.Q_p, R_zn=params.R_zn)
    mod = kinematics.ModulationSpec(
        M=params.M, f_o=params.f_o, eps_am=params.eps_am,
        eps_fm=params.eps_fm, phi_am=params.phi_am, phi_fm=params.phi_fm)
    grid = kinematics.FoldGrid.uniform(geom, n_y, n_z)

    cfg = NoiseConfig(S0=params.S0, delta=params.delta, f_c=f_c)
    rng = np.random.default_rng(params.rng_seed)
    noise = TurbulenceNoise(cfg, geom.L, consts, rng=rng)
    nu = noise.render(n)

    sub = UniformTract(params.L_sub, params.A_s, params.alpha, consts)
    sup = UniformTract(params.L_sup, params.A_e, params.alpha, consts)
    lip = LipRadiation(params.A_e, consts)

    out = np.empty(n)
    if backend == "ext":
        xi0, amp_y, w_y, phi_z = kinematics.fold_tables(geom, grid)
        area = np.empty(n)
        fault = _speedups.simulate_kernel(
            np.ascontiguousarray(xi0), amp_y, w_y, phi_z,
            mod.M, mod.f_o, mod.eps_am, mod.eps_fm, mod.phi_am, mod.phi_fm,
            nu, cfg.delta, noise.re_coeff, cfg.Re_c,
            sub.k, sub.gain, sup.k, sup.gain,
            consts.c, consts.rho, params.A_e, params.A_s, params.P_L,
            lip.a1, lip.po_g, lip.br0, lip.br1,
            consts.f_sim, out, area)
    else:
        t = np.arange(n) / consts.f_sim
        area = kinematics.glottal_area_series(geom, mod, grid, t)
        fault = _simulate_python(n, area, nu, sub, sup, lip, noise,
                                 params.A_e, params.A_s, params.P_L, consts,
                                 out)
    if fault >= 0:
        raise SimulationFault(fault)
    sig = Signal(out, consts.f_sim if consts.f_sim % 1 else int(consts.f_sim),
                 meta={"M": mod.M, "f_o": mod.f_o})
    if return_area:
        return sig, area
    return sig
