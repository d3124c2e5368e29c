"""Kinematic vocal fold model with subharmonic modulation.

The medial fold surface is described over (y, z) with y the
anterior-posterior coordinate (0..L along the fold length) and z the
inferior-superior coordinate (0..T through the fold thickness).  Each
surface point oscillates about a prephonatory half-width with a common
amplitude envelope and a z-dependent phase delay (mucosal wave).  The
reference oscillation is a sinusoid, optionally amplitude- and
frequency-modulated at an integer fraction of the fundamental to
produce period-M subharmonic vibration.

All lengths are in cm, times in s, areas in cm^2.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .errors import AnalysisError

TWO_PI = 2.0 * np.pi


@dataclass
class VocalFoldGeometry:
    """Static fold geometry and posture quotients.

    L: vibrating fold length (cm), T: fold thickness (cm),
    xi_m: maximum vibration half-amplitude (cm).
    Q_a, Q_s, Q_b: abduction, shape and bulging quotients setting the
    prephonatory half-width profile.  Q_p: mucosal wave (phase delay)
    quotient.  R_zn: nodal height ratio, the z/T at which vibration is
    in phase with the reference.
    """

    L: float
    T: float
    xi_m: float
    Q_a: float
    Q_s: float
    Q_b: float
    Q_p: float
    R_zn: float

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0 and self.xi_m > 0):
            raise ValueError("L, T and xi_m must be positive")
        if not 0.0 < self.R_zn < 1.0:
            raise ValueError("R_zn must lie in (0, 1)")


@dataclass
class ModulationSpec:
    """Subharmonic modulation of the reference vibration.

    M is the subharmonic period in cycles (1 = modal).  eps_am and
    eps_fm are the amplitude/frequency modulation extents, phi_am and
    phi_fm the modulator phases (rad).  For M == 1 the modulation
    fields are inert.
    """

    M: int
    f_o: float
    eps_am: float = 0.0
    eps_fm: float = 0.0
    phi_am: float = 0.0
    phi_fm: float = 0.0

    def __post_init__(self):
        if self.M not in (1, 2, 3, 4):
            raise ValueError("M must be one of 1, 2, 3, 4")
        if not 100.0 <= self.f_o < 300.0:
            raise ValueError("f_o must lie in [100, 300) Hz")
        if self.M > 1:
            if not 0.0 < self.eps_am < 1.0:
                raise ValueError("eps_am must lie in (0, 1)")
            if not 0.0 < self.eps_fm < 1.0:
                raise ValueError("eps_fm must lie in (0, 1)")


@dataclass
class FoldGrid:
    """Quadrature grid over the fold surface."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        for ax in (self.y, self.z):
            if ax.ndim != 1 or ax.size < 2:
                raise ValueError("grid axes must be 1-d with at least 2 nodes")
            if np.any(np.diff(ax) <= 0):
                raise ValueError("grid axes must be strictly increasing")

    @classmethod
    def uniform(cls, geom, n_y=21, n_z=15):
        """Uniform n_y x n_z grid spanning [0, L] x [0, T]."""
        return cls(np.linspace(0.0, geom.L, n_y), np.linspace(0.0, geom.T, n_z))

    @property
    def n_y(self):
        return self.y.size

    @property
    def n_z(self):
        return self.z.size


def prephonatory_position(geom, y, z):
    """Prephonatory glottal half-width xi0(y, z) in cm.

    Linear taper in y, quadratic bulge profile in z.  y and z broadcast.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(y < 0) or np.any(y > geom.L):
        raise ValueError("y out of [0, L]")
    if np.any(z < 0) or np.any(z > geom.T):
        raise ValueError("z out of [0, T]")
    u = z / geom.T
    return (geom.Q_a + (geom.Q_s - 4.0 * geom.Q_b * u) * (1.0 - u)) * (1.0 - y / geom.L)


def phase_delay(geom, z):
    """Vertical phase delay varphi(z) in rad; zero at the nodal height."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0) or np.any(z > geom.T):
        raise ValueError("z out of [0, T]")
    return -TWO_PI * geom.Q_p * (z / geom.T - geom.R_zn)


def reference_vibration(mod, t, varphi=0.0):
    """Normalized reference waveform r_M(t) with phase offset varphi.

    M == 1 gives sin(psi) with psi = 2*pi*f_o*t - varphi.  For M > 1
    the carrier is amplitude- and phase-modulated by sinusoids at
    psi/M, so the waveform is periodic in exactly M fundamental
    periods.  t and varphi broadcast.
    """
    t = np.asarray(t, dtype=float)
    psi = TWO_PI * mod.f_o * t - varphi
    if mod.M == 1:
        return np.sin(psi)
    inner = psi / mod.M
    am = 1.0 + mod.eps_am * np.sin(inner + mod.phi_am)
    return am * np.sin(psi + mod.eps_fm * mod.M * np.sin(inner + mod.phi_fm))


def fold_tables(geom, grid):
    """Precomputed per-grid tables used by the area computation.

    Returns (xi0, amp_y, w_y, phi_z) where xi0 is the (n_y, n_z)
    prephonatory field, amp_y = xi_m*sin(pi*y/L) the vibration
    amplitude along y, w_y the trapezoid quadrature weights already
    folded with the factor 2 for the two folds, and phi_z the phase
    delays.
    """
    xi0 = prephonatory_position(geom, grid.y[:, None], grid.z[None, :])
    amp_y = geom.xi_m * np.sin(np.pi * grid.y / geom.L)
    dy = np.diff(grid.y)
    w = np.zeros_like(grid.y)
    w[:-1] += 0.5 * dy
    w[1:] += 0.5 * dy
    return xi0, amp_y, 2.0 * w, phase_delay(geom, grid.z)


def displacement(geom, mod, grid, t):
    """Fold surface half-width field xi(y, z, t) at scalar time t.

    Negative kinematic positions (fold collision) are clamped to zero.
    Returns an (n_y, n_z) array.
    """
    xi0, amp_y, _, phi_z = fold_tables(geom, grid)
    r = reference_vibration(mod, float(t), phi_z)
    return np.maximum(xi0 + amp_y[:, None] * r[None, :], 0.0)


def _refined_z_min(xi, z):
    """Minimum over the trailing (z) axis, parabolically refined.

    The raw half-width is smooth in z, so the node minimum carries an
    O(h^2) bias toward larger values; fitting a parabola through the
    minimum node and its neighbours recovers the continuum minimum to
    higher order.  Edge minima and non-convex fits fall back to the
    node value.
    """
    n_z = z.size
    j = xi.argmin(axis=-1)
    v0 = np.take_along_axis(xi, j[..., None], -1)[..., 0]
    if n_z < 3:
        return v0
    jj = np.clip(j, 1, n_z - 2)
    f1 = np.take_along_axis(xi, (jj - 1)[..., None], -1)[..., 0]
    f2 = np.take_along_axis(xi, jj[..., None], -1)[..., 0]
    f3 = np.take_along_axis(xi, (jj + 1)[..., None], -1)[..., 0]
    z1, z2, z3 = z[jj - 1], z[jj], z[jj + 1]
    d1 = (f2 - f1) / (z2 - z1)
    d2 = (f3 - f2) / (z3 - z2)
    c = (d2 - d1) / (z3 - z1)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = 0.5 * (z1 + z2) - d1 / (2.0 * c)
        vs = f1 + d1 * (zs - z1) + c * (zs - z1) * (zs - z2)
    ok = (j == jj) & (c > 0.0) & (zs > z1) & (zs < z3)
    return np.where(ok, np.minimum(v0, vs), v0)


def glottal_area_series(geom, mod, grid, t, block=8192):
    """Glottal area a(t) in cm^2 for an array of times.

    At each instant the projected glottal width at y is the minimum of
    the raw half-width over z, refined below the grid scale; the area
    integrates twice the clamped width along y.  Each y interval
    contributes the exact integral of the clamped linear interpolant,
    so a collision boundary falling between nodes costs O(h^3) rather
    than the O(h^2) of blindly applying the trapezoid rule across the
    kink.
    """
    t = np.asarray(t, dtype=float)
    xi0, amp_y, _, phi_z = fold_tables(geom, grid)
    hy = np.diff(grid.y)
    out = np.empty(t.shape, dtype=float)
    flat = t.ravel()
    oflat = out.ravel()
    for i0 in range(0, flat.size, block):
        tb = flat[i0:i0 + block]
        r = reference_vibration(mod, tb[:, None], phi_z[None, :])
        xi = xi0[None, :, :] + amp_y[None, :, None] * r[:, None, :]
        g = _refined_z_min(xi, grid.z)
        gp = np.maximum(g, 0.0)
        gi, gj = g[:, :-1], g[:, 1:]
        seg = 0.5 * (gp[:, :-1] + gp[:, 1:])
        cross = (gi > 0.0) != (gj > 0.0)
        if np.any(cross):
            pmax = np.maximum(gp[:, :-1], gp[:, 1:])
            np.divide(0.5 * pmax * pmax, np.abs(gi - gj), out=seg,
                      where=cross)
        oflat[i0:i0 + tb.size] = 2.0 * (seg @ hy)
    return out


def glottal_area(geom, mod, grid, t):
    """Glottal area at scalar time t (cm^2)."""
    return float(glottal_area_series(geom, mod, grid, np.array([float(t)]))[0])


def _refine_peak(x, i):
    """Parabolic refinement of a local maximum at sample i.

    Returns (offset, height) with offset in (-0.5, 0.5] samples.
    """
    a, b, c = x[i - 1], x[i], x[i + 1]
    denom = a - 2.0 * b + c
    if denom == 0.0:
        return 0.0, b
    d = 0.5 * (a - c) / denom
    return d, b - 0.25 * (a - c) * d


def measure_modulation_extents(sig, f_o, M):
    """Measure AM and FM extents of a (sub)harmonic waveform.

    Locates cycle peaks (with parabolic interpolation), takes peak
    heights A_i and peak-to-peak periods T_i, and returns

        ((A_max - A_min)/(A_max + A_min), (T_max - T_min)/(T_max + T_min)).

    Simple peak statistics, adequate for the clean synthetic signals
    this is used on.  Needs at least 4*M detected cycles.
    """
    x = np.asarray(sig.samples, dtype=float)
    distance = max(1, int(0.5 * sig.rate / f_o))
    peaks, _ = find_peaks(x, distance=distance)
    peaks = peaks[(peaks > 0) & (peaks < x.size - 1)]
    if peaks.size < 4 * M:
        raise AnalysisError(
            "found %d cycle peaks, need at least %d" % (peaks.size, 4 * M))
    times = np.empty(peaks.size)
    heights = np.empty(peaks.size)
    for n, i in enumerate(peaks):
        d, h = _refine_peak(x, i)
        times[n] = (i + d) / sig.rate
        heights[n] = h
    periods = np.diff(times)
    am = (heights.max() - heights.min()) / (heights.max() + heights.min())
    fm = (periods.max() - periods.min()) / (periods.max() + periods.min())
    return float(am), float(fm)
