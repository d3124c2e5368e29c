"""Signal container and general DSP utilities.

Spectra use a one-sided power spectral density convention fixed by
Parseval: sum(psd) * df equals the windowed signal power
sum((w*x)**2) / sum(w**2).  Rational resampling uses a Kaiser-windowed
sinc polyphase filter with per-branch DC normalization.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.io import wavfile
from scipy.signal import kaiser_beta, upfirdn

from .errors import AnalysisError


@dataclass
class Signal:
    """Uniformly sampled mono signal."""

    samples: np.ndarray
    rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError("samples must be 1-d")
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.rate


@dataclass
class Spectrum:
    """One-sided PSD estimate."""

    freqs: np.ndarray
    psd: np.ndarray
    rate: float
    window: str

    @property
    def df(self):
        return float(self.freqs[1] - self.freqs[0])


@dataclass
class Spectrogram:
    """Short-time one-sided PSD matrix, shape (n_freqs, n_frames)."""

    times: np.ndarray
    freqs: np.ndarray
    psd: np.ndarray
    rate: float


def _window(name, n):
    if name == "hamming":
        return np.hamming(n)
    if name in ("boxcar", "rect", "rectangular"):
        return np.ones(n)
    if name == "hann":
        return np.hanning(n)
    raise ValueError("unknown window %r" % (name,))


def periodogram(sig, window="hamming"):
    """Single-frame one-sided PSD of the whole signal.

    Scaled so that sum(psd)*df == sum((w*x)**2)/sum(w**2) exactly
    (signal power for a rectangular window).
    """
    x = np.asarray(sig.samples, dtype=float)
    n = x.size
    if n < 16:
        raise AnalysisError("signal too short for a periodogram (%d samples)" % n)
    w = _window(window, n)
    xw = w * x
    spec = np.fft.rfft(xw)
    psd = (2.0 / (sig.rate * np.sum(w * w))) * np.abs(spec) ** 2
    psd[0] *= 0.5
    if n % 2 == 0:
        psd[-1] *= 0.5
    freqs = np.fft.rfftfreq(n, 1.0 / sig.rate)
    return Spectrum(freqs=freqs, psd=psd, rate=sig.rate, window=window)


def spectrogram(sig, win_len, hop, window="hamming"):
    """Sliding-window PSD matrix.

    win_len and hop are in samples; frames start at multiples of hop
    and the frame count is floor((n - win_len)/hop) + 1.  Frame
    timestamps mark window centers.
    """
    x = np.asarray(sig.samples, dtype=float)
    win_len = int(win_len)
    hop = int(hop)
    if win_len < 16 or hop < 1:
        raise ValueError("bad window/hop")
    if x.size < win_len:
        raise AnalysisError("signal shorter than the analysis window")
    n_frames = (x.size - win_len) // hop + 1
    w = _window(window, win_len)
    scale = 2.0 / (sig.rate * np.sum(w * w))
    idx = hop * np.arange(n_frames)[:, None] + np.arange(win_len)[None, :]
    frames = x[idx] * w
    spec = np.fft.rfft(frames, axis=1)
    psd = scale * np.abs(spec) ** 2
    psd[:, 0] *= 0.5
    if win_len % 2 == 0:
        psd[:, -1] *= 0.5
    freqs = np.fft.rfftfreq(win_len, 1.0 / sig.rate)
    times = (hop * np.arange(n_frames) + 0.5 * win_len) / sig.rate
    return Spectrogram(times=times, freqs=freqs, psd=psd.T, rate=sig.rate)


@lru_cache(maxsize=32)
def _resample_kernel(p, q, attn_db=80.0, half_width=32):
    """Kaiser-windowed sinc lowpass for p/q resampling.

    half_width counts sinc zero crossings per side at the upsampled
    rate, so the kernel has 2*half_width*max(p, q) + 1 taps.  Branches
    of the polyphase decomposition (taps taken mod p) are normalized to
    sum to one individually, which makes the DC gain exactly one for
    every output phase and bakes in the interpolation gain p.
    """
    m = max(p, q)
    numtaps = 2 * half_width * m + 1
    beta = kaiser_beta(attn_db)
    # transition width achievable with this length (cycles/sample at
    # the upsampled rate), then back the cutoff off the stopband edge
    # by half of it
    trans = (attn_db - 8.0) / (2.285 * 2.0 * np.pi * numtaps)
    f_sb = 0.5 / m
    f_c = f_sb - 0.5 * trans
    if f_c <= 0:
        raise ValueError("filter too short for the requested ratio")
    n = np.arange(numtaps) - (numtaps - 1) // 2
    h = 2.0 * f_c * np.sinc(2.0 * f_c * n) * np.kaiser(numtaps, beta)
    branch = np.arange(numtaps) % p
    sums = np.bincount(branch, weights=h, minlength=p)
    if np.any(sums <= 0):
        raise ValueError("degenerate polyphase branch")
    h = h / sums[branch]
    h.flags.writeable = False
    return h


def resample(sig, p, q):
    """Rational-rate resampling by p/q with edge-replicate padding.

    Output sample n estimates the input at time n*q/p input samples,
    so the streams stay time aligned; the output length is
    ceil(len(x)*p/q).
    """
    p = int(p)
    q = int(q)
    if p < 1 or q < 1:
        raise ValueError("p and q must be positive")
    g = math.gcd(p, q)
    p //= g
    q //= g
    x = np.asarray(sig.samples, dtype=float)
    if p == 1 and q == 1:
        return Signal(x.copy(), sig.rate, dict(sig.meta))
    if x.size < 2:
        raise AnalysisError("too few samples to resample")
    h = _resample_kernel(p, q)
    center = (h.size - 1) // 2
    # left pad so the first output lands on an exact polyphase index:
    # need (center + pad*p) divisible by q and pad*p >= center
    pad0 = (-center * pow(p, -1, q)) % q if q > 1 else 0
    pad = pad0
    while pad * p < center:
        pad += q
    n_out = -((-x.size * p) // q)
    # right pad just enough to cover the kernel tail at the last output
    rpad = center // p + q + 2
    xp = np.concatenate([np.full(pad, x[0]), x, np.full(rpad, x[-1])])
    y = upfirdn(h, xp, up=p, down=q)
    m0 = (center + pad * p) // q
    if y.size < m0 + n_out:
        raise RuntimeError("resampler bookkeeping error")
    new_rate = sig.rate * p / q
    if abs(new_rate - round(new_rate)) < 1e-9:
        new_rate = int(round(new_rate))
    return Signal(y[m0:m0 + n_out].copy(), new_rate, dict(sig.meta))


def resample_to(sig, new_rate):
    """Resample to an integer target rate."""
    old = int(round(sig.rate))
    if abs(sig.rate - old) > 1e-9:
        raise ValueError("resample_to needs an integer source rate")
    g = math.gcd(int(new_rate), old)
    return resample(sig, int(new_rate) // g, old // g)


def normalize(sig):
    """Remove the mean and scale to unit variance."""
    x = np.asarray(sig.samples, dtype=float)
    mu = x.mean()
    sd = x.std()
    if not np.isfinite(sd) or sd == 0.0:
        raise AnalysisError("degenerate signal: zero or non-finite variance")
    return Signal((x - mu) / sd, sig.rate, dict(sig.meta))


def read_wav(path):
    """Read a WAV file as a float Signal.

    Integer PCM is scaled to [-1, 1); multi-channel input is reduced
    by channel average (with a warning).
    """
    rate, data = wavfile.read(path)
    if data.ndim == 2:
        warnings.warn("averaging %d channels to mono" % data.shape[1])
        data = data.astype(float).mean(axis=1)
    if data.dtype.kind == "i":
        data = data.astype(float) / float(2 ** (8 * data.dtype.itemsize - 1))
    elif data.dtype.kind == "u":
        half = 2 ** (8 * data.dtype.itemsize - 1)
        data = (data.astype(float) - half) / half
    else:
        data = data.astype(float)
    return Signal(data, int(rate))


def write_wav(path, sig):
    """Write a Signal as 32-bit float WAV."""
    rate = int(round(sig.rate))
    if abs(sig.rate - rate) > 1e-9:
        raise ValueError("WAV output needs an integer rate")
    wavfile.write(path, rate, np.ascontiguousarray(sig.samples, dtype=np.float32))


def _db(x):
    return 10.0 * np.log10(np.maximum(x, 1e-300))


def spectrum_to_csv(spec, path):
    """Write a Spectrum as (frequency_hz, psd, psd_db) rows."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frequency_hz", "psd", "psd_db"])
        for fr, s, d in zip(spec.freqs, spec.psd, _db(spec.psd)):
            wr.writerow(["%.6f" % fr, repr(float(s)), "%.3f" % d])


def spectrogram_to_csv(sg, path):
    """Write a Spectrogram in long format (frequency_hz, time_s, psd_db)."""
    dbm = _db(sg.psd)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frequency_hz", "time_s", "psd_db"])
        for i, fr in enumerate(sg.freqs):
            for j, t in enumerate(sg.times):
                wr.writerow(["%.6f" % fr, "%.6f" % t, "%.3f" % dbm[i, j]])
