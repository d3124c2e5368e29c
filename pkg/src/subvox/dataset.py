"""Monte Carlo dataset generation for subharmonic period classification.

Each record draws the synthesis parameters independently from fixed
ranges (uniform, or log-uniform for the modulation extents), synthesizes
1.1 s of signal at 44100 S/s, resamples to 8000 S/s, discards the first
0.1 s startup, normalizes to zero mean and unit variance, and stores the
result as float32 WAV next to a JSONL manifest.  For subharmonic
records (M > 1) the manifest also carries the subharmonics-to-harmonics
ratio measured on the stored signal.
"""

import dataclasses
import json
import logging
import math
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np

from . import waveguide
from .dsp import Signal, normalize, periodogram, resample, write_wav
from .errors import AnalysisError, SimulationFault

log = logging.getLogger(__name__)

OUT_RATE = 8000
PURGE_SAMPLES = 800      # 0.1 s at the output rate
KEEP_SAMPLES = 8000      # 1.0 s at the output rate
SHR_MAX_FREQ = 4000.0    # partials above this are ignored

# sampling ranges [lo, hi); "log" ranges are log-uniform; Q_b is drawn
# as a fraction of Q_s
PARAM_RANGES = {
    "f_o": (100.0, 300.0, "lin"),
    "eps_am": (0.1, 1.0, "log"),
    "eps_fm": (0.005, 0.1, "log"),
    "phi_am": (-np.pi / 2, np.pi / 2, "lin"),
    "phi_fm": (-np.pi / 2, np.pi / 2, "lin"),
    "S0": (100.0, 2500.0, "lin"),
    "delta": (0.2, 0.6, "lin"),
    "L": (0.738, 1.562, "lin"),
    "T": (0.18, 0.33, "lin"),
    "xi_m": (0.09, 0.132, "lin"),
    "Q_a": (0.27, 0.33, "lin"),
    "Q_s": (1.8, 2.2, "lin"),
    "Q_b_rel": (0.45, 0.55, "lin"),
    "Q_p": (0.18, 0.22, "lin"),
    "R_zn": (0.63, 0.77, "lin"),
    "alpha": (0.9983, 0.9985, "lin"),
    "L_sup": (11.111, 15.873, "lin"),
    "A_e": (1.0, 5.0, "lin"),
    "L_sub": (6.349, 9.524, "lin"),
    "A_s": (1.0, 3.0, "lin"),
    "P_L": (7056.0, 8624.0, "lin"),
}

# draw order is part of the reproducibility contract
_DRAW_ORDER = list(PARAM_RANGES)

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass
class SynthParams:
    """One full synthesis parameter record (CGS units, Hz, rad)."""

    M: int
    f_o: float
    eps_am: float
    eps_fm: float
    phi_am: float
    phi_fm: float
    S0: float
    delta: float
    L: float
    T: float
    xi_m: float
    Q_a: float
    Q_s: float
    Q_b: float
    Q_p: float
    R_zn: float
    alpha: float
    L_sup: float
    A_e: float
    L_sub: float
    A_s: float
    P_L: float
    rng_seed: int

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def validate(self):
        """Check every field against the sampling ranges."""
        if self.M not in (1, 2, 3, 4):
            raise ValueError("M must be 1..4")
        vals = dataclasses.asdict(self)
        for name, (lo, hi, _) in PARAM_RANGES.items():
            if name == "Q_b_rel":
                lo, hi = lo * self.Q_s, hi * self.Q_s
                v = self.Q_b
                name = "Q_b"
            else:
                v = vals[name]
            if not lo <= v < hi * (1 + 1e-12):
                raise ValueError("%s=%g outside [%g, %g)" % (name, v, lo, hi))


def sample_params(rng, M):
    """Draw one SynthParams with the given subharmonic period.

    Draws follow a fixed field order so a given generator state always
    yields the same record.
    """
    if M not in (1, 2, 3, 4):
        raise ValueError("M must be 1..4")
    vals = {}
    for name in _DRAW_ORDER:
        lo, hi, kind = PARAM_RANGES[name]
        if kind == "log":
            vals[name] = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            vals[name] = rng.uniform(lo, hi)
    vals["Q_b"] = vals.pop("Q_b_rel") * vals["Q_s"]
    vals["rng_seed"] = int(rng.integers(0, 2 ** 63))
    return SynthParams(M=int(M), **vals)


def postprocess(raw):
    """44100 S/s raw pressure -> 1.0 s normalized signal at 8000 S/s."""
    if int(round(raw.rate)) != 44100:
        raise ValueError("expected a 44100 S/s raw signal")
    y = resample(raw, 80, 441)
    if len(y) < PURGE_SAMPLES + KEEP_SAMPLES:
        raise AnalysisError("raw signal too short: %d output samples" % len(y))
    trimmed = Signal(y.samples[PURGE_SAMPLES:PURGE_SAMPLES + KEEP_SAMPLES],
                     y.rate, dict(raw.meta))
    return normalize(trimmed)


def ground_truth_shr(sig, f_o, M):
    """Subharmonics-to-harmonics ratio in dB from the known f_o and M.

    Partials sit at multiples of f_o/M below 4 kHz; those at multiples
    of f_o are harmonics, the rest subharmonics.  Each partial is read
    as the maximum periodogram bin within half a bin of its frequency.
    """
    if M < 2:
        raise ValueError("SHR needs M >= 2")
    spec = periodogram(sig, window="hamming")
    df = spec.df
    if f_o / M < 2.0 * df:
        raise AnalysisError("f_o/M below spectral resolution")
    sub = 0.0
    har = 0.0
    k = 1
    while k * f_o / M < SHR_MAX_FREQ:
        pos = k * f_o / (M * df)
        lo = max(0, int(math.ceil(pos - 0.5)))
        hi = min(spec.psd.size - 1, int(math.floor(pos + 0.5)))
        peak = float(spec.psd[lo:hi + 1].max())
        if k % M == 0:
            har += peak
        else:
            sub += peak
        k += 1
    if har <= 0.0:
        raise AnalysisError("no harmonic energy below %g Hz" % SHR_MAX_FREQ)
    if sub <= 0.0:
        return -math.inf
    return 10.0 * math.log10(sub / har)


@dataclass
class DatasetRecord:
    """One manifest row."""

    file: str
    split: str
    M: int
    f_o: float
    shr_db: float | None
    params: SynthParams

    def to_dict(self):
        d = {"file": self.file, "split": self.split, "M": self.M,
             "f_o": self.f_o, "shr_db": self.shr_db,
             "params": self.params.to_dict()}
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(file=d["file"], split=d["split"], M=int(d["M"]),
                   f_o=float(d["f_o"]), shr_db=d["shr_db"],
                   params=SynthParams.from_dict(d["params"]))


@dataclass
class DatasetManifest:
    meta: dict
    records: list

    def save(self, path):
        with open(path, "w") as f:
            f.write(json.dumps({"_meta": self.meta}) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec.to_dict()) + "\n")

    @classmethod
    def load(cls, path):
        meta = None
        records = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                if "_meta" in d:
                    meta = d["_meta"]
                else:
                    records.append(DatasetRecord.from_dict(d))
        if meta is None:
            raise ValueError("manifest has no _meta line")
        return cls(meta=meta, records=records)

    def split(self, name):
        return [r for r in self.records if r.split == name]


def record_seed(master_seed, split, M, index, attempt=0):
    """Spawn key for one record's generator."""
    return np.random.SeedSequence(
        [int(master_seed), _SPLIT_CODES[split], int(M), int(index),
         int(attempt)])


MAX_ATTEMPTS = 8


def _make_record(master_seed, split, M, index, out_dir, duration, f_c,
                 backend):
    """Synthesize one record; replaces faulted draws deterministically."""
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(record_seed(master_seed, split, M, index,
                                                attempt))
        params = sample_params(rng, M)
        try:
            raw = waveguide.simulate(params, duration=duration, f_c=f_c,
                                     backend=backend)
            sig = postprocess(raw)
        except (SimulationFault, AnalysisError) as exc:
            log.warning("record %s/M%d/%d attempt %d failed: %s",
                        split, M, index, attempt, exc)
            continue
        shr = ground_truth_shr(sig, params.f_o, M) if M > 1 else None
        fname = "%s_M%d_%05d.wav" % (split, M, index)
        write_wav(os.path.join(out_dir, fname), sig)
        rec = DatasetRecord(file=fname, split=split, M=M, f_o=params.f_o,
                            shr_db=shr, params=params)
        return rec, attempt
    raise SimulationFault(-1, "record %s/M%d/%d failed %d attempts"
                          % (split, M, index, MAX_ATTEMPTS))


def _worker(job):
    return _make_record(*job)


def generate_dataset(out_dir, n_per_class, seed, workers=1, duration=1.1,
                     f_c=1000.0, backend="auto", force=False):
    """Generate a labeled dataset.

    n_per_class is a mapping {"train": n, "val": n, "test": n} of
    per-class record counts (every M in 1..4 gets n records per split).
    Existing records are kept (resume) when the manifest seed and
    counts match; pass force=True to regenerate from scratch.

    Returns the DatasetManifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    meta = {
        "kind": "subvox-dataset",
        "version": 1,
        "seed": int(seed),
        "n_per_class": {k: int(v) for k, v in n_per_class.items()},
        "rate": OUT_RATE,
        "samples": KEEP_SAMPLES,
        "duration_raw": duration,
        "noise_fc": f_c,
        "replaced": 0,
    }

    done = {}
    if os.path.exists(manifest_path) and not force:
        old = DatasetManifest.load(manifest_path)
        same = (old.meta.get("seed") == meta["seed"]
                and old.meta.get("n_per_class") == meta["n_per_class"]
                and old.meta.get("duration_raw") == duration
                and old.meta.get("noise_fc") == f_c)
        if not same:
            raise ValueError(
                "existing manifest at %s was generated with different "
                "settings; use force to regenerate" % manifest_path)
        meta["replaced"] = old.meta.get("replaced", 0)
        for rec in old.records:
            if os.path.exists(os.path.join(out_dir, rec.file)):
                done[(rec.split, rec.M, rec.file)] = rec

    jobs = []
    order = []
    for split in ("train", "val", "test"):
        n = int(n_per_class.get(split, 0))
        for M in (1, 2, 3, 4):
            for index in range(n):
                fname = "%s_M%d_%05d.wav" % (split, M, index)
                order.append((split, M, fname))
                if (split, M, fname) not in done:
                    jobs.append((seed, split, M, index, out_dir, duration,
                                 f_c, backend))

    replaced = meta["replaced"]
    results = {}
    if jobs:
        log.info("generating %d records (%d cached) with %d worker(s)",
                 len(jobs), len(done), workers)
        if workers > 1:
            with multiprocessing.Pool(workers) as pool:
                for rec, attempt in pool.imap(_worker, jobs):
                    results[(rec.split, rec.M, rec.file)] = rec
                    replaced += attempt
        else:
            for i, job in enumerate(jobs):
                rec, attempt = _make_record(*job)
                results[(rec.split, rec.M, rec.file)] = rec
                replaced += attempt
                if (i + 1) % 200 == 0:
                    log.info("  %d/%d records done", i + 1, len(jobs))

    meta["replaced"] = replaced
    records = [done.get(key) or results[key] for key in order]
    manifest = DatasetManifest(meta=meta, records=records)
    manifest.save(manifest_path)
    return manifest


def load_signals(manifest, manifest_dir, split):
    """Stack one split into (x, labels, records) for training.

    x is float32 of shape (n, samples) exactly as stored on disk.
    """
    recs = manifest.split(split)
    if not recs:
        raise ValueError("split %r is empty" % split)
    from .dsp import read_wav
    x = np.empty((len(recs), manifest.meta["samples"]), dtype=np.float32)
    labels = np.empty(len(recs), dtype=np.int64)
    for i, rec in enumerate(recs):
        sig = read_wav(os.path.join(manifest_dir, rec.file))
        if len(sig) != x.shape[1] or int(sig.rate) != manifest.meta["rate"]:
            raise ValueError("unexpected geometry in %s" % rec.file)
        x[i] = sig.samples.astype(np.float32)
        labels[i] = rec.M
    return x, labels, recs
