"""Fully convolutional subharmonic-period classifiers.

Two fixed variants differ only in the fourth block: FCN-401 (kernel 16,
512 channels) and FCN-785 (kernel 64, 128 channels).  Both map a
normalized 8000 S/s signal to per-snapshot sigmoid scores for the four
period classes M = 1..4, one snapshot per 16 samples (2 ms), each seeing
a window of `variant.window` input samples.  No padding anywhere, so a
signal of any length >= window can be classified without retraining.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from . import dataset as dataset_mod
from . import nn
from .dsp import normalize, read_wav, resample_to, spectrogram
from .errors import AnalysisError

N_CLASSES = 4
IN_RATE = 8000


@dataclass(frozen=True)
class FcnVariant:
    name: str
    kernels: tuple
    channels: tuple
    window: int
    hop: int = 16


FCN_401 = FcnVariant("FCN-401", (80, 32, 32, 16, 1), (64, 64, 64, 512, 4), 401)
FCN_785 = FcnVariant("FCN-785", (80, 32, 32, 64, 1), (64, 64, 64, 128, 4), 785)

VARIANTS = {
    "fcn401": FCN_401,
    "fcn-401": FCN_401,
    "fcn785": FCN_785,
    "fcn-785": FCN_785,
}


def get_variant(name):
    if isinstance(name, FcnVariant):
        return name
    try:
        return VARIANTS[name.lower()]
    except KeyError:
        raise ValueError("unknown variant %r (have: fcn401, fcn785)" % name)


class FcnModel:
    """conv -> maxpool/2 -> batchnorm -> ReLU blocks plus a 1x1 head.

    Construction verifies that the composed receptive field and hop
    match the variant's window and snapshot stride.
    """

    def __init__(self, variant, rng=None, dtype=np.float32):
        variant = get_variant(variant)
        if rng is None:
            rng = np.random.default_rng()
        self.variant = variant
        self.dtype = dtype
        self.convs = []
        self.bns = []
        self.layers = []
        in_ch = 1
        n_blocks = len(variant.kernels)
        for i, (k, ch) in enumerate(zip(variant.kernels, variant.channels)):
            last = i == n_blocks - 1
            # keep the head near zero so initial scores are uninformative
            scale = None if not last else 0.1 / np.sqrt(in_ch * k)
            conv = nn.Conv1d(in_ch, ch, k, rng=rng, dtype=dtype, w_scale=scale)
            self.convs.append(conv)
            self.layers.append(("conv%d" % (i + 1), conv))
            if not last:
                self.layers.append(("pool%d" % (i + 1), nn.MaxPool2()))
                bn = nn.BatchNorm1d(ch, dtype=dtype)
                self.bns.append(bn)
                self.layers.append(("bn%d" % (i + 1), bn))
                self.layers.append(("relu%d" % (i + 1), nn.ReLU()))
            in_ch = ch
        rf, hop = self.receptive_field()
        if rf != variant.window or hop != variant.hop:
            raise ValueError(
                "layer stack yields window %d / hop %d, variant declares "
                "%d / %d" % (rf, hop, variant.window, variant.hop))
        if variant.channels[-1] != N_CLASSES:
            raise ValueError("head must emit %d classes" % N_CLASSES)

    def receptive_field(self):
        """(receptive field, hop) of one output sample, by layer walk."""
        rf, jump = 1, 1
        for name, layer in self.layers:
            if isinstance(layer, nn.Conv1d):
                rf += (layer.kernel - 1) * jump
            elif isinstance(layer, nn.MaxPool2):
                rf += jump
                jump *= 2
        return rf, jump

    def output_length(self, n):
        """Snapshot count for an n-sample input (layer arithmetic)."""
        for name, layer in self.layers:
            if isinstance(layer, nn.Conv1d):
                n = n - layer.kernel + 1
            elif isinstance(layer, nn.MaxPool2):
                n = n // 2
            if n < 1:
                raise ValueError("input too short at layer %s" % name)
        return n

    def forward(self, x, training=False):
        for _, layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, gy):
        for _, layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy

    def trainable_parameters(self):
        out = []
        for _, layer in self.layers:
            out.extend(p for _, p in layer.parameters())
        return out

    def gradients(self):
        out = []
        for _, layer in self.layers:
            if hasattr(layer, "gradients"):
                out.extend(layer.gradients())
        return out

    def state_tensors(self):
        """Ordered (name, array) pairs, including batch-norm statistics."""
        out = []
        for name, layer in self.layers:
            if isinstance(layer, nn.Conv1d):
                out.append((name + ".w", layer.w))
                out.append((name + ".b", layer.b))
            elif isinstance(layer, nn.BatchNorm1d):
                for pname, arr in layer.state():
                    out.append((name + "." + pname, arr))
        return out

    def copy_state(self):
        return [(name, arr.copy()) for name, arr in self.state_tensors()]

    def load_state(self, state):
        current = self.state_tensors()
        if len(state) != len(current):
            raise ValueError("state size mismatch")
        for (name, arr), (sname, sarr) in zip(current, state):
            if name != sname or arr.shape != sarr.shape:
                raise ValueError("state tensor mismatch at %s/%s"
                                 % (name, sname))
            arr[...] = sarr


def snapshot_times(n_snapshots, variant, rate=IN_RATE):
    """Center timestamps (s) of each snapshot."""
    k = np.arange(n_snapshots)
    return (k * variant.hop + variant.window / 2.0) / rate


@dataclass
class SnapshotReport:
    """Per-snapshot classification of one signal."""

    times: np.ndarray
    probs: np.ndarray          # (n_snapshots, 4) sigmoid scores
    m_hat: np.ndarray          # argmax class in 1..4
    p_hat: np.ndarray          # score of the chosen class
    source: str = ""

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["time_s", "p_m1", "p_m2", "p_m3", "p_m4",
                         "m_hat", "p_hat"])
            for i in range(self.times.size):
                wr.writerow(["%.6f" % self.times[i]]
                            + ["%.6f" % p for p in self.probs[i]]
                            + [int(self.m_hat[i]), "%.6f" % self.p_hat[i]])


def _forward_chunks(model, x, batch=32, training=False):
    """Logits for (n, length) rows, processed in batches."""
    outs = []
    for i0 in range(0, x.shape[0], batch):
        xb = np.ascontiguousarray(x[i0:i0 + batch][:, None, :],
                                  dtype=model.dtype)
        outs.append(model.forward(xb, training=training))
    return np.concatenate(outs, axis=0)


def infer(model, sig):
    """Classify one normalized 8000 S/s signal snapshot by snapshot."""
    if int(round(sig.rate)) != IN_RATE:
        raise ValueError("expected %d S/s input, got %r" % (IN_RATE, sig.rate))
    x = np.asarray(sig.samples)
    if x.size < model.variant.window:
        raise AnalysisError(
            "need at least %d samples, got %d" % (model.variant.window, x.size))
    logits = _forward_chunks(model, x[None, :], training=False)[0]
    probs = expit(logits.astype(np.float64)).T
    m_hat = probs.argmax(axis=1) + 1
    p_hat = probs.max(axis=1)
    times = snapshot_times(probs.shape[0], model.variant)
    return SnapshotReport(times=times, probs=probs, m_hat=m_hat, p_hat=p_hat)


@dataclass
class TrainConfig:
    epochs: int
    lr: float = 2e-4
    batch_size: int = 32
    dropout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_acc: float


def _snapshot_accuracy(logits, labels):
    """(correct, total) snapshot counts for a batch of logits."""
    pred = logits.argmax(axis=1) + 1
    ok = (pred == labels[:, None]).sum()
    return int(ok), pred.size


def _eval_accuracy(model, x, labels, batch=32):
    correct = 0
    total = 0
    for i0 in range(0, x.shape[0], batch):
        logits = _forward_chunks(model, x[i0:i0 + batch], batch=batch)
        ok, n = _snapshot_accuracy(logits, labels[i0:i0 + batch])
        correct += ok
        total += n
    return correct / total


def train(model, manifest, manifest_dir, cfg, log_fn=None):
    """Train on the manifest's train split, select on val snapshot accuracy.

    Targets are the one-hot class replicated across snapshots; the loss
    is mean binary cross entropy over (class, snapshot, batch) cells.
    The model is left holding the best-validation-epoch weights
    (including batch-norm statistics).
    """
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    x_train, y_train, _ = dataset_mod.load_signals(manifest, manifest_dir,
                                                   "train")
    x_val, y_val, _ = dataset_mod.load_signals(manifest, manifest_dir, "val")
    drop = nn.Dropout(cfg.dropout, rng)
    adam = nn.Adam(model.trainable_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                   beta2=cfg.beta2, eps=cfg.adam_eps)
    eye = np.eye(N_CLASSES, dtype=model.dtype)
    history = []
    best = (-1.0, -1, None)   # acc, epoch, state
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        perm = rng.permutation(x_train.shape[0])
        loss_sum = 0.0
        cells = 0
        correct = 0
        total = 0
        for i0 in range(0, perm.size, cfg.batch_size):
            idx = perm[i0:i0 + cfg.batch_size]
            xb = np.ascontiguousarray(x_train[idx][:, None, :],
                                      dtype=model.dtype)
            xb = drop.forward(xb, training=True)
            logits = model.forward(xb, training=True)
            targets = np.broadcast_to(
                eye[y_train[idx] - 1][:, :, None], logits.shape)
            loss, grad = nn.bce_with_logits(logits, targets)
            model.backward(grad)
            adam.step(model.gradients())
            loss_sum += loss * logits.size
            cells += logits.size
            ok, n = _snapshot_accuracy(logits, y_train[idx])
            correct += ok
            total += n
        val_acc = _eval_accuracy(model, x_val, y_val, batch=cfg.batch_size)
        row = {
            "epoch": epoch,
            "loss_per_snapshot": N_CLASSES * loss_sum / cells,
            "train_acc": correct / total,
            "val_acc": val_acc,
            "seconds": time.time() - t0,
        }
        history.append(row)
        if log_fn:
            log_fn("epoch %d: loss/snap %.4f train %.4f val %.4f (%.1fs)"
                   % (epoch, row["loss_per_snapshot"], row["train_acc"],
                      val_acc, row["seconds"]))
        if val_acc > best[0]:
            best = (val_acc, epoch, model.copy_state())
    model.load_state(best[2])
    return TrainResult(history=history, best_epoch=best[1], best_val_acc=best[0])


def save_metrics_csv(history, path):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["epoch", "loss_per_snapshot", "train_acc", "val_acc",
                     "seconds"])
        for row in history:
            wr.writerow([row["epoch"], "%.6f" % row["loss_per_snapshot"],
                         "%.6f" % row["train_acc"], "%.6f" % row["val_acc"],
                         "%.2f" % row["seconds"]])


@dataclass
class EvalReport:
    split: str
    confusion: np.ndarray          # (4, 4) snapshot counts, rows = true M
    overall_acc: float
    per_class_acc: np.ndarray      # (4,)
    shr_bins: list                 # dicts: lo, hi, n_snapshots, accuracy
    fo_points: list                # dicts: file, M, f_o, accuracy
    fo_slope: float
    fo_intercept: float

    def save_csvs(self, prefix):
        with open(prefix + "_confusion.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["true_m"] + ["pred_%d" % m for m in range(1, 5)])
            for m in range(4):
                wr.writerow([m + 1] + [int(v) for v in self.confusion[m]])
        with open(prefix + "_summary.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["metric", "value"])
            wr.writerow(["split", self.split])
            wr.writerow(["overall_accuracy", "%.4f" % self.overall_acc])
            for m in range(4):
                wr.writerow(["accuracy_m%d" % (m + 1),
                             "%.4f" % self.per_class_acc[m]])
            wr.writerow(["n_snapshots", int(self.confusion.sum())])
            wr.writerow(["fo_slope_per_hz", "%.6g" % self.fo_slope])
            wr.writerow(["fo_intercept", "%.6g" % self.fo_intercept])
        with open(prefix + "_shr_accuracy.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["bin_lo_db", "bin_hi_db", "n_snapshots", "accuracy"])
            for b in self.shr_bins:
                wr.writerow(["%.1f" % b["lo"], "%.1f" % b["hi"],
                             b["n_snapshots"], "%.4f" % b["accuracy"]])
        with open(prefix + "_fo_accuracy.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["file", "m", "f_o_hz", "accuracy"])
            for p in self.fo_points:
                wr.writerow([p["file"], p["M"], "%.3f" % p["f_o"],
                             "%.4f" % p["accuracy"]])


def evaluate(model, manifest, manifest_dir, split="test", shr_bin_width=2.0,
             shr_range=(-30.0, 0.0)):
    """Snapshot-level evaluation of one split."""
    x, labels, recs = dataset_mod.load_signals(manifest, manifest_dir, split)
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    rec_acc = np.empty(len(recs))
    for i0 in range(0, x.shape[0], 32):
        logits = _forward_chunks(model, x[i0:i0 + 32])
        pred = logits.argmax(axis=1) + 1
        for j in range(pred.shape[0]):
            true_m = labels[i0 + j]
            rec_acc[i0 + j] = np.mean(pred[j] == true_m)
            idx, counts = np.unique(pred[j], return_counts=True)
            confusion[true_m - 1, idx - 1] += counts
    overall = confusion.trace() / confusion.sum()
    row_tot = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), row_tot, where=row_tot > 0,
                          out=np.zeros(N_CLASSES))

    lo0, hi0 = shr_range
    n_bins = int(round((hi0 - lo0) / shr_bin_width))
    edges = lo0 + shr_bin_width * np.arange(n_bins + 1)
    bin_ok = np.zeros(n_bins)
    bin_n = np.zeros(n_bins, dtype=np.int64)
    n_snap = None
    for i, rec in enumerate(recs):
        if rec.M < 2 or rec.shr_db is None:
            continue
        b = int(np.clip((rec.shr_db - lo0) // shr_bin_width, 0, n_bins - 1))
        if n_snap is None:
            n_snap = model.output_length(x.shape[1])
        bin_ok[b] += rec_acc[i] * n_snap
        bin_n[b] += n_snap
    shr_bins = [{"lo": float(edges[b]), "hi": float(edges[b + 1]),
                 "n_snapshots": int(bin_n[b]),
                 "accuracy": float(bin_ok[b] / bin_n[b]) if bin_n[b] else float("nan")}
                for b in range(n_bins)]

    fo = np.array([rec.f_o for rec in recs])
    slope, intercept = np.polyfit(fo, rec_acc, 1)
    fo_points = [{"file": rec.file, "M": rec.M, "f_o": rec.f_o,
                  "accuracy": float(rec_acc[i])}
                 for i, rec in enumerate(recs)]
    return EvalReport(split=split, confusion=confusion, overall_acc=float(overall),
                      per_class_acc=per_class, shr_bins=shr_bins,
                      fo_points=fo_points, fo_slope=float(slope),
                      fo_intercept=float(intercept))


def classify_recording(model, wav_path, spec_win_s=0.040, spec_hop_s=0.002):
    """Classify an arbitrary WAV: resample to 8000 S/s, normalize, infer.

    Returns (SnapshotReport, Spectrogram of the normalized input).
    """
    sig = read_wav(wav_path)
    if int(round(sig.rate)) != IN_RATE:
        sig = resample_to(sig, IN_RATE)
    sig = normalize(sig)
    report = infer(model, sig)
    report.source = str(wav_path)
    sg = spectrogram(sig, int(round(spec_win_s * IN_RATE)),
                     int(round(spec_hop_s * IN_RATE)))
    return report, sg


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian tensor data

_CKPT_FORMAT = "subvox-fcn-1"


def save_checkpoint(path, model, meta=None):
    tensors = model.state_tensors()
    dtype = np.dtype(model.dtype)
    header = {
        "format": _CKPT_FORMAT,
        "variant": asdict(model.variant),
        "dtype": dtype.name,
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<"))
                    .tobytes())


def load_checkpoint(path):
    """Rebuild the model; returns (model, meta)."""
    with open(path, "rb") as f:
        head = f.readline()
        blob = f.read()
    header = json.loads(head.decode("utf-8"))
    if header.get("format") != _CKPT_FORMAT:
        raise ValueError("not a recognized checkpoint: %r"
                         % header.get("format"))
    v = header["variant"]
    variant = FcnVariant(name=v["name"], kernels=tuple(v["kernels"]),
                         channels=tuple(v["channels"]), window=v["window"],
                         hop=v["hop"])
    dtype = np.dtype(header["dtype"])
    model = FcnModel(variant, rng=np.random.default_rng(0), dtype=dtype)
    offset = 0
    state = []
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(blob[offset:offset + size],
                            dtype=dtype.newbyteorder("<")).reshape(shape)
        state.append((name, arr.astype(dtype)))
        offset += size
    if offset != len(blob):
        raise ValueError("checkpoint blob length mismatch")
    model.load_state(state)
    return model, header.get("meta", {})


# ---------------------------------------------------------------------------
# optional plots (matplotlib only imported on use)

def classification_png(report, sg, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True,
                             gridspec_kw={"height_ratios": [2, 1, 1]})
    db = 10.0 * np.log10(np.maximum(sg.psd, 1e-300))
    axes[0].pcolormesh(sg.times, sg.freqs, db, shading="auto", cmap="magma",
                       vmin=db.max() - 80, vmax=db.max())
    axes[0].set_ylabel("frequency (Hz)")
    axes[0].set_ylim(0, 2000)
    axes[1].step(report.times, report.m_hat, where="mid")
    axes[1].set_ylabel("$\\hat{M}$")
    axes[1].set_ylim(0.5, 4.5)
    axes[1].set_yticks([1, 2, 3, 4])
    axes[2].plot(report.times, report.p_hat)
    axes[2].set_ylabel("score")
    axes[2].set_ylim(0, 1.05)
    axes[2].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def eval_png(report, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    im = axes[0].imshow(report.confusion, cmap="Blues")
    axes[0].set_xticks(range(4), [str(m) for m in range(1, 5)])
    axes[0].set_yticks(range(4), [str(m) for m in range(1, 5)])
    axes[0].set_xlabel("predicted M")
    axes[0].set_ylabel("true M")
    for i in range(4):
        for j in range(4):
            axes[0].text(j, i, str(report.confusion[i, j]), ha="center",
                         va="center", fontsize=8)
    fig.colorbar(im, ax=axes[0])
    mids = [0.5 * (b["lo"] + b["hi"]) for b in report.shr_bins]
    accs = [b["accuracy"] for b in report.shr_bins]
    axes[1].plot(mids, accs, "o-")
    axes[1].set_xlabel("SHR (dB)")
    axes[1].set_ylabel("snapshot accuracy")
    axes[1].set_ylim(0, 1.05)
    fo = [p["f_o"] for p in report.fo_points]
    ac = [p["accuracy"] for p in report.fo_points]
    axes[2].plot(fo, ac, ".", alpha=0.4)
    xs = np.array([min(fo), max(fo)])
    axes[2].plot(xs, report.fo_slope * xs + report.fo_intercept, "r-")
    axes[2].set_xlabel("$f_o$ (Hz)")
    axes[2].set_ylabel("record accuracy")
    axes[2].set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
