"""Command line interface.

Subcommands: synth, dataset, train, eval, classify.  Exit codes: 2 for
usage problems, 3 for I/O problems, 4 for numeric faults.  A JSON
config file passed with --config supplies per-subcommand flag defaults,
e.g. {"train": {"epochs": 20}, "dataset": {"workers": 2}}.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataset as dataset_mod
from . import fcn, waveguide
from .dsp import write_wav
from .errors import AnalysisError, SimulationFault

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(ValueError):
    pass


def _check_out(path, force):
    if os.path.exists(path) and not force:
        raise FileExistsError(
            "%s exists; pass --force to overwrite" % path)


def _params_from_args(args):
    if args.params:
        with open(args.params) as f:
            try:
                params = dataset_mod.SynthParams.from_dict(json.load(f))
            except TypeError as exc:
                raise UsageError("bad parameter record: %s" % exc)
        if args.M is not None or args.fo is not None:
            raise UsageError("--params cannot be combined with --M/--fo")
        params.validate()
        return params
    if args.M is None:
        raise UsageError("need --M (or a full record via --params)")
    rng = np.random.default_rng(args.seed)
    params = dataset_mod.sample_params(rng, args.M)
    if args.fo is not None:
        lo, hi, _ = dataset_mod.PARAM_RANGES["f_o"]
        if not lo <= args.fo < hi:
            raise UsageError("--fo must lie in [%g, %g)" % (lo, hi))
        params.f_o = args.fo
    return params


def cmd_synth(args):
    if args.duration < 1.1 and not args.raw_out:
        raise UsageError("--duration must be >= 1.1 s for processed output")
    params = _params_from_args(args)
    sig = waveguide.simulate(params, duration=args.duration, f_c=args.noise_fc,
                             backend=args.backend)
    if args.raw_out:
        _check_out(args.raw_out, args.force)
        write_wav(args.raw_out, sig)
        print("wrote %s (%d samples at %d S/s)"
              % (args.raw_out, len(sig), int(sig.rate)))
    if args.out:
        _check_out(args.out, args.force)
        processed = dataset_mod.postprocess(sig)
        write_wav(args.out, processed)
        print("wrote %s (%d samples at %d S/s)"
              % (args.out, len(processed), int(processed.rate)))
        sidecar = args.out + ".params.json"
    elif args.raw_out:
        sidecar = args.raw_out + ".params.json"
    else:
        raise UsageError("need --out and/or --raw-out")
    with open(sidecar, "w") as f:
        json.dump(params.to_dict(), f, indent=2)
        f.write("\n")
    print("wrote %s" % sidecar)


def cmd_dataset(args):
    counts = {"train": args.train, "val": args.val, "test": args.test}
    if all(v == 0 for v in counts.values()):
        raise UsageError("nothing to generate; set --train/--val/--test")
    manifest = dataset_mod.generate_dataset(
        args.out, counts, seed=args.seed, workers=args.workers,
        f_c=args.noise_fc, backend=args.backend, force=args.force)
    print("manifest: %s (%d records, %d replaced draws)"
          % (os.path.join(args.out, "manifest.jsonl"),
             len(manifest.records), manifest.meta["replaced"]))


def cmd_train(args):
    if args.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    _check_out(args.out, args.force)
    manifest = dataset_mod.DatasetManifest.load(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    variant = fcn.get_variant(args.variant)
    model = fcn.FcnModel(variant, rng=np.random.default_rng(args.seed))
    cfg = fcn.TrainConfig(epochs=args.epochs, lr=args.lr,
                          batch_size=args.batch, dropout=args.dropout,
                          seed=args.seed)
    result = fcn.train(model, manifest, manifest_dir, cfg,
                       log_fn=lambda s: print(s, flush=True))
    meta = {
        "variant": variant.name,
        "train_seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch,
        "dropout": args.dropout,
        "best_epoch": result.best_epoch,
        "best_val_acc": result.best_val_acc,
        "manifest_seed": manifest.meta.get("seed"),
    }
    fcn.save_checkpoint(args.out, model, meta)
    metrics_path = args.metrics_csv or (args.out + ".metrics.csv")
    fcn.save_metrics_csv(result.history, metrics_path)
    print("best epoch %d, val snapshot accuracy %.4f"
          % (result.best_epoch, result.best_val_acc))
    print("wrote %s and %s" % (args.out, metrics_path))


def cmd_eval(args):
    model, meta = fcn.load_checkpoint(args.ckpt)
    manifest = dataset_mod.DatasetManifest.load(args.manifest)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    report = fcn.evaluate(model, manifest, manifest_dir, split=args.split,
                          shr_bin_width=args.shr_bin_width)
    report.save_csvs(args.out_prefix)
    if args.png:
        fcn.eval_png(report, args.out_prefix + "_eval.png")
    print("overall accuracy: %.4f" % report.overall_acc)


def cmd_classify(args):
    model, meta = fcn.load_checkpoint(args.ckpt)
    report, sg = fcn.classify_recording(model, args.wav)
    report.save_csv(args.out_prefix + "_snapshots.csv")
    from .dsp import spectrogram_to_csv
    spectrogram_to_csv(sg, args.out_prefix + "_spectrogram.csv")
    if args.png:
        fcn.classification_png(report, sg, args.out_prefix + ".png")
    vals, counts = np.unique(report.m_hat, return_counts=True)
    modal = int(vals[counts.argmax()])
    print("snapshots: %d, modal M: %d (%.1f%%)"
          % (report.m_hat.size, modal,
             100.0 * counts.max() / report.m_hat.size))


def build_parser():
    p = argparse.ArgumentParser(
        prog="subvox",
        description="Subharmonic voice synthesis and per-snapshot "
                    "subharmonic-period classification.")
    p.add_argument("--config", help="JSON file with per-subcommand defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="synthesize one voice signal")
    ps.add_argument("--M", type=int, choices=(1, 2, 3, 4),
                    help="subharmonic period (random draw for the rest)")
    ps.add_argument("--fo", type=float, help="fundamental frequency override")
    ps.add_argument("--params", help="JSON file with a full parameter record")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--duration", type=float, default=1.1,
                    help="raw duration in seconds (default 1.1)")
    ps.add_argument("--noise-fc", type=float, default=1000.0)
    ps.add_argument("--backend", default="auto",
                    choices=("auto", "ext", "python"))
    ps.add_argument("--out", help="post-processed 8000 S/s WAV path")
    ps.add_argument("--raw-out", help="raw 44100 S/s WAV path")
    ps.add_argument("--force", action="store_true")
    ps.set_defaults(func=cmd_synth)

    pd = sub.add_parser("dataset", help="generate a labeled dataset")
    pd.add_argument("--train", type=int, default=0, metavar="N",
                    help="training records per class")
    pd.add_argument("--val", type=int, default=0, metavar="N")
    pd.add_argument("--test", type=int, default=0, metavar="N")
    pd.add_argument("--out", required=True)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--workers", type=int,
                    default=int(os.environ.get("SUBVOX_WORKERS", "1")))
    pd.add_argument("--noise-fc", type=float, default=1000.0)
    pd.add_argument("--backend", default="auto",
                    choices=("auto", "ext", "python"))
    pd.add_argument("--force", action="store_true")
    pd.set_defaults(func=cmd_dataset)

    pt = sub.add_parser("train", help="train a classifier")
    pt.add_argument("--manifest", required=True)
    pt.add_argument("--variant", default="fcn401")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--epochs", type=int, default=20)
    pt.add_argument("--lr", type=float, default=2e-4)
    pt.add_argument("--batch", type=int, default=32)
    pt.add_argument("--dropout", type=float, default=0.2)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--metrics-csv")
    pt.add_argument("--force", action="store_true")
    pt.set_defaults(func=cmd_train)

    pe = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--split", default="test",
                    choices=("train", "val", "test"))
    pe.add_argument("--out-prefix", required=True)
    pe.add_argument("--shr-bin-width", type=float, default=2.0)
    pe.add_argument("--png", action="store_true")
    pe.set_defaults(func=cmd_eval)

    pc = sub.add_parser("classify", help="classify a WAV recording")
    pc.add_argument("--ckpt", required=True)
    pc.add_argument("--wav", required=True)
    pc.add_argument("--out-prefix", required=True)
    pc.add_argument("--png", action="store_true")
    pc.set_defaults(func=cmd_classify)
    return p


def _apply_config(parser, argv):
    """Pre-scan for --config and install its values as subparser defaults."""
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if not cfg_path:
        return
    with open(cfg_path) as f:
        cfg = json.load(f)
    for action in parser._subparsers._group_actions:
        for name, sp in action.choices.items():
            if name in cfg:
                sp.set_defaults(**{k.replace("-", "_"): v
                                   for k, v in cfg[name].items()})


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (SimulationFault, AnalysisError, ArithmeticError) as exc:
        print("numeric fault: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, json.JSONDecodeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
