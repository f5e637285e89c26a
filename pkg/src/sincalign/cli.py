"""Command-line interface.

Subcommands: synth, preprocess, train, eval, sweep, ablate, analyze.
Each prints a human-readable summary to stdout and, when --out is given,
writes machine-readable JSON artifacts next to any checkpoints.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, data, train as trainer
from .tensor import ShapeError

log = logging.getLogger("sincalign")


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return path


def _print_table(rows, columns):
    widths = [max(len(c), *(len(str(r[c])) for r in rows)) for c in columns]
    header = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(str(r[c]).ljust(w) for c, w in zip(columns, widths)))


def _train_config(args):
    """TrainConfig from defaults, overlaid with --config JSON, then flags."""
    d = asdict(trainer.TrainConfig())
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(d)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        d.update(loaded)
    for key in ("epochs", "lr", "batch_size", "window_s", "tau", "seed",
                "precision", "no_edi", "no_eaci", "no_contrastive"):
        val = getattr(args, key, None)
        if val is not None and val is not False:
            d[key] = val
    return trainer.TrainConfig(**d)


def _load_dataset(args):
    trials = data.load_trials(args.manifest)
    folds = data.build_folds(args.protocol, trials)
    return trials, folds


def _model_from_checkpoint(path):
    ckpt = data.load_checkpoint(path)
    model_cfg = ckpt.config.get("model")
    if not model_cfg:
        raise ValueError(f"{path}: checkpoint has no model configuration")
    seed = ckpt.rng_seed if ckpt.rng_seed is not None else 0
    model = trainer.SincAlignNet(model_cfg, seed=seed)
    model.load_state_dict(ckpt.model_state())
    model.eval()
    return model, ckpt


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = data.SynthConfig(n_trials=args.trials, trial_s=args.trial_s,
                           snr_db=args.snr_db,
                           lateralization=args.lateralization,
                           ignored_gain=args.ignored_gain)
    trials = data.synth_dataset(cfg, seed=args.seed or 0)
    manifest = data.write_manifest(args.out, trials)
    _write_json(Path(args.out) / "synth_config.json",
                {"seed": args.seed, **asdict(cfg)})
    print(f"wrote {len(trials)} trials to {manifest}")
    return 0


def _content_hash(manifest_path, params):
    h = hashlib.sha256(json.dumps(params, sort_keys=True).encode())
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    h.update(json.dumps(doc, sort_keys=True).encode())
    for entry in doc.get("trials", []):
        for key in ("eeg_file", "audio_a_file", "audio_b_file"):
            h.update((manifest_path.parent / entry[key]).read_bytes())
    return h.hexdigest()


def cmd_preprocess(args):
    params = {"eeg_hz": args.eeg_hz, "audio_hz": args.audio_hz}
    src_hash = _content_hash(args.manifest, params)
    out = Path(args.out)
    stamp = out / "preprocess_hash.json"
    if stamp.exists():
        prior = json.loads(stamp.read_text())
        if prior.get("source_hash") == src_hash and (out / "manifest.json").exists():
            print(f"up to date: {out / 'manifest.json'} (source unchanged)")
            return 0
    trials = data.load_trials(args.manifest)
    processed = [data.preprocess_trial(t, eeg_hz=args.eeg_hz, audio_hz=args.audio_hz)
                 for t in trials]
    manifest = data.write_manifest(out, processed)
    _write_json(stamp, {"source_hash": src_hash, **params})
    print(f"preprocessed {len(processed)} trials -> {manifest}")
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    trials, folds = _load_dataset(args)
    report, paths = trainer.train(trials, folds, cfg, out_dir=args.out,
                                  log_every=args.log_every)
    rows = [{"fold": name, "accuracy": round(acc, 2)}
            for name, acc in report.per_fold.items()]
    rows.append({"fold": "mean±std",
                 "accuracy": trainer.format_mean_std(report.mean, report.std)})
    _print_table(rows, ["fold", "accuracy"])
    if args.out:
        _write_json(Path(args.out) / "report.json", {
            "config": asdict(cfg), "per_fold": report.per_fold,
            "mean": report.mean, "std": report.std,
            "n_windows": report.n_windows, "confusion": report.confusion,
            "checkpoints": [str(p) for p in paths],
        })
    return 0


def cmd_eval(args):
    model, ckpt = _model_from_checkpoint(args.checkpoint)
    cfg = trainer.TrainConfig(**ckpt.config.get("train",
                                                asdict(trainer.TrainConfig())))
    trials = data.load_trials(args.manifest)
    windows = data.make_windows(trials, cfg.window_s, seed=args.seed or 0)
    report = trainer.evaluate(model, windows, cfg)
    print(f"accuracy {report.accuracy:.2f}% on {report.n_windows} windows")
    print(f"confusion {report.confusion}")
    if args.out:
        _write_json(Path(args.out) / "eval.json", {
            "checkpoint": str(args.checkpoint), "accuracy": report.accuracy,
            "n_windows": report.n_windows, "confusion": report.confusion,
        })
    return 0


def cmd_sweep(args):
    cfg = _train_config(args)
    trials, folds = _load_dataset(args)
    lengths = tuple(float(x) for x in args.lengths.split(","))
    rows = trainer.sweep_windows(trials, folds, cfg, lengths)
    _print_table(rows, ["length_s", "mean_acc", "std_acc", "n_windows"])
    if args.out:
        _write_jsonl(Path(args.out) / "sweep.jsonl", rows)
    return 0


def cmd_ablate(args):
    cfg = _train_config(args)
    trials, folds = _load_dataset(args)
    rows = trainer.ablation_suite(trials, folds, cfg)
    _print_table(rows, ["condition", "accuracy", "delta"])
    if args.out:
        _write_jsonl(Path(args.out) / "ablation.jsonl", rows)
    return 0


def cmd_analyze(args):
    model, _ = _model_from_checkpoint(args.checkpoint)
    total, breakdown = analysis.count_params(model)
    print(f"trainable parameters: {total}")
    for name, n in sorted(breakdown.items()):
        print(f"  {name}: {n}")
    artifacts = {"params_total": total, "params_by_module": breakdown}

    if args.baseline:
        base, _ = _model_from_checkpoint(args.baseline)
        rd = analysis.response_delta(model.eeg_enc.sinc, base.eeg_enc.sinc,
                                     bin_hz=args.bin_hz)
        rows = [{"bin_hz": float(f), "delta": round(float(d), 6)}
                for f, d in zip(rd.bin_centers_hz, rd.delta)]
        print("\nEEG filter response change vs baseline:")
        _print_table(rows, ["bin_hz", "delta"])
        artifacts["response_delta"] = rows

    if args.manifest:
        trials = data.load_trials(args.manifest)
        corr = analysis.channel_envelope_corr(model.eeg_enc.sinc, trials,
                                              band=(args.band_lo, args.band_hi))
        rows = [{"channel": n, "r": round(float(r), 4),
                 "normalized": round(float(s), 4)}
                for n, r, s in zip(corr.channel_names, corr.r_values, corr.normalized)]
        rows.sort(key=lambda r: -r["r"])
        print(f"\ntop channels by envelope correlation ({args.band_lo}-{args.band_hi} Hz):")
        _print_table(rows[:10], ["channel", "r", "normalized"])
        artifacts["channel_corr"] = rows

    if args.out:
        _write_json(Path(args.out) / "analysis.json", artifacts)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p, manifest=True, protocol=False, train_flags=False):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory for artifacts")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    if manifest:
        p.add_argument("--manifest", required=True, help="path to manifest.json")
    if protocol:
        p.add_argument("--protocol", choices=("kul", "dtu"), default="kul")
        p.add_argument("--config", default=None, help="JSON training config overlay")
    if train_flags:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--window-s", dest="window_s", type=float, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--no-edi", dest="no_edi", action="store_true")
        p.add_argument("--no-eaci", dest="no_eaci", action="store_true")
        p.add_argument("--no-contrastive", dest="no_contrastive", action="store_true")
        p.add_argument("--log-every", dest="log_every", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sincalign",
        description="EEG-audio attention decoding: data, training, analysis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cocktail-party dataset")
    _add_common(p, manifest=False)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--trial-s", dest="trial_s", type=float, default=60.0)
    p.add_argument("--snr-db", dest="snr_db", type=float, default=10.0)
    p.add_argument("--lateralization", type=float, default=1.0)
    p.add_argument("--ignored-gain", dest="ignored_gain", type=float, default=0.3)
    p.set_defaults(func=cmd_synth, out_required=True)

    p = sub.add_parser("preprocess", help="run the deterministic DSP chains")
    _add_common(p)
    p.add_argument("--eeg-hz", dest="eeg_hz", type=float, default=128.0)
    p.add_argument("--audio-hz", dest="audio_hz", type=float, default=16000.0)
    p.set_defaults(func=cmd_preprocess, out_required=True)

    p = sub.add_parser("train", help="train and evaluate per fold")
    _add_common(p, protocol=True, train_flags=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="decision-window length sweep")
    _add_common(p, protocol=True, train_flags=True)
    p.add_argument("--lengths", default="0.5,1.0,1.5,2.0,2.5")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="full / no_edi / no_eaci / no_contrastive")
    _add_common(p, protocol=True, train_flags=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="inspect a trained checkpoint")
    _add_common(p, manifest=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", default=None, help="initial-state checkpoint")
    p.add_argument("--manifest", default=None)
    p.add_argument("--bin-hz", dest="bin_hz", type=float, default=4.0)
    p.add_argument("--band-lo", dest="band_lo", type=float, default=12.0)
    p.add_argument("--band-hi", dest="band_hi", type=float, default=16.0)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except (ValueError, ShapeError, FileNotFoundError, OSError,
            FloatingPointError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
