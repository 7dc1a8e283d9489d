"""Command-line entry points for the full pipeline.

Exit codes: 0 on success, 1 on usage errors, 2 on data/config errors
(with a one-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import annotations as ann
from . import audio as af
from . import evaluation as ev
from . import formats
from .errors import ConfigError, DataError, GestureKitError
from .models import (DiscriminatorConfig, GeneratorConfig, load_checkpoint,
                     save_checkpoint, synthesize)
from .training import (LossWeights, SyncPair, TrainConfig, train,
                       train_sync_classifier, write_metrics_csv)

DEFAULT_CONFIG = {
    "seed": 0,
    "subject": "synthetic",
    "audio": {
        "sample_rate": 16000,
        "window_seconds": 0.025,
        "n_mels": 40,
        "n_mfcc": 13,
        "pre_emphasis": 0.97,
        "energy_floor": 1e-10,
        "target_rms": 0.1,
    },
    "model": {"base_channels": 64},
    "weights": {"face": 0.37, "body": 600.0, "hand": 840.0, "adversarial": 5.0},
    "training": {
        "learning_rate": 5e-4,
        "batch_size": 25,
        "max_iterations": 2000,
        "g_steps_per_d_step": 1,
        "adversarial": True,
        "saturating_adversarial": False,
        "overlap": 4,
        "checkpoint_every": 0,
    },
    "preprocess": {
        "confidence_threshold": 0.6,
        "confidence_window": 15,
        "max_gap": 8,
        "smoothing_sigma": 1.5,
        "smooth_ground_truth": False,
    },
    "corpus": {"type": "synthetic", "n_sequences": 6, "length": 600, "path": None},
    "sync": {"window_length": 64, "max_iterations": 600, "base_channels": 16},
}


def _merge_strict(defaults: dict, overrides: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key '{path}{key}'")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = _merge_strict(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def load_run_config(args) -> dict:
    """Defaults, overlaid with the --config file, overlaid with flags."""
    overrides = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            overrides = json.loads(path.read_text())
        except FileNotFoundError:
            raise
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    cfg = _merge_strict(DEFAULT_CONFIG, overrides)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "subject", None) is not None:
        cfg["subject"] = args.subject
    if getattr(args, "base_channels", None) is not None:
        cfg["model"]["base_channels"] = args.base_channels
    if getattr(args, "no_adversarial", False):
        cfg["training"]["adversarial"] = False
    if getattr(args, "window_length", None) is not None:
        cfg["sync"]["window_length"] = args.window_length
    return cfg


def _audio_config(cfg: dict) -> af.AudioConfig:
    a = cfg["audio"]
    return af.AudioConfig(sample_rate=a["sample_rate"],
                          window_seconds=a["window_seconds"], n_mels=a["n_mels"],
                          n_mfcc=a["n_mfcc"], pre_emphasis=a["pre_emphasis"],
                          energy_floor=a["energy_floor"])


def _train_config(cfg: dict, **replacements) -> TrainConfig:
    t = dict(cfg["training"])
    t.update(replacements)
    return TrainConfig(learning_rate=t["learning_rate"], batch_size=t["batch_size"],
                       max_iterations=t["max_iterations"],
                       g_steps_per_d_step=t["g_steps_per_d_step"],
                       adversarial=t["adversarial"],
                       saturating_adversarial=t["saturating_adversarial"],
                       overlap=t["overlap"], seed=cfg["seed"],
                       checkpoint_every=t["checkpoint_every"])


def _weights(cfg: dict) -> LossWeights:
    w = cfg["weights"]
    return LossWeights(face=w["face"], body=w["body"], hand=w["hand"],
                       adversarial=w["adversarial"])


def _load_corpus(cfg: dict):
    """Materialize the configured corpus as (features, gestures) pairs."""
    corpus_cfg = cfg["corpus"]
    if corpus_cfg["type"] == "synthetic":
        return ann.generate_synthetic_corpus(cfg["seed"], corpus_cfg["n_sequences"],
                                             corpus_cfg["length"],
                                             subject_id=cfg["subject"])
    if corpus_cfg["type"] == "manifest":
        if not corpus_cfg.get("path"):
            raise ConfigError("corpus.type 'manifest' requires corpus.path")
        return _load_manifest_corpus(corpus_cfg["path"], require_features=True)
    raise ConfigError(f"unknown corpus.type '{corpus_cfg['type']}'")


def _load_manifest_corpus(manifest_path, require_features: bool):
    manifest_path = Path(manifest_path)
    records = ann.load_manifest(manifest_path)
    corpus = []
    for record in records:
        features, gestures = ann.load_sequence(record, manifest_path.parent)
        if features is None and require_features:
            raise DataError(f"sequence '{record['id']}' has no feature file; "
                            "run extract-features first")
        corpus.append((features, gestures))
    return corpus


# --- commands -----------------------------------------------------------------

def cmd_extract_features(args) -> int:
    cfg = load_run_config(args)
    acfg = _audio_config(cfg)
    signal = af.load_wav(args.wav)
    signal = af.normalize_signal(signal, target_rms=cfg["audio"]["target_rms"])
    features = af.extract_features(signal, acfg)
    formats.write_frames(args.out, features.data)
    print(f"wrote {len(features)} frames x {features.data.shape[1]} dims to {args.out}")
    return 0


def cmd_make_synthetic(args) -> int:
    cfg = load_run_config(args)
    corpus = _load_corpus({**cfg, "corpus": {**cfg["corpus"], "type": "synthetic"}})
    out_dir = Path(args.out_dir)
    records = []
    for i, (features, gestures) in enumerate(corpus):
        records.append(ann.save_sequence(out_dir, f"seq{i:03d}", gestures, features))
    ann.write_manifest(out_dir / "manifest.json", records)
    print(f"wrote {len(records)} synthetic sequences to {out_dir}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_run_config(args)
    pp = cfg["preprocess"]
    records = ann.load_manifest(args.manifest)
    base = Path(args.manifest).parent
    out_dir = Path(args.out_dir)
    out_records = []
    for record in records:
        features, gestures = ann.load_sequence(record, base)
        gestures = ann.fill_gaps_cubic(gestures, max_gap=pp["max_gap"])
        ranges = ann.confidence_segments(gestures.confidence,
                                         pp["confidence_threshold"],
                                         pp["confidence_window"])
        for k, (a, b) in enumerate(ranges):
            segment = gestures.slice(a, b)
            if pp["smooth_ground_truth"]:
                segment.body = ann.gaussian_smooth(segment.body.T,
                                                   pp["smoothing_sigma"]).T
                segment.hand = ann.gaussian_smooth(segment.hand.T,
                                                   pp["smoothing_sigma"]).T
            seg_features = None
            if features is not None:
                seg_features = af.AudioFeatureSequence(features.data[a:b].copy())
            seg_id = f"{record['id']}-s{k}"
            out_records.append(ann.save_sequence(out_dir, seg_id, segment,
                                                 seg_features))
    if not out_records:
        print("warning: no segments survived filtering", file=sys.stderr)
    ann.write_manifest(out_dir / "manifest.json", out_records)
    print(f"wrote {len(out_records)} segments to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    corpus = _load_corpus(cfg)
    gen_config = GeneratorConfig(base_channels=cfg["model"]["base_channels"])
    disc_config = DiscriminatorConfig(base_channels=cfg["model"]["base_channels"])
    bundle, log = train(corpus, _train_config(cfg), weights=_weights(cfg),
                        gen_config=gen_config, disc_config=disc_config,
                        checkpoint_path=args.out)
    save_checkpoint(bundle, args.out)
    metrics_path = args.metrics or str(Path(args.out).with_suffix(".metrics.csv"))
    write_metrics_csv(metrics_path, log)
    print(f"trained {bundle.iteration} iterations; checkpoint at {args.out}")
    return 0


def cmd_train_sync(args) -> int:
    cfg = load_run_config(args)
    corpus = _load_corpus(cfg)
    sync_cfg = cfg["sync"]
    config = _train_config(cfg, max_iterations=sync_cfg["max_iterations"],
                           adversarial=False)
    bundle, report = train_sync_classifier(corpus, sync_cfg["window_length"], config,
                                           base_channels=sync_cfg["base_channels"])
    save_checkpoint(bundle, args.out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_synthesize(args) -> int:
    cfg = load_run_config(args)
    bundle = load_checkpoint(args.checkpoint)
    if bundle.generator is None:
        raise DataError(f"{args.checkpoint}: sync classifier checkpoints "
                        "cannot synthesize")
    acfg = _audio_config(cfg)
    signal = af.normalize_signal(af.load_wav(args.wav),
                                 target_rms=cfg["audio"]["target_rms"])
    features = af.extract_features(signal, acfg)
    streams = synthesize(bundle, features.data)
    sigma = cfg["preprocess"]["smoothing_sigma"]
    # face parameters stay raw; body and hand are smoothed for output
    streams["body"] = ann.gaussian_smooth(streams["body"].T, sigma).T
    streams["hand"] = ann.gaussian_smooth(streams["hand"].T, sigma).T
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("face", "body", "hand"):
        formats.write_frames(out_dir / f"{name}.gft", streams[name])
    print(f"synthesized {len(features)} frames into {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args)
    bundle = load_checkpoint(args.checkpoint)
    if bundle.generator is None:
        raise DataError(f"{args.checkpoint}: need a full model checkpoint")
    corpus = _load_manifest_corpus(args.manifest, require_features=True)
    basis = ev.synthetic_lip_basis(seed=cfg["seed"])

    per_sequence = {}
    records = ann.load_manifest(args.manifest)
    for record, (features, gestures) in zip(records, corpus):
        pred = synthesize(bundle, features.data)
        per_sequence[record["id"]] = ev.lip_error(pred["face"], gestures.face, basis)
    report = {
        "lip_error": {
            "per_sequence_mm": per_sequence,
            "mean_mm": float(np.mean(list(per_sequence.values()))),
            "random_mm": ev.random_baseline([g for _, g in corpus], basis,
                                            seed=cfg["seed"]),
        },
    }

    if len(corpus) >= 2:
        window = bundle.disc_config.window_length
        rng = np.random.default_rng(cfg["seed"])
        in_sync, off_sync = [], []
        all_windows = [ann.make_training_windows(f, g, length=window,
                                                 overlap=cfg["training"]["overlap"])
                       for f, g in corpus]
        for i, wins in enumerate(all_windows):
            donors = [j for j in range(len(all_windows)) if j != i and all_windows[j]]
            if not donors:
                continue
            for win in wins:
                in_sync.append(SyncPair(win.features, win.body, win.hand, True))
                j = donors[rng.integers(0, len(donors))]
                donor = all_windows[j][rng.integers(0, len(all_windows[j]))]
                off_sync.append(SyncPair(win.features, donor.body, donor.hand, False))
        if in_sync and off_sync:
            sync = ev.sync_accuracy_report(bundle, in_sync, off_sync)
            report["sync_classifier"] = sync.to_dict()

    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote evaluation report to {args.report}")
    return 0


def cmd_sync_score(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    feats, _ = formats.read_frames(args.features, expect_dims=af.FEATURE_DIM)
    body, _ = formats.read_frames(args.body, expect_dims=ann.BODY_DIM)
    hand, _ = formats.read_frames(args.hand, expect_dims=ann.HAND_DIM)
    t = feats.shape[0]
    if body.shape[0] != t or hand.shape[0] != t:
        raise DataError("feature and gesture files are not frame-aligned")
    window = bundle.disc_config.window_length
    if args.window_length is not None and args.window_length != window:
        raise ConfigError(f"checkpoint was trained at {window}-frame windows, "
                          f"cannot score at {args.window_length}")
    if t < window:
        raise DataError(f"need at least {window} frames to score, got {t}")
    if np.isnan(feats).any() or np.isnan(body).any() or np.isnan(hand).any():
        raise DataError("cannot score sequences with missing frames")
    pairs = [SyncPair(feats[s:s + window], body[s:s + window], hand[s:s + window], True)
             for s in range(0, t - window + 1, window)]
    probs = ev.classify_pairs(bundle, pairs)
    print(f"{float(np.mean(probs)):.6f}")
    return 0


# --- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 for usage errors; this CLI reserves
    2 for data errors and uses 1 for usage problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--config", help="JSON run config (defaults are built in)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--subject", help="override the subject id")
    parser.add_argument("--base-channels", type=int, dest="base_channels",
                        help="override model.base_channels")
    parser.add_argument("--no-adversarial", action="store_true", dest="no_adversarial",
                        help="train the direct-regression baseline")
    parser.add_argument("--window-length", type=int, choices=(16, 32, 64),
                        dest="window_length", help="sync classifier window length")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gesturekit",
                     description="Speech-driven 3D gesture synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="WAV -> 28-dim feature file")
    p.add_argument("wav")
    p.add_argument("out")
    _add_common(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("make-synthetic", help="write a synthetic corpus to disk")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("preprocess", help="filter, gap-fill, and segment annotations")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a subject-specific model")
    p.add_argument("out", help="output checkpoint (.gck)")
    p.add_argument("--metrics", help="metrics CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-sync", help="train the in/off-sync classifier")
    p.add_argument("out", help="output checkpoint (.gck)")
    _add_common(p)
    p.set_defaults(func=cmd_train_sync)

    p = sub.add_parser("synthesize", help="WAV -> face/body/hand .gft files")
    p.add_argument("checkpoint")
    p.add_argument("wav")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="lip error + sync accuracy report")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("report")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sync-score", help="score an audio-gesture pairing")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.add_argument("body")
    p.add_argument("hand")
    _add_common(p)
    p.set_defaults(func=cmd_sync_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GestureKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
