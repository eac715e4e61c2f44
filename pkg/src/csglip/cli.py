"""``csglip`` command line.

Subcommands::

    features   audio -> feature CSVs
    corpus     synth | split | build   (manifests and splits)
    train      train a baseline or CSG model
    adapt      per-emotion adaptation of a trained CSG
    synth      generate trajectories from a checkpoint
    eval       parzen | emotion
    stats      preference | alpha
    plot       trajectory figure (SVG)

Settings come from built-in defaults, then ``--config`` (JSON), then
``--set key=value`` and explicit flags. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config

def _schedule_keys():
    from .train.schedules import ScheduleSpec

    return {f.name for f in fields(ScheduleSpec)}


RUN_KEYS = {"seed", "bandwidth_grid", "parzen_folds", "parzen_max_support", "pca_dims",
            "C_grid", "classifier_epochs", "split", "synth_mode", "noise_seed", "emotions"}

RUN_DEFAULTS = {"seed": 0, "bandwidth_grid": None, "parzen_folds": 5, "parzen_max_support": 5000,
                "pca_dims": 15, "C_grid": [0.01, 0.1, 0.8, 10.0], "classifier_epochs": 60,
                "split": [0.6, 0.2, 0.2], "synth_mode": "full", "noise_seed": 0,
                "emotions": ["anger", "happiness", "sadness", "frustration"]}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path=None, overrides=()) -> dict:
    """Defaults < config file < ``key=value`` overrides; unknown keys are rejected."""
    from .train.schedules import ScheduleSpec

    allowed = RUN_KEYS | _schedule_keys()
    cfg = dict(RUN_DEFAULTS)
    cfg.update(ScheduleSpec().to_dict())
    layers = []
    if path is not None:
        try:
            layers.append(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path}: {exc}") from None
        if not isinstance(layers[-1], dict):
            raise ValueError(f"config {path}: expected a JSON object")
    extra = {}
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        extra[k.strip()] = _parse_value(v)
    layers.append(extra)
    for layer in layers:
        unknown = set(layer) - allowed
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(layer)
    ScheduleSpec.from_dict({k: cfg[k] for k in _schedule_keys()})  # validates
    return cfg


def schedule_from(cfg):
    from .train.schedules import ScheduleSpec

    return ScheduleSpec.from_dict({k: cfg[k] for k in _schedule_keys()})


def _echo_config(cfg: dict, out: Path, name="config.resolved.json"):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _config_from_args(args) -> dict:
    cfg = resolve_config(getattr(args, "config", None), getattr(args, "set", None) or ())
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


# ---------------------------------------------------------------- commands

def cmd_features(args):
    from .sequences import write_sequence_csv
    from .speechfeat import (FeatureConfig, concat_align, extract_f0_intensity, extract_mfcc,
                             load_external_lld, read_wav)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg = FeatureConfig()
    failures = 0
    for a in args.audio:
        path = Path(a)
        try:
            w = read_wav(path)
            streams = [extract_mfcc(w, cfg)]
            if not args.mfcc_only:
                streams.append(extract_f0_intensity(w, cfg))
            if args.lld:
                lld = Path(args.lld)
                lld_file = lld / f"{path.stem}.lld.csv" if lld.is_dir() else lld
                streams.append(load_external_lld(lld_file))
            feats, _ = concat_align(streams)
            dest = write_sequence_csv(feats, out / f"{path.stem}.feat.csv")
            print(f"{dest}: {feats.T} frames x {feats.F} channels")
        except (OSError, ValueError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
    return EXIT_DATA if failures else EXIT_OK


def cmd_corpus(args):
    from .dataset import SynthSpec, generate_synthetic, read_manifest, split_corpus, write_corpus

    out = Path(args.output)
    if args.action == "synth":
        d = json.loads(Path(args.spec).read_text()) if args.spec else {}
        if args.seed is not None:
            d["seed"] = args.seed
        spec = SynthSpec.from_dict(d)
        corpus = generate_synthetic(spec)
        manifest = write_corpus(corpus, out)
        _echo_config(spec.to_dict(), out, "spec.resolved.json")
        np.savetxt(out / "emotion_gains.csv", corpus.oracle.gains, delimiter=",", fmt="%.17g")
        print(f"{manifest}: {len(corpus)} utterances")
        return EXIT_OK
    if args.action == "split":
        if not args.manifest:
            raise UsageError("corpus split needs --manifest")
        corpus = read_manifest(args.manifest)
        src = Path(args.manifest)
        fractions = [float(v) for v in args.fractions.split(",")] if args.fractions else [0.6, 0.2, 0.2]
        parts = split_corpus(corpus, fractions, seed=args.seed or 0)
        by_id = {}
        for line in src.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                by_id[rec["id"]] = rec
        out.mkdir(parents=True, exist_ok=True)
        for name, part in zip(("train", "val", "test"), parts):
            with open(out / f"{name}.jsonl", "w") as fh:
                for u in part:
                    rec = dict(by_id[u.id])
                    for key in ("features", "motion"):
                        p = Path(rec[key])
                        if not p.is_absolute():
                            rec[key] = os.path.relpath(src.parent.resolve() / p, out.resolve())
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            print(f"{name}: {len(part)} utterances")
        return EXIT_OK
    if args.action == "build":
        return _corpus_build(args, out)
    raise UsageError(f"unknown corpus action {args.action}")


def _corpus_build(args, out: Path):
    from .dataset import MANIFEST_VERSION
    from .sequences import MOTION_CHANNELS, MotionSequence, read_sequence_csv

    if not (args.features and args.motion and args.labels):
        raise UsageError("corpus build needs --features DIR, --motion DIR and --labels CSV")
    fdir, mdir = Path(args.features), Path(args.motion)
    rows = []
    with open(args.labels, newline="") as fh:
        for row in csv.DictReader(fh):
            if not {"id", "speaker", "annotations"} <= set(row):
                raise ValueError("labels CSV needs columns id, speaker, annotations")
            rows.append(row)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for row in rows:
            uid = row["id"]
            fpath, mpath = fdir / f"{uid}.feat.csv", mdir / f"{uid}.motion.csv"
            feats = read_sequence_csv(fpath)
            motion = read_sequence_csv(mpath, expected_channels=len(MOTION_CHANNELS), cls=MotionSequence)
            rec = {"version": MANIFEST_VERSION, "id": uid, "speaker": row["speaker"],
                   "features": os.path.relpath(fpath.resolve(), out.resolve()),
                   "motion": os.path.relpath(mpath.resolve(), out.resolve()),
                   "annotations": [a for a in row["annotations"].replace(";", " ").split() if a]}
            if feats.T != motion.T:
                T = min(feats.T, motion.T)
                warnings.warn(f"{uid}: features have {feats.T} frames, motion {motion.T}; "
                              f"truncating to {T}", RuntimeWarning, stacklevel=1)
                rec["truncated_to"] = T
                rec["note"] = f"features {feats.T} frames, motion {motion.T} frames"
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"{manifest}: {len(rows)} utterances")
    return EXIT_OK


MODEL_KINDS = ("swdnn", "blstm-mse", "blstm-ccc", "csg", "csg-emo-aware")


def cmd_train(args):
    from .dataset import read_manifest
    from .train.schedules import train_baseline, train_csg

    cfg = _config_from_args(args)
    out = Path(args.output)
    _echo_config(dict(cfg, model=args.model), out)
    train = read_manifest(args.manifest)
    val = read_manifest(args.val) if args.val else train
    sched = schedule_from(cfg)
    log = out / "train.log.jsonl"
    if args.model in ("csg", "csg-emo-aware"):
        ck = train_csg(train, val, sched, cfg["seed"], emotion_aware=args.model == "csg-emo-aware",
                       log_path=log)
    else:
        ck = train_baseline(args.model, train, val, sched, cfg["seed"], log_path=log)
    path = ck.save(out / "model.ckpt")
    print(f"{path}: {ck.kind}, {ck.epoch} epochs, sha256 {ck.digest()[:16]}")
    return EXIT_OK


def cmd_adapt(args):
    from .dataset import read_manifest, subset_by_emotion
    from .nets.checkpoint import Checkpoint
    from .train.schedules import adapt_emotion

    cfg = _config_from_args(args)
    out = Path(args.output)
    _echo_config(cfg, out)
    base = Checkpoint.load(args.ckpt)
    train = read_manifest(args.manifest)
    val = read_manifest(args.val) if args.val else None
    sched = schedule_from(cfg)
    emotions = args.emotions.split(",") if args.emotions else cfg["emotions"]
    for e in emotions:
        subset = subset_by_emotion(train, e)
        vs = subset_by_emotion(val, e) if val else None
        ck = adapt_emotion(base, subset, e, sched, cfg["seed"], val_subset=vs or None,
                           log_path=out / f"{e}.log.jsonl")
        ck.save(out / f"{e}.ckpt")
        print(f"{out / (e + '.ckpt')}: {len(subset)} utterances")
    return EXIT_OK


def _parse_emotion(text):
    if text is None:
        return None
    if "," in text:
        return [float(v) for v in text.split(",")]
    return text


def cmd_synth(args):
    from .nets.checkpoint import Checkpoint
    from .sequences import read_sequence_csv
    from .synth import FapMapping, SynthesisRequest, export_motion, synthesize

    if args.format == "fap" and not args.fap_mapping:
        raise UsageError("--format fap needs --fap-mapping")
    ck = Checkpoint.load(args.ckpt)
    mapping = FapMapping.load(args.fap_mapping) if args.fap_mapping else None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    emotion = _parse_emotion(args.emotion)
    for f in args.features:
        feats = read_sequence_csv(f)
        seq = synthesize(SynthesisRequest(ck, feats, args.noise_seed, emotion, args.mode))
        stem = Path(f).name.split(".")[0]
        ext = "motion.csv" if args.format == "csv" else "fap.txt"
        dest = export_motion(seq, out / f"{stem}.{ext}", args.format, mapping)
        print(f"{dest}: {seq.T} frames")
    return EXIT_OK


def _read_motion_dir(path):
    from .sequences import MOTION_CHANNELS, MotionSequence, read_sequence_csv

    p = Path(path)
    files = sorted(p.glob("*.motion.csv")) if p.is_dir() else [p]
    if not files:
        raise ValueError(f"no motion CSVs in {path}")
    return {f.name.split(".")[0]: read_sequence_csv(f, expected_channels=len(MOTION_CHANNELS),
                                                     cls=MotionSequence) for f in files}


def cmd_eval(args):
    from .evalstat import (classification_metrics, fit_pca, fit_parzen, functionals, loglik,
                           train_classifier, write_report)

    cfg = _config_from_args(args)
    out = Path(args.output)
    report = {"kind": args.kind}
    if args.kind == "parzen":
        if not (args.generated and args.test):
            raise UsageError("eval parzen needs --generated and --test")
        gen = _read_motion_dir(args.generated)
        test = _read_motion_dir(args.test)
        ref = _read_motion_dir(args.train) if args.train else test
        pca = fit_pca(np.concatenate([s.frames for s in ref.values()]), cfg["pca_dims"])
        G = pca.project(np.concatenate([s.frames for s in gen.values()]))
        model = fit_parzen(G, cfg["bandwidth_grid"], cfg["parzen_folds"], cfg["seed"],
                           cfg["parzen_max_support"])
        mean, std = loglik(model, pca.project(np.concatenate([s.frames for s in test.values()])))
        report.update(model=args.model_id or str(args.generated), n_generated_frames=int(len(G)),
                      n_support=int(len(model.support)), n_test_frames=int(sum(s.T for s in test.values())),
                      loglik_mean=mean, loglik_std=std, bandwidth=model.bandwidth,
                      pca_fit=("train" if args.train else "test"),
                      pca_explained_variance=float(pca.explained_variance_ratio.sum()))
    elif args.kind == "emotion":
        from .dataset import read_manifest

        if not (args.train and args.generated and args.labels):
            raise UsageError("eval emotion needs --train MANIFEST, --generated DIR and --labels MANIFEST")
        classes = tuple(cfg["emotions"])
        tr = [u for u in read_manifest(args.train) if u.emotion.hard in classes]
        va = [u for u in read_manifest(args.val) if u.emotion.hard in classes] if args.val else tr
        clf = train_classifier(np.stack([functionals(u.motion) for u in tr]), [u.emotion.hard for u in tr],
                               np.stack([functionals(u.motion) for u in va]), [u.emotion.hard for u in va],
                               cfg["C_grid"], classes, cfg["classifier_epochs"], cfg["seed"])
        labels = {u.id: u.emotion.hard for u in read_manifest(args.labels)}
        gen = {k: v for k, v in _read_motion_dir(args.generated).items() if labels.get(k) in classes}
        if not gen:
            raise ValueError("no generated sequences match labelled utterances")
        ids = sorted(gen)
        pred = clf.predict(np.stack([functionals(gen[i]) for i in ids]))
        report.update(model=args.model_id or str(args.generated), C=clf.C, n=len(ids),
                      validation=clf.val_metrics,
                      metrics=classification_metrics([labels[i] for i in ids], pred, classes))
    else:
        raise UsageError(f"unknown eval kind {args.kind}")
    write_report(report, out)
    print(json.dumps({k: v for k, v in report.items() if not isinstance(v, dict)}, sort_keys=True))
    return EXIT_OK


def _read_preferences(path):
    from .evalstat import preference_soft

    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip().lower() in ("pair", "pair_id"):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: expected pair_id,evaluator_id,option rows, got {row}")
            opt = row[2].strip()
            try:
                score = float(opt)
            except ValueError:
                score = float(preference_soft(opt)[0])
            rows.append((row[0].strip(), row[1].strip(), score))
    if not rows:
        raise ValueError(f"{path}: no evaluations")
    return rows


def cmd_stats(args):
    from .evalstat import cronbach_alpha, preference_report, write_report

    if args.kind == "preference":
        rows = _read_preferences(args.input)
        report = {"kind": "preference", "overall": preference_report([r[2] for r in rows])}
        pairs = sorted({r[0] for r in rows})
        if len(pairs) > 1:
            report["per_pair"] = {p: preference_report([r[2] for r in rows if r[0] == p]) for p in pairs}
    elif args.kind == "alpha":
        R = np.loadtxt(args.input, delimiter=",", ndmin=2)
        report = {"kind": "alpha", "cronbach_alpha": cronbach_alpha(R), "shape": list(R.shape)}
    else:
        raise UsageError(f"unknown stats kind {args.kind}")
    if args.output:
        write_report(report, args.output)
    print(json.dumps(report.get("overall", report), sort_keys=True))
    return EXIT_OK


def cmd_plot(args):
    from .synth import plot_trajectories

    seqs = []
    for m in args.motion:
        seqs.extend(_read_motion_dir(m).items())
    if not seqs:
        raise ValueError("nothing to plot")
    channels = [c.strip() for c in args.channels.split(",") if c.strip()] if args.channels else []
    channels = [int(c) if c.isdigit() else c for c in channels]
    path = plot_trajectories([s for _, s in seqs], channels, args.output, labels=[k for k, _ in seqs])
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="csglip", description="speech-driven lip motion with conditional sequential GANs")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def run_opts(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("features", help="extract MFCC, F0 and intensity at 120 fps")
    sp.add_argument("audio", nargs="+")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--mfcc-only", action="store_true")
    sp.add_argument("--lld", help="external LLD CSV, or a directory of <stem>.lld.csv files")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("corpus", help="synthesize, split or build a corpus manifest")
    sp.add_argument("action", choices=("synth", "split", "build"))
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--spec", help="JSON synthetic spec")
    sp.add_argument("--manifest")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--fractions", help="train,val,test fractions (default 0.6,0.2,0.2)")
    sp.add_argument("--features", help="directory of <id>.feat.csv")
    sp.add_argument("--motion", help="directory of <id>.motion.csv")
    sp.add_argument("--labels", help="CSV with id,speaker,annotations")
    sp.set_defaults(func=cmd_corpus)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("--model", required=True, choices=MODEL_KINDS)
    sp.add_argument("--manifest", required=True, help="training manifest")
    sp.add_argument("--val", help="validation manifest")
    sp.add_argument("-o", "--output", required=True)
    run_opts(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("adapt", help="adapt a CSG checkpoint to each emotion")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val")
    sp.add_argument("--emotions", help="comma-separated (default: the four target emotions)")
    sp.add_argument("-o", "--output", required=True)
    run_opts(sp)
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("synth", help="generate motion for feature files")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("features", nargs="+")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--noise-seed", type=int, default=0)
    sp.add_argument("--emotion", help="emotion name or six comma-separated probabilities")
    sp.add_argument("--mode", choices=("full", "windowed"), default="full")
    sp.add_argument("--format", choices=("csv", "fap"), default="csv")
    sp.add_argument("--fap-mapping")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="objective evaluation")
    sp.add_argument("kind", choices=("parzen", "emotion"))
    sp.add_argument("--generated")
    sp.add_argument("--test")
    sp.add_argument("--train", help="PCA reference frames (parzen) or training manifest (emotion)")
    sp.add_argument("--val")
    sp.add_argument("--labels", help="manifest giving the emotion of each generated utterance")
    sp.add_argument("--model-id")
    sp.add_argument("-o", "--output", required=True)
    run_opts(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stats", help="preference statistics")
    sp.add_argument("kind", choices=("preference", "alpha"))
    sp.add_argument("input")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("plot", help="plot trajectories to SVG")
    sp.add_argument("motion", nargs="+", help="motion CSVs or directories")
    sp.add_argument("--channels", required=True, help="comma-separated channel names or indices")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    from .train.adam import NonFiniteGradient
    from .train.schedules import TrainingDiverged

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("csglip: a command is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
