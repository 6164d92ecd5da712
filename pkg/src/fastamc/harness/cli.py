"""Command-line entry point: ``fastamc <command> [options]``.

Every command takes an optional ``--config`` YAML file; flags override its
values and ``--set key=value`` (dotted keys such as ``train.epochs``) reaches
any field.  Errors print one ``error:`` line to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .. import dataset as dsmod
from .. import preprocess as pp
from ..dataset import GenerationConfig, atomic_write_bytes
from .config import ConfigError, ExperimentConfig, PreprocessSpec
from .evaluate import evaluate, read_report, write_csv, write_report
from .pipeline import fit_preprocessor
from .runtime import compute_threads
from .sweep import sweep_reduction, sweep_snr_selection
from .train import TrainedModel, TrainingError, load_splits, train_model

EXIT_ERROR = 2
# every library error class derives from ValueError except these
_EXPECTED = (TrainingError, OSError, ValueError)


class CliError(RuntimeError):
    pass


def _read_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return data


def _apply_sets(raw: dict, sets) -> dict:
    for item in sets or []:
        key, eq, value = item.partition("=")
        if not eq or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not a section")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def experiment_config(args) -> ExperimentConfig:
    raw = _read_yaml(args.config)
    flat = {
        "arch": args.arch, "preprocess": args.preprocess, "snr_policy": args.snr,
        "dataset": args.data, "test_dataset": args.test_data, "output": getattr(args, "out", None),
        "train_fraction": args.train_fraction, "split_seed": args.split_seed,
    }
    raw.update({k: v for k, v in flat.items() if v is not None})
    if args.replay:
        raw["replay"] = True
    train = dict(raw.get("train") or {})
    for key, value in (("epochs", args.epochs), ("batch_size", args.batch_size),
                       ("learning_rate", args.lr), ("patience", args.patience), ("seed", args.seed)):
        if value is not None:
            train[key] = value
    raw["train"] = train
    _apply_sets(raw, args.set)
    return ExperimentConfig.from_dict(raw)


def _log(quiet):
    return None if quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    raw = _read_yaml(args.config)
    raw = raw.get("generate", raw)
    for key, value in (("total_examples", args.examples), ("seed", args.seed), ("mode", args.mode),
                       ("frame_len", args.frame_len)):
        if value is not None:
            raw[key] = value
    _apply_sets(raw, args.set)
    try:
        cfg = GenerationConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"bad generation config: {exc}") from exc
    ds = dsmod.generate_dataset(cfg)
    dsmod.save(ds, args.out)
    print(f"wrote {len(ds)} examples to {args.out}")
    return 0


def cmd_split(args) -> int:
    ds = dsmod.load(args.input)
    train, test = dsmod.split(ds, args.train_fraction, args.seed)
    dsmod.save(train, args.train_out)
    dsmod.save(test, args.test_out)
    print(f"train {len(train)} -> {args.train_out}; test {len(test)} -> {args.test_out}")
    return 0


def cmd_preprocess(args) -> int:
    spec = PreprocessSpec.parse(args.method)
    ds = dsmod.load(args.data)
    pre = fit_preprocessor(spec, ds.frames, args.arch, normalize=not args.raw)
    if pre.pca is not None:
        pp.save_pca(pre.pca, args.out)
    elif pre.plan is not None:
        pp.save_plan(pre.plan, args.out)
    else:
        raise CliError(f"preprocessing {spec} has no fitted artifact to save")
    print(f"fitted {spec} on {len(ds)} frames -> {args.out}")
    return 0


def _checkpoint_path(args, cfg: ExperimentConfig) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if cfg.output:
        return Path(cfg.output) / "model.ckpt"
    raise ConfigError("no checkpoint path: pass --checkpoint or set output")


def cmd_train(args) -> int:
    cfg = experiment_config(args)
    path = _checkpoint_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with compute_threads(cfg.replay):
        train, _ = load_splits(cfg)
        model = train_model(cfg, train, log=_log(args.quiet))
    model.save(path)
    print(f"trained {cfg.arch.value} ({len(model.epoch_times)} epochs, best {model.fit.best_epoch + 1}) -> {path}")
    return 0


def cmd_eval(args) -> int:
    model = TrainedModel.load(args.checkpoint)
    raw = model.config.to_dict()
    for key, value in (("dataset", args.data), ("test_dataset", args.test_data)):
        if value is not None:
            raw[key] = value
    cfg = ExperimentConfig.from_dict(raw)
    replay = args.replay or cfg.replay
    with compute_threads(replay):
        _, test = load_splits(cfg)
        report = evaluate(model, test)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out, include_timing=not replay)
    if args.csv:
        write_csv(report, args.csv)
    print(f"overall accuracy {report.overall_accuracy:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = experiment_config(args)
    out = Path(args.out_dir or cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    log = _log(args.quiet)
    with compute_threads(cfg.replay):
        train, test = load_splits(cfg)
        if args.kind == "reduction":
            factors = [int(f) for f in args.factors.split(",")]
            sweep = sweep_reduction(cfg, args.methods.split(","), factors, train, test, log)
            cells = [sweep.baseline] + sweep.cells
            for c in cells:
                write_report(c.report, out / f"{c.method}_{c.factor}.json", not cfg.replay)
            summary = sweep.table()
        else:
            policies = [p for p in args.policies.split(";") if p.strip()]
            sweep = sweep_snr_selection(cfg, policies, train, test, log)
            for name, rep in sweep.reports.items():
                write_report(rep, out / f"{name.replace(':', '_').replace(',', '_')}.json", not cfg.replay)
            summary = sweep.table()
    atomic_write_bytes(out / "summary.csv", sweep.to_csv().encode())
    atomic_write_bytes(out / "summary.json", (json.dumps(summary, indent=2) + "\n").encode())
    print(f"{len(summary)} cells -> {out}")
    return 0


def cmd_report(args) -> int:
    report = read_report(args.input)
    if args.csv:
        write_csv(report, args.csv)
    print(f"overall accuracy {report.overall_accuracy:.4f}")
    for snr, acc in report.curve():
        print(f"{snr:>4d} dB  {acc:.4f}")
    return 0


# ------------------------------------------------------------------- parser


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--arch", help="cnn4 | densenet | cldnn | lstm2 | resnet3")
    p.add_argument("--preprocess", help="none | pca:F | uniform:F | random:F[:SEED] | magrank:F | polar")
    p.add_argument("--snr", help="all | single:S | pair:S1,S2 | fraction:P[:SEED]")
    p.add_argument("--data", help="dataset file (split at --train-fraction unless --test-data is given)")
    p.add_argument("--test-data", help="separate test dataset file")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--replay", action="store_true", help="single-threaded deterministic mode")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastamc", description="Modulation classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a balanced dataset")
    p.add_argument("--config")
    p.add_argument("--examples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("single", "stream"))
    p.add_argument("--frame-len", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("preprocess", help="fit a PCA basis or subsampling plan and save it")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--arch")
    p.add_argument("--raw", action="store_true", help="fit on frames as stored, without per-frame power scaling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model")
    _experiment_flags(p)
    p.add_argument("--checkpoint", help="output checkpoint (default <output>/model.ckpt)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on every test SNR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--csv", help="also write the accuracy curve as CSV")
    p.add_argument("--replay", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a reduction or SNR-selection grid")
    _experiment_flags(p)
    p.add_argument("--kind", choices=("reduction", "snr"), default="reduction")
    p.add_argument("--methods", default="uniform")
    p.add_argument("--factors", default="1,2,4,8")
    p.add_argument("--policies", default="all", help="';'-separated policies, e.g. 'single:18;pair:18,0'")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarise a report JSON, optionally as CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, *_EXPECTED) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
