"""Command-line surface: train, eval, predict, gradcheck, and synth.

Run configs are flat key-value text (see ``config``); relative data paths
resolve against the config file's directory. Every training hyperparameter
has a key whose default matches the reference protocol, so a config that
only names the data files reproduces it. Exit codes: 0 success, 1 usage or
config error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, get_bool, get_float, get_int, get_str, parse_kv_file
from .data import (
    DataError,
    DatasetSplit,
    build_samples,
    build_split,
    generate_synthetic_tables,
    load_csv,
    load_schema,
    write_csv,
    write_schema,
)
from .model import Model, ModelSpec, default_block_plan
from .train import Snapshot, TrainConfig, evaluate_repeated, train_model

__all__ = ["main", "entry", "UsageError", "RunConfig", "load_run_config"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    """Bad command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep our codes
        raise UsageError(message)


_KNOWN_KEYS = {
    "task", "model", "seed", "out",
    "data.train", "data.val", "data.schema",
    "train.lr0", "train.epochs", "train.decay_every", "train.decay_factor",
    "train.batch_size", "train.dropout", "train.eval_repeats",
    "model.blocks", "model.s", "model.w", "model.kernel_size",
    "model.channels", "model.gate_channels",
    "model.lstm_hidden", "model.lstm_layers", "model.lstm_bidirectional",
}


@dataclass
class RunConfig:
    task: str
    model_kind: str
    seed: int
    out: Path | None
    train_path: Path
    val_path: Path
    schema_path: Path
    train_cfg: TrainConfig
    num_blocks: int = 2
    s: int = 4
    w: int = 16
    kernel_size: int = 3
    channels: int = 64
    gate_channels: int | None = None
    lstm_hidden: int = 64
    lstm_layers: int = 8
    lstm_bidirectional: bool = True


def load_run_config(path: str | Path, *, seed=None, out=None, model=None,
                    repeats=None) -> RunConfig:
    pairs = parse_kv_file(path)
    unknown = sorted(set(pairs) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    base = Path(path).resolve().parent

    task = get_str(pairs, "task")
    if task not in ("classification", "forecasting"):
        raise ConfigError(f"key 'task': expected classification or forecasting, got {task!r}")
    kind = model if model is not None else get_str(pairs, "model", "gres2net")
    if kind not in ("gres2net", "res2net", "lstm"):
        raise ConfigError(f"key 'model': expected gres2net, res2net, or lstm, got {kind!r}")

    def resolve(key: str) -> Path:
        raw = get_str(pairs, key)
        p = Path(raw)
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"key {key!r}: file not found: {p}")
        return p

    out_value = out if out is not None else get_str(pairs, "out", None)
    default_batch = 32 if task == "classification" else 64
    train_cfg = TrainConfig(
        lr0=get_float(pairs, "train.lr0", 0.001),
        epochs=get_int(pairs, "train.epochs", 500),
        decay_every=get_int(pairs, "train.decay_every", 100),
        decay_factor=get_float(pairs, "train.decay_factor", 0.1),
        batch_size=get_int(pairs, "train.batch_size", default_batch),
        dropout_p=get_float(pairs, "train.dropout", 0.5),
        seed=seed if seed is not None else get_int(pairs, "seed", 0),
        eval_repeats=repeats if repeats is not None else get_int(pairs, "train.eval_repeats", 5),
    )
    gate_channels = get_int(pairs, "model.gate_channels", 0)
    return RunConfig(
        task=task,
        model_kind=kind,
        seed=train_cfg.seed,
        out=Path(out_value) if out_value is not None else None,
        train_path=resolve("data.train"),
        val_path=resolve("data.val"),
        schema_path=resolve("data.schema"),
        train_cfg=train_cfg,
        num_blocks=get_int(pairs, "model.blocks", 2),
        s=get_int(pairs, "model.s", 4),
        w=get_int(pairs, "model.w", 16),
        kernel_size=get_int(pairs, "model.kernel_size", 3),
        channels=get_int(pairs, "model.channels", 64),
        gate_channels=gate_channels or None,
        lstm_hidden=get_int(pairs, "model.lstm_hidden", 64),
        lstm_layers=get_int(pairs, "model.lstm_layers", 8),
        lstm_bidirectional=get_bool(pairs, "model.lstm_bidirectional", True),
    )


def _model_spec(rc: RunConfig, in_channels: int, out_dim: int) -> ModelSpec:
    if rc.model_kind == "lstm":
        return ModelSpec(
            kind="lstm", task=rc.task, in_channels=in_channels, out_dim=out_dim,
            lstm_hidden=rc.lstm_hidden, lstm_layers=rc.lstm_layers,
            lstm_bidirectional=rc.lstm_bidirectional,
        )
    blocks = default_block_plan(
        in_channels, rc.num_blocks, rc.s, rc.w, rc.channels,
        rc.kernel_size, rc.gate_channels,
    )
    return ModelSpec(
        kind=rc.model_kind, task=rc.task, in_channels=in_channels,
        out_dim=out_dim, blocks=blocks,
    )


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def _write_history(path: Path, history: list[dict], metric_name: str) -> None:
    header = ["epoch", "lr", "train_loss", f"val_{metric_name}"]
    _write_rows(path, header, [[row[k] for k in header] for row in history])


def _write_metrics(path: Path, metrics: dict[str, float]) -> None:
    _write_rows(path, ["metric", "value"], [[k, v] for k, v in metrics.items()])


def _snapshot_checkpoint(spec: ModelSpec, snap: Snapshot, split: DatasetSplit,
                         metric_name: str) -> Checkpoint:
    arrays = dict(snap.params)
    for name, arr in snap.adam_m.items():
        arrays[f"adam.m.{name}"] = arr
    for name, arr in snap.adam_v.items():
        arrays[f"adam.v.{name}"] = arr
    arrays["norm.channel_mean"] = split.channel_mean.copy()
    arrays["norm.channel_std"] = split.channel_std.copy()
    arrays["norm.target"] = np.array([split.target_mean, split.target_std])
    return Checkpoint(
        topology=spec.to_dict(),
        state={
            "epoch": snap.epoch,
            "metric_name": metric_name,
            "metric": snap.metric,
            "adam_step": snap.adam_step_count,
            "rng_state": snap.rng_state,
        },
        arrays=arrays,
    )


def checkpoint_to_model(ckpt: Checkpoint) -> Model:
    spec = ModelSpec.from_dict(ckpt.topology)
    model = Model(spec, rng=None)
    model.load_state_arrays(ckpt.arrays)
    return model


def checkpoint_to_snapshot(ckpt: Checkpoint, model: Model) -> Snapshot:
    """Rebuild a resumable snapshot from a loaded checkpoint."""
    names = [n for n, _ in model.named_params()]
    return Snapshot(
        params={n: ckpt.arrays[n].copy() for n in names},
        adam_m={n: ckpt.arrays[f"adam.m.{n}"].copy() for n in names},
        adam_v={n: ckpt.arrays[f"adam.v.{n}"].copy() for n in names},
        adam_step_count=int(ckpt.state["adam_step"]),
        epoch=int(ckpt.state["epoch"]),
        metric=float(ckpt.state["metric"]),
        rng_state=copy.deepcopy(ckpt.state["rng_state"]),
    )


def _eval_split_from_checkpoint(ckpt: Checkpoint, samples, task: str) -> DatasetSplit:
    mean = ckpt.arrays["norm.channel_mean"]
    std = ckpt.arrays["norm.channel_std"]
    tmean, tstd = ckpt.arrays["norm.target"]
    normalized = []
    for x, target in samples:
        xn = (x - mean[:, None]) / std[:, None]
        if task == "forecasting":
            target = (np.asarray(target) - tmean) / tstd
        normalized.append((xn, target))
    return DatasetSplit(
        task=task, train=[], validation=normalized,
        channel_mean=mean, channel_std=std,
        target_mean=float(tmean), target_std=float(tstd),
    )


def _load_eval_inputs(args):
    ckpt = load_checkpoint(args.ckpt)
    model = checkpoint_to_model(ckpt)
    schema = load_schema(args.schema)
    spec = model.spec
    if schema.task != spec.task:
        raise DataError(
            f"checkpoint was trained for {spec.task}, schema declares {schema.task}"
        )
    if len(schema.features) != spec.in_channels:
        raise DataError(
            f"channel mismatch: model expects {spec.in_channels} input channels, "
            f"schema declares {len(schema.features)}"
        )
    table = load_csv(args.data, schema)
    samples = build_samples(table, schema)
    split = _eval_split_from_checkpoint(ckpt, samples, spec.task)
    return ckpt, model, schema, split


def _run_training(rc: RunConfig, config: TrainConfig, split: DatasetSplit):
    spec = _model_spec(
        rc,
        in_channels=split.n_channels,
        out_dim=split.n_classes if rc.task == "classification" else _horizon(split),
    )
    model = Model(spec, rng=np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,))))
    result = train_model(model, split, config)
    model.load_state_arrays(result.best.params)
    averaged, _ = evaluate_repeated(
        model, split, config.eval_repeats, full=rc.task == "forecasting"
    )
    return spec, model, result, averaged


def _horizon(split: DatasetSplit) -> int:
    return int(np.asarray(split.validation[0][1]).size)


def cmd_train(args) -> int:
    rc = load_run_config(args.config, seed=args.seed, out=args.out,
                         model=args.model, repeats=args.repeats)
    if rc.out is None:
        raise ConfigError("key 'out': an output directory is required (or pass --out)")
    schema = load_schema(rc.schema_path)
    if schema.task != rc.task:
        raise ConfigError(
            f"key 'task': config says {rc.task!r} but schema declares {schema.task!r}"
        )
    split = build_split(load_csv(rc.train_path, schema), load_csv(rc.val_path, schema), schema)
    out_dir = rc.out
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.multi_seed > 1:
        rows = []
        for offset in range(args.multi_seed):
            cfg = TrainConfig(**{**rc.train_cfg.__dict__, "seed": rc.seed + offset})
            _, _, result, averaged = _run_training(rc, cfg, split)
            rows.append((cfg.seed, averaged))
        keys = sorted(rows[0][1])
        table = [[s] + [m[k] for k in keys] for s, m in rows]
        table.append(["mean"] + [float(np.mean([m[k] for _, m in rows])) for k in keys])
        table.append(["std"] + [float(np.std([m[k] for _, m in rows])) for k in keys])
        _write_rows(out_dir / "variance.csv", ["seed"] + keys, table)
        print(f"wrote {out_dir / 'variance.csv'} over {args.multi_seed} seeds")
        return EXIT_OK

    spec, model, result, averaged = _run_training(rc, rc.train_cfg, split)
    _write_history(out_dir / "history.csv", result.history, result.metric_name)
    _write_metrics(out_dir / "metrics.csv", averaged)
    save_checkpoint(
        out_dir / "best.ckpt",
        _snapshot_checkpoint(spec, result.best, split, result.metric_name),
    )
    save_checkpoint(
        out_dir / "last.ckpt",
        _snapshot_checkpoint(spec, result.final, split, result.metric_name),
    )
    best = result.best
    print(f"trained {rc.model_kind} for {rc.train_cfg.epochs} epochs")
    print(f"best validation {result.metric_name} {best.metric} at epoch {best.epoch}")
    for key, value in averaged.items():
        print(f"final averaged {key} = {value}")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, model, _, split = _load_eval_inputs(args)
    averaged, _ = evaluate_repeated(
        model, split, args.repeats, full=model.spec.task == "forecasting"
    )
    for key, value in averaged.items():
        print(f"{key} = {value}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_metrics(out_dir / "metrics.csv", averaged)
        print(f"wrote {out_dir / 'metrics.csv'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    _, model, _, split = _load_eval_inputs(args)
    from .train import _batches, _forward_batch  # shared batching helpers

    samples = split.validation
    rows = []
    for idx in _batches(len(samples), 64):
        out = _forward_batch(model, samples, idx, False, None, 0.0)
        if model.spec.task == "classification":
            for i, sample_idx in enumerate(idx):
                rows.append([int(sample_idx), int(out.data[i].argmax())])
        else:
            preds = out.data * split.target_std + split.target_mean
            for i, sample_idx in enumerate(idx):
                rows.append([int(sample_idx)] + [float(v) for v in preds[i]])
    if model.spec.task == "classification":
        header = ["sample", "label"]
    else:
        horizon = len(rows[0]) - 1
        header = ["sample"] + [f"step{i + 1}" for i in range(horizon)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(out_dir / "predictions.csv", header, rows)
    print(f"wrote {out_dir / 'predictions.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = list(gradcheck_mod.SCOPES) if args.scope == "all" else [args.scope]
    results = gradcheck_mod.run_scopes(scopes, seed=args.seed, repeats=args.repeats)
    for line in gradcheck_mod.format_report(results):
        print(line)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_synth(args) -> int:
    generated = generate_synthetic_tables(args.task, args.seed, args.size, args.noise)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(generated.train, out_dir / "train.csv")
    write_csv(generated.validation, out_dir / "val.csv")
    write_schema(generated.schema, out_dir / "schema.txt")
    config_lines = [
        f"task = {args.task}",
        "model = gres2net",
        f"seed = {args.seed}",
        "data.train = train.csv",
        "data.val = val.csv",
        "data.schema = schema.txt",
    ]
    (out_dir / "run.config").write_text("\n".join(config_lines) + "\n", encoding="utf-8")
    print(f"wrote train.csv, val.csv, schema.txt, run.config to {out_dir}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="gres2net", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a run config")
    train.add_argument("--config", required=True, help="run config file")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out", default=None, help="override the output directory")
    train.add_argument("--model", choices=["gres2net", "res2net", "lstm"], default=None)
    train.add_argument("--repeats", type=int, default=None,
                       help="validation repeats for the final averaged metrics")
    train.add_argument("--multi-seed", type=int, default=1,
                       help="retrain N times with consecutive seeds and report variance")

    for name, fn in (("eval", "evaluate a checkpoint"), ("predict", "write predictions")):
        p = sub.add_parser(name, help=fn)
        p.add_argument("--ckpt", required=True, help="checkpoint file")
        p.add_argument("--data", required=True, help="dataset CSV")
        p.add_argument("--schema", required=True, help="dataset schema file")
        if name == "eval":
            p.add_argument("--repeats", type=int, default=5)
            p.add_argument("--out", default=None, help="directory for metrics.csv")
        else:
            p.add_argument("--out", required=True, help="directory for predictions.csv")

    grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    grad.add_argument("--scope", choices=["tensor", "nn", "res2net", "train", "all"],
                      default="all")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--repeats", type=int, default=20)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--task", choices=["classification", "forecasting"], required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--size", type=int, default=None,
                       help="training sequences (classification) or timesteps (forecasting)")
    synth.add_argument("--noise", type=float, default=None)
    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}

_SYNTH_DEFAULT_SIZE = {"classification": 96, "forecasting": 2000}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth" and args.size is None:
            args.size = _SYNTH_DEFAULT_SIZE[args.task]
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
