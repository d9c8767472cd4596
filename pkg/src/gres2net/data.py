"""CSV ingestion, normalization, windowing, and synthetic dataset generation.

Input files are UTF-8 comma-separated with a header row. A companion schema
file (key-value text) declares the column roles and the task:

    task = classification | forecasting
    features = ch1, ch2, ch3        feature columns, channel order
    label = y                       classification label column
    target = ch1                    forecasting target column
    sequence = seq                  grouped-sequence layout (classification)
    timestamp = date                optional, kept but unused
    history / horizon / stride      window geometry (defaults 48 / 1 / 1)
    missing_values = error | forward_fill
    meta.* = ...                    free-form, carried through untouched

Classification data comes in two layouts: grouped sequences (rows of one
sequence contiguous, one label per sequence) or a plain per-row-labelled
series that gets windowed with the label read at each window's end.
Forecasting data is a plain series windowed into (history block, horizon
target vector) pairs. Normalization is a per-channel z-score with statistics
from the training partition only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path

import numpy as np

from .config import ConfigError, get_int, get_list, get_str, parse_kv_file

__all__ = [
    "DataError",
    "RawTable",
    "DataSchema",
    "WindowSpec",
    "DatasetSplit",
    "SyntheticData",
    "load_schema",
    "write_schema",
    "load_csv",
    "write_csv",
    "make_windows",
    "build_samples",
    "normalize",
    "build_split",
    "generate_synthetic_tables",
    "make_synthetic",
]

TASKS = ("classification", "forecasting")


class DataError(Exception):
    """Malformed or inconsistent dataset content."""


@dataclass
class RawTable:
    """Typed columns of one CSV file: float arrays for features and targets,
    an int array for labels, plain strings for sequence ids and timestamps."""

    columns: list[str]
    data: dict[str, np.ndarray | list[str]]
    n_rows: int

    def column(self, name: str):
        if name not in self.data:
            raise DataError(f"column {name!r} not present (have {self.columns})")
        return self.data[name]


@dataclass(frozen=True)
class DataSchema:
    task: str
    features: tuple[str, ...]
    label: str | None = None
    target: str | None = None
    sequence: str | None = None
    timestamp: str | None = None
    history: int = 48
    horizon: int = 1
    stride: int = 1
    missing_values: str = "error"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"key 'task': expected one of {TASKS}, got {self.task!r}")
        if not self.features:
            raise ConfigError("key 'features': at least one feature column is required")
        if self.task == "classification" and self.label is None:
            raise ConfigError("key 'label': required for classification")
        if self.task == "forecasting" and self.target is None:
            raise ConfigError("key 'target': required for forecasting")
        if min(self.history, self.horizon, self.stride) < 1:
            raise ConfigError(
                f"window geometry must be >= 1: history={self.history} "
                f"horizon={self.horizon} stride={self.stride}"
            )
        if self.missing_values not in ("error", "forward_fill"):
            raise ConfigError(
                f"key 'missing_values': expected error or forward_fill, "
                f"got {self.missing_values!r}"
            )


def load_schema(path: str | Path) -> DataSchema:
    pairs = parse_kv_file(path)
    known = {"task", "features", "label", "target", "sequence", "timestamp",
             "history", "horizon", "stride", "missing_values"}
    meta = {}
    for key in pairs:
        if key.startswith("meta."):
            meta[key[5:]] = pairs[key]
        elif key not in known:
            raise ConfigError(f"unknown schema key {key!r}")
    return DataSchema(
        task=get_str(pairs, "task"),
        features=tuple(get_list(pairs, "features")),
        label=get_str(pairs, "label", None),
        target=get_str(pairs, "target", None),
        sequence=get_str(pairs, "sequence", None),
        timestamp=get_str(pairs, "timestamp", None),
        history=get_int(pairs, "history", 48),
        horizon=get_int(pairs, "horizon", 1),
        stride=get_int(pairs, "stride", 1),
        missing_values=get_str(pairs, "missing_values", "error"),
    )


def write_schema(schema: DataSchema, path: str | Path) -> None:
    lines = [f"task = {schema.task}", f"features = {', '.join(schema.features)}"]
    for key in ("label", "target", "sequence", "timestamp"):
        value = getattr(schema, key)
        if value is not None:
            lines.append(f"{key} = {value}")
    lines += [
        f"history = {schema.history}",
        f"horizon = {schema.horizon}",
        f"stride = {schema.stride}",
        f"missing_values = {schema.missing_values}",
    ]
    lines += [f"meta.{k} = {v}" for k, v in schema.meta.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_float_column(rows, col_idx, name, path, forward_fill):
    values = np.empty(len(rows))
    previous = None
    for r, row in enumerate(rows):
        cell = row[col_idx]
        try:
            values[r] = float(cell)
            if not np.isfinite(values[r]):
                raise ValueError
            previous = values[r]
        except ValueError:
            if forward_fill and previous is not None:
                values[r] = previous
            else:
                raise DataError(
                    f"{path}: row {r + 2}, column {name!r}: "
                    f"cannot parse {cell!r} as a number"
                ) from None
    return values


def load_csv(path: str | Path, schema: DataSchema) -> RawTable:
    """Read and type one CSV per the schema's column roles. Undeclared columns
    are ignored; declared ones must exist and parse cleanly (row and column
    named on failure), except in forward_fill mode where a bad feature/target
    cell repeats the previous value."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        rows = []
        for r, row in enumerate(reader):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {r + 2} has {len(row)} fields, header has {len(header)}"
                )
            rows.append(row)

    roles: dict[str, str] = {name: "feature" for name in schema.features}
    for attr in ("label", "target", "sequence", "timestamp"):
        name = getattr(schema, attr)
        if name is not None and name not in roles:
            roles[name] = attr
    missing = [name for name in roles if name not in header]
    if missing:
        raise DataError(f"{path}: missing declared column(s) {missing}")

    forward_fill = schema.missing_values == "forward_fill"
    columns = [name for name in header if name in roles]
    data: dict[str, np.ndarray | list[str]] = {}
    for name in columns:
        idx = header.index(name)
        role = roles[name]
        if role in ("feature", "target"):
            data[name] = _parse_float_column(rows, idx, name, path, forward_fill)
        elif role == "label":
            labels = np.empty(len(rows), dtype=np.int64)
            for r, row in enumerate(rows):
                try:
                    labels[r] = int(row[idx])
                except ValueError:
                    raise DataError(
                        f"{path}: row {r + 2}, column {name!r}: "
                        f"cannot parse {row[idx]!r} as an integer label"
                    ) from None
            data[name] = labels
        else:
            data[name] = [row[idx] for row in rows]
    return RawTable(columns=columns, data=data, n_rows=len(rows))


def _format_cell(value) -> str:
    if isinstance(value, (np.floating, float)):
        return repr(float(value))  # shortest exact round-trip
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def write_csv(table: RawTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.columns)
        cols = [table.data[name] for name in table.columns]
        for r in range(table.n_rows):
            writer.writerow([_format_cell(col[r]) for col in cols])


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window geometry: ``history`` input steps, ``horizon`` target
    steps, windows advancing by ``stride``."""

    history: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        if min(self.history, self.horizon, self.stride) < 1:
            raise ValueError(
                f"window fields must be >= 1: history={self.history} "
                f"horizon={self.horizon} stride={self.stride}"
            )


def make_windows(
    series: RawTable,
    spec: WindowSpec,
    target_column: str,
    feature_columns: tuple[str, ...] | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cut a series into (channels x history, horizon) training pairs.

    Yields floor((L - history - horizon) / stride) + 1 samples; the target
    vector starts right after its input window.
    """
    if feature_columns is None:
        feature_columns = tuple(
            name for name in series.columns if isinstance(series.data[name], np.ndarray)
            and series.data[name].dtype == np.float64
        )
    target = np.asarray(series.column(target_column), dtype=np.float64)
    length = series.n_rows
    span = spec.history + spec.horizon
    if length < span:
        raise DataError(
            f"series of length {length} too short for history {spec.history} "
            f"+ horizon {spec.horizon}"
        )
    channels = np.stack([np.asarray(series.column(c), dtype=np.float64) for c in feature_columns])
    samples = []
    for start in range(0, length - span + 1, spec.stride):
        window = np.ascontiguousarray(channels[:, start : start + spec.history])
        future = target[start + spec.history : start + span].copy()
        samples.append((window, future))
    return samples


def _grouped_sequences(table: RawTable, schema: DataSchema):
    seq_col = table.column(schema.sequence)
    labels = table.column(schema.label)
    channels = np.stack([table.column(c) for c in schema.features])
    samples = []
    seen: set[str] = set()
    pos = 0
    for seq_id, group in groupby(seq_col):
        run = len(list(group))
        if seq_id in seen:
            raise DataError(f"sequence {seq_id!r} appears in non-contiguous row blocks")
        seen.add(seq_id)
        block = slice(pos, pos + run)
        seq_labels = labels[block]
        if not np.all(seq_labels == seq_labels[0]):
            raise DataError(f"sequence {seq_id!r} carries more than one label")
        samples.append((np.ascontiguousarray(channels[:, block]), int(seq_labels[0])))
        pos += run
    return samples


def _windowed_labels(table: RawTable, schema: DataSchema):
    labels = table.column(schema.label)
    channels = np.stack([table.column(c) for c in schema.features])
    length = table.n_rows
    if length < schema.history:
        raise DataError(f"series of length {length} too short for history {schema.history}")
    samples = []
    for start in range(0, length - schema.history + 1, schema.stride):
        window = np.ascontiguousarray(channels[:, start : start + schema.history])
        samples.append((window, int(labels[start + schema.history - 1])))
    return samples


def build_samples(table: RawTable, schema: DataSchema) -> list[tuple[np.ndarray, object]]:
    """Turn one table into unnormalized (channels x time, target) samples."""
    if schema.task == "classification":
        if schema.sequence is not None:
            return _grouped_sequences(table, schema)
        return _windowed_labels(table, schema)
    spec = WindowSpec(schema.history, schema.horizon, schema.stride)
    return make_windows(table, spec, schema.target, schema.features)


@dataclass
class DatasetSplit:
    """Disjoint train/validation samples plus the train-derived normalization
    statistics that were applied to both partitions."""

    task: str
    train: list[tuple[np.ndarray, object]]
    validation: list[tuple[np.ndarray, object]]
    channel_mean: np.ndarray
    channel_std: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0
    n_classes: int | None = None

    @property
    def n_channels(self) -> int:
        return len(self.channel_mean)


def _apply_stats(samples, mean, std, target_mean, target_std, task):
    out = []
    for x, target in samples:
        xn = (x - mean[:, None]) / std[:, None]
        if task == "forecasting":
            target = (np.asarray(target) - target_mean) / target_std
        out.append((xn, target))
    return out


def normalize(split: DatasetSplit) -> DatasetSplit:
    """Z-score every channel (and the forecasting target) using statistics of
    the train partition only. Channels with zero spread are centered and left
    unscaled."""
    if not split.train:
        raise DataError("cannot normalize: train partition is empty")
    stacked = np.concatenate([x for x, _ in split.train], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std[std == 0.0] = 1.0
    target_mean, target_std = 0.0, 1.0
    if split.task == "forecasting":
        targets = np.concatenate([np.asarray(t).ravel() for _, t in split.train])
        target_mean = float(targets.mean())
        target_std = float(targets.std())
        if target_std == 0.0:
            target_std = 1.0
    return DatasetSplit(
        task=split.task,
        train=_apply_stats(split.train, mean, std, target_mean, target_std, split.task),
        validation=_apply_stats(
            split.validation, mean, std, target_mean, target_std, split.task
        ),
        channel_mean=mean,
        channel_std=std,
        target_mean=target_mean,
        target_std=target_std,
        n_classes=split.n_classes,
    )


def build_split(train_table: RawTable, val_table: RawTable, schema: DataSchema) -> DatasetSplit:
    """Samples from predefined train/validation tables, normalized with train
    statistics."""
    train = build_samples(train_table, schema)
    val = build_samples(val_table, schema)
    if not train or not val:
        raise DataError("train and validation partitions must both produce samples")
    n_classes = None
    if schema.task == "classification":
        labels = [t for _, t in train] + [t for _, t in val]
        if min(labels) < 0:
            raise DataError(f"negative class label {min(labels)}")
        n_classes = max(labels) + 1
    raw = DatasetSplit(
        task=schema.task,
        train=train,
        validation=val,
        channel_mean=np.zeros(len(schema.features)),
        channel_std=np.ones(len(schema.features)),
        n_classes=n_classes,
    )
    return normalize(raw)


@dataclass
class SyntheticData:
    """Generated tables plus the ground truth the generator knows."""

    train: RawTable
    validation: RawTable
    schema: DataSchema
    noise_sigma: float
    clean_train: np.ndarray | None = None  # noiseless target, forecasting only
    clean_validation: np.ndarray | None = None


def _multi_sine(rng, length, periods, amp_range=(0.6, 1.2), offset=0.0):
    t = np.arange(length, dtype=np.float64)
    signal = np.full(length, offset)
    for period in periods:
        amp = rng.uniform(*amp_range)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        signal += amp * np.sin(2.0 * np.pi * t / period + phase)
    return signal


def _synthetic_classification(rng, size, noise, length=32):
    """Sequences whose class is the sign of the interaction between the first
    two channels: channel 2 tracks channel 1 for one class and mirrors it for
    the other, so only a cross-channel product separates them. Channel 3 is an
    uninformative distractor."""

    def emit(n_sequences, start_index):
        cols = {"seq": [], "ch1": [], "ch2": [], "ch3": [], "label": []}
        for i in range(n_sequences):
            label = i % 2
            sign = 1.0 if label == 1 else -1.0
            periods = rng.uniform(5.0, 16.0, size=3)
            base = _multi_sine(rng, length, periods)
            distract = _multi_sine(rng, length, rng.uniform(5.0, 16.0, size=3))
            ch1 = base + noise * rng.standard_normal(length)
            ch2 = sign * base + noise * rng.standard_normal(length)
            ch3 = distract + noise * rng.standard_normal(length)
            cols["seq"] += [f"s{start_index + i:04d}"] * length
            cols["ch1"].append(ch1)
            cols["ch2"].append(ch2)
            cols["ch3"].append(ch3)
            cols["label"].append(np.full(length, label, dtype=np.int64))
        return RawTable(
            columns=["seq", "ch1", "ch2", "ch3", "label"],
            data={
                "seq": cols["seq"],
                "ch1": np.concatenate(cols["ch1"]),
                "ch2": np.concatenate(cols["ch2"]),
                "ch3": np.concatenate(cols["ch3"]),
                "label": np.concatenate(cols["label"]),
            },
            n_rows=n_sequences * length,
        )

    n_val = max(4, size // 2)
    schema = DataSchema(
        task="classification",
        features=("ch1", "ch2", "ch3"),
        label="label",
        sequence="seq",
        meta={"noise_sigma": repr(noise)},
    )
    return SyntheticData(
        train=emit(size, 0),
        validation=emit(n_val, size),
        schema=schema,
        noise_sigma=noise,
    )


def _synthetic_forecasting(rng, size, noise, history=48, horizon=1):
    """A three-channel series built from shared sinusoids (distinct phases and
    amplitudes per channel) plus iid Gaussian noise. The noiseless first
    channel is the best possible predictor of itself, so the irreducible
    target RMSE equals the injected noise level."""
    periods = (6.0, 9.5, 16.0)
    val_size = max(history + horizon, size // 3)
    total = size + val_size
    offsets = {"ch1": 10.0, "ch2": 5.0, "ch3": 7.0}
    clean = {
        name: _multi_sine(rng, total, periods, amp_range=(0.4, 0.8), offset=off)
        for name, off in offsets.items()
    }
    noisy = {name: sig + noise * rng.standard_normal(total) for name, sig in clean.items()}

    def table(lo, hi):
        return RawTable(
            columns=["ch1", "ch2", "ch3"],
            data={name: noisy[name][lo:hi].copy() for name in offsets},
            n_rows=hi - lo,
        )

    schema = DataSchema(
        task="forecasting",
        features=("ch1", "ch2", "ch3"),
        target="ch1",
        history=history,
        horizon=horizon,
        stride=1,
        meta={"noise_sigma": repr(noise)},
    )
    return SyntheticData(
        train=table(0, size),
        validation=table(size, total),
        schema=schema,
        noise_sigma=noise,
        clean_train=clean["ch1"][:size].copy(),
        clean_validation=clean["ch1"][size:].copy(),
    )


def generate_synthetic_tables(
    task: str, seed: int, size: int, noise: float | None = None
) -> SyntheticData:
    """Deterministic synthetic datasets; ``size`` counts training sequences
    (classification) or training timesteps (forecasting)."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    if task == "classification":
        if size < 4:
            raise ValueError(f"classification needs size >= 4 sequences, got {size}")
        return _synthetic_classification(rng, size, 0.25 if noise is None else noise)
    if size < 98:  # one full window in train plus headroom
        raise ValueError(f"forecasting needs size >= 98 timesteps, got {size}")
    return _synthetic_forecasting(rng, size, 0.25 if noise is None else noise)


def make_synthetic(task: str, seed: int, size: int, noise: float | None = None) -> DatasetSplit:
    """Generate a synthetic dataset and package it like a loaded one."""
    generated = generate_synthetic_tables(task, seed, size, noise)
    return build_split(generated.train, generated.validation, generated.schema)
