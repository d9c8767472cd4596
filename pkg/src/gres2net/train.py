"""Losses, the Adam optimizer, the step learning-rate schedule, and the
training loop with best-validation early stopping.

The protocol defaults follow the reference experiment settings: Adam at
initial rate 0.001 for 500 epochs, rate cut to a tenth every 100 epochs,
dropout probability 0.5, batch size 32 for classification and 64 for
forecasting, and validation repeated 5 times with the results averaged.
Validation is deterministic (dropout off), so the repeats coincide; seed
sweeps are the supported way to estimate run-to-run variance.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics as metrics_mod
from .data import DatasetSplit
from .model import Model
from .tensor import GradTape, Tensor, backward, record_op

__all__ = [
    "TrainConfig",
    "AdamState",
    "Snapshot",
    "TrainResult",
    "cross_entropy_loss",
    "mse_loss",
    "init_adam",
    "adam_step",
    "lr_at_epoch",
    "train_model",
    "evaluate",
    "evaluate_repeated",
]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    epochs: int = 500
    decay_every: int = 100
    decay_factor: float = 0.1
    batch_size: int = 32
    dropout_p: float = 0.5
    seed: int = 0
    eval_repeats: int = 5

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.decay_every < 1:
            raise ValueError(
                f"invalid schedule: epochs={self.epochs} decay_every={self.decay_every}"
            )
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.eval_repeats < 1:
            raise ValueError(f"eval_repeats must be >= 1, got {self.eval_repeats}")


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true class.

    The gradient with respect to the logits is (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ValueError(f"logits must be rank-2 (batch, classes), got shape {logits.shape}")
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        bad = int(labels[(labels < 0) | (labels >= n_classes)][0])
        raise ValueError(f"label {bad} outside [0, {n_classes})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    exps = np.exp(z - zmax)
    denom = exps.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(denom)
    rows = np.arange(batch)
    out = Tensor._wrap(np.asarray(-log_probs[rows, labels].mean()), "cross_entropy")
    softmax = exps / denom

    def grad_fn(g: np.ndarray):
        gl = softmax.copy()
        gl[rows, labels] -= 1.0
        return (gl * (g / batch),)

    return record_op((logits,), out, grad_fn)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference; gradient 2(pred-target)/count on each side."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor._wrap(np.asarray(np.mean(diff * diff)), "mse")

    def grad_fn(g: np.ndarray):
        base = diff * (2.0 * g / n)
        return (base, -base)

    return record_op((pred, target), out, grad_fn)


@dataclass
class AdamState:
    """Per-parameter moment accumulators and the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Sequence[Tensor]) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(
    state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float
) -> None:
    """One bias-corrected Adam update, in place. Non-finite gradients abort
    the step before any parameter changes."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError(
            f"adam_step: {len(params)} params, {len(grads)} grads, "
            f"state tracks {len(state.m)}"
        )
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: grad {idx} shape {g.shape} vs param {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {idx}; step aborted")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step schedule: lr0 scaled by decay_factor every decay_every epochs."""
    if not 0 <= epoch < max(config.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


@dataclass
class Snapshot:
    """Full training-state picture at an epoch boundary, sufficient to resume."""

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_step_count: int
    epoch: int
    metric: float
    rng_state: dict


@dataclass
class TrainResult:
    best: Snapshot
    final: Snapshot
    history: list[dict] = field(default_factory=list)
    metric_name: str = "accuracy"


def _pad_stack(arrays: list[np.ndarray]) -> np.ndarray:
    """Stack (channels, time) samples, right-padding time with zeros to the
    longest sample in the batch."""
    tmax = max(a.shape[1] for a in arrays)
    if all(a.shape[1] == tmax for a in arrays):
        return np.stack(arrays)
    batch = np.zeros((len(arrays), arrays[0].shape[0], tmax))
    for i, a in enumerate(arrays):
        batch[i, :, : a.shape[1]] = a
    return batch


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _forward_batch(model: Model, samples, idx, train, rng, dropout_p):
    xs = [samples[i][0] for i in idx]
    x = Tensor(_pad_stack(xs))
    return model.forward(x, train=train, rng=rng, dropout_p=dropout_p)


def _snapshot(model: Model, adam: AdamState, names, epoch, metric, rng) -> Snapshot:
    return Snapshot(
        params=model.state_arrays(),
        adam_m={n: m.copy() for n, m in zip(names, adam.m)},
        adam_v={n: v.copy() for n, v in zip(names, adam.v)},
        adam_step_count=adam.step,
        epoch=epoch,
        metric=metric,
        rng_state=copy.deepcopy(rng.bit_generator.state),
    )


def evaluate(model: Model, split: DatasetSplit, part: str = "validation",
             batch_size: int = 64, full: bool = False) -> dict[str, float]:
    """Deterministic evaluation (dropout off) of one partition.

    Classification reports accuracy. Forecasting reports rmse by default and
    adds mae, mape, and r2 when ``full`` (predictions and targets mapped back
    to original units first).
    """
    samples = split.train if part == "train" else split.validation
    if not samples:
        raise ValueError(f"{part} partition is empty")
    if split.task == "classification":
        hits = 0
        for idx in _batches(len(samples), batch_size):
            scores = _forward_batch(model, samples, idx, False, None, 0.0)
            pred = scores.data.argmax(axis=1)
            true = np.array([samples[i][1] for i in idx])
            hits += int(np.count_nonzero(pred == true))
        return {"accuracy": 100.0 * hits / len(samples)}

    preds, trues = [], []
    for idx in _batches(len(samples), batch_size):
        out = _forward_batch(model, samples, idx, False, None, 0.0)
        preds.append(out.data * split.target_std + split.target_mean)
        trues.append(
            np.stack([samples[i][1] for i in idx]) * split.target_std + split.target_mean
        )
    series = metrics_mod.EvalSeries(np.concatenate(trues), np.concatenate(preds))
    report = {"rmse": metrics_mod.rmse(series)}
    if full:
        report["mae"] = metrics_mod.mae(series)
        report["mape"] = metrics_mod.mape(series)
        report["r2"] = metrics_mod.r_squared(series)
    return report


def evaluate_repeated(
    model: Model, split: DatasetSplit, repeats: int, part: str = "validation",
    full: bool = True,
) -> tuple[dict[str, float], list[dict[str, float]]]:
    """Evaluate ``repeats`` times and average each metric over the records."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    records = [evaluate(model, split, part=part, full=full) for _ in range(repeats)]
    averaged = {k: float(np.mean([r[k] for r in records])) for k in records[0]}
    return averaged, records


def train_model(
    model: Model,
    split: DatasetSplit,
    config: TrainConfig,
    resume: Snapshot | None = None,
    best_so_far: Snapshot | None = None,
) -> TrainResult:
    """Minibatch training with per-epoch validation and best-checkpoint retention.

    Batches are reshuffled every epoch by the seeded generator and the final
    short batch is kept. The returned ``best`` snapshot holds the parameters
    with the best validation metric seen (highest accuracy, lowest rmse); the
    initial parameters serve as the baseline candidate so a zero-epoch run is
    well defined. Passing ``resume`` (a previous ``final`` snapshot) continues
    the identical run: same config, epochs picking up where it stopped.
    """
    if not split.train or not split.validation:
        raise ValueError("train and validation partitions must both be non-empty")
    names = [n for n, _ in model.named_params()]
    params = model.params()
    higher_is_better = split.task == "classification"
    metric_name = "accuracy" if higher_is_better else "rmse"

    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    adam = init_adam(params)
    start_epoch = 0
    if resume is not None:
        model.load_state_arrays(resume.params)
        adam.m = [resume.adam_m[n].copy() for n in names]
        adam.v = [resume.adam_v[n].copy() for n in names]
        adam.step = resume.adam_step_count
        rng.bit_generator.state = copy.deepcopy(resume.rng_state)
        start_epoch = resume.epoch

    if best_so_far is not None:
        best = best_so_far
    else:
        baseline = evaluate(model, split)[metric_name]
        best = _snapshot(model, adam, names, start_epoch, baseline, rng)

    history: list[dict] = []
    n = len(split.train)
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = rng.permutation(n)
        total_loss = 0.0
        for idx in _batches(n, config.batch_size, order):
            with GradTape() as tape:
                out = _forward_batch(model, split.train, idx, True, rng, config.dropout_p)
                if split.task == "classification":
                    labels = np.array([split.train[i][1] for i in idx])
                    loss = cross_entropy_loss(out, labels)
                else:
                    targets = Tensor(np.stack([split.train[i][1] for i in idx]))
                    loss = mse_loss(out, targets)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}; training halted"
                )
            grads = backward(tape, loss, params)
            adam_step(adam, params, grads, lr)
            total_loss += loss_val * len(idx)

        val = evaluate(model, split)[metric_name]
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_loss": total_loss / n,
                f"val_{metric_name}": val,
            }
        )
        improved = val > best.metric if higher_is_better else val < best.metric
        if improved:
            best = _snapshot(model, adam, names, epoch + 1, val, rng)

    final_metric = history[-1][f"val_{metric_name}"] if history else best.metric
    final = _snapshot(model, adam, names, config.epochs, final_metric, rng)
    return TrainResult(best=best, final=final, history=history, metric_name=metric_name)
