"""Finite-difference verification of every differentiable operation.

Each check draws a random configuration, computes analytic gradients by tape
replay, recomputes them by central differences (step 1e-6 by default), and
reports the norm-based relative error

    ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, 1e-12)

over all leaves at once. The two sides never share code: differences use only
forward evaluations. Checks that involve a relu keep inputs away from its
kink, where the one-sided derivative is not what differences estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nn, res2net, tensor as T
from .nn import Conv1dParams, LstmCellParams, LstmLayerParams, LstmState
from .res2net import BlockConfig, BlockParams, GateUnitParams
from .tensor import GradTape, Tensor, backward, sum_all, tanh
from .train import cross_entropy_loss, mse_loss

__all__ = [
    "CheckResult",
    "finite_difference",
    "relative_error",
    "gradient_gap",
    "run_scope",
    "run_scopes",
    "format_report",
    "SCOPES",
    "DEFAULT_TOLERANCE",
]

DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-5

LossFn = Callable[[list[Tensor]], Tensor]


def finite_difference(f: Callable[[list[np.ndarray]], float],
                      leaves: Sequence[np.ndarray],
                      step: float = DEFAULT_STEP) -> list[np.ndarray]:
    """Central-difference gradient of scalar f at leaves, element by element."""
    work = [np.array(v, dtype=np.float64) for v in leaves]
    grads = []
    for k, arr in enumerate(work):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = f(work)
            flat[j] = orig - step
            lo = f(work)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    a = np.concatenate([np.ravel(g) for g in analytic])
    n = np.concatenate([np.ravel(g) for g in numeric])
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def gradient_gap(loss_fn: LossFn, leaves: Sequence[np.ndarray],
                 step: float = DEFAULT_STEP) -> float:
    """Relative error between tape gradients and finite differences of
    ``loss_fn``, a function assembling a scalar loss from leaf tensors."""
    tensors = [Tensor(v, requires_grad=True) for v in leaves]
    with GradTape() as tape:
        loss = loss_fn(tensors)
    analytic = backward(tape, loss, tensors)

    def f(values: list[np.ndarray]) -> float:
        return loss_fn([Tensor(v) for v in values]).item()

    numeric = finite_difference(f, leaves, step)
    return relative_error(analytic, numeric)


def _rand(rng, *shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _rand3(rng):
    return (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 7)))


# ---------------------------------------------------------------- tensor ops

def _binary_check(op_name):
    def check(rng):
        shape = _rand3(rng)
        leaves = [_rand(rng, *shape), _rand(rng, *shape)]
        return gradient_gap(
            lambda ts: sum_all(T.elementwise(op_name, ts[0], ts[1])), leaves
        )

    return check


def _unary_check(op_name):
    def check(rng):
        shape = _rand3(rng)
        x = _rand(rng, *shape)
        if op_name == "relu":
            x = x + 0.2 * np.sign(x)  # stay off the kink
        return gradient_gap(lambda ts: sum_all(T.elementwise(op_name, ts[0])), [x])

    return check


def _scale_check(rng):
    shape = _rand3(rng)
    factor = float(rng.uniform(-2.0, 2.0))
    return gradient_gap(lambda ts: sum_all(T.scale(T.tanh(ts[0]), factor)), [_rand(rng, *shape)])


def _mean_check(rng):
    shape = _rand3(rng)
    return gradient_gap(lambda ts: T.mean_all(T.mul(ts[0], ts[0])), [_rand(rng, *shape)])


def _split_concat_check(rng):
    groups = int(rng.integers(1, 4))
    shape = (2, 2 * groups, int(rng.integers(3, 6)))

    def loss(ts):
        parts = T.split_channels(ts[0], groups)
        recombined = T.concat_channels(list(reversed(parts)))
        return sum_all(T.mul(recombined, recombined))

    return gradient_gap(loss, [_rand(rng, *shape)])


def _time_ops_check(rng):
    shape = (2, 2, int(rng.integers(3, 6)))

    def loss(ts):
        steps = [T.time_slice(ts[0], i) for i in range(shape[2])]
        return sum_all(tanh(T.stack_time(steps)))

    return gradient_gap(loss, [_rand(rng, *shape)])


# ------------------------------------------------------------------ nn layers

def _conv1d_check(rng):
    b, i, t = 2, int(rng.integers(1, 4)), int(rng.integers(4, 8))
    o = int(rng.integers(1, 4))
    k = int(rng.choice([1, 3, 5]))
    leaves = [_rand(rng, o, i, k), _rand(rng, o), _rand(rng, b, i, t)]

    def loss(ts):
        return sum_all(tanh(nn.conv1d(Conv1dParams(ts[0], ts[1]), ts[2])))

    return gradient_gap(loss, leaves)


def _dense_check(rng):
    b, i, o = 3, int(rng.integers(1, 5)), int(rng.integers(1, 4))
    leaves = [_rand(rng, o, i), _rand(rng, o), _rand(rng, b, i)]

    def loss(ts):
        return sum_all(tanh(nn.dense(nn.DenseParams(ts[0], ts[1]), ts[2])))

    return gradient_gap(loss, leaves)


def _pool_check(rng):
    shape = _rand3(rng)
    return gradient_gap(lambda ts: sum_all(tanh(nn.global_avg_pool(ts[0]))), [_rand(rng, *shape)])


def _dropout_check(rng):
    shape = _rand3(rng)
    mask_seed = int(rng.integers(0, 2**31))

    def loss(ts):
        mask_rng = np.random.default_rng(mask_seed)  # identical mask every call
        return sum_all(tanh(nn.dropout(ts[0], 0.4, "train", mask_rng)))

    return gradient_gap(loss, [_rand(rng, *shape)])


def _lstm_cell_check(rng):
    batch, input_size, hidden = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    params = nn.init_lstm_cell(input_size, hidden, rng)
    leaves = [p.data for p in params.tensors()]
    leaves += [_rand(rng, batch, input_size), _rand(rng, batch, hidden),
               _rand(rng, batch, hidden)]

    def loss(ts):
        it = iter(ts)
        cell = LstmCellParams(*(next(it) for _ in range(12)))
        x_k, h0, s0 = next(it), next(it), next(it)
        state = nn.lstm_cell_step(cell, x_k, LstmState(h=h0, s=s0))
        return sum_all(T.add(state.h, state.s))

    return gradient_gap(loss, leaves)


def _lstm_sequence_check(rng):
    batch, channels, steps, hidden = 1, 2, 3, 2
    bidirectional = bool(rng.integers(0, 2))
    stack = nn.init_lstm_stack(channels, hidden, 1, bidirectional, rng)
    leaves = [p.data for p in stack[0].tensors()] + [_rand(rng, batch, channels, steps)]

    def loss(ts):
        it = iter(ts)
        fwd = LstmCellParams(*(next(it) for _ in range(12)))
        bwd = LstmCellParams(*(next(it) for _ in range(12))) if bidirectional else None
        x = ts[-1]
        return sum_all(nn.lstm_sequence([LstmLayerParams(fwd=fwd, bwd=bwd)], x))

    return gradient_gap(loss, leaves)


# ------------------------------------------------------------- blocks & gates

def _gate_config(rng) -> BlockConfig:
    s = int(rng.integers(3, 5))
    w = int(rng.integers(1, 3))
    return BlockConfig(in_channels=2, out_channels=2, s=s, w=w, kernel_size=3)


def _rebuild_block(config: BlockConfig, ts: list[Tensor]) -> tuple[BlockParams, Tensor]:
    it = iter(ts)

    def conv() -> Conv1dParams:
        return Conv1dParams(next(it), next(it))

    expand = conv()
    group_convs = [conv() for _ in range(config.s - 1)]
    gates = [GateUnitParams(conv(), conv(), conv(), conv()) for _ in range(config.s - 2)]
    compress = conv()
    return BlockParams(config, expand, group_convs, gates, compress), next(it)


def _gate_unit_check(rng):
    config = _gate_config(rng)
    unit = res2net.init_gate_unit(config, rng)
    n, w, t = config.expanded_channels, config.w, 4
    leaves = [p.data for p in unit.tensors()]
    leaves += [_rand(rng, 1, n, t), _rand(rng, 1, w, t), _rand(rng, 1, w, t)]

    def loss(ts):
        it = iter(ts)
        rebuilt = GateUnitParams(
            *(Conv1dParams(next(it), next(it)) for _ in range(4))
        )
        full, prev, curr = ts[-3], ts[-2], ts[-1]
        return sum_all(res2net.gate_compute(rebuilt, full, prev, curr))

    return gradient_gap(loss, leaves)


def _block_check(gated: bool):
    def check(rng):
        config = _gate_config(rng)
        params = res2net.init_block(config, rng)
        leaves = [p.data for p in params.tensors()]
        leaves.append(_rand(rng, 1, config.in_channels, 5))

        def loss(ts):
            rebuilt, x = _rebuild_block(config, ts)
            if gated:
                out = res2net.gres2net_block_forward(rebuilt, x)
            else:
                out = res2net.res2net_block_forward(rebuilt, x)
            return sum_all(tanh(out))

        return gradient_gap(loss, leaves)

    return check


# ---------------------------------------------------------------------- losses

def _cross_entropy_check(rng):
    batch, classes = 4, int(rng.integers(2, 5))
    labels = rng.integers(0, classes, size=batch)
    return gradient_gap(
        lambda ts: cross_entropy_loss(ts[0], labels), [_rand(rng, batch, classes)]
    )


def _mse_check(rng):
    shape = (3, int(rng.integers(1, 4)))
    leaves = [_rand(rng, *shape), _rand(rng, *shape)]
    return gradient_gap(lambda ts: mse_loss(ts[0], ts[1]), leaves)


SCOPES: dict[str, list[tuple[str, Callable]]] = {
    "tensor": [
        ("add", _binary_check("add")),
        ("sub", _binary_check("sub")),
        ("mul", _binary_check("mul")),
        ("tanh", _unary_check("tanh")),
        ("sigmoid", _unary_check("sigmoid")),
        ("relu", _unary_check("relu")),
        ("scale", _scale_check),
        ("mean_sum", _mean_check),
        ("split_concat", _split_concat_check),
        ("time_ops", _time_ops_check),
    ],
    "nn": [
        ("conv1d", _conv1d_check),
        ("dense", _dense_check),
        ("global_avg_pool", _pool_check),
        ("dropout", _dropout_check),
        ("lstm_cell", _lstm_cell_check),
        ("lstm_sequence", _lstm_sequence_check),
    ],
    "res2net": [
        ("gate_unit", _gate_unit_check),
        ("res2net_block", _block_check(gated=False)),
        ("gres2net_block", _block_check(gated=True)),
    ],
    "train": [
        ("cross_entropy_loss", _cross_entropy_check),
        ("mse_loss", _mse_check),
    ],
}


@dataclass
class CheckResult:
    scope: str
    name: str
    repeats: int
    max_rel_err: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def run_scope(scope: str, seed: int = 0, repeats: int = 20,
              tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    """Run every check in a scope ``repeats`` times with derived seeds."""
    if scope not in SCOPES:
        raise ValueError(f"unknown gradcheck scope {scope!r}, expected one of {sorted(SCOPES)}")
    results = []
    for index, (name, check) in enumerate(SCOPES[scope]):
        started = time.perf_counter()
        worst = 0.0
        for rep in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, rep)))
            worst = max(worst, check(rng))
        results.append(
            CheckResult(
                scope=scope,
                name=name,
                repeats=repeats,
                max_rel_err=worst,
                tolerance=tolerance,
                seconds=time.perf_counter() - started,
            )
        )
    return results


def run_scopes(scopes: Sequence[str], seed: int = 0, repeats: int = 20,
               tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    results = []
    for scope in scopes:
        results.extend(run_scope(scope, seed=seed, repeats=repeats, tolerance=tolerance))
    return results


def format_report(results: Sequence[CheckResult]) -> list[str]:
    lines = []
    for r in results:
        verdict = "pass" if r.passed else "FAIL"
        lines.append(
            f"{verdict}  {r.scope}.{r.name}: max relative error {r.max_rel_err:.3e} "
            f"(tolerance {r.tolerance:.1e}, {r.repeats} seeds, {r.seconds:.2f}s)"
        )
    return lines
