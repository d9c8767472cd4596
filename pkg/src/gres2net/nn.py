"""Differentiable layers: same-padded 1-D convolution, dense, pooling, dropout,
and a recurrent cell with input/forget/output gating plus a stacked
(optionally bidirectional) sequence runner built on it.

Weights initialize uniformly in +-sqrt(1/fan_in) so saturating nonlinearities
start in their responsive range. Passing ``rng=None`` to the init helpers
zero-fills instead, which is what checkpoint loading wants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat_channels,
    record_op,
    sigmoid,
    stack_time,
    tanh,
    time_slice,
)

__all__ = [
    "Conv1dParams",
    "DenseParams",
    "LstmCellParams",
    "LstmState",
    "LstmLayerParams",
    "init_conv1d",
    "init_dense",
    "init_lstm_cell",
    "init_lstm_stack",
    "initial_lstm_state",
    "conv1d",
    "dense",
    "linear",
    "global_avg_pool",
    "dropout",
    "lstm_cell_step",
    "lstm_sequence",
]


def _uniform(rng: np.random.Generator | None, shape: tuple[int, ...], fan_in: int) -> Tensor:
    if rng is None:
        return Tensor(np.zeros(shape), requires_grad=True)
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class Conv1dParams:
    """Same-padded 1-D convolution weights: weight (out, in, kernel), bias (out,)."""

    weight: Tensor
    bias: Tensor

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


def init_conv1d(
    in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator | None
) -> Conv1dParams:
    if kernel_size < 1 or out_channels < 1 or in_channels < 1:
        raise ValueError(
            f"invalid conv1d sizes: in={in_channels} out={out_channels} k={kernel_size}"
        )
    fan_in = in_channels * kernel_size
    return Conv1dParams(
        weight=_uniform(rng, (out_channels, in_channels, kernel_size), fan_in),
        bias=_uniform(rng, (out_channels,), fan_in),
    )


def conv1d(params: Conv1dParams, x: Tensor) -> Tensor:
    """Convolve over the time axis with zero same-padding, preserving length."""
    if x.ndim != 3:
        raise ValueError(f"conv1d expects rank-3 input, got shape {x.shape}")
    w, b = params.weight, params.bias
    if x.channels != params.in_channels:
        raise ValueError(
            f"conv1d: input has {x.channels} channels, weight expects {params.in_channels}"
        )
    batch, _, length = x.data.shape
    k = params.kernel_size
    pad_left = (k - 1) // 2
    padded = np.zeros((batch, params.in_channels, length + k - 1))
    padded[:, :, pad_left : pad_left + length] = x.data

    out_data = np.zeros((batch, params.out_channels, length))
    for j in range(k):
        out_data += np.matmul(w.data[:, :, j], padded[:, :, j : j + length])
    out_data += b.data[None, :, None]
    out = Tensor._wrap(out_data, "conv1d")

    def grad_fn(g: np.ndarray):
        gw = np.empty_like(w.data)
        gpad = np.zeros_like(padded)
        for j in range(k):
            window = padded[:, :, j : j + length]
            gw[:, :, j] = np.tensordot(g, window, axes=((0, 2), (0, 2)))
            gpad[:, :, j : j + length] += np.matmul(w.data[:, :, j].T, g)
        gb = g.sum(axis=(0, 2))
        gx = np.ascontiguousarray(gpad[:, :, pad_left : pad_left + length])
        return (gw, gb, gx)

    return record_op((w, b, x), out, grad_fn)


@dataclass
class DenseParams:
    """Affine map weights: weight (out_features, in_features), bias (out_features,)."""

    weight: Tensor
    bias: Tensor

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


def init_dense(in_features: int, out_features: int, rng: np.random.Generator | None) -> DenseParams:
    if in_features < 1 or out_features < 1:
        raise ValueError(f"invalid dense sizes: in={in_features} out={out_features}")
    return DenseParams(
        weight=_uniform(rng, (out_features, in_features), in_features),
        bias=_uniform(rng, (out_features,), in_features),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight.T (+ bias), for x of shape (batch, in_features)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"linear expects rank-2 operands, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear: input has {x.shape[1]} features, weight expects {weight.shape[1]}"
        )
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data[None, :]
    out = Tensor._wrap(y, "linear")
    xd, wd = x.data, weight.data

    if bias is None:
        return record_op((x, weight), out, lambda g: (g @ wd, g.T @ xd))
    return record_op((x, weight, bias), out, lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def dense(params: DenseParams, x: Tensor) -> Tensor:
    """Affine map per batch element: y = W x + b."""
    return linear(x, params.weight, params.bias)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis: (batch, channel, time) -> (batch, channel)."""
    if x.ndim != 3:
        raise ValueError(f"global_avg_pool expects rank-3 input, got shape {x.shape}")
    length = x.time
    out = Tensor._wrap(x.data.mean(axis=2), "global_avg_pool")

    def grad_fn(g: np.ndarray):
        return (np.repeat(g[:, :, None], length, axis=2) / length,)

    return record_op((x,), out, grad_fn)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and scales
    survivors by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop probability must be in [0, 1), got {p}")
    if mode == "eval":
        return x
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.data.shape) >= p).astype(np.float64) / (1.0 - p)
    out = Tensor._wrap(x.data * keep, "dropout")
    return record_op((x,), out, lambda g: (g * keep,))


@dataclass
class LstmCellParams:
    """Recurrent cell weights: per gate one input matrix (hidden, input), one
    recurrent matrix (hidden, hidden), and one bias (hidden,).

    ``g`` is the tanh candidate, ``i``/``f``/``o`` the sigmoid input, forget,
    and output gates.
    """

    w_gx: Tensor
    w_gh: Tensor
    w_ix: Tensor
    w_ih: Tensor
    w_fx: Tensor
    w_fh: Tensor
    w_ox: Tensor
    w_oh: Tensor
    b_g: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_gx.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_gx.shape[1]

    def tensors(self) -> list[Tensor]:
        return [
            self.w_gx, self.w_gh, self.w_ix, self.w_ih,
            self.w_fx, self.w_fh, self.w_ox, self.w_oh,
            self.b_g, self.b_i, self.b_f, self.b_o,
        ]


def init_lstm_cell(
    input_size: int, hidden_size: int, rng: np.random.Generator | None
) -> LstmCellParams:
    if input_size < 1 or hidden_size < 1:
        raise ValueError(f"invalid cell sizes: input={input_size} hidden={hidden_size}")

    def wx() -> Tensor:
        return _uniform(rng, (hidden_size, input_size), input_size)

    def wh() -> Tensor:
        return _uniform(rng, (hidden_size, hidden_size), hidden_size)

    def bias() -> Tensor:
        return _uniform(rng, (hidden_size,), hidden_size)

    return LstmCellParams(
        w_gx=wx(), w_gh=wh(), w_ix=wx(), w_ih=wh(),
        w_fx=wx(), w_fh=wh(), w_ox=wx(), w_oh=wh(),
        b_g=bias(), b_i=bias(), b_f=bias(), b_o=bias(),
    )


@dataclass
class LstmState:
    """Recurrent carry: hidden output h and cell state s, each (batch, hidden)."""

    h: Tensor
    s: Tensor


def initial_lstm_state(batch_size: int, hidden_size: int) -> LstmState:
    zeros = np.zeros((batch_size, hidden_size))
    return LstmState(h=Tensor(zeros), s=Tensor(zeros.copy()))


def lstm_cell_step(params: LstmCellParams, x_k: Tensor, prev: LstmState) -> LstmState:
    """One recurrent step: candidate g and gates i, f, o from the input and the
    previous hidden output, then s = g*i + s_prev*f and h = tanh(s)*o."""
    if x_k.ndim != 2 or x_k.shape[1] != params.input_size:
        raise ValueError(
            f"lstm_cell_step: input shape {x_k.shape} incompatible with "
            f"input_size {params.input_size}"
        )
    if prev.h.shape != (x_k.shape[0], params.hidden_size):
        raise ValueError(
            f"lstm_cell_step: state shape {prev.h.shape} incompatible with "
            f"batch {x_k.shape[0]} and hidden_size {params.hidden_size}"
        )
    g = tanh(add(linear(x_k, params.w_gx, params.b_g), linear(prev.h, params.w_gh)))
    i = sigmoid(add(linear(x_k, params.w_ix, params.b_i), linear(prev.h, params.w_ih)))
    f = sigmoid(add(linear(x_k, params.w_fx, params.b_f), linear(prev.h, params.w_fh)))
    o = sigmoid(add(linear(x_k, params.w_ox, params.b_o), linear(prev.h, params.w_oh)))
    s = add(g * i, prev.s * f)
    h = tanh(s) * o
    return LstmState(h=h, s=s)


@dataclass
class LstmLayerParams:
    """One stack layer: forward-direction cell, plus a reverse-direction cell
    when the stack is bidirectional."""

    fwd: LstmCellParams
    bwd: LstmCellParams | None = None

    @property
    def bidirectional(self) -> bool:
        return self.bwd is not None

    @property
    def out_channels(self) -> int:
        width = self.fwd.hidden_size
        return 2 * width if self.bidirectional else width

    def tensors(self) -> list[Tensor]:
        ts = self.fwd.tensors()
        if self.bwd is not None:
            ts += self.bwd.tensors()
        return ts


def init_lstm_stack(
    in_channels: int,
    hidden_size: int,
    num_layers: int,
    bidirectional: bool,
    rng: np.random.Generator | None,
) -> list[LstmLayerParams]:
    if num_layers < 1:
        raise ValueError(f"need at least one layer, got {num_layers}")
    layers = []
    width = in_channels
    for _ in range(num_layers):
        fwd = init_lstm_cell(width, hidden_size, rng)
        bwd = init_lstm_cell(width, hidden_size, rng) if bidirectional else None
        layers.append(LstmLayerParams(fwd=fwd, bwd=bwd))
        width = hidden_size * (2 if bidirectional else 1)
    return layers


def _run_direction(params: LstmCellParams, x: Tensor, reverse: bool) -> Tensor:
    state = initial_lstm_state(x.batch, params.hidden_size)
    order = range(x.time - 1, -1, -1) if reverse else range(x.time)
    outputs: list[Tensor | None] = [None] * x.time
    for t in order:
        state = lstm_cell_step(params, time_slice(x, t), state)
        outputs[t] = state.h
    return stack_time(outputs)  # type: ignore[arg-type]


def lstm_sequence(layers: Sequence[LstmLayerParams], x: Tensor) -> Tensor:
    """Run a layer stack along time; each layer emits its hidden sequence as a
    rank-3 tensor, bidirectional layers concatenating the reverse-time pass on
    the channel axis."""
    if x.ndim != 3:
        raise ValueError(f"lstm_sequence expects rank-3 input, got shape {x.shape}")
    if x.time < 1:
        raise ValueError("lstm_sequence requires at least one timestep")
    out = x
    for layer in layers:
        fwd_seq = _run_direction(layer.fwd, out, reverse=False)
        if layer.bwd is None:
            out = fwd_seq
        else:
            bwd_seq = _run_direction(layer.bwd, out, reverse=True)
            out = concat_channels([fwd_seq, bwd_seq])
    return out
