"""Multi-scale residual blocks for 1-D feature maps, with and without gates.

A block expands its input to n = s*w channels with a k=1 convolution, splits
the expanded maps into s equal groups x_1..x_s, and chains them: group 1
passes through untouched, group 2 is convolved alone, and every later group
is convolved together with the previous group's output. The ungated block
adds the previous output directly; the gated variant first scales it
elementwise by a tanh-bounded gate computed from the full expanded maps, the
previous output, and the incoming group. All group outputs are concatenated
and compressed back with a k=1 convolution.

Because the gate saturates at 1, overriding every gate to 1.0 must reproduce
the ungated block bit for bit; that reduction is the keystone test of this
module and ``gate_override`` exists as a public hook for it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Conv1dParams, conv1d, init_conv1d
from .tensor import Tensor, add, concat_channels, mul, split_channels, tanh

__all__ = [
    "BlockConfig",
    "GateUnitParams",
    "BlockParams",
    "init_gate_unit",
    "init_block",
    "gate_compute",
    "block_group_outputs",
    "res2net_block_forward",
    "gres2net_block_forward",
    "backbone_forward",
]


@dataclass(frozen=True)
class BlockConfig:
    """Structural description of one block.

    s groups of w channels each; the per-group convolutions use an odd
    ``kernel_size`` while expansion, compression, and all gate projections are
    k=1. ``gate_channels`` is the internal projection width of the gate unit
    and defaults to w.
    """

    in_channels: int
    out_channels: int
    s: int = 4
    w: int = 16
    kernel_size: int = 3
    gate_channels: int | None = None

    def __post_init__(self):
        if self.s < 2:
            raise ValueError(f"group count s must be >= 2, got {self.s}")
        if self.w < 1:
            raise ValueError(f"group width w must be >= 1, got {self.w}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(
                f"invalid channel counts: in={self.in_channels} out={self.out_channels}"
            )
        if self.gate_channels is not None and self.gate_channels < 1:
            raise ValueError(f"gate_channels must be >= 1, got {self.gate_channels}")

    @property
    def expanded_channels(self) -> int:
        return self.s * self.w

    @property
    def gate_width(self) -> int:
        return self.gate_channels if self.gate_channels is not None else self.w


@dataclass
class GateUnitParams:
    """k=1 projections feeding one gate: the full expanded maps, the previous
    group output, and the incoming group each map to ``gate_channels``; their
    concatenation fuses back to w channels before the tanh."""

    proj_full: Conv1dParams
    proj_prev: Conv1dParams
    proj_curr: Conv1dParams
    fuse: Conv1dParams

    def tensors(self) -> list[Tensor]:
        return (
            self.proj_full.tensors()
            + self.proj_prev.tensors()
            + self.proj_curr.tensors()
            + self.fuse.tensors()
        )


def init_gate_unit(config: BlockConfig, rng: np.random.Generator | None) -> GateUnitParams:
    n, w, gc = config.expanded_channels, config.w, config.gate_width
    return GateUnitParams(
        proj_full=init_conv1d(n, gc, 1, rng),
        proj_prev=init_conv1d(w, gc, 1, rng),
        proj_curr=init_conv1d(w, gc, 1, rng),
        fuse=init_conv1d(3 * gc, w, 1, rng),
    )


@dataclass
class BlockParams:
    """All learnable parameters of one block.

    ``group_convs[j]`` convolves group j+2 (groups 2..s get a convolution,
    group 1 never does), and ``gates[j]`` gates the connection into group j+3
    (gates exist only for groups 3..s). Ungated forwards simply leave the
    gate parameters untouched.
    """

    config: BlockConfig
    expand: Conv1dParams
    group_convs: list[Conv1dParams]
    gates: list[GateUnitParams]
    compress: Conv1dParams

    def __post_init__(self):
        s = self.config.s
        if len(self.group_convs) != s - 1:
            raise ValueError(f"expected {s - 1} group convolutions, got {len(self.group_convs)}")
        if len(self.gates) != s - 2:
            raise ValueError(f"expected {s - 2} gate units, got {len(self.gates)}")

    def tensors(self) -> list[Tensor]:
        ts = self.expand.tensors()
        for conv in self.group_convs:
            ts += conv.tensors()
        for gate in self.gates:
            ts += gate.tensors()
        ts += self.compress.tensors()
        return ts


def init_block(config: BlockConfig, rng: np.random.Generator | None) -> BlockParams:
    n = config.expanded_channels
    return BlockParams(
        config=config,
        expand=init_conv1d(config.in_channels, n, 1, rng),
        group_convs=[
            init_conv1d(config.w, config.w, config.kernel_size, rng)
            for _ in range(config.s - 1)
        ],
        gates=[init_gate_unit(config, rng) for _ in range(config.s - 2)],
        compress=init_conv1d(n, config.out_channels, 1, rng),
    )


def gate_compute(params: GateUnitParams, full_maps: Tensor, prev_out: Tensor, curr_in: Tensor) -> Tensor:
    """Gate values in (-1, 1), shaped like one group (batch, w, time).

    The three operands are projected separately, concatenated on the channel
    axis, fused down to group width, and squashed with tanh.
    """
    projected = concat_channels(
        [
            conv1d(params.proj_full, full_maps),
            conv1d(params.proj_prev, prev_out),
            conv1d(params.proj_curr, curr_in),
        ]
    )
    return tanh(conv1d(params.fuse, projected))


def block_group_outputs(
    params: BlockParams,
    expanded: Tensor,
    gated: bool = True,
    gate_override: float | None = None,
) -> list[Tensor]:
    """Group outputs y_1..y_s computed from already-expanded feature maps.

    Public as a test hook: it exposes the hierarchy before compression.
    ``gate_override`` replaces every gate with a constant tensor (and skips
    the gate computation), which pins the information flow open (1.0), shut
    (0.0), or anywhere between.
    """
    s = params.config.s
    groups = split_channels(expanded, s)
    outputs = [groups[0]]
    prev = conv1d(params.group_convs[0], groups[1])
    outputs.append(prev)
    for i in range(3, s + 1):
        curr = groups[i - 1]
        if gated:
            if gate_override is not None:
                gate = Tensor(np.full(prev.data.shape, float(gate_override)))
            else:
                gate = gate_compute(params.gates[i - 3], expanded, prev, curr)
            carried = mul(gate, prev)
        else:
            carried = prev
        prev = conv1d(params.group_convs[i - 2], add(curr, carried))
        outputs.append(prev)
    return outputs


def _block_forward(
    params: BlockParams, x: Tensor, gated: bool, gate_override: float | None
) -> Tensor:
    if x.ndim != 3:
        raise ValueError(f"block forward expects rank-3 input, got shape {x.shape}")
    if x.channels != params.config.in_channels:
        raise ValueError(
            f"block forward: input has {x.channels} channels, "
            f"block expects {params.config.in_channels}"
        )
    expanded = conv1d(params.expand, x)
    outputs = block_group_outputs(params, expanded, gated=gated, gate_override=gate_override)
    return conv1d(params.compress, concat_channels(outputs))


def res2net_block_forward(params: BlockParams, x: Tensor) -> Tensor:
    """Ungated block: later groups receive the previous output unscaled."""
    return _block_forward(params, x, gated=False, gate_override=None)


def gres2net_block_forward(
    params: BlockParams, x: Tensor, gate_override: float | None = None
) -> Tensor:
    """Gated block: the connection into each group past the second is scaled
    elementwise by its gate."""
    return _block_forward(params, x, gated=True, gate_override=gate_override)


def backbone_forward(
    blocks: Sequence[BlockParams],
    gated: Sequence[bool],
    x: Tensor,
    gate_override: float | None = None,
) -> Tensor:
    """Apply blocks sequentially; per-block gating flags let gated and ungated
    stacks share one topology. Zero blocks is the identity."""
    if len(blocks) != len(gated):
        raise ValueError(f"{len(blocks)} blocks but {len(gated)} gating flags")
    out = x
    for params, use_gates in zip(blocks, gated):
        out = _block_forward(params, out, gated=use_gates, gate_override=gate_override)
    return out
