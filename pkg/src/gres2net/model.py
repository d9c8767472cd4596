"""Task models: a feature backbone (gated or ungated block stack, or a
recurrent stack), global average pooling over time, dropout, and a linear
readout producing class scores or horizon values.

A model is rebuildable from its spec dict plus its named parameter arrays
alone, which is what the checkpoint format stores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import nn, res2net
from .tensor import Tensor

__all__ = ["ModelSpec", "Model", "default_block_plan", "MODEL_KINDS", "TASKS"]

MODEL_KINDS = ("gres2net", "res2net", "lstm")
TASKS = ("classification", "forecasting")


def default_block_plan(
    in_channels: int,
    num_blocks: int = 2,
    s: int = 4,
    w: int = 16,
    channels: int = 64,
    kernel_size: int = 3,
    gate_channels: int | None = None,
) -> tuple[res2net.BlockConfig, ...]:
    """Chain ``num_blocks`` block configs: data channels in, ``channels`` wide after."""
    configs = []
    width = in_channels
    for _ in range(num_blocks):
        configs.append(
            res2net.BlockConfig(
                in_channels=width,
                out_channels=channels,
                s=s,
                w=w,
                kernel_size=kernel_size,
                gate_channels=gate_channels,
            )
        )
        width = channels
    return tuple(configs)


@dataclass(frozen=True)
class ModelSpec:
    """Complete structural description of a task model."""

    kind: str
    task: str
    in_channels: int
    out_dim: int
    blocks: tuple[res2net.BlockConfig, ...] = ()
    lstm_hidden: int = 64
    lstm_layers: int = 8
    lstm_bidirectional: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.in_channels < 1 or self.out_dim < 1:
            raise ValueError(
                f"invalid sizes: in_channels={self.in_channels} out_dim={self.out_dim}"
            )
        if self.kind in ("gres2net", "res2net"):
            if not self.blocks:
                raise ValueError("convolutional models need at least one block")
            width = self.in_channels
            for idx, cfg in enumerate(self.blocks):
                if cfg.in_channels != width:
                    raise ValueError(
                        f"block {idx} expects {cfg.in_channels} input channels "
                        f"but receives {width}"
                    )
                width = cfg.out_channels
        elif self.lstm_hidden < 1 or self.lstm_layers < 1:
            raise ValueError(
                f"invalid recurrent sizes: hidden={self.lstm_hidden} layers={self.lstm_layers}"
            )

    @property
    def feature_dim(self) -> int:
        if self.kind == "lstm":
            return self.lstm_hidden * (2 if self.lstm_bidirectional else 1)
        return self.blocks[-1].out_channels

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "task": self.task,
            "in_channels": self.in_channels,
            "out_dim": self.out_dim,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "lstm_bidirectional": self.lstm_bidirectional,
            "blocks": [
                {
                    "in_channels": c.in_channels,
                    "out_channels": c.out_channels,
                    "s": c.s,
                    "w": c.w,
                    "kernel_size": c.kernel_size,
                    "gate_channels": c.gate_channels,
                }
                for c in self.blocks
            ],
        }
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            task=d["task"],
            in_channels=int(d["in_channels"]),
            out_dim=int(d["out_dim"]),
            blocks=tuple(res2net.BlockConfig(**b) for b in d.get("blocks", [])),
            lstm_hidden=int(d.get("lstm_hidden", 64)),
            lstm_layers=int(d.get("lstm_layers", 8)),
            lstm_bidirectional=bool(d.get("lstm_bidirectional", True)),
        )


def _named_conv(prefix: str, conv: nn.Conv1dParams) -> list[tuple[str, Tensor]]:
    return [(f"{prefix}.weight", conv.weight), (f"{prefix}.bias", conv.bias)]


def _named_gate(prefix: str, gate: res2net.GateUnitParams) -> list[tuple[str, Tensor]]:
    pairs = []
    for sub, conv in (
        ("proj_full", gate.proj_full),
        ("proj_prev", gate.proj_prev),
        ("proj_curr", gate.proj_curr),
        ("fuse", gate.fuse),
    ):
        pairs += _named_conv(f"{prefix}.{sub}", conv)
    return pairs


def _named_cell(prefix: str, cell: nn.LstmCellParams) -> list[tuple[str, Tensor]]:
    names = ("w_gx", "w_gh", "w_ix", "w_ih", "w_fx", "w_fh", "w_ox", "w_oh",
             "b_g", "b_i", "b_f", "b_o")
    return [(f"{prefix}.{n}", t) for n, t in zip(names, cell.tensors())]


class Model:
    """A runnable task model holding all learnable parameters.

    ``rng=None`` zero-fills parameters (for checkpoint loading); otherwise
    they draw from the bounded uniform initializer.
    """

    def __init__(self, spec: ModelSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        self.block_params: list[res2net.BlockParams] = []
        self.lstm_stack: list[nn.LstmLayerParams] = []
        if spec.kind in ("gres2net", "res2net"):
            self.block_params = [res2net.init_block(cfg, rng) for cfg in spec.blocks]
        else:
            self.lstm_stack = nn.init_lstm_stack(
                spec.in_channels, spec.lstm_hidden, spec.lstm_layers,
                spec.lstm_bidirectional, rng,
            )
        self.head = nn.init_dense(spec.feature_dim, spec.out_dim, rng)

    def named_params(self) -> list[tuple[str, Tensor]]:
        pairs: list[tuple[str, Tensor]] = []
        for bi, block in enumerate(self.block_params):
            prefix = f"block{bi}"
            pairs += _named_conv(f"{prefix}.expand", block.expand)
            for gi, conv in enumerate(block.group_convs):
                pairs += _named_conv(f"{prefix}.k{gi + 2}", conv)
            for gi, gate in enumerate(block.gates):
                pairs += _named_gate(f"{prefix}.gate{gi + 3}", gate)
            pairs += _named_conv(f"{prefix}.compress", block.compress)
        for li, layer in enumerate(self.lstm_stack):
            pairs += _named_cell(f"lstm{li}.fwd", layer.fwd)
            if layer.bwd is not None:
                pairs += _named_cell(f"lstm{li}.bwd", layer.bwd)
        pairs += [("head.weight", self.head.weight), ("head.bias", self.head.bias)]
        return pairs

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def features(self, x: Tensor, gate_override: float | None = None) -> Tensor:
        """Backbone output feature maps (batch, channels, time)."""
        if self.spec.kind == "lstm":
            return nn.lstm_sequence(self.lstm_stack, x)
        gated = self.spec.kind == "gres2net"
        return res2net.backbone_forward(
            self.block_params, [gated] * len(self.block_params), x,
            gate_override=gate_override,
        )

    def forward(
        self,
        x: Tensor,
        train: bool = False,
        rng: np.random.Generator | None = None,
        dropout_p: float = 0.0,
        gate_override: float | None = None,
    ) -> Tensor:
        """Scores (batch, out_dim): backbone, mean pool over time, dropout, readout."""
        pooled = nn.global_avg_pool(self.features(x, gate_override=gate_override))
        if train and dropout_p > 0.0:
            pooled = nn.dropout(pooled, dropout_p, "train", rng)
        return nn.dense(self.head, pooled)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of every parameter array, keyed by canonical name."""
        return {name: t.data.copy() for name, t in self.named_params()}

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameters in place from name-keyed arrays (strict match)."""
        named = dict(self.named_params())
        missing = sorted(set(named) - set(arrays))
        if missing:
            raise ValueError(f"missing parameter arrays: {missing[:4]}")
        for name, tensor in named.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(
                    f"parameter {name!r}: stored shape {arr.shape} "
                    f"does not match model shape {tensor.data.shape}"
                )
            tensor.data = arr.copy()
