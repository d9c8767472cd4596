"""Gated multi-scale 1-D convolutional backbone for multivariate time series,
with everything underneath built from first principles: a tape-based autodiff
core, convolutional and recurrent layers, the gated hierarchical residual
block, the training protocol, and the evaluation metrics.
"""

from .data import DatasetSplit, DataSchema, WindowSpec, make_synthetic
from .metrics import EvalSeries, accuracy, mae, mape, r_squared, rmse
from .model import Model, ModelSpec, default_block_plan
from .nn import (
    Conv1dParams,
    DenseParams,
    LstmCellParams,
    LstmState,
    conv1d,
    dense,
    dropout,
    global_avg_pool,
    lstm_cell_step,
    lstm_sequence,
)
from .res2net import (
    BlockConfig,
    BlockParams,
    GateUnitParams,
    backbone_forward,
    gate_compute,
    gres2net_block_forward,
    res2net_block_forward,
)
from .tensor import (
    GradTape,
    Tensor,
    backward,
    concat_channels,
    elementwise,
    split_channels,
    tensor3,
)
from .train import (
    AdamState,
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    evaluate_repeated,
    lr_at_epoch,
    mse_loss,
    train_model,
)

__version__ = "0.1.0"
