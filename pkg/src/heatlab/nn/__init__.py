"""Float64 reverse-mode autodiff, layers, Adam and checkpoints."""

from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .layers import Dense, Encoder, EncoderConfig, LayerNorm, ParamStore, Stack
from .optim import Adam, TrainingError
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    exp,
    gather,
    layer_norm,
    leaky_relu,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    softmax,
    tensor,
)
