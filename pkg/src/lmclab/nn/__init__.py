from .spec import ModelSpec, SpecError, param_layout, bn_layout
from .layers import NonFiniteLossError, softmax, softmax_cross_entropy
from .network import Network, BN_MOMENTUM
from .checkpoint import (
    Checkpoint,
    CheckpointMeta,
    CheckpointFormatError,
    save_checkpoint,
    load_checkpoint,
)
from .ops import Batch, init_model, forward, loss_and_grad, sgd_step, recompute_bn_stats

__all__ = [
    "ModelSpec",
    "SpecError",
    "param_layout",
    "bn_layout",
    "NonFiniteLossError",
    "softmax",
    "softmax_cross_entropy",
    "Network",
    "BN_MOMENTUM",
    "Checkpoint",
    "CheckpointMeta",
    "CheckpointFormatError",
    "save_checkpoint",
    "load_checkpoint",
    "Batch",
    "init_model",
    "forward",
    "loss_and_grad",
    "sgd_step",
    "recompute_bn_stats",
]
