from .tensor import Tensor, as_tensor, concat, no_grad, stack, stop_gradient, zero_grads
from .functional import (
    MlpParams,
    attention_pool,
    bce_with_logits,
    gumbel_softmax_sample,
    kl_divergence,
    linear,
    log_softmax,
    mlp_forward,
    softmax,
    straight_through,
)
from .optim import Adam, AdamMoments, sgd_adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "as_tensor", "concat", "no_grad", "stack", "stop_gradient", "zero_grads",
    "MlpParams", "attention_pool", "bce_with_logits", "gumbel_softmax_sample", "kl_divergence",
    "linear", "log_softmax", "mlp_forward", "softmax", "straight_through",
    "Adam", "AdamMoments", "sgd_adam_step",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
]
