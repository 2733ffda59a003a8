"""Latent-level enhancement of CTC ASR latents via conditional flow matching."""

from .tensor import (
    NonFiniteError,
    Tensor,
    concat,
    conv1d,
    finite_diff_grad,
    gather_rows,
    group_norm,
    layer_norm,
    log_softmax,
    log_sum_exp,
    no_grad,
    relu,
    scaled_dot_attention,
    silu,
    softmax,
    tensor,
)
from .optim import Adam

__version__ = "0.1.0"
