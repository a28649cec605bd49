"""Underwater image enhancement with selective state-space scan blocks,
built on a small numpy tensor engine with reverse-mode autodiff."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, NonFiniteError, backward, record, no_grad
from .network import MambaUIE, ModelConfig, count_flops
from .training import TrainConfig, train_loop, lr_at, l1_loss, adam_step
from .metrics import psnr, ssim

__all__ = [
    "Tensor", "Tape", "NonFiniteError", "backward", "record", "no_grad",
    "MambaUIE", "ModelConfig", "count_flops",
    "TrainConfig", "train_loop", "lr_at", "l1_loss", "adam_step",
    "psnr", "ssim",
    "__version__",
]
