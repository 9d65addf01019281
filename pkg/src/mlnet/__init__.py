"""Multi-level saliency network with a learned prior, built on a small numpy autodiff core."""
from .network import Model, ModelConfig, build_model, forward
from .prior import upsample_prior
from .tensor import RngState, Tensor, backward
from .training import LossConfig, OptimizerState, compute_loss, train

__all__ = [
    "Model", "ModelConfig", "build_model", "forward", "upsample_prior",
    "RngState", "Tensor", "backward", "LossConfig", "OptimizerState", "compute_loss", "train",
]
