"""MemNet: persistent-memory convolutional networks for image restoration.

A self-contained training and evaluation harness: a small reverse-mode
autodiff engine, the memory-block network family, SGD training, image
degradation pipelines (Gaussian noise, bicubic rescaling, JPEG blocking),
PSNR/SSIM metrics, and gate-weight / spectral-density analyses.
"""

__version__ = "0.1.0"

from .network import MemNet, MemNetConfig, count_layers, multi_loss
from .tensor import Tensor, backward, no_grad

__all__ = [
    "MemNet",
    "MemNetConfig",
    "Tensor",
    "backward",
    "count_layers",
    "multi_loss",
    "no_grad",
    "__version__",
]
