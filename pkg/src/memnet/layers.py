"""Network building blocks: parameters, initialization, and residual units.

A layer owns its Parameters and applies the corresponding tensor op.  The
residual unit uses the pre-activation ordering: BN -> ReLU -> conv, twice,
with no activation after the skip addition.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, batchnorm, conv2d, relu


class Parameter:
    """A trainable tensor plus its SGD momentum buffer.

    ``decay`` marks parameters subject to L2 weight decay (convolution
    weights); biases and batch-norm affine terms stay undecayed.
    """

    def __init__(self, data: np.ndarray, name: str = "", decay: bool = False):
        arr = np.ascontiguousarray(data)
        if arr.dtype != np.float64:  # 64-bit kept for gradient-check mode
            arr = arr.astype(np.float32)
        self.tensor = Tensor(arr, requires_grad=True)
        self.momentum = np.zeros_like(self.tensor.data)
        self.name = name
        self.decay = bool(decay)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.shape}, decay={self.decay})"


def msra_init(fan_in: int, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian draw with std sqrt(2 / fan_in)."""
    if fan_in <= 0:
        raise ValueError(f"msra_init needs positive fan_in, got {fan_in}")
    sigma = float(np.sqrt(2.0 / fan_in))
    return (rng.standard_normal(shape) * sigma).astype(np.float32)


class ConvLayer:
    """Stride-1 same-size convolution with an MSRA-initialized kernel.

    Bias starts at zero.  ``fan_in`` can be overridden for gate convs whose
    effective fan-in is the gate input width.
    """

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 name: str = "conv", fan_in: int | None = None):
        if fan_in is None:
            fan_in = cin * k * k
        self.weight = Parameter(msra_init(fan_in, (cout, cin, k, k), rng),
                                name=f"{name}.weight", decay=True)
        self.bias = Parameter(np.zeros((1, cout, 1, 1), dtype=np.float32),
                              name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.tensor, self.bias.tensor)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class BatchNormLayer:
    """Per-channel batch normalization with learnable scale and shift.

    Running statistics live in plain arrays so eval mode works without a
    recorded graph; they update in place on every train-mode call.
    """

    def __init__(self, channels: int, name: str = "bn"):
        self.gamma = Parameter(np.ones((1, channels, 1, 1), dtype=np.float32),
                               name=f"{name}.gamma")
        self.beta = Parameter(np.zeros((1, channels, 1, 1), dtype=np.float32),
                              name=f"{name}.beta")
        self.running_mean = np.zeros((1, channels, 1, 1), dtype=np.float32)
        self.running_var = np.ones((1, channels, 1, 1), dtype=np.float32)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return batchnorm(x, self.gamma.tensor, self.beta.tensor,
                         self.running_mean, self.running_var, mode)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class ResidualBlockParams:
    """Weights of one pre-activation residual unit: two convs, two BN sets."""

    def __init__(self, channels: int, rng: np.random.Generator, name: str = "res"):
        self.bn1 = BatchNormLayer(channels, name=f"{name}.bn1")
        self.conv1 = ConvLayer(channels, channels, 3, rng, name=f"{name}.conv1")
        self.bn2 = BatchNormLayer(channels, name=f"{name}.bn2")
        self.conv2 = ConvLayer(channels, channels, 3, rng, name=f"{name}.conv2")

    def parameters(self) -> list[Parameter]:
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.bn1.parameters() + self.bn2.parameters())


def residual_function(h: Tensor, params: ResidualBlockParams, mode: str) -> Tensor:
    """conv2(relu(bn2(conv1(relu(bn1(h)))))), the non-identity branch."""
    t = params.conv1(relu(params.bn1(h, mode)))
    return params.conv2(relu(params.bn2(t, mode)))


def residual_block(h_prev: Tensor, params: ResidualBlockParams, mode: str) -> Tensor:
    """One recursion step: residual branch plus identity skip."""
    return residual_function(h_prev, params, mode) + h_prev
