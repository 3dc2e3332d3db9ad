"""The memory-network architecture family.

A network is a feature-extraction conv, a chain of memory blocks, and a
reconstruction conv wrapped in a global residual connection.  Each memory
block runs R weight-shared residual recursions (short-term memories) and a
gate: BN + ReLU over the concatenated short- and long-term memories, then
a 1x1 conv back down to F channels.

Variants:
  full           gate sees [H^1..H^R, B_0..B_{m-1}]  (Lm = F*(R+m))
  no_long_term   gate sees [H^1..H^R]                (Lm = F*R)
  no_short_term  gate sees [H^R, B_0..B_{m-1}]       (Lm = F*(1+m))

The multi-supervised variant adds per-block predictions through the shared
reconstruction conv and a learnable ensemble over them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNormLayer,
    ConvLayer,
    Parameter,
    ResidualBlockParams,
    residual_block,
)
from .tensor import ShapeError, Tensor, concat_channels, mse_half, relu, weighted_sum

VARIANTS = ("full", "no_long_term", "no_short_term")


@dataclass
class MemNetConfig:
    """Architecture hyperparameters; ``alpha`` defaults to 1/(m+1)."""

    m: int
    r: int
    f: int = 64
    variant: str = "full"
    multi_supervised: bool = False
    alpha: float = field(default=-1.0)

    def __post_init__(self):
        if self.m < 1 or self.r < 1 or self.f < 1:
            raise ValueError(f"m, r, f must all be >= 1, got m={self.m} r={self.r} f={self.f}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.alpha < 0:
            self.alpha = 1.0 / (self.m + 1)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def gate_input_channels(self, block_index: int) -> int:
        """Gate input width Lm for the 1-based block index."""
        if not 1 <= block_index <= self.m:
            raise ValueError(f"block index {block_index} outside 1..{self.m}")
        if self.variant == "no_long_term":
            return self.f * self.r
        if self.variant == "no_short_term":
            return self.f * (1 + block_index)
        return self.f * (self.r + block_index)


def count_layers(config: MemNetConfig) -> int:
    """Convolutional depth: 2 + M*(2R+1)."""
    return 2 + config.m * (2 * config.r + 1)


class MemoryBlock:
    """One memory block: shared-weight recursions plus the gate."""

    def __init__(self, config: MemNetConfig, block_index: int, rng: np.random.Generator):
        self.config = config
        self.index = block_index
        name = f"block{block_index}"
        self.recursion = ResidualBlockParams(config.f, rng, name=f"{name}.rec")
        lm = config.gate_input_channels(block_index)
        self.gate_bn = BatchNormLayer(lm, name=f"{name}.gate_bn")
        self.gate_conv = ConvLayer(lm, config.f, 1, rng, name=f"{name}.gate")

    def recursive_unit(self, b_prev: Tensor, mode: str) -> list[Tensor]:
        """R residual recursions with one weight set; returns [H^1 .. H^R]."""
        outs = []
        h = b_prev
        for _ in range(self.config.r):
            h = residual_block(h, self.recursion, mode)
            outs.append(h)
        return outs

    def gate_unit(self, short_mems: list[Tensor], long_mems: list[Tensor], mode: str) -> Tensor:
        """BN + ReLU over the concatenated memories, then 1x1 conv to F."""
        gate_in = concat_channels(list(short_mems) + list(long_mems))
        expected = self.config.gate_input_channels(self.index)
        if gate_in.shape[1] != expected:
            raise ShapeError(
                f"block {self.index} gate expects {expected} channels, got {gate_in.shape[1]}")
        return self.gate_conv(relu(self.gate_bn(gate_in, mode)))

    def forward(self, b_prev: Tensor, long_mems: list[Tensor], mode: str) -> Tensor:
        if len(long_mems) != self.index:
            raise ShapeError(
                f"block {self.index} needs {self.index} long-term memories, got {len(long_mems)}")
        short = self.recursive_unit(b_prev, mode)
        if self.config.variant == "no_long_term":
            return self.gate_unit(short, [], mode)
        if self.config.variant == "no_short_term":
            return self.gate_unit(short[-1:], long_mems, mode)
        return self.gate_unit(short, long_mems, mode)

    def parameters(self) -> list[Parameter]:
        return (self.recursion.parameters() + self.gate_conv.parameters()
                + self.gate_bn.parameters())


class MemNet:
    """Feature extraction, M memory blocks, reconstruction, global residual."""

    def __init__(self, config: MemNetConfig, rng: np.random.Generator):
        self.config = config
        self.fenet = ConvLayer(1, config.f, 3, rng, name="fenet")
        self.blocks = [MemoryBlock(config, i + 1, rng) for i in range(config.m)]
        self.reconnet = ConvLayer(config.f, 1, 3, rng, name="reconnet")
        self.ensemble = None
        if config.multi_supervised:
            init = np.full((config.m, 1, 1, 1), 1.0 / config.m, dtype=np.float32)
            self.ensemble = Parameter(init, name="ensemble")

    def _check_input(self, x: Tensor) -> None:
        if x.shape[1] != 1:
            raise ShapeError(f"expected single-channel input, got {x.shape[1]} channels")

    def _run_blocks(self, x: Tensor, mode: str) -> list[Tensor]:
        """FENet then the block chain; returns [B_1 .. B_M]."""
        b = self.fenet(x)
        long_mems = [b]  # B_0, the feature-extraction output
        outs = []
        for block in self.blocks:
            b = block.forward(b, list(long_mems), mode)
            long_mems.append(b)
            outs.append(b)
        return outs

    def forward(self, x: Tensor, mode: str) -> Tensor:
        """Basic network: reconstruct the last block and add the input."""
        self._check_input(x)
        blocks = self._run_blocks(x, mode)
        return self.reconnet(blocks[-1]) + x

    def forward_multi(self, x: Tensor, mode: str) -> tuple[Tensor, list[Tensor]]:
        """Multi-supervised network: per-block predictions and their ensemble.

        Every block output goes through the one shared reconstruction conv;
        each prediction adds the input back.  Returns (final, [y_1 .. y_M]).
        """
        if self.ensemble is None:
            raise ValueError("forward_multi needs a config with multi_supervised=True")
        self._check_input(x)
        blocks = self._run_blocks(x, mode)
        preds = [self.reconnet(b) + x for b in blocks]
        final = weighted_sum(preds, self.ensemble.tensor)
        return final, preds

    def parameters(self) -> list[Parameter]:
        """All trainable parameters in the frozen serialization order."""
        params = self.fenet.parameters()
        for block in self.blocks:
            params += block.parameters()
        params += self.reconnet.parameters()
        if self.ensemble is not None:
            params.append(self.ensemble)
        return params

    def count_conv_weights(self) -> int:
        """Total conv kernel elements (biases and BN terms not included)."""
        total = self.fenet.weight.data.size + self.reconnet.weight.data.size
        for block in self.blocks:
            total += block.recursion.conv1.weight.data.size
            total += block.recursion.conv2.weight.data.size
            total += block.gate_conv.weight.data.size
        return total


def multi_loss(intermediates: list[Tensor], final: Tensor, target: Tensor,
               alpha: float, n: int) -> Tensor:
    """Ensemble loss plus mean per-block loss.

    alpha/(2N) * sum((target - final)^2)
      + (1-alpha)/(2MN) * sum_m sum((target - y_m)^2)
    """
    m = len(intermediates)
    loss = mse_half(final, target, scale_factor=alpha / (2.0 * n))
    per_block = (1.0 - alpha) / (2.0 * m * n)
    for y in intermediates:
        loss = loss + mse_half(y, target, scale_factor=per_block)
    return loss
