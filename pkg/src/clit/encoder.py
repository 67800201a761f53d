"""EDSR-baseline feature extractor without the upsampling tail."""

from __future__ import annotations

import numpy as np

from .config import EncoderConfig
from .numerics import Conv2d, Module, Tensor, as_tensor, ops


class ResBlock(Module):
    def __init__(self, channels: int, rng: np.random.Generator, kernel_size: int = 3,
                 res_scale: float = 1.0, padding: str = "zeros"):
        self.conv1 = Conv2d(channels, channels, rng, kernel_size, padding)
        self.conv2 = Conv2d(channels, channels, rng, kernel_size, padding)
        self.res_scale = res_scale

    def __call__(self, x: Tensor) -> Tensor:
        r = self.conv2(ops.relu(self.conv1(x)))
        if self.res_scale != 1.0:
            r = r * self.res_scale
        return r + x


class Encoder(Module):
    """head conv -> residual blocks -> tail conv, plus a skip from the head."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        c, k, pad = config.channels, config.kernel_size, config.padding
        self.head = Conv2d(3, c, rng, k, pad)
        self.blocks = [ResBlock(c, rng, k, config.res_scale, pad) for _ in range(config.n_resblocks)]
        self.tail = Conv2d(c, c, rng, k, pad)

    @property
    def out_channels(self) -> int:
        return self.config.channels

    def __call__(self, image) -> Tensor:
        image = as_tensor(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"encoder expects an (H, W, 3) image, got shape {image.shape}")
        mean = np.asarray(self.config.rgb_mean, dtype=self.head.weight.dtype)
        x = Tensor(image.data.astype(mean.dtype, copy=False) - mean)
        head = self.head(x)
        h = head
        for block in self.blocks:
            h = block(h)
        return self.tail(h) + head
