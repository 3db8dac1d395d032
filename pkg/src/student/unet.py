"""
U-Net backbone over a pair of pseudoimages.

The encoder runs on each frame separately with shared weights. The decoder starts from
the concatenated bottom features of both frames and, at every level on the way up,
concatenates the upsampled features with the skip features of both frames.
"""

from typing import List, Sequence

import numpy as np

from src.nn import autodiff as ad
from src.nn.autodiff import Tensor
from src.nn.layers import Conv2d, ConvTranspose2d, Module


class EncoderLevel(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, downsample: bool):
        super().__init__()
        self.downsample = downsample
        if downsample:
            self.down = self.add_module("down", Conv2d(in_channels, out_channels, rng, stride=2))
            in_channels = out_channels
        self.conv = self.add_module("conv", Conv2d(in_channels, out_channels, rng))

    def __call__(self, x: Tensor) -> Tensor:
        if self.downsample:
            x = ad.relu(self.down(x))
        return ad.relu(self.conv(x))


class DecoderLevel(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.up = self.add_module("up", ConvTranspose2d(in_channels, out_channels, rng))
        self.conv = self.add_module("conv", Conv2d(3 * out_channels, out_channels, rng))

    def __call__(self, x: Tensor, skip_t: Tensor, skip_t1: Tensor) -> Tensor:
        merged = ad.concat([ad.relu(self.up(x)), skip_t, skip_t1], axis=0)
        return ad.relu(self.conv(merged))


class UNet(Module):
    """
    Channel widths ``widths[l]`` per level, full resolution at level 0.

    Output: ``(widths[0], H, W)`` features for the source frame's grid.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.widths = tuple(widths)
        self.encoder: List[EncoderLevel] = []
        for level, width in enumerate(self.widths):
            in_channels = self.widths[max(level - 1, 0)]
            block = EncoderLevel(in_channels, width, rng, downsample=level > 0)
            self.encoder.append(self.add_module(f"encoder.{level}", block))
        self.fuse = self.add_module("fuse", Conv2d(2 * self.widths[-1], self.widths[-1], rng))
        self.decoder: List[DecoderLevel] = []
        for level in range(len(self.widths) - 1, 0, -1):
            block = DecoderLevel(self.widths[level], self.widths[level - 1], rng)
            self.decoder.append(self.add_module(f"decoder.{level}", block))

    def encode(self, image: Tensor) -> List[Tensor]:
        skips = []
        x = image
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        return skips

    def __call__(self, image_t: Tensor, image_t1: Tensor) -> Tensor:
        skips_t = self.encode(image_t)
        skips_t1 = self.encode(image_t1)
        x = ad.relu(self.fuse(ad.concat([skips_t[-1], skips_t1[-1]], axis=0)))
        for offset, block in enumerate(self.decoder):
            level = len(self.widths) - 2 - offset
            x = block(x, skips_t[level], skips_t1[level])
        return x
