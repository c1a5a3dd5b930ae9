"""Segmentation decoder: down-projection, four blocks, linear head, upsample.

Hierarchical inputs are fused by projecting every stage to the inner width,
bilinearly resizing each token grid to the first stage's grid, and summing,
before the shared block stack.  Upsampling is corner-aligned bilinear
implemented as two constant interpolation matmuls, so it is exact on
constants and differentiates through the ordinary matmul adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import TokenGrid, map_to_tokens
from .errors import ConfigError, ShapeError
from .modules import LinearLayer, Module, TransformerBlock, bilinear_resize
from .tensor import Tensor, add, reshape, unpatchify


@dataclass(frozen=True)
class DecoderConfig:
    inner_dim: int = 32
    blocks: int = 4
    heads: int = 4

    def __post_init__(self):
        if self.inner_dim < 1:
            raise ConfigError(f"decoder inner dim {self.inner_dim} < 1")
        if self.inner_dim % self.heads:
            raise ConfigError(
                f"decoder inner dim {self.inner_dim} not divisible by {self.heads} heads"
            )


class Decoder(Module):
    def __init__(self, rng: np.random.Generator, in_dims: tuple[int, ...],
                 image_size: tuple[int, int], cfg: DecoderConfig = DecoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.image_size = image_size
        self.projs = [
            self.child(f"proj{i}", LinearLayer(rng, d, cfg.inner_dim))
            for i, d in enumerate(in_dims)
        ]
        self.blocks = [
            self.child(f"block{j}", TransformerBlock(rng, cfg.inner_dim, cfg.heads))
            for j in range(cfg.blocks)
        ]
        self.head = self.child("head", LinearLayer(rng, cfg.inner_dim, 1))

    def __call__(self, feats: list[TokenGrid]) -> Tensor:
        """Per-stage TokenGrids -> foreground logits (..., 1, H, W)."""
        if len(feats) != len(self.projs):
            raise ShapeError(
                f"decoder built for {len(self.projs)} stages, got {len(feats)}"
            )
        base = feats[0].grid
        acc = None
        for proj, tg in zip(self.projs, feats):
            t = proj(tg.tokens)
            if tg.grid != base:
                m = TokenGrid(t, tg.grid).to_map()
                t = map_to_tokens(bilinear_resize(m, *base), base).tokens
            acc = t if acc is None else add(acc, t)
        for block in self.blocks:
            acc = block(acc)
        logit_map = TokenGrid(self.head(acc), base).to_map()
        return bilinear_resize(logit_map, *self.image_size)


class ReconstructionHead(Module):
    """Throwaway pretraining head: one linear map from tokens to pixel patches."""

    def __init__(self, rng: np.random.Generator, d: int, channels: int,
                 patch: int, grid: tuple[int, int]):
        super().__init__()
        self.channels = channels
        self.patch = patch
        self.grid = grid
        self.proj = self.child("proj", LinearLayer(rng, d, channels * patch * patch))

    def __call__(self, tg: TokenGrid) -> Tensor:
        if tg.grid != self.grid:
            raise ShapeError(f"reconstruction head built for grid {self.grid}, got {tg.grid}")
        return unpatchify(self.proj(tg.tokens), self.grid, self.channels,
                          self.patch, self.patch)
