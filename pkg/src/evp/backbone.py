"""Frozen feature extractors: plain ViT and hierarchical multi-stage shapes.

A plain backbone is a single stage: patch embedding plus learned positional
table, then a block stack.  The hierarchical shape chains stages; stage 0
embeds image patches and each later stage merges the previous stage's token
grid with non-overlapping stride-s windows before projecting to the new
width.  Prompts are per-block tensors added to token features at block input;
VPT banks are learnable token rows concatenated before each block and
stripped from its output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .modules import LinearLayer, Module, TransformerBlock, unfold_windows
from .tensor import F32, Tensor, add, concat, narrow, reshape, transpose, zeros


@dataclass(frozen=True)
class BackboneConfig:
    kind: str
    image_size: tuple[int, int] = (64, 64)
    patch_sizes: tuple[int, ...] = (8,)
    dims: tuple[int, ...] = (64,)
    depths: tuple[int, ...] = (6,)
    heads: tuple[int, ...] = (4,)
    pos_embed: bool = True
    in_channels: int = 3
    # Window sizes used by the v1 HFC feature cascade; kernel >= stride, with
    # kernel == stride meaning plain non-overlapping patches.
    hfc_kernels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("plain", "hierarchical"):
            raise ConfigError(f"backbone kind {self.kind!r} unknown")
        n = len(self.patch_sizes)
        if self.kind == "plain" and n != 1:
            raise ConfigError("plain backbone must have exactly one stage")
        if not (len(self.dims) == len(self.depths) == len(self.heads) == n):
            raise ConfigError("per-stage field lengths disagree")
        for d, h in zip(self.dims, self.heads):
            if d % h:
                raise ConfigError(f"dim {d} not divisible by {h} heads")
        h, w = self.image_size
        for s, p in enumerate(self.patch_sizes):
            if h % p or w % p:
                raise ConfigError(
                    f"stage {s}: grid {h}x{w} not divisible by stride {p}"
                )
            h, w = h // p, w // p
        if self.hfc_kernels is not None:
            if len(self.hfc_kernels) != n:
                raise ConfigError("hfc_kernels length disagrees with stages")
            for k, p in zip(self.hfc_kernels, self.patch_sizes):
                if k < p:
                    raise ConfigError(f"hfc kernel {k} below stride {p}")

    @property
    def n_stages(self) -> int:
        return len(self.patch_sizes)

    @property
    def total_blocks(self) -> int:
        return sum(self.depths)

    def grids(self) -> list[tuple[int, int]]:
        out = []
        h, w = self.image_size
        for p in self.patch_sizes:
            h, w = h // p, w // p
            out.append((h, w))
        return out

    def hfc_kernel(self, stage: int) -> int:
        if self.hfc_kernels is None:
            return self.patch_sizes[stage]
        return self.hfc_kernels[stage]


def plain_desk(**overrides) -> BackboneConfig:
    """Desk-scale plain ViT: d 64, depth 6, heads 4, patch 8, 64x64 input."""
    base = dict(kind="plain", image_size=(64, 64), patch_sizes=(8,),
                dims=(64,), depths=(6,), heads=(4,), pos_embed=True)
    base.update(overrides)
    return BackboneConfig(**base)


def hier_desk(**overrides) -> BackboneConfig:
    """Desk-scale hierarchical shape: dims (16, 32), blocks (2, 2)."""
    base = dict(kind="hierarchical", image_size=(64, 64), patch_sizes=(8, 2),
                dims=(16, 32), depths=(2, 2), heads=(2, 4), pos_embed=False)
    base.update(overrides)
    return BackboneConfig(**base)


def b4_shape() -> BackboneConfig:
    """Reference hierarchical shape for parameter accounting only.

    Blocks (3, 8, 27, 3) at widths (64, 128, 320, 512); the HFC cascade uses
    the overlapped window sizes (7, 3, 3, 3) of the reference embedding.
    """
    return BackboneConfig(
        kind="hierarchical", image_size=(224, 224), patch_sizes=(4, 2, 2, 2),
        dims=(64, 128, 320, 512), depths=(3, 8, 27, 3), heads=(1, 2, 5, 8),
        pos_embed=False, hfc_kernels=(7, 3, 3, 3),
    )


@dataclass
class TokenGrid:
    """Token matrix (..., N, d) annotated with its spatial grid (H', W')."""

    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.shape[-2] != h * w:
            raise ShapeError(
                f"TokenGrid: {self.tokens.shape[-2]} tokens != grid {self.grid}"
            )

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def to_map(self) -> Tensor:
        """Tokens as a channel-first map (..., d, H', W')."""
        *lead, n, d = self.tokens.shape
        h, w = self.grid
        x = reshape(self.tokens, tuple(lead) + (h, w, d))
        nl = len(lead)
        return transpose(x, tuple(range(nl)) + (nl + 2, nl, nl + 1))


def map_to_tokens(m: Tensor, grid: tuple[int, int]) -> TokenGrid:
    """Inverse of TokenGrid.to_map: (..., d, H', W') -> TokenGrid."""
    *lead, d, h, w = m.shape
    nl = len(lead)
    x = transpose(m, tuple(range(nl)) + (nl + 1, nl + 2, nl))
    return TokenGrid(reshape(x, tuple(lead) + (h * w, d)), grid)


class Stage(Module):
    def __init__(self, rng: np.random.Generator, cfg: BackboneConfig, index: int):
        super().__init__()
        self.index = index
        self.stride = cfg.patch_sizes[index]
        self.dim = cfg.dims[index]
        in_dim = (cfg.in_channels if index == 0 else cfg.dims[index - 1]) * self.stride ** 2
        self.embed = self.child("embed", LinearLayer(rng, in_dim, self.dim))
        h, w = cfg.grids()[index]
        self.grid = (h, w)
        self.pos = None
        if cfg.pos_embed:
            self.pos = self.register(
                "pos", Tensor(0.02 * rng.standard_normal((h * w, self.dim)).astype(F32),
                              requires_grad=True))
        self.blocks = [
            self.child(f"block{j}", TransformerBlock(rng, self.dim, cfg.heads[index]))
            for j in range(cfg.depths[index])
        ]

    def embed_input(self, x: Tensor | TokenGrid) -> TokenGrid:
        if self.index == 0:
            if not isinstance(x, Tensor):
                raise ShapeError("stage 0 consumes the image tensor")
            patches = unfold_windows(x, self.stride, self.stride)
        else:
            if not isinstance(x, TokenGrid):
                raise ShapeError(f"stage {self.index} consumes a TokenGrid")
            patches = unfold_windows(x.to_map(), self.stride, self.stride)
        tokens = self.embed(patches)
        if tokens.shape[-2] != self.grid[0] * self.grid[1]:
            raise ShapeError(
                f"stage {self.index}: got {tokens.shape[-2]} tokens, "
                f"expected grid {self.grid}"
            )
        if self.pos is not None:
            tokens = add(tokens, self.pos)
        return TokenGrid(tokens, self.grid)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.stages = [
            self.child(f"stage{s}", Stage(rng, cfg, s)) for s in range(cfg.n_stages)
        ]

    # -- public surface ----------------------------------------------------

    def patch_embed(self, x: Tensor | TokenGrid, stage: int) -> TokenGrid:
        return self.stages[stage].embed_input(x)

    def block_forward(self, x: TokenGrid, block_index: int,
                      prompt: Tensor | None = None) -> TokenGrid:
        """Run one block (flat index across stages) on a TokenGrid."""
        stage, local = self.locate_block(block_index)
        tokens = x.tokens
        if prompt is not None:
            if prompt.shape[-2:] != tokens.shape[-2:]:
                raise ShapeError(
                    f"prompt {prompt.shape} does not match tokens {tokens.shape}"
                )
            tokens = add(tokens, prompt)
        return TokenGrid(self.stages[stage].blocks[local](tokens), x.grid)

    def locate_block(self, flat_index: int) -> tuple[int, int]:
        i = flat_index
        for s, stage in enumerate(self.stages):
            if i < len(stage.blocks):
                return s, i
            i -= len(stage.blocks)
        raise ConfigError(f"block index {flat_index} out of range")

    def forward(
        self,
        image: Tensor,
        prompts: list[Tensor | None] | None = None,
        prompt_session=None,
        vpt: list[Tensor | None] | None = None,
        collect_blocks: bool = False,
    ):
        """Run all stages; returns per-stage TokenGrids (and per-block token
        tensors when ``collect_blocks``).

        ``prompts`` is a flat per-block list; ``prompt_session`` instead
        supplies prompts stage by stage (each stage's embedding output is
        passed to ``stage_prompts(stage_index, token_grid)``), which is how
        prompt generators see embeddings that depend on earlier prompted
        stages.  ``vpt`` is a flat per-block list of (T, d) token banks.
        """
        total = self.cfg.total_blocks
        if prompts is not None and prompt_session is not None:
            raise ConfigError("pass either prompts or prompt_session, not both")
        if prompts is not None and len(prompts) not in (0, total):
            raise ConfigError(f"prompt list length {len(prompts)} != {total} blocks")
        if vpt is not None and len(vpt) != total:
            raise ConfigError(f"vpt list length {len(vpt)} != {total} blocks")

        feats: list[TokenGrid] = []
        block_outs: list[Tensor] = []
        x: Tensor | TokenGrid = image
        flat = 0
        for s, stage in enumerate(self.stages):
            tg = stage.embed_input(x)
            if prompt_session is not None:
                stage_p = prompt_session.stage_prompts(s, tg)
            elif prompts:
                stage_p = prompts[flat:flat + len(stage.blocks)]
            else:
                stage_p = [None] * len(stage.blocks)
            if len(stage_p) != len(stage.blocks):
                raise ConfigError(
                    f"stage {s}: got {len(stage_p)} prompts for "
                    f"{len(stage.blocks)} blocks"
                )
            tokens = tg.tokens
            for j, block in enumerate(stage.blocks):
                p = stage_p[j]
                if p is not None:
                    if p.shape[-2:] != tokens.shape[-2:]:
                        raise ShapeError(
                            f"prompt {p.shape} does not match tokens {tokens.shape}"
                        )
                    tokens = add(tokens, p)
                bank = vpt[flat] if vpt is not None else None
                if bank is not None:
                    t = bank.shape[0]
                    lead = tokens.shape[:-2]
                    wide = add(bank, zeros(lead + (t, bank.shape[1]),
                                           dtype=tokens.dtype.type))
                    tokens = concat([wide, tokens], axis=-2)
                    tokens = block(tokens)
                    tokens = narrow(tokens, (Ellipsis, slice(t, None), slice(None)))
                else:
                    tokens = block(tokens)
                if collect_blocks:
                    block_outs.append(tokens)
                flat += 1
            tg = TokenGrid(tokens, tg.grid)
            feats.append(tg)
            x = tg
        if collect_blocks:
            return feats, block_outs
        return feats
