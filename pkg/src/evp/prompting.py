"""Per-image prompt generators.

Variant v1 tunes two embeddings per stage, a linear map over the frozen
patch-embedding tokens (F_pe) and a linear map over high-frequency-component
patches (F_hfc), then forms one prompt per block as

    P^i = MLP_up(GELU(MLP_tune^i(F_pe + F_hfc)))

with MLP_tune per block and MLP_up shared across the stage's blocks.  For
hierarchical shapes the HFC path is a cascade that mirrors the staged patch
embedding: stage 0 embeds HFC pixel windows, and each later stage re-embeds
the previous stage's HFC feature grid with that stage's window size, so every
stage sees grid-aligned HFC tokens.

Variant v2 drops the shared embeddings; each block owns a down-projection, a
Fourier MLP (learned sigmoid gates on the real/imaginary spectrum of the
token grid), two residual GELU MLPs, and an up-projection.  In reduced mode
(default) the Fourier MLP runs at the bottleneck width c; full mode runs it
at width d before the shared down-projection, which is far heavier.

Up-projections start at zero, so a freshly built generator leaves the frozen
forward pass unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, BackboneConfig, TokenGrid
from .errors import ConfigError, ShapeError
from .frequency import extract_hfc
from .modules import LinearLayer, Module, unfold_windows
from .tensor import ComplexGrid, Tensor, add, fft2, gelu, ifft2, mul, reshape, sigmoid


@dataclass(frozen=True)
class PromptConfig:
    variant: str                       # "v1" | "v2"
    r: int
    tau: float = 0.25
    fourier_mode: str = "reduced"      # "reduced" | "full" (v2 only)
    stages: tuple[bool, ...] | None = None   # default: prompt every stage

    def __post_init__(self):
        if self.variant not in ("v1", "v2"):
            raise ConfigError(f"prompt variant {self.variant!r} unknown")
        if self.r < 1:
            raise ConfigError(f"scale factor r must be positive, got {self.r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau {self.tau} outside [0, 1]")
        if self.fourier_mode not in ("reduced", "full"):
            raise ConfigError(f"fourier_mode {self.fourier_mode!r} unknown")

    def resolve_stages(self, n_stages: int) -> tuple[bool, ...]:
        if self.stages is None:
            return (True,) * n_stages
        if len(self.stages) != n_stages:
            raise ConfigError(
                f"stage flags {self.stages} do not match {n_stages} stages"
            )
        if not any(self.stages):
            raise ConfigError("at least one stage must be prompted")
        return tuple(bool(f) for f in self.stages)


def _bottleneck(d: int, r: int, where: str) -> int:
    if d % r:
        raise ConfigError(f"{where}: dim {d} not divisible by r={r}")
    return d // r


def fourier_mlp(tg: TokenGrid, mask_real: LinearLayer, mask_imag: LinearLayer) -> TokenGrid:
    """Learned spectral gating of token features over their spatial grid.

    Per channel: 2-D FFT over the token grid, sigmoid channel-MLP masks on
    the real and imaginary parts independently, inverse FFT.  The gated
    spectrum is generally not conjugate-symmetric, so the inverse keeps only
    the real part by construction (the imaginary residual carries no output).
    """
    *lead, n, ch = tg.tokens.shape
    h, w = tg.grid
    grid_form = reshape(tg.tokens, tuple(lead) + (h, w, ch))
    spec = fft2(grid_form, axes=(-3, -2))
    gated = ComplexGrid(
        mul(spec.real, sigmoid(mask_real(spec.real))),
        mul(spec.imag, sigmoid(mask_imag(spec.imag))),
    )
    out = ifft2(gated, axes=(-3, -2), imag_tol=None)
    return TokenGrid(reshape(out, tuple(lead) + (n, ch)), tg.grid)


class PromptV1(Module):
    """Embedding-tune + HFC-tune + per-block adaptors."""

    def __init__(self, rng: np.random.Generator, bcfg: BackboneConfig, pcfg: PromptConfig):
        super().__init__()
        if pcfg.variant != "v1":
            raise ConfigError("PromptV1 requires variant v1")
        self.bcfg = bcfg
        self.pcfg = pcfg
        self.flags = pcfg.resolve_stages(bcfg.n_stages)
        self.top_stage = max(s for s, f in enumerate(self.flags) if f)

        self.l_hfc: list[LinearLayer] = []
        self.l_pe: dict[int, LinearLayer] = {}
        self.mlp_tune: dict[int, list[LinearLayer]] = {}
        self.mlp_up: dict[int, LinearLayer] = {}

        prev_c = bcfg.in_channels
        for s in range(self.top_stage + 1):
            d = bcfg.dims[s]
            c = _bottleneck(d, pcfg.r, f"stage {s}")
            k = bcfg.hfc_kernel(s)
            # Cascade input: pixel windows at stage 0, feature windows after.
            self.l_hfc.append(
                self.child(f"stage{s}.l_hfc", LinearLayer(rng, prev_c * k * k, c))
            )
            if self.flags[s]:
                self.l_pe[s] = self.child(f"stage{s}.l_pe", LinearLayer(rng, d, c))
                self.mlp_tune[s] = [
                    self.child(f"stage{s}.block{j}.mlp_tune", LinearLayer(rng, c, c))
                    for j in range(bcfg.depths[s])
                ]
                self.mlp_up[s] = self.child(
                    f"stage{s}.mlp_up", LinearLayer(rng, c, d, zero_init=True)
                )
            prev_c = c

    # -- public surface ----------------------------------------------------

    def embedding_tune(self, tg: TokenGrid, stage: int) -> Tensor:
        """F_pe = L_pe(frozen patch-embedding tokens) at the given stage."""
        if stage not in self.l_pe:
            raise ConfigError(f"stage {stage} is not prompted")
        return self.l_pe[stage](tg.tokens)

    def hfc_tune(self, image: Tensor, stage: int) -> Tensor:
        """F_hfc for a stage, running the cascade from the HFC image."""
        feats = self._cascade(extract_hfc(image, self.pcfg.tau).hfc, stage)
        return feats[stage]

    def adaptor(self, f_pe: Tensor, f_hfc: Tensor, block_index: int) -> Tensor:
        """P^i = MLP_up(GELU(MLP_tune^i(F_pe + F_hfc))) for a flat block index."""
        stage, local = self._locate(block_index)
        if f_pe.shape != f_hfc.shape:
            raise ShapeError(f"adaptor: F_pe {f_pe.shape} != F_hfc {f_hfc.shape}")
        return self.mlp_up[stage](gelu(self.mlp_tune[stage][local](add(f_pe, f_hfc))))

    # -- internals ---------------------------------------------------------

    def _locate(self, flat_index: int) -> tuple[int, int]:
        i = flat_index
        for s, depth in enumerate(self.bcfg.depths):
            if i < depth:
                if not self.flags[s]:
                    raise ConfigError(f"block {flat_index} lies in unprompted stage {s}")
                return s, i
            i -= depth
        raise ConfigError(f"block index {flat_index} out of range")

    def _cascade(self, hfc: Tensor, up_to: int) -> list[Tensor]:
        """HFC feature tokens per stage, 0..up_to inclusive."""
        feats: list[Tensor] = []
        grids = self.bcfg.grids()
        source = hfc
        for s in range(up_to + 1):
            k = self.bcfg.hfc_kernel(s)
            stride = self.bcfg.patch_sizes[s]
            windows = unfold_windows(source, k, stride)
            f = self.l_hfc[s](windows)
            feats.append(f)
            if s < up_to:
                source = TokenGrid(f, grids[s]).to_map()
        return feats

    def start(self, image: Tensor) -> "_V1Session":
        return _V1Session(self, image)


class _V1Session:
    """Per-image state for interleaved prompt building inside a forward pass."""

    def __init__(self, gen: PromptV1, image: Tensor):
        self.gen = gen
        self.hfc = extract_hfc(image, gen.pcfg.tau).hfc
        self._map = None        # previous stage's F_hfc in grid form
        self._stage = 0

    def stage_prompts(self, stage: int, tg: TokenGrid) -> list[Tensor | None]:
        gen = self.gen
        depth = gen.bcfg.depths[stage]
        if stage > gen.top_stage:
            return [None] * depth
        if stage != self._stage:
            raise ConfigError(f"stage {stage} visited out of order")
        self._stage += 1
        k = gen.bcfg.hfc_kernel(stage)
        stride = gen.bcfg.patch_sizes[stage]
        source = self.hfc if stage == 0 else self._map
        f_hfc = gen.l_hfc[stage](unfold_windows(source, k, stride))
        self._map = TokenGrid(f_hfc, gen.bcfg.grids()[stage]).to_map()
        if not gen.flags[stage]:
            return [None] * depth
        base = add(gen.l_pe[stage](tg.tokens), f_hfc)
        up = gen.mlp_up[stage]
        return [up(gelu(gen.mlp_tune[stage][j](base))) for j in range(depth)]


class PromptV2(Module):
    """Per-block frequency-enhanced adaptors."""

    def __init__(self, rng: np.random.Generator, bcfg: BackboneConfig, pcfg: PromptConfig):
        super().__init__()
        if pcfg.variant != "v2":
            raise ConfigError("PromptV2 requires variant v2")
        self.bcfg = bcfg
        self.pcfg = pcfg
        self.flags = pcfg.resolve_stages(bcfg.n_stages)
        self.reduced = pcfg.fourier_mode == "reduced"

        self.blocks: dict[int, list[dict[str, LinearLayer]]] = {}
        for s in range(bcfg.n_stages):
            if not self.flags[s]:
                continue
            d = bcfg.dims[s]
            c = _bottleneck(d, pcfg.r, f"stage {s}")
            m = c if self.reduced else d
            per_stage = []
            for j in range(bcfg.depths[s]):
                p = f"stage{s}.block{j}"
                per_stage.append({
                    "down": self.child(f"{p}.mlp_down", LinearLayer(rng, d, c)),
                    "four_re": self.child(f"{p}.fourier_re", LinearLayer(rng, m, m)),
                    "four_im": self.child(f"{p}.fourier_im", LinearLayer(rng, m, m)),
                    "pe": self.child(f"{p}.mlp_pe", LinearLayer(rng, c, c)),
                    "freq": self.child(f"{p}.mlp_freq", LinearLayer(rng, c, c)),
                    "up": self.child(f"{p}.mlp_up", LinearLayer(rng, c, d, zero_init=True)),
                })
            self.blocks[s] = per_stage

    def adaptor(self, tg: TokenGrid, block_index: int) -> Tensor:
        """P^i for one flat block index from the stage's embedding output."""
        stage, local = self._locate(block_index)
        return self._one(tg, stage, local)

    def _locate(self, flat_index: int) -> tuple[int, int]:
        i = flat_index
        for s, depth in enumerate(self.bcfg.depths):
            if i < depth:
                if s not in self.blocks:
                    raise ConfigError(f"block {flat_index} lies in unprompted stage {s}")
                return s, i
            i -= depth
        raise ConfigError(f"block index {flat_index} out of range")

    def _one(self, tg: TokenGrid, stage: int, local: int) -> Tensor:
        ly = self.blocks[stage][local]
        if self.reduced:
            xi = ly["down"](tg.tokens)
            xf = fourier_mlp(TokenGrid(xi, tg.grid), ly["four_re"], ly["four_im"]).tokens
        else:
            xfreq = fourier_mlp(tg, ly["four_re"], ly["four_im"]).tokens
            xi = ly["down"](tg.tokens)
            xf = ly["down"](xfreq)
        xi = add(gelu(ly["pe"](xi)), xi)
        xf = add(gelu(ly["freq"](xf)), xf)
        return ly["up"](add(xi, xf))

    def start(self, image: Tensor) -> "_V2Session":
        return _V2Session(self)


class _V2Session:
    def __init__(self, gen: PromptV2):
        self.gen = gen

    def stage_prompts(self, stage: int, tg: TokenGrid) -> list[Tensor | None]:
        gen = self.gen
        depth = gen.bcfg.depths[stage]
        if stage not in gen.blocks:
            return [None] * depth
        return [gen._one(tg, stage, j) for j in range(depth)]


def make_prompt_generator(rng: np.random.Generator, bcfg: BackboneConfig,
                          pcfg: PromptConfig) -> PromptV1 | PromptV2:
    if pcfg.variant == "v1":
        return PromptV1(rng, bcfg, pcfg)
    return PromptV2(rng, bcfg, pcfg)


def build_prompts(image: Tensor, backbone: Backbone,
                  generator: PromptV1 | PromptV2) -> list[Tensor | None]:
    """Run the frozen forward once, collecting the flat per-block prompt list."""
    session = generator.start(image)
    collected: list[Tensor | None] = []

    class _Tap:
        def stage_prompts(self, stage, tg):
            ps = session.stage_prompts(stage, tg)
            collected.extend(ps)
            return ps

    backbone.forward(image, prompt_session=_Tap())
    return collected


def prompt_param_count(bcfg: BackboneConfig, pcfg: PromptConfig) -> int:
    """Closed-form tunable-parameter count for a prompt configuration.

    Must agree with a walker over the instantiated generator; the test suite
    asserts the two paths match.
    """
    flags = pcfg.resolve_stages(bcfg.n_stages)
    r = pcfg.r
    total = 0
    if pcfg.variant == "v1":
        top = max(s for s, f in enumerate(flags) if f)
        prev_c = bcfg.in_channels
        for s in range(top + 1):
            d = bcfg.dims[s]
            c = _bottleneck(d, r, f"stage {s}")
            k = bcfg.hfc_kernel(s)
            total += (prev_c * k * k) * c + c                 # l_hfc
            if flags[s]:
                total += d * c + c                            # l_pe
                total += bcfg.depths[s] * (c * c + c)         # per-block tune
                total += c * d + d                            # shared up
            prev_c = c
    else:
        for s, f in enumerate(flags):
            if not f:
                continue
            d = bcfg.dims[s]
            c = _bottleneck(d, r, f"stage {s}")
            m = c if pcfg.fourier_mode == "reduced" else d
            per_block = (d * c + c) + 2 * (m * m + m) + 2 * (c * c + c) + (c * d + d)
            total += bcfg.depths[s] * per_block
    return total
