"""Model assembly: frozen backbone + decoder + optional prompt state or VPT.

Parameter names are dotted paths under four prefixes: "backbone.",
"decoder.", "prompt." and "vpt.".  Those prefixes are the unit of freezing,
checkpointing and accounting throughout the package.
"""

from __future__ import annotations

import numpy as np

from .backbone import Backbone, BackboneConfig
from .decoder import Decoder, DecoderConfig
from .errors import ConfigError
from .modules import Module
from .prompting import PromptConfig, make_prompt_generator
from .serialization import state_checksum
from .tensor import F32, Tensor, no_grad, sigmoid

STRATEGIES = ("full", "decoder", "vpt", "evp1", "evp2")


class VptBanks(Module):
    """Per-block learnable token banks for the concatenation baseline."""

    def __init__(self, rng: np.random.Generator, bcfg: BackboneConfig, tokens: int):
        super().__init__()
        if tokens < 1:
            raise ConfigError(f"vpt token count {tokens} < 1")
        self.banks: list[Tensor] = []
        for s in range(bcfg.n_stages):
            for j in range(bcfg.depths[s]):
                bank = Tensor(
                    0.02 * rng.standard_normal((tokens, bcfg.dims[s])).astype(F32),
                    requires_grad=True,
                )
                self.banks.append(self.register(f"block{len(self.banks)}.tokens", bank))


class SegmentationModel(Module):
    def __init__(self, backbone: Backbone, decoder: Decoder,
                 prompt=None, vpt: VptBanks | None = None):
        super().__init__()
        self.backbone = self.child("backbone", backbone)
        self.decoder = self.child("decoder", decoder)
        self.prompt = self.child("prompt", prompt) if prompt is not None else None
        self.vpt = self.child("vpt", vpt) if vpt is not None else None

    def forward(self, images: Tensor) -> Tensor:
        """Images (..., 3, H, W) -> foreground logits (..., 1, H, W)."""
        session = self.prompt.start(images) if self.prompt is not None else None
        banks = self.vpt.banks if self.vpt is not None else None
        feats = self.backbone.forward(images, prompt_session=session, vpt=banks)
        return self.decoder(feats)

    def predict(self, images: Tensor) -> np.ndarray:
        """Foreground probabilities without recording a graph."""
        with no_grad():
            return sigmoid(self.forward(images)).data

    def checksum(self, prefix: str = "") -> str:
        state = {n: t.data for n, t in self.named_parameters() if n.startswith(prefix)}
        return state_checksum(state)


def build_model(
    bcfg: BackboneConfig,
    strategy: str,
    seed: int,
    pcfg: PromptConfig | None = None,
    dcfg: DecoderConfig = DecoderConfig(),
    pretrained: dict[str, np.ndarray] | None = None,
    vpt_tokens: int = 50,
) -> SegmentationModel:
    """Deterministic assembly; the Generator is consumed in a fixed order."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    backbone = Backbone(bcfg, rng)
    decoder = Decoder(rng, tuple(bcfg.dims), bcfg.image_size, dcfg)
    prompt = None
    vpt = None
    if strategy in ("evp1", "evp2"):
        want = "v1" if strategy == "evp1" else "v2"
        if pcfg is None:
            pcfg = PromptConfig(want, r=4)
        if pcfg.variant != want:
            raise ConfigError(f"strategy {strategy} needs variant {want}, got {pcfg.variant}")
        prompt = make_prompt_generator(rng, bcfg, pcfg)
    elif strategy == "vpt":
        vpt = VptBanks(rng, bcfg, vpt_tokens)
    model = SegmentationModel(backbone, decoder, prompt, vpt)
    if pretrained is not None:
        backbone_state = {k: v for k, v in pretrained.items() if k.startswith("backbone.")}
        if not backbone_state:
            raise ConfigError("pretrained state holds no backbone.* records")
        model.backbone.load_state(backbone_state, "backbone.")
    return model
