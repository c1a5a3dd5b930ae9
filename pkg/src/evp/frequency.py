"""High/low-frequency decomposition via a fixed spectrum mask.

The mask operates on the centered spectrum: bin (i, j) of an H x W grid is
zeroed (treated as low frequency) iff

    4 * |(i - H/2) * (j - W/2)| <= tau * H * W

and kept otherwise.  The comparison is evaluated in exact rational
arithmetic: coordinates enter as the integers 2i - H and 2j - W, and tau
enters through its exact binary representation, so no bin ever flips due to
rounding.  The boundary is inclusive (ties are masked to zero).

For tau in (0, 1] the masked fraction converges to tau * (1 - ln tau) as the
grid grows; note this differs from tau itself even though tau is described
as a surface ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import ComplexGrid, Tensor, fft2, ifft2, mul, patchify

__all__ = [
    "FrequencyMask",
    "FrequencyDecomposition",
    "make_hfc_mask",
    "extract_hfc",
    "hfc_patches",
    "analytic_zero_fraction",
]


@dataclass(frozen=True)
class FrequencyMask:
    """Binary keep-mask over a centered H x W spectrum (1 = high frequency)."""

    height: int
    width: int
    tau: float
    bits: np.ndarray

    @property
    def zero_fraction(self) -> float:
        return float((self.bits == 0).mean())


@dataclass
class FrequencyDecomposition:
    hfc: Tensor
    lfc: Tensor


def make_hfc_mask(height: int, width: int, tau: float) -> FrequencyMask:
    if height < 2 or width < 2:
        raise ConfigError(f"make_hfc_mask: size {height}x{width} below 2x2")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"make_hfc_mask: tau {tau} outside [0, 1]")

    # Inclusive predicate 4|(i-H/2)(j-W/2)| <= tau*H*W, rewritten over
    # integers as |(2i-H)(2j-W)| * t_den <= t_num * H * W.
    t_num, t_den = float(tau).as_integer_ratio()
    u = np.abs(2 * np.arange(height, dtype=np.int64) - height)
    v = np.abs(2 * np.arange(width, dtype=np.int64) - width)
    prod = u[:, None] * v[None, :]          # <= H*W, no overflow at sane sizes
    rhs = t_num * height * width
    if rhs < 2**62 and t_den * int(prod.max()) < 2**62:
        low = prod * t_den <= rhs
    else:
        # Exact big-int fallback for taus with huge binary numerators.
        low = prod.astype(object) * t_den <= rhs
        low = low.astype(bool)
    bits = (~low).astype(np.uint8)
    bits.setflags(write=False)
    return FrequencyMask(height, width, float(tau), bits)


def analytic_zero_fraction(tau: float) -> float:
    """Large-grid limit of the masked fraction: tau * (1 - ln tau)."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"analytic_zero_fraction: tau {tau} outside [0, 1]")
    if tau == 0.0:
        return 0.0
    return tau * (1.0 - math.log(tau))


def extract_hfc(image: Tensor | np.ndarray, tau: float) -> FrequencyDecomposition:
    """Split an image (..., C, H, W) into complementary HFC and LFC parts.

    Each channel is transformed independently; both components are real
    (the masks are symmetric in the centered spectrum, so conjugate symmetry
    survives the masking and the 1e-5 imaginary-residual guard applies).
    """
    if not isinstance(image, Tensor):
        image = Tensor(image)
    if image.ndim < 3:
        raise ShapeError(f"extract_hfc: expected (..., C, H, W), got {image.shape}")
    h, w = image.shape[-2], image.shape[-1]
    mask = make_hfc_mask(h, w, tau)
    keep = Tensor(mask.bits.astype(image.data.dtype))
    drop = Tensor((1 - mask.bits).astype(image.data.dtype))
    spectrum = fft2(image)
    hfc = ifft2(ComplexGrid(mul(spectrum.real, keep), mul(spectrum.imag, keep)))
    lfc = ifft2(ComplexGrid(mul(spectrum.real, drop), mul(spectrum.imag, drop)))
    return FrequencyDecomposition(hfc=hfc, lfc=lfc)


def hfc_patches(hfc: Tensor | np.ndarray, patch_h: int, patch_w: int) -> Tensor:
    """Flatten an HFC image into backbone-ordered patches.

    Output is (..., N, C*patch_h*patch_w) with N = (H/patch_h)*(W/patch_w),
    using the same row-major patch order and channel-major flattening as the
    backbone's patch embedding.
    """
    if not isinstance(hfc, Tensor):
        hfc = Tensor(hfc)
    return patchify(hfc, patch_h, patch_w)
