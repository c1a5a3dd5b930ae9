"""Procedural segmentation tasks rendered to disk.

Four task families at desk scale: ``texture`` puts a high-frequency
textured blob on a smooth background, ``blur`` defocuses a region of a
globally textured scene, ``shade`` darkens a region of a smooth scene
multiplicatively, and ``camo`` phase-shifts the background texture
inside the foreground so the two share one texture family.  Every
generator is a pure function of its seed: running it twice produces
byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, FormatError, ShapeError
from .frequency import extract_hfc
from .serialization import read_evpt, write_evpt
from .tensor import F32, Tensor, no_grad

TASKS = ("texture", "blur", "shade", "camo")
SPLITS = ("train", "val", "test")

COVERAGE_LO = 0.10
COVERAGE_HI = 0.40

# amplitude of the additive texture waves; backgrounds sit around 0.5 so
# the composite stays inside [0, 1] without relying on the final clip
_WAVE_AMP = 0.22
_BG_AMP = 0.18


@dataclass
class SegmentationSample:
    """One image/mask pair plus its split assignment."""

    image: Tensor
    mask: Tensor
    split: str

    def __post_init__(self) -> None:
        img, msk = self.image.data, self.mask.data
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeError(f"image must be 3xHxW, got {img.shape}")
        if msk.shape != img.shape[1:]:
            raise ShapeError(f"mask {msk.shape} does not match image {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ConfigError("image values must lie in [0, 1]")
        if not np.all((msk == 0.0) | (msk == 1.0)):
            raise ConfigError("mask must be strictly binary")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}")

    @property
    def pair(self) -> tuple[np.ndarray, np.ndarray]:
        return self.image.data, self.mask.data


@dataclass
class SampleRecord:
    image: str
    mask: str
    split: str


@dataclass
class DatasetManifest:
    """Index of a synthesized dataset; paths are relative to ``root``."""

    task: str
    seed: int
    size: int
    samples: list[SampleRecord]
    root: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        for rec in self.samples:
            if rec.split not in SPLITS:
                raise ConfigError(f"unknown split {rec.split!r}")

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        payload = {
            "task": self.task,
            "seed": self.seed,
            "size": self.size,
            "samples": [
                {"image": r.image, "mask": r.mask, "split": r.split}
                for r in self.samples
            ],
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        records = [
            SampleRecord(image=r["image"], mask=r["mask"], split=r["split"])
            for r in payload["samples"]
        ]
        manifest = DatasetManifest(
            task=payload["task"],
            seed=int(payload["seed"]),
            size=int(payload["size"]),
            samples=records,
            root=path.parent,
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest {path} is missing field {exc}") from exc
    return manifest


def load_samples(manifest: DatasetManifest, split: str | None = None) -> list[SegmentationSample]:
    """Materialize samples for one split (or all splits when None)."""
    if split is not None and split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    out = []
    for rec in manifest.samples:
        if split is not None and rec.split != split:
            continue
        image = Tensor(read_evpt(manifest.root / rec.image))
        mask = Tensor(read_evpt(manifest.root / rec.mask))
        out.append(SegmentationSample(image=image, mask=mask, split=rec.split))
    return out


def sample_pairs(samples: list[SegmentationSample]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [s.pair for s in samples]


# ---------------------------------------------------------------------------
# mask and field generators


def _blob_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random smooth closed shape as a binary float32 mask.

    A radial harmonic curve r(theta) around a random center.  Rejection
    keeps coverage inside [COVERAGE_LO, COVERAGE_HI] and preserves a one
    pixel clear border so masks never touch the image edge.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(500):
        cy = rng.uniform(0.36, 0.64) * size
        cx = rng.uniform(0.36, 0.64) * size
        r0 = rng.uniform(0.20, 0.30) * size
        amps = rng.uniform(0.0, 0.16, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        theta = np.arctan2(yy - cy, xx - cx)
        wobble = np.ones_like(theta)
        for k in range(3):
            wobble += amps[k] * np.cos((k + 2) * theta + phases[k])
        mask = np.hypot(yy - cy, xx - cx) <= r0 * wobble
        cov = mask.mean()
        if not (COVERAGE_LO <= cov <= COVERAGE_HI):
            continue
        if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
            continue
        return mask.astype(np.float32)
    raise ConfigError(f"could not draw a blob with coverage in "
                      f"[{COVERAGE_LO}, {COVERAGE_HI}] at size {size}")


def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency background, values around 0.5 with +-_BG_AMP swing."""
    v = np.arange(size, dtype=np.float64) / size
    yy, xx = np.meshgrid(v, v, indexing="ij")
    total = np.zeros((size, size))
    for _ in range(3):
        fy = rng.uniform(0.5, 3.0) * rng.choice((-1.0, 1.0))
        fx = rng.uniform(0.5, 3.0) * rng.choice((-1.0, 1.0))
        ph = rng.uniform(0.0, 2.0 * np.pi)
        total += rng.uniform(0.5, 1.0) * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + ph)
    total -= total.mean()
    total /= max(np.abs(total).max(), 1e-6)
    return 0.5 + _BG_AMP * total


def _wave_args(rng: np.random.Generator, size: int) -> np.ndarray:
    """Phase argument of an oriented wave in the upper diagonal band.

    The high-pass mask keeps a frequency at offsets (fy, fx) from DC only
    when |4*fy*fx| > tau*size^2, so a wave survives iff
    (f/size)^2 * |sin(2*angle)| > tau/2.  With f/size in [0.40, 0.46]
    and angle kept 30..60 degrees off either axis pair, that product
    lies in [0.139, 0.212]: above tau/2 for tau = 0.25 (wave fully
    inside the HFC) and below it for tau >= 0.5 (wave fully masked).
    """
    v = np.arange(size, dtype=np.float64) / size
    yy, xx = np.meshgrid(v, v, indexing="ij")
    freq = rng.uniform(0.40, 0.46) * size
    angle = rng.uniform(np.pi / 6.0, np.pi / 3.0) + rng.choice((0.0, np.pi / 2.0))
    ph = rng.uniform(0.0, 2.0 * np.pi)
    return 2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + ph


def _to_rgb(rng: np.random.Generator, gray: np.ndarray) -> np.ndarray:
    gains = rng.uniform(0.88, 1.0, size=3)
    chans = [np.clip(gray * g, 0.0, 1.0) for g in gains]
    return np.stack(chans).astype(F32)


def _render(rng: np.random.Generator, task: str, size: int) -> tuple[np.ndarray, np.ndarray]:
    mask = _blob_mask(rng, size)
    bg = _smooth_field(rng, size)
    m = mask.astype(np.float64)
    if task == "texture":
        gray = bg + _WAVE_AMP * np.sin(_wave_args(rng, size)) * m
    elif task == "blur":
        base = bg + _WAVE_AMP * np.sin(_wave_args(rng, size))
        soft = gaussian_filter(base, sigma=2.0, mode="nearest")
        gray = base * (1.0 - m) + soft * m
    elif task == "shade":
        # smooth scene only: keeping this family free of the wave band
        # leaves its spectrum low-frequency, which matters when shade
        # data is used as the denoising pretext
        factor = rng.uniform(0.40, 0.60)
        gray = bg * (1.0 - m) + bg * factor * m
    elif task == "camo":
        # same frequency and orientation on both sides of the boundary,
        # only the phase jumps inside the mask
        shift = rng.uniform(0.6, 1.4) * np.pi
        gray = bg + _WAVE_AMP * np.sin(_wave_args(rng, size) + shift * m)
    else:
        raise ConfigError(f"unknown task {task!r}")
    return _to_rgb(rng, gray), mask


# ---------------------------------------------------------------------------
# dataset synthesis


def _default_splits(n: int) -> tuple[int, int, int]:
    held = max(1, n // 10)
    return n - 2 * held, held, held


def synth_dataset(
    task: str,
    n: int,
    size: int,
    seed: int,
    out_dir: Path | str,
    splits: tuple[int, int, int] | None = None,
    stride: int = 8,
) -> DatasetManifest:
    """Render ``n`` samples of one task family under ``out_dir``.

    ``splits`` gives explicit (train, val, test) counts and must sum to
    ``n``; the default holds out roughly 10% for each of val and test.
    ``stride`` is the patch stride of the backbone the data is meant
    for; ``size`` must be divisible by it.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    if n < 4:
        raise ConfigError(f"need n >= 4, got {n}")
    if size < 32:
        raise ConfigError(f"need size >= 32, got {size}")
    if stride < 1 or size % stride != 0:
        raise ConfigError(f"size {size} not divisible by stride {stride}")
    if splits is None:
        splits = _default_splits(n)
    if len(splits) != 3 or any(c < 0 for c in splits) or sum(splits) != n:
        raise ConfigError(f"splits {splits} must be three counts summing to {n}")

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    assignment = [name for name, count in zip(SPLITS, splits) for _ in range(count)]
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        image, mask = _render(rng, task, size)
        img_rel = f"images/{i:04d}.evpt"
        msk_rel = f"masks/{i:04d}.evpt"
        write_evpt(out_dir / img_rel, image)
        write_evpt(out_dir / msk_rel, mask)
        records.append(SampleRecord(image=img_rel, mask=msk_rel, split=assignment[i]))

    manifest = DatasetManifest(task=task, seed=seed, size=size, samples=records, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest


def hfc_energy_ratio(image: np.ndarray, mask: np.ndarray, tau: float = 0.25) -> float:
    """Mean squared HFC amplitude inside the mask over outside.

    Generator self-check for the texture task: the textured blob should
    carry clearly more high-frequency energy than the smooth background.
    """
    with no_grad():
        dec = extract_hfc(Tensor(np.asarray(image, dtype=np.float64)), tau)
    energy = (dec.hfc.data ** 2).mean(axis=0)
    inside = mask == 1.0
    if not inside.any() or inside.all():
        raise ConfigError("mask must contain both classes")
    return float(energy[inside].mean() / energy[~inside].mean())
