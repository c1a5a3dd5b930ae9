"""Experiment harness: pretraining, evaluation, strategy comparison.

The harness reproduces the fine-tuning comparison skeleton at desk
scale: synthesize a task, pretrain one backbone on a denoising pretext,
then train each strategy from that shared frozen starting point and
evaluate the full metric suite on the held-out split.  Everything is a
pure function of its seeds so reruns are byte-identical.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig
from .dataset import DatasetManifest, load_samples, sample_pairs
from .decoder import ReconstructionHead
from .errors import ConfigError
from .frequency import make_hfc_mask
from .model import SegmentationModel, build_model
from .modules import Module
from .prompting import PromptConfig
from .serialization import state_checksum, write_checkpoint
from .tensor import Tensor, no_grad
from .training import (
    AdamW,
    TrainConfig,
    count_params,
    mean_iou,
    mse_loss,
    partition,
    train,
)
from .metrics import report as metrics_report

DEFAULT_PRETEXT = "shade"
PRETRAIN_NOISE = 0.25


def eval_workers() -> int:
    """Evaluation thread count; EVP_THREADS caps it."""
    raw = os.environ.get("EVP_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"EVP_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"EVP_THREADS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# denoising pretext


class _DenoiseModel(Module):
    """Backbone plus a throwaway reconstruction head under ``decoder.``."""

    def __init__(self, rng: np.random.Generator, bcfg: BackboneConfig):
        super().__init__()
        self.backbone = self.child("backbone", Backbone(bcfg, rng))
        self.decoder = self.child(
            "decoder",
            ReconstructionHead(
                rng, bcfg.dims[0], bcfg.in_channels, bcfg.patch_sizes[0],
                bcfg.grids()[0],
            ),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.decoder(self.backbone.forward(x)[0])


def pretrain(
    bcfg: BackboneConfig,
    samples: list[tuple[np.ndarray, np.ndarray]],
    steps: int,
    seed: int,
    noise_sigma: float = PRETRAIN_NOISE,
    lr: float = 1e-3,
    batch_size: int = 4,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Denoising reconstruction: predict the clean image from a noisy one.

    Trains the whole backbone plus a throwaway head with MSE, then strips
    the head.  Returns the backbone-only state and per-step history rows
    {step, loss, lr}; masks in ``samples`` are ignored.
    """
    if steps < 1:
        raise ConfigError(f"pretrain needs steps >= 1, got {steps}")
    if not samples:
        raise ConfigError("pretrain: empty dataset")
    rng = np.random.default_rng(seed)
    model = _DenoiseModel(rng, bcfg)
    params = list(model.named_parameters())
    opt = AdamW(params, lr, steps)
    images = np.stack([s[0] for s in samples])

    history: list[dict] = []
    t = 0
    while t < steps:
        order = rng.permutation(len(images))
        for start in range(0, len(order), batch_size):
            if t >= steps:
                break
            clean = images[order[start:start + batch_size]]
            noise = rng.standard_normal(clean.shape).astype(clean.dtype)
            x = Tensor(clean + noise_sigma * noise)
            recon = model(x)
            loss = mse_loss(recon, Tensor(clean))
            loss.backward()
            step_lr = opt.step(t)
            history.append({"step": t, "loss": loss.item(), "lr": step_lr})
            t += 1
    state = {n: a for n, a in model.state_dict().items() if n.startswith("backbone.")}
    return state, history


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    model: SegmentationModel,
    samples: list[tuple[np.ndarray, np.ndarray]],
    batch_size: int = 8,
    threshold: float = 0.5,
) -> dict:
    """Full metric suite per sample plus dataset means.

    Batches are scored on a small thread pool (see ``eval_workers``);
    results are collected by index, so the report does not depend on the
    worker count or completion order.
    """
    if not samples:
        raise ConfigError("evaluate: empty dataset")
    starts = list(range(0, len(samples), batch_size))

    def score(start: int) -> list[dict]:
        chunk = samples[start:start + batch_size]
        probs = model.predict(Tensor(np.stack([c[0] for c in chunk])))
        rows = []
        for (_, gt), p in zip(chunk, probs):
            pred = p[0].astype(np.float64)
            g = gt.astype(np.float64)
            row = metrics_report(pred, g).as_dict()
            hard = pred >= threshold
            gb = g >= 0.5
            union = np.logical_or(hard, gb).sum()
            inter = np.logical_and(hard, gb).sum()
            row["iou"] = 1.0 if union == 0 else float(inter) / float(union)
            rows.append(row)
        return rows

    with no_grad():
        workers = min(eval_workers(), len(starts))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(score, starts))
        else:
            chunks = [score(s) for s in starts]
    per_sample = [row for chunk in chunks for row in chunk]
    keys = per_sample[0].keys()
    means = {k: float(np.mean([r[k] for r in per_sample])) for k in keys}
    return {"n": len(per_sample), "means": means, "per_sample": per_sample}


# ---------------------------------------------------------------------------
# strategy comparison


@dataclass
class CompareReport:
    """Comparison of tuning strategies on one task and seed set."""

    task: str
    seeds: list[int]
    steps: int
    pretrained_checksum: str
    rows: list[dict]
    wall_time_s: float = 0.0
    kind: str = "compare"

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "task": self.task,
            "seeds": self.seeds,
            "steps": self.steps,
            "pretrained_checksum": self.pretrained_checksum,
            "rows": self.rows,
            "wall_time_s": self.wall_time_s,
        }

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_report(path: Path | str) -> dict:
    return json.loads(Path(path).read_text())


def _prompt_config(strategy: str, r: int, tau: float, fourier_mode: str) -> PromptConfig | None:
    if strategy == "evp1":
        return PromptConfig("v1", r=r, tau=tau)
    if strategy == "evp2":
        return PromptConfig("v2", r=r, fourier_mode=fourier_mode)
    return None


def _one_run(
    bcfg: BackboneConfig,
    strategy: str,
    seed: int,
    pretrained: dict[str, np.ndarray],
    train_pairs,
    test_pairs,
    steps: int,
    lr: float,
    batch_size: int,
    loss: str,
    pcfg: PromptConfig | None,
    out_path: Path | None,
) -> tuple[dict, SegmentationModel]:
    model = build_model(bcfg, strategy, seed, pcfg=pcfg, pretrained=pretrained)
    cfg = TrainConfig(strategy=strategy, lr=lr, steps=steps,
                      batch_size=batch_size, seed=seed, loss=loss)
    train(model, train_pairs, cfg)
    ev = evaluate(model, test_pairs)
    if out_path is not None:
        write_checkpoint(out_path, model.state_dict())
    entry = {"seed": seed, "metrics": ev["means"]}
    return entry, model


def compare(
    bcfg: BackboneConfig,
    manifest: DatasetManifest,
    strategies: list[str],
    seeds: list[int],
    pretrained: dict[str, np.ndarray],
    steps: int = 1500,
    lr: float = 1e-3,
    batch_size: int = 4,
    loss: str = "bce_plus_iou",
    tau: float = 0.25,
    r: int = 4,
    fourier_mode: str = "reduced",
    out_dir: Path | str | None = None,
) -> CompareReport:
    """Train every strategy from one shared pretrained backbone.

    Each (strategy, seed) run sees the identical train/test split; rows
    report parameter accounting, per-seed metric means and the medians
    across seeds.  A failing strategy marks its row failed without
    aborting the others.  With ``out_dir`` set, every run's checkpoint is
    written there as ``<strategy>_seed<seed>.evpc``.
    """
    if not seeds:
        raise ConfigError("compare needs at least one seed")
    t0 = time.monotonic()
    train_pairs = sample_pairs(load_samples(manifest, "train"))
    test_pairs = sample_pairs(load_samples(manifest, "test"))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for strategy in strategies:
        row_t0 = time.monotonic()
        pcfg = _prompt_config(strategy, r, tau, fourier_mode)
        try:
            per_seed = []
            counts = None
            for seed in seeds:
                out_path = None
                if out_dir is not None:
                    out_path = out_dir / f"{strategy}_seed{seed}.evpc"
                entry, model = _one_run(
                    bcfg, strategy, seed, pretrained, train_pairs, test_pairs,
                    steps, lr, batch_size, loss, pcfg, out_path,
                )
                if counts is None:
                    counts = count_params(model, partition(strategy, model))
                per_seed.append(entry)
            metric_keys = per_seed[0]["metrics"].keys()
            medians = {
                k: float(np.median([e["metrics"][k] for e in per_seed]))
                for k in metric_keys
            }
            rows.append({
                "strategy": strategy,
                "status": "ok",
                "params": counts,
                "per_seed": per_seed,
                "medians": medians,
                "wall_time_s": time.monotonic() - row_t0,
            })
        except Exception as exc:  # isolate the row, keep the run alive
            rows.append({
                "strategy": strategy,
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "wall_time_s": time.monotonic() - row_t0,
            })
    return CompareReport(
        task=manifest.task,
        seeds=list(seeds),
        steps=steps,
        pretrained_checksum=state_checksum(pretrained),
        rows=rows,
        wall_time_s=time.monotonic() - t0,
    )


def tau_sweep(
    bcfg: BackboneConfig,
    manifest: DatasetManifest,
    seeds: list[int],
    pretrained: dict[str, np.ndarray],
    taus: tuple[float, ...] = (0.1, 0.25, 0.5, 0.9),
    steps: int = 600,
    lr: float = 1e-3,
    batch_size: int = 4,
    loss: str = "bce_plus_iou",
    r: int = 4,
) -> dict:
    """IoU of the explicit-prompt variant as the HFC cutoff tau moves.

    One row per tau with the measured mask zero-fraction at the dataset
    resolution, per-seed test IoU and the median across seeds.
    """
    if not seeds:
        raise ConfigError("tau_sweep needs at least one seed")
    t0 = time.monotonic()
    train_pairs = sample_pairs(load_samples(manifest, "train"))
    test_pairs = sample_pairs(load_samples(manifest, "test"))
    size = manifest.size
    rows = []
    for tau in taus:
        pcfg = PromptConfig("v1", r=r, tau=tau)
        ious = {}
        for seed in seeds:
            model = build_model(bcfg, "evp1", seed, pcfg=pcfg, pretrained=pretrained)
            cfg = TrainConfig(strategy="evp1", lr=lr, steps=steps,
                              batch_size=batch_size, seed=seed, loss=loss)
            train(model, train_pairs, cfg)
            ious[str(seed)] = mean_iou(model, test_pairs)
        rows.append({
            "tau": tau,
            "mask_zero_fraction": make_hfc_mask(size, size, tau).zero_fraction,
            "iou": ious,
            "median_iou": float(np.median(list(ious.values()))),
        })
    return {
        "kind": "tau_sweep",
        "task": manifest.task,
        "seeds": list(seeds),
        "steps": steps,
        "pretrained_checksum": state_checksum(pretrained),
        "rows": rows,
        "wall_time_s": time.monotonic() - t0,
    }
