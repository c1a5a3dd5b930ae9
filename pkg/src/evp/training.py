"""Losses, optimizer, freeze policies and the training loop.

All strategies share one loop: partition parameters by name prefix, mark the
frozen side non-trainable (so gradients never materialize for it), and run
AdamW with cosine decay over a fixed step budget.  Shuffling, horizontal
flips and initialization all draw from Generators seeded by the config, so a
run is bit-reproducible on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .model import SegmentationModel
from .tensor import Tensor, add, clip, log, mean, mul, neg, reciprocal, sigmoid, sub, sum_

LOSS_KINDS = ("bce", "balanced_bce", "iou", "bce_plus_iou", "mse")


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "decoder"
    lr: float = 1e-3
    steps: int = 500
    batch_size: int = 4
    seed: int = 0
    loss: str = "bce_plus_iou"
    vpt_tokens: int = 50
    log_every: int = 100

    def __post_init__(self):
        if self.lr <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise ConfigError("lr, steps and batch size must be positive")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class ParamPartition:
    frozen: frozenset[str]
    tunable: frozenset[str]


# ---------------------------------------------------------------------------
# losses

_CLAMP = 1e-7


def _check_target(logits: Tensor, target: Tensor) -> None:
    if logits.shape != target.shape:
        raise ShapeError(f"loss: logits {logits.shape} != target {target.shape}")
    t = target.data
    if not np.logical_or(t == 0, t == 1).all():
        raise ConfigError("loss: target mask must be binary")


def _bce_terms(logits: Tensor, target: Tensor) -> Tensor:
    p = clip(sigmoid(logits), _CLAMP, 1.0 - _CLAMP)
    pos = mul(target, log(p))
    negp = mul(sub(1.0, target), log(sub(1.0, p)))
    return neg(add(pos, negp))


def bce_loss(logits: Tensor, target: Tensor) -> Tensor:
    _check_target(logits, target)
    return mean(_bce_terms(logits, target))


def balanced_bce_loss(logits: Tensor, target: Tensor) -> Tensor:
    """Per-batch class weighting: positives by N_neg/N, negatives by N_pos/N."""
    _check_target(logits, target)
    t = target.data
    n = t.size
    n_pos = float(t.sum())
    n_neg = n - n_pos
    weights = np.where(t == 1, n_neg / n, n_pos / n).astype(logits.data.dtype)
    return mean(mul(Tensor(weights), _bce_terms(logits, target)))


def iou_loss(logits: Tensor, target: Tensor) -> Tensor:
    """1 - (intersection+1)/(union+1) on probabilities, smoothing constant 1."""
    _check_target(logits, target)
    p = sigmoid(logits)
    inter = sum_(mul(p, target))
    union = sub(add(sum_(p), sum_(target)), inter)
    frac = mul(add(inter, 1.0), reciprocal(add(union, 1.0)))
    return sub(1.0, frac)


def bce_plus_iou_loss(logits: Tensor, target: Tensor) -> Tensor:
    return add(bce_loss(logits, target), iou_loss(logits, target))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} != {target.shape}")
    diff = sub(pred, target)
    return mean(mul(diff, diff))


LOSSES = {
    "bce": bce_loss,
    "balanced_bce": balanced_bce_loss,
    "iou": iou_loss,
    "bce_plus_iou": bce_plus_iou_loss,
    "mse": mse_loss,
}


# ---------------------------------------------------------------------------
# optimizer


def cosine_lr(base: float, t: int, total: int) -> float:
    if not 0 <= t < total:
        raise ConfigError(f"cosine_lr: step {t} outside [0, {total})")
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total))


class AdamW:
    """Decoupled weight decay on rank >= 2 tensors only; bias-corrected moments."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float, total_steps: int,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = params
        self.base_lr = lr
        self.total = total_steps
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}

    def step(self, t: int) -> float:
        lr = cosine_lr(self.base_lr, t, self.total)
        bc1 = 1.0 - self.b1 ** (t + 1)
        bc2 = 1.0 - self.b2 ** (t + 1)
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise NumericError(f"AdamW: non-finite gradient for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if p.data.ndim >= 2:
                update = update + self.wd * p.data
            p.data = p.data - lr * update
            p.grad = None
        return lr


# ---------------------------------------------------------------------------
# partitions and accounting


def partition(strategy: str, model: SegmentationModel) -> ParamPartition:
    names = [n for n, _ in model.named_parameters()]
    if strategy == "full":
        tunable = set(names)
    elif strategy == "decoder":
        tunable = {n for n in names if n.startswith("decoder.")}
    elif strategy == "vpt":
        tunable = {n for n in names if n.startswith(("decoder.", "vpt."))}
    elif strategy in ("evp1", "evp2"):
        tunable = {n for n in names if n.startswith(("decoder.", "prompt."))}
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    return ParamPartition(frozen=frozenset(set(names) - tunable),
                          tunable=frozenset(tunable))


def apply_partition(model: SegmentationModel, part: ParamPartition) -> None:
    for name, t in model.named_parameters():
        t.requires_grad = name in part.tunable
        t.grad = None


def count_params(model: SegmentationModel, part: ParamPartition) -> dict:
    total = 0
    tunable = 0
    for name, t in model.named_parameters():
        total += t.size
        if name in part.tunable:
            tunable += t.size
    return {
        "total": total,
        "tunable": tunable,
        "tunable_fraction": tunable / total if total else 0.0,
    }


# ---------------------------------------------------------------------------
# training loop


def _flip_batch(images: np.ndarray, masks: np.ndarray, decisions: np.ndarray):
    out_i = images.copy()
    out_m = masks.copy()
    for b, flip in enumerate(decisions):
        if flip:
            out_i[b] = out_i[b, :, :, ::-1]
            out_m[b] = out_m[b, :, ::-1]
    return out_i, out_m


def train(
    model: SegmentationModel,
    samples: list[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    val_samples: list[tuple[np.ndarray, np.ndarray]] | None = None,
    augment: bool = True,
) -> list[dict]:
    """Train in place; returns per-epoch history rows.

    ``samples`` holds (image 3xHxW, mask HxW) float32 pairs.  One epoch is a
    full shuffled pass; the step budget cuts the final epoch short.  The
    frozen side of the partition is checksummed before and after and must be
    bit-identical.
    """
    if not samples:
        raise ConfigError("train: empty dataset")
    part = partition(cfg.strategy, model)
    apply_partition(model, part)
    tunable = [(n, t) for n, t in model.named_parameters() if n in part.tunable]
    opt = AdamW(tunable, cfg.lr, cfg.steps)
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)

    frozen_before = _frozen_checksum(model, part)
    history: list[dict] = []
    images = np.stack([s[0] for s in samples])
    masks = np.stack([s[1] for s in samples])

    t = 0
    epoch = 0
    while t < cfg.steps:
        order = rng.permutation(len(samples))
        epoch_losses: list[float] = []
        lr = 0.0
        for start in range(0, len(order), cfg.batch_size):
            if t >= cfg.steps:
                break
            idx = order[start:start + cfg.batch_size]
            bi = images[idx]
            bm = masks[idx]
            if augment:
                bi, bm = _flip_batch(bi, bm, rng.random(len(idx)) < 0.5)
            x = Tensor(bi)
            y = Tensor(bm[:, None, :, :])
            try:
                logits = model.forward(x)
                loss = loss_fn(logits, y)
                loss.backward()
                lr = opt.step(t)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} step {t}: {exc}") from exc
            epoch_losses.append(loss.item())
            t += 1
        if _frozen_checksum(model, part) != frozen_before:
            raise NumericError(f"epoch {epoch}: frozen parameters changed")
        row = {
            "epoch": epoch,
            "loss": float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
            "val_iou": None,
            "lr": lr,
        }
        if val_samples:
            row["val_iou"] = mean_iou(model, val_samples)
        history.append(row)
        epoch += 1
    return history


def _frozen_checksum(model: SegmentationModel, part: ParamPartition) -> str:
    from .serialization import state_checksum
    state = {n: t.data for n, t in model.named_parameters() if n in part.frozen}
    return state_checksum(state)


def mean_iou(model: SegmentationModel, samples: list[tuple[np.ndarray, np.ndarray]],
             batch_size: int = 8, threshold: float = 0.5) -> float:
    """Mean per-sample IoU of thresholded predictions."""
    vals = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        probs = model.predict(Tensor(np.stack([c[0] for c in chunk])))
        for (img, gt), p in zip(chunk, probs):
            pred = p[0] >= threshold
            g = gt >= 0.5
            inter = np.logical_and(pred, g).sum()
            union = np.logical_or(pred, g).sum()
            vals.append(1.0 if union == 0 else float(inter) / float(union))
    return float(np.mean(vals))
