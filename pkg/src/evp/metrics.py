"""Foreground-map evaluation metrics.

All metrics consume a probability map and a binary ground truth of equal
shape and compute in f64.  Thresholded counts treat pred >= threshold as
positive.  Degenerate-denominator conventions are fixed here and mirrored by
the brute-force oracles in the test suite:

- precision/recall are 0 when their denominators vanish, except that a
  threshold at which neither ground truth nor prediction has any positive
  pixel scores F = 1 (exact agreement on all-background);
- a missing class counts its rate as 1 in BER (nothing to misclassify);
- AUC uses the exact staircase over distinct prediction values, which makes
  it invariant under strictly monotone transforms, and reports 1 when only
  one class is present.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, ShapeError

F_BETA_SQ = 0.3          # beta^2 for the max-F sweep
N_THRESHOLDS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    f1: float
    ber: float
    f_beta_max: float
    f_beta_weighted: float
    auc: float
    s_measure: float
    e_measure: float

    def as_dict(self) -> dict:
        return asdict(self)


def _validate(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"metrics: pred {pred.shape} != gt {gt.shape}")
    if not np.logical_or(gt == 0, gt == 1).all():
        raise ConfigError("metrics: ground truth must be binary")
    if pred.min() < 0 or pred.max() > 1:
        raise ConfigError("metrics: predictions must lie in [0, 1]")
    return pred, gt


def confusion(pred: np.ndarray, gt: np.ndarray, threshold: float) -> ConfusionCounts:
    pred, gt = _validate(pred, gt)
    pos = pred >= threshold
    g = gt == 1
    return ConfusionCounts(
        tp=int(np.logical_and(pos, g).sum()),
        tn=int(np.logical_and(~pos, ~g).sum()),
        fp=int(np.logical_and(pos, ~g).sum()),
        fn=int(np.logical_and(~pos, g).sum()),
    )


def _fscore(c: ConfusionCounts, beta_sq: float) -> float:
    if c.tp + c.fp == 0 and c.tp + c.fn == 0:
        return 1.0          # no positives anywhere: exact all-background match
    prec = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    rec = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    denom = beta_sq * prec + rec
    if denom == 0.0:
        return 0.0
    return (1.0 + beta_sq) * prec * rec / denom


def f1_score(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    return _fscore(confusion(pred, gt, threshold), 1.0)


def ber(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    c = confusion(pred, gt, threshold)
    tpr = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    tnr = c.tn / (c.tn + c.fp) if c.tn + c.fp else 1.0
    return 100.0 * (1.0 - 0.5 * (tpr + tnr))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_beta_max(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _validate(pred, gt)
    best = 0.0
    for thr in np.linspace(0.0, 1.0, N_THRESHOLDS):
        best = max(best, _fscore(confusion(pred, gt, float(thr)), F_BETA_SQ))
    return best


def auc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Trapezoidal area under the exact ROC staircase.

    Thresholds at every distinct prediction value (descending) plus the
    (0,0) and (1,1) endpoints; ties advance TP and FP together, which is
    what makes the result invariant under strictly monotone transforms.
    """
    pred, gt = _validate(pred, gt)
    g = gt.ravel() == 1
    p = pred.ravel()
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 1.0
    order = np.argsort(-p, kind="stable")
    sorted_p = p[order]
    sorted_g = g[order]
    area = 0.0
    prev_fpr = 0.0
    prev_tpr = 0.0
    tp = 0
    fp = 0
    i = 0
    n = p.size
    while i < n:
        j = i
        while j < n and sorted_p[j] == sorted_p[i]:
            if sorted_g[j]:
                tp += 1
            else:
                fp += 1
            j += 1
        fpr = fp / n_neg
        tpr = tp / n_pos
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        prev_fpr, prev_tpr = fpr, tpr
        i = j
    area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0
    return float(area)


def scalar_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    return {
        "mae": mae(pred, gt),
        "f1": f1_score(pred, gt),
        "ber": ber(pred, gt),
        "f_beta_max": f_beta_max(pred, gt),
        "auc": auc(pred, gt),
    }


# ---------------------------------------------------------------------------
# weighted F

_W_KSIZE = 7
_W_SIGMA = 5.0


def _gaussian_kernel(size: int = _W_KSIZE, sigma: float = _W_SIGMA) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred: np.ndarray, gt: np.ndarray) -> float:
    """F with beta^2 = 1 on error fields smoothed by a 7x7 Gaussian (sigma 5).

    The kernel is renormalized over its in-bounds support at the borders, so
    a uniformly wrong prediction smooths to a uniformly-one error field and
    scores exactly 0.
    """
    pred, gt = _validate(pred, gt)
    err = np.abs(pred - gt)
    k = _gaussian_kernel()
    num = convolve2d(err, k, mode="same")
    den = convolve2d(np.ones_like(err), k, mode="same")
    smooth = num / den
    fg = gt == 1
    tp_w = float((1.0 - smooth[fg]).sum())
    fn_w = float(smooth[fg].sum())
    fp_w = float(smooth[~fg].sum())
    if not fg.any():
        return 1.0 if fp_w == 0.0 else 0.0
    prec = tp_w / (tp_w + fp_w) if tp_w + fp_w else 0.0
    rec = tp_w / (tp_w + fn_w) if tp_w + fn_w else 0.0
    if prec + rec == 0.0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


# ---------------------------------------------------------------------------
# structure measure

S_ALPHA = 0.5


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sx = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sx)


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = float(p.mean())
    y = float(g.mean())
    if n > 1:
        sx = float(((p - x) ** 2).sum() / (n - 1))
        sy = float(((g - y) ** 2).sum() / (n - 1))
        sxy = float(((p - x) * (g - y)).sum() / (n - 1))
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if beta == 0.0:
        return 1.0
    return min(1.0, max(0.0, alpha / beta))


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    rows, cols = np.nonzero(gt)
    if rows.size == 0:
        return gt.shape[0] // 2, gt.shape[1] // 2
    return int(round(rows.mean())), int(round(cols.mean()))


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    cy, cx = _centroid(gt)
    h, w = gt.shape
    total = gt.size
    s_r = 0.0
    for rows, cols in (
        (slice(0, cy + 1), slice(0, cx + 1)),
        (slice(0, cy + 1), slice(cx + 1, w)),
        (slice(cy + 1, h), slice(0, cx + 1)),
        (slice(cy + 1, h), slice(cx + 1, w)),
    ):
        p_q = pred[rows, cols]
        g_q = gt[rows, cols]
        weight = p_q.size / total
        if p_q.size:
            s_r += weight * _region_ssim(p_q, g_q)
    return s_r


def s_measure_parts(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(S_object, S_region) for a non-degenerate ground truth.

    The region term is averaged over the image and its horizontal mirror.
    A hard quadrant split at the centroid column cannot be made mirror
    equivariant (the split column would have to land on both sides of
    itself), so the symmetrized average is the convention here; it keeps
    the whole score invariant under a simultaneous horizontal flip.
    """
    mu = float(gt.mean())
    fg = gt == 1
    s_o = mu * _object_score(pred[fg]) + (1.0 - mu) * _object_score(1.0 - pred[~fg])
    s_r = 0.5 * (
        _region_score(pred, gt) + _region_score(pred[:, ::-1], gt[:, ::-1])
    )
    return s_o, s_r


def s_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _validate(pred, gt)
    mu = float(gt.mean())
    if mu == 0.0:
        score = 1.0 - float(pred.mean())
    elif mu == 1.0:
        score = float(pred.mean())
    else:
        s_o, s_r = s_measure_parts(pred, gt)
        score = S_ALPHA * s_o + (1.0 - S_ALPHA) * s_r
    return min(1.0, max(0.0, score))


def e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean enhanced-alignment over mean-centered maps, ((phi + 1)^2) / 4."""
    pred, gt = _validate(pred, gt)
    mu = float(gt.mean())
    if mu == 0.0:
        score = float((1.0 - pred).mean())
    elif mu == 1.0:
        score = float(pred.mean())
    else:
        dp = pred - pred.mean()
        dg = gt - mu
        denom = dp * dp + dg * dg
        align = np.where(denom > 0, 2.0 * dp * dg / np.where(denom > 0, denom, 1.0), 1.0)
        score = float((((align + 1.0) ** 2) / 4.0).mean())
    return min(1.0, max(0.0, score))


def report(pred: np.ndarray, gt: np.ndarray) -> MetricsReport:
    return MetricsReport(
        mae=mae(pred, gt),
        f1=f1_score(pred, gt),
        ber=ber(pred, gt),
        f_beta_max=f_beta_max(pred, gt),
        f_beta_weighted=weighted_f(pred, gt),
        auc=auc(pred, gt),
        s_measure=s_measure(pred, gt),
        e_measure=e_measure(pred, gt),
    )
