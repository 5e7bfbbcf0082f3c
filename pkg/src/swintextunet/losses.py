"""Hybrid segmentation loss (soft Dice + pixelwise cross-entropy) and metrics."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, clamp, div, log, mul, neg, scale, sub, tmean, tsum
from .config import LossConfig
from .errors import ShapeError

CE_CLAMP = 1e-7  # probabilities are clamped to [CE_CLAMP, 1-CE_CLAMP] before logs


def dice_loss(prob: Tensor, target: Tensor, eps: float = 1e-6) -> Tensor:
    """1 - (2*sum(y*yhat)+eps) / (sum(y)+sum(yhat)+eps), over all pixels."""
    if prob.shape != target.shape:
        raise ShapeError(f"dice_loss shapes disagree: {prob.shape} vs {target.shape}")
    inter = tsum(mul(prob, target))
    sums = add(tsum(target), tsum(prob))
    return sub(1.0, div(add(scale(inter, 2.0), eps), add(sums, eps)))


def ce_loss(prob: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy over all pixels, on clamped probabilities."""
    if prob.shape != target.shape:
        raise ShapeError(f"ce_loss shapes disagree: {prob.shape} vs {target.shape}")
    p = clamp(prob, CE_CLAMP, 1.0 - CE_CLAMP)
    term = add(mul(target, log(p)), mul(sub(1.0, target), log(sub(1.0, p))))
    return neg(tmean(term))


def hybrid_loss(prob: Tensor, target: Tensor, cfg: LossConfig) -> Tensor:
    """lambda_dice * dice + lambda_ce * ce; single-term cases skip the other."""
    cfg.validate()
    if cfg.lambda_ce == 0.0:
        return scale(dice_loss(prob, target, cfg.eps), cfg.lambda_dice)
    if cfg.lambda_dice == 0.0:
        return scale(ce_loss(prob, target), cfg.lambda_ce)
    return add(scale(dice_loss(prob, target, cfg.eps), cfg.lambda_dice),
               scale(ce_loss(prob, target), cfg.lambda_ce))


# ---------------------------------------------------------------------------
# evaluation metrics (plain numpy, no gradients)
# ---------------------------------------------------------------------------

def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return prob > threshold


def dice_iou_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Overlap metrics on binary masks; empty-vs-empty is defined as (1, 1)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"metric shapes disagree: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    if tp + fp + fn == 0:
        return 1.0, 1.0
    dice = 2.0 * tp / (2.0 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    return dice, iou
