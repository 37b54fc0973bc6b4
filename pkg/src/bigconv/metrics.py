"""Segmentation metrics: Dice overlap, balanced accuracy, boundary IoU.

All three take binary masks of equal shape and return values in [0, 1].
These are exact set measures; no smoothing terms (the training loss smooths,
the metrics do not).
"""

from __future__ import annotations

import math

import numpy as np

from .morphology import boundary_band


def _pair(pred_mask, gt_mask) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred_mask)
    g = np.asarray(gt_mask)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p.astype(bool), g.astype(bool)


def metric_dice(pred_mask, gt_mask) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both masks are empty."""
    p, g = _pair(pred_mask, gt_mask)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def metric_bacc_flagged(pred_mask, gt_mask) -> tuple[float, bool]:
    """Mean of sensitivity and specificity, plus a degenerate-ground-truth flag.

    A rate whose class is absent from the ground truth is undefined and
    reported as 1.0; the flag says that happened.
    """
    p, g = _pair(pred_mask, gt_mask)
    tp = int((p & g).sum())
    fn = int((~p & g).sum())
    tn = int((~p & ~g).sum())
    fp = int((p & ~g).sum())
    degenerate = (tp + fn == 0) or (tn + fp == 0)
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return (sens + spec) / 2.0, degenerate


def metric_bacc(pred_mask, gt_mask) -> float:
    return metric_bacc_flagged(pred_mask, gt_mask)[0]


def metric_biou(pred_mask, gt_mask, band: int = 1) -> float:
    """IoU of the two masks' boundary bands; 1.0 when both bands are empty.

    A mask's band is the mask minus its erosion by `band` pixels
    (4-connected), i.e. the pixels within `band` of the mask border.
    """
    if band < 1:
        raise ValueError(f"band must be >= 1, got {band}")
    p, g = _pair(pred_mask, gt_mask)
    bp = boundary_band(p, band)
    bg = boundary_band(g, band)
    union = int((bp | bg).sum())
    if union == 0:
        return 1.0
    return int((bp & bg).sum()) / union


def default_biou_band(height: int, width: int) -> int:
    """2% of the image diagonal, at least one pixel."""
    return max(1, round(0.02 * math.hypot(height, width)))
