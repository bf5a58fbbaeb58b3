"""Object-discovery metrics on integer label volumes.

Predicted labels are 1..s, ground-truth labels 0..K with 0 = background.
All metrics are invariant to bijective relabeling of the prediction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hungarian import linear_assignment


@dataclass
class MaskSequence:
    labels: np.ndarray  # [T, H, W] int
    n_labels: int
    source: str = "prediction"  # or "ground_truth"

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ValueError("labels must be [T, H, W]")
        if self.source not in ("prediction", "ground_truth"):
            raise ValueError(f"unknown source {self.source!r}")
        lo = 1 if self.source == "prediction" else 0
        if self.labels.size and (self.labels.min() < lo or self.labels.max() > self.n_labels):
            raise ValueError(f"{self.source} labels outside [{lo}, {self.n_labels}]")


def upsample_nearest(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize of ``[..., h, w]`` labels to ``[..., height, width]``."""
    h, w = labels.shape[-2:]
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return labels[..., rows[:, None], cols[None, :]]


def _labels(x) -> np.ndarray:
    return np.asarray(x.labels if isinstance(x, MaskSequence) else x)


def _check(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if ia.size else 0, ib.max() + 1 if ib.size else 0), np.int64)
    np.add.at(table, (ia.ravel(), ib.ravel()), 1)
    return table


def _comb2(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def ari(pred, gt, foreground_only: bool = False, per_frame: bool = False) -> float:
    """Adjusted Rand index over all T*H*W points jointly (or averaged per frame).

    With ``foreground_only`` points whose ground truth is 0 are dropped first;
    if nothing remains the score is NaN (not applicable).  Degenerate
    partitions where both sides are a single cluster score 1.
    """
    p, g = _labels(pred), _labels(gt)
    _check(p, g)
    if per_frame:
        scores = [ari(p[t:t + 1], g[t:t + 1], foreground_only) for t in range(p.shape[0])]
        scores = [s for s in scores if not np.isnan(s)]
        return float(np.mean(scores)) if scores else float("nan")
    p, g = p.ravel(), g.ravel()
    if foreground_only:
        keep = g != 0
        p, g = p[keep], g[keep]
    n = p.size
    if n == 0:
        return float("nan")
    table = contingency(p, g)
    index = _comb2(table).sum()
    a = _comb2(table.sum(1)).sum()
    b = _comb2(table.sum(0)).sum()
    total = _comb2(n)
    expected = a * b / total if total > 0 else 0.0
    max_index = (a + b) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def _iou_matrix(p: np.ndarray, g: np.ndarray, n_pred: int, gt_ids: np.ndarray) -> np.ndarray:
    """IoU between every gt instance in ``gt_ids`` and predicted labels 1..n_pred."""
    pred_oh = p.ravel()[None, :] == np.arange(1, n_pred + 1)[:, None]
    gt_oh = g.ravel()[None, :] == gt_ids[:, None]
    inter = gt_oh.astype(np.int64) @ pred_oh.T.astype(np.int64)
    union = gt_oh.sum(1)[:, None] + pred_oh.sum(1)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def _frames(p: np.ndarray, g: np.ndarray, per_frame: bool):
    if per_frame:
        for t in range(p.shape[0]):
            yield p[t], g[t]
    else:
        yield p, g


def _n_pred(pred, p: np.ndarray) -> int:
    return pred.n_labels if isinstance(pred, MaskSequence) else int(p.max(initial=0))


def mbo(pred, gt, per_frame: bool = True) -> float:
    """Mean over ground-truth instances (background excluded) of their best IoU
    with any predicted mask.  Frames without instances contribute nothing."""
    p, g = _labels(pred), _labels(gt)
    _check(p, g)
    n_pred = _n_pred(pred, p)
    best = []
    for pf, gf in _frames(p, g, per_frame):
        ids = np.unique(gf)
        ids = ids[ids != 0]
        if ids.size:
            best.extend(_iou_matrix(pf, gf, n_pred, ids).max(1).tolist())
    return float(np.mean(best)) if best else float("nan")


def match_frame(pf: np.ndarray, gf: np.ndarray, n_pred: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimal one-to-one matching of gt instances to predicted labels by IoU.

    Returns ``(gt_ids, pred_labels, ious)``; gt instances left unmatched
    (more instances than predicted labels) get label 0 and IoU 0.
    """
    ids = np.unique(gf)
    ids = ids[ids != 0]
    if ids.size == 0:
        return ids, np.zeros(0, int), np.zeros(0)
    iou = _iou_matrix(pf, gf, n_pred, ids)
    rows, cols = linear_assignment(-iou)
    labels = np.zeros(ids.size, int)
    scores = np.zeros(ids.size)
    labels[rows] = cols + 1
    scores[rows] = iou[rows, cols]
    return ids, labels, scores


def miou(pred, gt, per_frame: bool = True) -> float:
    """Mean IoU over gt instances under the IoU-maximizing one-to-one matching."""
    p, g = _labels(pred), _labels(gt)
    _check(p, g)
    n_pred = _n_pred(pred, p)
    scores = []
    for pf, gf in _frames(p, g, per_frame):
        scores.extend(match_frame(pf, gf, n_pred)[2].tolist())
    return float(np.mean(scores)) if scores else float("nan")


def discovery_metrics(pred, gt) -> dict[str, float]:
    out = {
        "ARI": ari(pred, gt),
        "ARI_fg": ari(pred, gt, foreground_only=True),
        "mBO": mbo(pred, gt),
        "mIoU": miou(pred, gt),
    }
    out["ARI_plus_ARIfg"] = out["ARI"] + out["ARI_fg"]
    return out
