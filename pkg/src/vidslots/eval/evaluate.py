"""Eval-mode unrolling of a model over clips and object-discovery scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..data import VideoClip
from ..model.video import VideoSlotModel
from ..train.rollout import unroll
from .metrics import MaskSequence, discovery_metrics, upsample_nearest

METRICS = ("ARI", "ARI_fg", "mBO", "mIoU", "ARI_plus_ARIfg")


@dataclass
class ClipOutputs:
    clip_id: str
    slots: np.ndarray  # [T, s, c]
    masks: np.ndarray  # [T, H, W] predicted labels at gt resolution
    fallbacks: int = 0


@dataclass
class EvalReport:
    per_clip: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    fallbacks: int = 0

    def to_dict(self) -> dict:
        return {"per_clip": self.per_clip, "aggregate": self.aggregate, "fallbacks": self.fallbacks}


def clip_features(model: VideoSlotModel, clips: Sequence[VideoClip]) -> torch.Tensor:
    frames = torch.as_tensor(np.stack([c.frames for c in clips]), dtype=model.query.dtype)
    with torch.no_grad():
        return model.encode(frames)


def run_clips(model: VideoSlotModel, clips: Sequence[VideoClip], offsets: tuple[int, int] = (1, 0),
              batch_size: int = 16, features: torch.Tensor | None = None) -> list[ClipOutputs]:
    """Eval-mode rollouts; ``features`` may hold precomputed [N, T, h, w, c] grids."""
    outs = []
    for start in range(0, len(clips), batch_size):
        chunk = clips[start:start + batch_size]
        with torch.no_grad():
            feats = clip_features(model, chunk) if features is None else features[start:start + len(chunk)]
            ro = unroll(model, features=feats, mode="eval", offsets=offsets)
        masks = ro.masks.numpy()
        slots = ro.slots.numpy()
        for i, clip in enumerate(chunk):
            H, W = clip.gt_masks.shape[-2:]
            outs.append(ClipOutputs(clip.clip_id, slots[i], upsample_nearest(masks[i], H, W), ro.fallbacks))
    return outs


def score_outputs(outputs: Sequence[ClipOutputs], clips: Sequence[VideoClip], n_slots: int) -> EvalReport:
    report = EvalReport()
    for out, clip in zip(outputs, clips):
        pred = MaskSequence(out.masks, n_slots, "prediction")
        gt = MaskSequence(clip.gt_masks, clip.n_objects, "ground_truth")
        row = {"clip_id": clip.clip_id, **discovery_metrics(pred, gt)}
        report.per_clip.append(row)
        report.fallbacks += out.fallbacks
    for m in METRICS:
        vals = [r[m] for r in report.per_clip if not math.isnan(r[m])]
        report.aggregate[m] = float(np.mean(vals)) if vals else float("nan")
    return report


def evaluate_model(model: VideoSlotModel, clips: Sequence[VideoClip], offsets: tuple[int, int] = (1, 0),
                   batch_size: int = 16, features: torch.Tensor | None = None) -> EvalReport:
    was_training = model.training
    model.eval()
    try:
        outputs = run_clips(model, clips, offsets, batch_size, features)
    finally:
        model.train(was_training)
    return score_outputs(outputs, clips, model.cfg.n_slots)
