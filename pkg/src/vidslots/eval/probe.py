"""Linear-readout style probing of slots: a two-layer MLP predicting class and box."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import derive_seed
from ..data import N_CLASSES, VideoClip
from .evaluate import ClipOutputs
from .metrics import match_frame


class ProbeError(ValueError):
    """Raised when the matched targets cannot support probe training."""


@dataclass
class ProbeData:
    slots: np.ndarray  # [N, c]
    classes: np.ndarray  # [N] in 0..n_classes, 0 = background / unmatched
    boxes: np.ndarray  # [N, 4], meaningful where classes > 0


@dataclass
class ProbeConfig:
    hidden: int = 64
    epochs: int = 300
    lr: float = 3e-3
    weight_decay: float = 1e-4
    box_weight: float = 10.0
    seed: int = 0


def probe_targets(outputs: Sequence[ClipOutputs], clips: Sequence[VideoClip], n_slots: int) -> ProbeData:
    """Per-frame Hungarian IoU matching of slots to ground-truth sprites."""
    xs, ys, bs = [], [], []
    for out, clip in zip(outputs, clips):
        for t in range(out.slots.shape[0]):
            ids, labels, ious = match_frame(out.masks[t], clip.gt_masks[t], n_slots)
            cls = np.zeros(n_slots, np.int64)
            box = np.zeros((n_slots, 4), np.float32)
            for k, lab, score in zip(ids, labels, ious):
                if lab > 0 and score > 0:
                    cls[lab - 1] = clip.gt_classes[k - 1]
                    box[lab - 1] = clip.gt_boxes[t, k - 1]
            xs.append(out.slots[t])
            ys.append(cls)
            bs.append(box)
    return ProbeData(np.concatenate(xs).astype(np.float32), np.concatenate(ys), np.concatenate(bs))


class SlotProbe(nn.Module):
    def __init__(self, channels: int, hidden: int, n_classes: int = N_CLASSES):
        super().__init__()
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, n_classes + 1 + 4)
        self.n_out = n_classes + 1
        self.register_buffer("mean", torch.zeros(channels))
        self.register_buffer("std", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.fc2(F.relu(self.fc1((x - self.mean) / self.std)))
        return h[:, :self.n_out], h[:, self.n_out:]


def r2_score(pred: np.ndarray, target: np.ndarray) -> float:
    """Coefficient of determination averaged over output columns."""
    ss_res = ((target - pred) ** 2).sum(0)
    ss_tot = ((target - target.mean(0)) ** 2).sum(0)
    return float(np.mean(1.0 - ss_res / np.maximum(ss_tot, 1e-12)))


def train_probe(data: ProbeData, cfg: ProbeConfig = ProbeConfig()) -> SlotProbe:
    fg = data.classes > 0
    if not fg.any():
        raise ProbeError("every slot matched to background; no positive probe targets")
    torch.manual_seed(derive_seed(cfg.seed, "probe"))
    x = torch.as_tensor(data.slots)
    y = torch.as_tensor(data.classes)
    b = torch.as_tensor(data.boxes)
    mask = torch.as_tensor(fg)
    probe = SlotProbe(x.shape[1], cfg.hidden)
    probe.mean.copy_(x.mean(0))
    probe.std.copy_(x.std(0).clamp_min(1e-6))
    opt = torch.optim.Adam(probe.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    for _ in range(cfg.epochs):  # full batch
        logits, box = probe(x)
        loss = F.cross_entropy(logits, y) + cfg.box_weight * F.mse_loss(box[mask], b[mask])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return probe


def evaluate_probe(probe: SlotProbe, data: ProbeData) -> dict[str, float]:
    """Top-1 over all slots (background included) and box R^2 over matched slots.

    ``top1_objects`` restricts accuracy to matched slots; unlike ``top1`` it
    gives no credit for predicting background on slots that cover nothing.
    """
    with torch.no_grad():
        logits, box = probe(torch.as_tensor(data.slots))
    hit = logits.argmax(1).numpy() == data.classes
    fg = data.classes > 0
    r2 = r2_score(box.numpy()[fg], data.boxes[fg]) if fg.sum() > 1 else float("nan")
    return {"top1": float(hit.mean()), "top1_objects": float(hit[fg].mean()) if fg.any() else float("nan"),
            "box_r2": r2, "n_slots": int(len(fg)), "n_matched": int(fg.sum())}
