from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import SoftPosition


class BroadcastDecoder(nn.Module):
    """Spatial-broadcast mixture decoder.

    Every slot is tiled over the h*w grid, offset by a position embedding and
    mapped by a shared per-location MLP to ``out_channels`` of content plus one
    logit.  The logits are softmaxed over slots to form mixture weights.
    """

    def __init__(self, channels: int, height: int, width: int, hidden: int, out_channels: int | None = None):
        super().__init__()
        self.height, self.width = height, width
        self.out_channels = out_channels or channels
        self.pos = SoftPosition(channels, height, width)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, self.out_channels + 1)

    def forward(self, slots: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``slots [..., s, c]`` -> ``(recon [..., h, w, out], masks [..., s, h, w])``."""
        x = slots.unsqueeze(-2) + self.pos()  # [..., s, N, c]
        x = self.fc3(F.relu(self.fc2(F.relu(self.fc1(x)))))
        content, logits = x[..., :-1], x[..., -1]
        weights = torch.softmax(logits, dim=-2)  # over slots
        recon = (weights.unsqueeze(-1) * content).sum(-3)
        lead = slots.shape[:-2]
        recon = recon.reshape(*lead, self.height, self.width, self.out_channels)
        masks = weights.reshape(*lead, slots.shape[-2], self.height, self.width)
        return recon, masks
