"""Frame encoders mapping pixels [.., h0, w0, c0] to feature grids [.., h, w, c]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import RunConfig, ShapeError


@dataclass
class FeatureMap:
    values: np.ndarray  # [h, w, c]
    frame_index: int
    frozen: bool = True


class PatchEncoder(nn.Module):
    """Non-overlapping patchify followed by one affine map."""

    def __init__(self, patch_size: int, in_channels: int, channels: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * in_channels, channels)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        *lead, H, W, C = frames.shape
        p = self.patch_size
        x = frames.reshape(-1, H // p, p, W // p, p, C)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(-1, H // p, W // p, p * p * C)
        return self.proj(x).reshape(*lead, H // p, W // p, -1)


class ConvEncoder(nn.Module):
    """Three stride-2 3x3 convolutions (downsampling by 8)."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(in_channels, channels, 3, stride=2, padding=1),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
        ])

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        *lead, H, W, C = frames.shape
        x = frames.reshape(-1, H, W, C).permute(0, 3, 1, 2)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.relu(x)
        x = x.permute(0, 2, 3, 1)
        return x.reshape(*lead, *x.shape[1:])


class Encoder(nn.Module):
    """Wraps a backbone; when ``frozen`` its parameters never receive gradient."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.frame_shape = (cfg.frame_size, cfg.frame_size, cfg.frame_channels)
        self.frozen = cfg.freeze_encoder
        if cfg.encoder == "conv":
            self.backbone = ConvEncoder(cfg.frame_channels, cfg.channels)
        else:
            self.backbone = PatchEncoder(cfg.patch_size, cfg.frame_channels, cfg.channels)
        if self.frozen:
            self.backbone.requires_grad_(False)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if tuple(frames.shape[-3:]) != self.frame_shape:
            raise ShapeError(f"frame shape {tuple(frames.shape[-3:])} != configured {self.frame_shape}")
        if self.frozen:
            with torch.no_grad():
                return self.backbone(frames)
        return self.backbone(frames)


def encode(frame: np.ndarray, encoder: Encoder, frame_index: int = 0) -> FeatureMap:
    """Encode a single [h0, w0, c0] frame with values in [0, 1]."""
    frame = np.asarray(frame)
    if frame.min() < 0 or frame.max() > 1:
        raise ValueError("frame values must lie in [0, 1]")
    param = next(encoder.parameters())
    with torch.no_grad():
        out = encoder(torch.as_tensor(frame, dtype=param.dtype))
    return FeatureMap(out.numpy(), frame_index, encoder.frozen)
