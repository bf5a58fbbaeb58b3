from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class SoftPosition(nn.Module):
    """Learnable 2-D position embedding: affine map of (x, y, 1-x, 1-y) cell centers."""

    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        ys = (torch.arange(height, dtype=torch.float64) + 0.5) / height
        xs = (torch.arange(width, dtype=torch.float64) + 0.5) / width
        y, x = torch.meshgrid(ys, xs, indexing="ij")
        grid = torch.stack([x, y, 1 - x, 1 - y], -1).reshape(height * width, 4)
        self.register_buffer("grid", grid.float(), persistent=False)
        self.proj = nn.Linear(4, channels)

    def forward(self) -> torch.Tensor:
        return self.proj(self.grid.to(self.proj.weight.dtype))  # [h*w, c]


class MultiHeadAttention(nn.Module):
    def __init__(self, channels: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        B, L, C = x.shape
        M = memory.shape[1]
        hd = C // self.n_heads
        q = self.q(x).reshape(B, L, self.n_heads, hd).transpose(1, 2)
        k = self.k(memory).reshape(B, M, self.n_heads, hd).transpose(1, 2)
        v = self.v(memory).reshape(B, M, self.n_heads, hd).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(B, L, C))


class FeedForward(nn.Module):
    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(x)))
