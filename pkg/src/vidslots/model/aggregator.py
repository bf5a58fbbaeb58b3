"""Slot Attention aggregator: refines queries into slots over one feature grid."""
from __future__ import annotations

import math

import torch
import torch.nn as nn

from .layers import FeedForward


class SlotAttention(nn.Module):
    """Iterative attention with softmax over the *slot* axis.

    Each iteration normalizes attention per location across slots, takes the
    attention-weighted mean of values per slot, then applies a GRU update and
    a residual MLP.  Returns the slots and the final-iteration attention
    ``[B, s, N]`` (columns sum to one).
    """

    def __init__(self, channels: int, mlp_hidden: int, n_iters: int = 3, eps: float = 1e-8):
        super().__init__()
        self.n_iters = n_iters
        self.eps = eps
        self.scale = 1.0 / math.sqrt(channels)
        self.norm_inputs = nn.LayerNorm(channels)
        self.norm_slots = nn.LayerNorm(channels)
        self.norm_mlp = nn.LayerNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(channels, channels, bias=False)
        self.to_v = nn.Linear(channels, channels, bias=False)
        self.gru = nn.GRUCell(channels, channels)
        self.mlp = FeedForward(channels, mlp_hidden)

    def forward(self, query: torch.Tensor, inputs: torch.Tensor, n_iters: int | None = None):
        n_iters = self.n_iters if n_iters is None else n_iters
        if n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {n_iters}")
        B, s, c = query.shape
        inputs = self.norm_inputs(inputs)
        k, v = self.to_k(inputs), self.to_v(inputs)
        slots = query
        for _ in range(n_iters):
            prev = slots
            q = self.to_q(self.norm_slots(slots))
            attn = torch.softmax(torch.einsum("bnc,bsc->bsn", k, q) * self.scale, dim=1)
            weights = attn + self.eps
            weights = weights / weights.sum(-1, keepdim=True)
            updates = torch.einsum("bsn,bnc->bsc", weights, v)
            slots = self.gru(updates.reshape(-1, c), prev.reshape(-1, c)).reshape(B, s, c)
            slots = slots + self.mlp(self.norm_mlp(slots))
        return slots, attn
