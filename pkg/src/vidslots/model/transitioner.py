"""Query predictors mapping slots (and optionally a later feature grid) to the next query."""
from __future__ import annotations

import torch
import torch.nn as nn

from .layers import FeedForward, MultiHeadAttention


class OffsetError(ValueError):
    pass


class Transitioner(nn.Module):
    """One attention block producing the query for frame t+1.

    ``kind``:
      * ``identity`` -- no parameters; the query is the slots themselves.
      * ``encoder_block`` -- self-attention + feed-forward over slot tokens.
      * ``randsfq`` -- self-attention over slot tokens, cross-attention into
        feature tokens, feed-forward.  Inputs carry relative time embeddings
        from ``time_table`` (row k = offset k from the target frame t+1),
        either summed onto every token or appended as one extra token.

    Blocks are pre-norm with residual connections.
    """

    def __init__(self, kind: str, channels: int, n_heads: int = 4, hidden: int = 64, window: int = 1,
                 time_injection: str = "sum", use_next_feature: bool = True):
        super().__init__()
        self.kind = kind
        self.window = window
        self.time_injection = time_injection if kind == "randsfq" else "none"
        self.use_feature = kind == "randsfq" and use_next_feature
        if kind == "identity":
            return
        self.norm_sa = nn.LayerNorm(channels)
        self.self_attn = MultiHeadAttention(channels, n_heads)
        if self.use_feature:
            self.norm_ca = nn.LayerNorm(channels)
            self.norm_mem = nn.LayerNorm(channels)
            self.cross_attn = MultiHeadAttention(channels, n_heads)
        self.norm_ff = nn.LayerNorm(channels)
        self.ff = FeedForward(channels, hidden)
        if self.time_injection != "none":
            # offsets 0..window: slots use 1..window, features 0..window-1
            self.time_table = nn.Parameter(torch.zeros(window + 1, channels))

    def _check(self, offsets: torch.Tensor, lo: int, hi: int, what: str) -> None:
        if offsets.numel() and (int(offsets.min()) < lo or int(offsets.max()) > hi):
            raise OffsetError(f"{what} offsets must lie in [{lo}, {hi}], got {offsets.tolist()}")

    def _inject(self, tokens: torch.Tensor, offsets: torch.Tensor) -> torch.Tensor:
        if self.time_injection == "none":
            return tokens
        emb = self.time_table[offsets].unsqueeze(1)  # [B, 1, c]
        if self.time_injection == "sum":
            return tokens + emb
        return torch.cat([tokens, emb], dim=1)

    def forward(self, slots: torch.Tensor, slot_offset: torch.Tensor | None = None,
                features: torch.Tensor | None = None, feature_offset: torch.Tensor | None = None) -> torch.Tensor:
        """``slots [B, s, c]``, offsets ``[B]`` long, ``features [B, N, c]`` -> query ``[B, s, c]``."""
        if self.kind == "identity":
            return slots
        B, s, _ = slots.shape
        x = slots
        if self.kind == "randsfq":
            slot_offset = _as_offsets(slot_offset, B, 1)
            self._check(slot_offset, 1, self.window, "slot")
            x = self._inject(x, slot_offset)
        h = self.norm_sa(x)
        x = x + self.self_attn(h, h)
        if self.use_feature:
            if features is None:
                raise ValueError("randsfq transitioner needs feature tokens")
            feature_offset = _as_offsets(feature_offset, B, 0)
            self._check(feature_offset, 0, self.window - 1, "feature")
            mem = self._inject(features, feature_offset)
            x = x + self.cross_attn(self.norm_ca(x), self.norm_mem(mem))
        x = x + self.ff(self.norm_ff(x))
        return x[:, :s]


def _as_offsets(offset, batch: int, default: int) -> torch.Tensor:
    if offset is None:
        offset = default
    if isinstance(offset, int):
        return torch.full((batch,), offset, dtype=torch.long)
    return torch.as_tensor(offset, dtype=torch.long).reshape(batch)
