"""The full aggregation-transition-decoding model and its single-step operations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import RunConfig, derive_seed
from ..encoder import Encoder, FeatureMap
from .aggregator import SlotAttention
from .decoder import BroadcastDecoder
from .layers import FeedForward, SoftPosition
from .transitioner import Transitioner


@dataclass
class SlotState:
    query: torch.Tensor  # [s, c] (or [B, s, c])
    slots: torch.Tensor  # [s, c]
    attention: torch.Tensor  # [s, h*w], final iteration, columns sum to 1
    masks: torch.Tensor  # [h, w] labels in 1..s
    frame_index: int = 0


def attention_masks(attn: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Per-location argmax over slots, labels 1..s; ``attn [..., s, h*w]`` -> ``[..., h, w]``."""
    return (attn.argmax(-2) + 1).reshape(*attn.shape[:-2], height, width)


class VideoSlotModel(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        c, s = cfg.channels, cfg.n_slots
        self.height = self.width = cfg.feature_size
        self.encoder = Encoder(cfg)
        self.pos = SoftPosition(c, self.height, self.width)
        self.norm_in = nn.LayerNorm(c)
        self.input_mlp = FeedForward(c, cfg.mlp_hidden)
        self.aggregator = SlotAttention(c, cfg.mlp_hidden, cfg.n_sa_iters)
        self.transitioner = Transitioner(
            cfg.transitioner_kind, c, cfg.n_heads, cfg.mlp_hidden, cfg.window_size,
            cfg.time_injection, cfg.use_next_feature,
        )
        self.decoder = BroadcastDecoder(c, self.height, self.width, cfg.decoder_hidden)
        self.query = nn.Parameter(torch.zeros(s, c))
        if cfg.query_mode == "conditional":
            self.box_mlp = nn.Sequential(nn.Linear(2, cfg.mlp_hidden), nn.ReLU(), nn.Linear(cfg.mlp_hidden, c))

    # ---- tokens -------------------------------------------------------
    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        return self.encoder(frames)

    def aggregator_tokens(self, features: torch.Tensor) -> torch.Tensor:
        """``[..., h, w, c]`` -> ``[..., h*w, c]`` with position and input MLP."""
        x = features.flatten(-3, -2) + self.pos()
        x = self.norm_in(x)
        return x + self.input_mlp(x)

    def memory_tokens(self, features: torch.Tensor) -> torch.Tensor:
        return features.flatten(-3, -2) + self.pos()

    def initial_query(self, batch: int, box_centers: torch.Tensor | None = None,
                      box_valid: torch.Tensor | None = None) -> torch.Tensor:
        q = self.query.unsqueeze(0).expand(batch, -1, -1)
        if self.cfg.query_mode == "conditional" and box_centers is not None:
            cond = self.box_mlp(box_centers.to(q.dtype))
            q = torch.where(box_valid.unsqueeze(-1), cond, q)
        return q

    def decode(self, slots: torch.Tensor):
        return self.decoder(slots)


def objective(reconstructions: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """MSE against stop-gradient targets, averaged over frames, locations and channels."""
    if reconstructions.shape != features.shape:
        raise ValueError(f"length/shape mismatch: {tuple(reconstructions.shape)} vs {tuple(features.shape)}")
    return F.mse_loss(reconstructions, features.detach())


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Deterministically (re)initialize every parameter from ``seed``'s init stream."""
    gen = torch.Generator().manual_seed(derive_seed(seed, "init"))
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if name == "query":
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype))
            elif "time_table" in name:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) / math.sqrt(p.shape[-1]))
            elif ".gru." in f".{name}":
                bound = 1.0 / math.sqrt(p.shape[0] / 3)
                p.copy_(torch.empty(p.shape, dtype=p.dtype).uniform_(-bound, bound, generator=gen))
            elif leaf == "bias":
                p.zero_()
            elif p.dim() == 1:  # layer-norm gains
                p.fill_(1.0)
            else:
                fan_out, fan_in = p.shape[0], int(np.prod(p.shape[1:]))
                if p.dim() == 4:
                    fan_out = p.shape[0] * p.shape[2] * p.shape[3]
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.copy_(torch.empty(p.shape, dtype=p.dtype).uniform_(-bound, bound, generator=gen))
    return model


def build_model(cfg: RunConfig, seed: int | None = None, dtype: torch.dtype = torch.float32) -> VideoSlotModel:
    cfg.validate()
    model = VideoSlotModel(cfg).to(dtype)
    return init_parameters(model, cfg.seed if seed is None else seed)


# ---- single-step operations ------------------------------------------------

def _feature_tensor(feature, model: VideoSlotModel) -> torch.Tensor:
    if isinstance(feature, FeatureMap):
        feature = feature.values
    dtype = model.query.dtype
    return torch.as_tensor(np.asarray(feature) if not torch.is_tensor(feature) else feature, dtype=dtype)


def aggregate(query: torch.Tensor, feature, model: VideoSlotModel, n_iters: int | None = None,
              frame_index: int = 0) -> SlotState:
    """Refine ``query [s, c]`` into slots over one ``[h, w, c]`` feature map."""
    n_iters = model.cfg.n_sa_iters if n_iters is None else n_iters
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    f = _feature_tensor(feature, model)
    if not (torch.isfinite(query).all() and torch.isfinite(f).all()):
        raise ValueError("non-finite values in aggregate inputs")
    slots, attn = model.aggregator(query.unsqueeze(0), model.aggregator_tokens(f).unsqueeze(0), n_iters)
    masks = attention_masks(attn, model.height, model.width)
    return SlotState(query, slots[0], attn[0], masks[0], frame_index)


def transit_randsfq(slots: torch.Tensor, slot_offset: int, feature, feature_offset: int,
                    model: VideoSlotModel) -> torch.Tensor:
    """Next query from ``slots [s, c]`` taken ``slot_offset`` frames before the target and
    a feature map taken ``feature_offset`` frames before it.  Evaluation uses (1, 0)."""
    tr = model.transitioner
    if tr.kind != "randsfq":
        raise ValueError("model transitioner is not randsfq")
    f = _feature_tensor(feature, model)
    q = tr(slots.unsqueeze(0), torch.tensor([slot_offset]), model.memory_tokens(f).unsqueeze(0),
           torch.tensor([feature_offset]))
    return q[0]


def transit_baseline(slots: torch.Tensor, model: VideoSlotModel) -> torch.Tensor:
    if not torch.isfinite(slots).all():
        raise ValueError("non-finite slots")
    tr = model.transitioner
    if tr.kind not in ("encoder_block", "identity"):
        raise ValueError("model transitioner is not a slots-only baseline")
    return tr(slots.unsqueeze(0))[0]


def decode(slots: torch.Tensor, model: VideoSlotModel) -> tuple[torch.Tensor, torch.Tensor]:
    if not torch.isfinite(slots).all():
        raise ValueError("non-finite slots")
    return model.decode(slots)
