"""Recurrent unrolling over clips and the random slot-feature pair sampler."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from ..model.video import VideoSlotModel, attention_masks, objective


class EvictedError(LookupError):
    """A frame index is no longer (or not yet) held by the trace."""


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PairSample:
    t: int  # current frame (1-based); the query is for t + 1
    t1: int  # frame whose slots are transited
    t2: int  # frame whose features condition the transition

    @property
    def slot_offset(self) -> int:
        return self.t + 1 - self.t1

    @property
    def feature_offset(self) -> int:
        return self.t + 1 - self.t2


class RecurrenceTrace:
    """Ring buffers of the last ``window`` slot entries and feature entries.

    After slots of frame t are pushed and the feature of frame t+1 is made
    available, slot frames ``max(1, t-window+1)..t`` and feature frames
    ``max(1, t-window+2)..t+1`` are retrievable.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._slots: deque[tuple[int, object]] = deque(maxlen=window)
        self._features: deque[tuple[int, object]] = deque(maxlen=window)

    def push_slots(self, frame: int, slots) -> None:
        self._slots.append((frame, slots))

    def push_feature(self, frame: int, feature) -> None:
        self._features.append((frame, feature))

    @property
    def slot_frames(self) -> list[int]:
        return [f for f, _ in self._slots]

    @property
    def feature_frames(self) -> list[int]:
        return [f for f, _ in self._features]

    def slots(self, frame: int):
        for f, v in self._slots:
            if f == frame:
                return v
        raise EvictedError(f"slots of frame {frame} not in trace (holds {self.slot_frames})")

    def feature(self, frame: int):
        for f, v in self._features:
            if f == frame:
                return v
        raise EvictedError(f"feature of frame {frame} not in trace (holds {self.feature_frames})")

    def __len__(self) -> int:
        return len(self._slots)


def pair_ranges(t: int, window: int) -> tuple[range, range]:
    """Clamped uniform ranges for the slot frame t1 and feature frame t2."""
    return range(max(1, t - window + 1), t + 1), range(max(1, t - window + 2), t + 2)


def sample_pair(t: int, window: int, trace: RecurrenceTrace | None, rng: np.random.Generator) -> PairSample:
    """Draw (t1, t2) independently and uniformly from the clamped windows before t+1."""
    if t < 1:
        raise ValueError("t must be >= 1")
    r1, r2 = pair_ranges(t, window)
    if trace is not None:
        missing = [f for f in (r1[0], r1[-1]) if f not in trace.slot_frames]
        missing += [f for f in (r2[0], r2[-1]) if f not in trace.feature_frames]
        if missing:
            raise EvictedError(f"frames {missing} evicted from trace; capacity {trace.window} < window {window}?")
    t1 = int(rng.integers(r1[0], r1[-1] + 1))
    t2 = int(rng.integers(r2[0], r2[-1] + 1))
    return PairSample(t, t1, t2)


@dataclass
class Rollout:
    features: torch.Tensor  # [B, T, h, w, c]
    queries: torch.Tensor  # [B, T, s, c]
    slots: torch.Tensor  # [B, T, s, c]
    attention: torch.Tensor  # [B, T, s, h*w]
    masks: torch.Tensor  # [B, T, h, w], labels 1..s
    reconstruction: torch.Tensor  # [B, T, h, w, c]
    decoder_masks: torch.Tensor  # [B, T, s, h, w]
    loss: torch.Tensor
    pairs: list[list[PairSample]] = field(default_factory=list)  # [transition][batch]
    fallbacks: int = 0


def unroll(model: VideoSlotModel, frames: torch.Tensor | None = None, *, features: torch.Tensor | None = None,
           mode: str = "eval", rng: np.random.Generator | None = None, query: torch.Tensor | None = None,
           offsets: tuple[int, int] = (1, 0), box_centers: torch.Tensor | None = None,
           box_valid: torch.Tensor | None = None, step: int | None = None) -> Rollout:
    """Run the aggregation-transition recurrence over a batch of clips.

    ``frames [B, T, H, W, 3]`` or precomputed ``features [B, T, h, w, c]``.
    In ``train`` mode with pair sampling enabled, each transition of each clip
    draws its own (t1, t2); otherwise the transitioner sees ``offsets``
    (slot offset, feature offset), which is (1, 0) for standard evaluation.
    Offsets reaching before frame 1 fall back to frame 1 (counted in
    ``fallbacks``) and the embedding of the actual offset is used.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    cfg = model.cfg
    if features is None:
        features = model.encode(frames)
    B, T = features.shape[:2]
    if T < 2:
        raise ValueError("clip length must be >= 2")
    window = cfg.window_size
    tr = model.transitioner
    # slots-only baselines always transit the latest slots
    sampling = mode == "train" and cfg.sample_pairs and tr.kind == "randsfq"
    if sampling and rng is None:
        raise ValueError("train-mode sampling needs an explicit rng")
    slot_off, feat_off = offsets
    if not sampling and (slot_off, feat_off) != (1, 0):
        if not (1 <= slot_off <= window and 0 <= feat_off <= window - 1):
            raise ValueError(f"offsets {offsets} outside trained window {window}")
    agg_tokens = model.aggregator_tokens(features)  # [B, T, N, c]
    mem_tokens = model.memory_tokens(features) if tr.use_feature else None

    q = model.initial_query(B, box_centers, box_valid) if query is None else query
    trace = RecurrenceTrace(window)
    trace.push_feature(1, None if mem_tokens is None else mem_tokens[:, 0])
    queries, slots_all, attn_all, pairs = [], [], [], []
    fallbacks = 0
    batch_idx = torch.arange(B)
    for t in range(1, T + 1):
        queries.append(q)
        slots, attn = model.aggregator(q, agg_tokens[:, t - 1])
        slots_all.append(slots)
        attn_all.append(attn)
        trace.push_slots(t, slots)
        if t == T:
            break
        trace.push_feature(t + 1, None if mem_tokens is None else mem_tokens[:, t])
        if sampling:
            step_pairs = [sample_pair(t, window, trace, rng) for _ in range(B)]
        else:
            t1, t2 = t + 1 - slot_off, t + 1 - feat_off
            if t1 < 1 or t2 < 1:
                fallbacks += 1
            step_pairs = [PairSample(t, max(1, t1), max(1, t2))] * B
        pairs.append(step_pairs)
        t1s = [p.t1 for p in step_pairs]
        held = trace.slot_frames
        stacked = torch.stack([trace.slots(f) for f in held], 0)  # [L, B, s, c]
        s_in = stacked[torch.tensor([held.index(f) for f in t1s]), batch_idx]
        so = torch.tensor([p.slot_offset for p in step_pairs])
        if mem_tokens is not None:
            held_f = trace.feature_frames
            stacked_f = torch.stack([trace.feature(f) for f in held_f], 0)  # [L, B, N, c]
            f_in = stacked_f[torch.tensor([held_f.index(p.t2) for p in step_pairs]), batch_idx]
            fo = torch.tensor([p.feature_offset for p in step_pairs])
            q = tr(s_in, so, f_in, fo)
        else:
            q = tr(s_in, so)

    slots = torch.stack(slots_all, 1)
    attn = torch.stack(attn_all, 1)
    recon, dmasks = model.decode(slots)
    loss = objective(recon, features)
    if not torch.isfinite(loss):
        norms = {n: float(p.detach().norm()) for n, p in model.named_parameters()}
        bad = [t for t in range(T) if not torch.isfinite(recon[:, t]).all()]
        raise NumericError(f"non-finite loss at step {step}; non-finite frames {bad}; parameter norms {norms}")
    return Rollout(features, torch.stack(queries, 1), slots, attn,
                   attention_masks(attn, model.height, model.width), recon, dmasks, loss, pairs, fallbacks)
