"""Optimization loop, learning-rate schedule and checkpoint files."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..core import RunConfig, make_rng
from ..data import VideoClip
from ..model.video import VideoSlotModel, build_model
from ..tensorio import read_tensors, write_tensors
from .rollout import unroll

log = logging.getLogger(__name__)


class CheckpointError(IOError):
    pass


def save_checkpoint(model: VideoSlotModel, path: str | Path, step: int, extra: dict | None = None) -> None:
    tensors = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    meta = {"kind": "checkpoint", "config_hash": model.cfg.hash(), "step": int(step),
            "config": model.cfg.to_dict(), **(extra or {})}
    try:
        write_tensors(path, tensors, meta)
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> tuple[VideoSlotModel, dict]:
    tensors, meta = read_tensors(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint")
    stored = RunConfig.from_dict(meta["config"]).validate()
    if cfg is not None and cfg.hash() != meta["config_hash"]:
        raise CheckpointError("checkpoint config hash differs from the requested config")
    model = build_model(stored)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return model, meta


def parameter_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def lr_factor(step: int, warmup: int, total: int) -> float:
    """Linear warmup to 1, then cosine decay to 0 at ``total``."""
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    span = max(1, total - warmup)
    return 0.5 * (1 + math.cos(math.pi * min(1.0, (step - warmup) / span)))


@dataclass
class TrainResult:
    model: VideoSlotModel
    records: list[dict] = field(default_factory=list)
    best_score: float = float("-inf")
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def _features(model: VideoSlotModel, clips: Sequence[VideoClip]) -> torch.Tensor:
    frames = torch.as_tensor(np.stack([c.frames for c in clips]), dtype=model.query.dtype)
    with torch.no_grad():
        return model.encode(frames)


def train_loop(cfg: RunConfig, train_clips: Sequence[VideoClip], val_clips: Sequence[VideoClip] = (),
               out_dir: str | Path | None = None, model: VideoSlotModel | None = None,
               train_features: torch.Tensor | None = None, val_features: torch.Tensor | None = None) -> TrainResult:
    """Fixed-step training with periodic eval-mode validation.

    Writes ``last.ckpt``, ``best.ckpt`` (by validation ARI + ARI_fg) and a
    ``metrics.jsonl`` log under ``out_dir`` when given.  Fully determined by
    ``cfg`` (including ``cfg.seed``) and the clip contents.  Precomputed
    ``[N, T, h, w, c]`` features (e.g. ingested external ones) replace the
    encoder when given.
    """
    from ..eval.evaluate import evaluate_model

    cfg.validate()
    if not train_clips:
        raise ValueError("no training clips")
    torch.set_num_threads(1)
    model = build_model(cfg) if model is None else model
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    opt_cfg = cfg.optim
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=opt_cfg.lr, weight_decay=opt_cfg.weight_decay)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: lr_factor(s, opt_cfg.warmup_steps, opt_cfg.steps))
    order_rng = make_rng(cfg.seed, "order")
    sampler_rng = make_rng(cfg.seed, "sampler")
    crop_rng = make_rng(cfg.seed, "crop")

    frozen = model.encoder.frozen or train_features is not None
    cached = train_features if train_features is not None else (_features(model, train_clips) if frozen else None)
    val_clips = list(val_clips)[: opt_cfg.n_val_clips]
    if val_features is not None:
        val_feats = val_features[: len(val_clips)]
    else:
        val_feats = _features(model, val_clips) if (frozen and val_clips) else None

    result = TrainResult(model)
    queue: list[int] = []
    T = cfg.clip_len
    L = cfg.train_clip_len or T
    t0 = time.time()
    running = []
    for step in range(opt_cfg.steps + 1):
        validate = step % opt_cfg.eval_every == 0 or step == opt_cfg.steps
        if validate:
            rec = {"step": step, "loss": float(np.mean(running)) if running else None}
            if val_clips:
                rep = evaluate_model(model, val_clips, features=val_feats).aggregate
                rec.update({f"val_{k}": rep[k] for k in ("ARI", "ARI_fg", "mBO", "mIoU")})
                score = rep["ARI"] + rep["ARI_fg"]
                if out is not None and score > result.best_score:
                    save_checkpoint(model, out / "best.ckpt", step)
                result.best_score = max(result.best_score, score)
            result.records.append(rec)
            running = []
            if out is not None:
                with open(out / "metrics.jsonl", "a" if step else "w", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec) + "\n")
            log.info("step %d loss %s %s (%.0fs)", step, rec["loss"],
                     {k: round(v, 4) for k, v in rec.items() if k.startswith("val_")}, time.time() - t0)
        if step == opt_cfg.steps:
            break

        if len(queue) < opt_cfg.batch_size:
            queue.extend(order_rng.permutation(len(train_clips)).tolist())
        idx, queue = queue[: opt_cfg.batch_size], queue[opt_cfg.batch_size:]
        starts = crop_rng.integers(0, T - L + 1, size=len(idx))
        win = torch.as_tensor(starts)[:, None] + torch.arange(L)[None, :]
        if cached is not None:
            feats = cached[torch.as_tensor(idx)[:, None], win]
        else:
            frames = torch.as_tensor(np.stack([train_clips[i].frames for i in idx]), dtype=model.query.dtype)
            feats = model.encode(frames[torch.arange(len(idx))[:, None], win])
        model.train()
        ro = unroll(model, features=feats, mode="train", rng=sampler_rng, step=step)
        optimizer.zero_grad(set_to_none=True)
        ro.loss.backward()
        if opt_cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, opt_cfg.grad_clip)
        optimizer.step()
        schedule.step()
        loss = float(ro.loss.detach())
        running.append(loss)
        if step == 0:
            result.initial_loss = loss
        result.final_loss = loss
    if out is not None:
        save_checkpoint(model, out / "last.ckpt", opt_cfg.steps)
    return result
