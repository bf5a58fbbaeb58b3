"""Diagnostic studies: the evaluation-time offset matrix and the ablation grid.

Both are organized as independent jobs recorded in a small JSON manifest so a
long study can be interrupted and resumed without redoing finished work.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ConfigError, RunConfig
from .data import VideoClip
from .eval.evaluate import METRICS, clip_features, evaluate_model
from .model.video import VideoSlotModel
from .train.loop import load_checkpoint, train_loop

log = logging.getLogger(__name__)


class JobManifest:
    """JSON map from job key to result; every update is written atomically."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.jobs: dict[str, dict] = {}
        if self.path is not None and self.path.exists():
            self.jobs = json.loads(self.path.read_text(encoding="utf-8"))

    def get(self, key: str) -> dict | None:
        return self.jobs.get(key)

    def put(self, key: str, result: dict) -> None:
        self.jobs[key] = result
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.jobs, indent=1, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.path)


# ---- offset matrix -----------------------------------------------------------------

@dataclass
class OffsetMatrix:
    """Metric per evaluation-time (slot offset, feature offset) pair.

    Both axes are laid out oldest first, so row ``r`` holds slot offset
    ``delta - r`` and column ``k`` holds feature offset ``delta - 1 - k``.
    The freshest pair (1, 0), the one used in standard evaluation, is the
    bottom-right cell.
    """

    values: np.ndarray  # [delta, delta]
    metric_name: str
    baseline_value: float = float("nan")
    fallbacks: np.ndarray | None = None  # [delta, delta] boundary fallback counts
    all_metrics: dict = field(default_factory=dict)  # "so,fo" -> metrics dict

    @property
    def delta(self) -> int:
        return self.values.shape[0]

    @property
    def slot_offsets(self) -> list[int]:
        return list(range(self.delta, 0, -1))

    @property
    def feature_offsets(self) -> list[int]:
        return list(range(self.delta - 1, -1, -1))

    def index(self, slot_offset: int, feature_offset: int) -> tuple[int, int]:
        return self.delta - slot_offset, self.delta - 1 - feature_offset

    def at(self, slot_offset: int, feature_offset: int) -> float:
        return float(self.values[self.index(slot_offset, feature_offset)])

    def block_mean(self, corner: str, size: int = 2) -> float:
        v = self.values
        block = v[-size:, -size:] if corner == "bottom_right" else v[:size, :size]
        return float(np.mean(block))

    def to_dict(self) -> dict:
        return {
            "metric": self.metric_name, "values": self.values.tolist(),
            "slot_offsets": self.slot_offsets, "feature_offsets": self.feature_offsets,
            "baseline_value": self.baseline_value,
            "fallbacks": None if self.fallbacks is None else self.fallbacks.tolist(),
            "all_metrics": self.all_metrics,
        }


def offset_matrix(checkpoint: str | Path | VideoSlotModel, clips: Sequence[VideoClip], metric: str = "ARI_fg",
                  delta: int | None = None, baseline_value: float = float("nan"),
                  manifest: JobManifest | None = None) -> OffsetMatrix:
    """Score eval-mode rollouts that feed every (slot, feature) offset pair to the transitioner."""
    model = checkpoint if isinstance(checkpoint, VideoSlotModel) else load_checkpoint(checkpoint)[0]
    cfg = model.cfg
    if cfg.transitioner_kind != "randsfq":
        raise ConfigError("offset matrix needs a randsfq transitioner")
    delta = cfg.window_size if delta is None else delta
    if delta < 1 or delta > cfg.window_size:
        raise ConfigError(f"delta {delta} exceeds the training window {cfg.window_size}; "
                          "time embeddings for those offsets are untrained")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    manifest = manifest or JobManifest(None)
    model.eval()
    feats = clip_features(model, clips)
    values = np.zeros((delta, delta))
    fallbacks = np.zeros((delta, delta), int)
    all_metrics = {}
    mat = OffsetMatrix(values, metric, baseline_value, fallbacks, all_metrics)
    for so in range(1, delta + 1):
        for fo in range(delta):
            key = f"cell:{cfg.hash()}:{so},{fo}"
            cell = manifest.get(key)
            if cell is None:
                rep = evaluate_model(model, clips, offsets=(so, fo), features=feats)
                cell = {"metrics": rep.aggregate, "fallbacks": rep.fallbacks}
                manifest.put(key, cell)
            r, k = mat.index(so, fo)
            values[r, k] = cell["metrics"][metric]
            fallbacks[r, k] = cell["fallbacks"]
            all_metrics[f"{so},{fo}"] = cell["metrics"]
    return mat


# ---- ablation grid ---------------------------------------------------------------------

# one axis changed at a time from the full method
ABLATION_AXES: dict[str, list] = {
    "use_next_feature": [False],
    "sample_pairs": [False],
    "time_injection": ["none", "append"],
    "window_size": [2, 3, 4],
}


@dataclass
class Variant:
    name: str
    overrides: dict
    config: RunConfig | None = None
    skipped: str | None = None


def config_diff(a: RunConfig, b: RunConfig) -> dict:
    """Fields (dotted for nested) whose values differ, as ``{key: [a, b]}``."""
    def flat(d, prefix=""):
        out = {}
        for k, v in d.items():
            if isinstance(v, dict):
                out.update(flat(v, f"{prefix}{k}."))
            else:
                out[f"{prefix}{k}"] = v
        return out
    fa, fb = flat(a.to_dict()), flat(b.to_dict())
    return {k: [fa.get(k), fb.get(k)] for k in sorted(set(fa) | set(fb)) if fa.get(k) != fb.get(k)}


def _skip_reason(base: RunConfig, field_name: str, value) -> str | None:
    rs = base.transitioner_kind == "randsfq"
    if field_name in ("use_next_feature", "sample_pairs", "time_injection", "window_size") and not rs:
        return f"{field_name} only affects the randsfq transitioner"
    if field_name == "sample_pairs" and base.window_size == 1:
        return "sampling is a no-op with window_size=1"
    if field_name == "time_injection" and value == "append" and base.time_injection == "none":
        return "append injection needs time embeddings, but the base disables them"
    return None


def expand_variants(base: RunConfig, axes: dict[str, list]) -> list[Variant]:
    """The base run plus one variant per (axis, value) differing from the base."""
    variants = [Variant("full", {}, base)]
    for name, values in axes.items():
        if not hasattr(base, name):
            raise ConfigError(f"unknown ablation axis {name!r}")
        for value in values:
            if getattr(base, name) == value:
                continue
            v = Variant(f"{name}={value}", {name: value})
            v.skipped = _skip_reason(base, name, value)
            if v.skipped is None:
                try:
                    v.config = base.replace(**{name: value}).validate()
                except ConfigError as exc:
                    v.skipped = str(exc)
            if v.skipped:
                log.warning("skipping %s: %s", v.name, v.skipped)
            variants.append(v)
    return variants


def run_job(cfg: RunConfig, train_clips: Sequence[VideoClip], val_clips: Sequence[VideoClip],
            test_clips: Sequence[VideoClip], root: str | Path, manifest: JobManifest | None = None) -> dict:
    """Train ``cfg`` (unless already done) and score its best checkpoint on ``test_clips``."""
    root = Path(root)
    manifest = manifest or JobManifest(root / "jobs.json")
    key = f"run:{cfg.hash()}"
    done = manifest.get(key)
    run_dir = root / "runs" / cfg.hash()[:16]
    if done is not None and (run_dir / "best.ckpt").exists():
        return done
    start = time.perf_counter()
    train_loop(cfg, train_clips, val_clips, run_dir)
    seconds = time.perf_counter() - start
    model, meta = load_checkpoint(run_dir / "best.ckpt")
    rep = evaluate_model(model, test_clips).aggregate
    result = {"config": cfg.to_dict(), "run_dir": str(run_dir), "best_step": meta["step"],
              "train_seconds": round(seconds, 1), "test": rep}
    manifest.put(key, result)
    return result


Runner = Callable[[RunConfig], dict]


def ablation_grid(base: RunConfig, axes: dict[str, list], seeds: Sequence[int], runner: Runner,
                  metric: str = "ARI_plus_ARIfg") -> dict:
    """Train every variant under every seed with ``runner`` and tabulate ``metric``.

    ``runner(cfg) -> {"test": metrics}`` carries the fixed training budget and
    data; variants differ from ``base`` only in their declared axis.
    """
    table = {"metric": metric, "seeds": list(seeds), "variants": {}}
    for v in expand_variants(base, axes):
        entry = {"overrides": v.overrides}
        if v.skipped:
            entry["skipped"] = v.skipped
        else:
            scores = []
            for seed in seeds:
                cfg = v.config.replace(seed=seed)
                scores.append(float(runner(cfg)["test"][metric]))
            finite = [s for s in scores if not math.isnan(s)]
            entry.update({
                "scores": scores,
                "mean": float(np.mean(finite)) if finite else float("nan"),
                "spread": float(np.std(finite)) if finite else float("nan"),
                "config_diff": config_diff(base, v.config),
            })
        table["variants"][v.name] = entry
    return table

