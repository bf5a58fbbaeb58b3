"""Synthetic bouncing-sprite videos with exact ground truth, and clip/feature files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigError, RunConfig, ShapeError, make_rng
from .encoder import FeatureMap
from .tensorio import read_tensors, write_tensors

SHAPE_CLASSES = ("circle", "square", "triangle")  # class ids 1, 2, 3
N_CLASSES = len(SHAPE_CLASSES)
CLIP_SUFFIX = ".vslt"
FEATURE_SUFFIX = ".feat"


@dataclass
class SpriteSpec:
    shape_class: str
    color: tuple[float, float, float]
    scale: float  # side length as a fraction of frame height
    position: tuple[float, float]  # center (x, y) in [0, 1]^2
    velocity: tuple[float, float]  # per-frame displacement, normalized units
    depth: int  # larger is drawn on top

    def __post_init__(self):
        if self.shape_class not in SHAPE_CLASSES:
            raise ValueError(f"unknown shape class {self.shape_class!r}")
        if not 0 < self.scale <= 0.4:
            raise ValueError("scale must lie in (0, 0.4]")
        r = self.scale / 2
        if not all(r <= p <= 1 - r for p in self.position):
            raise ValueError("sprite must start fully inside the frame")


@dataclass
class DatasetConfig:
    clip_len: int = 20
    frame_size: int = 64
    min_objects: int = 2
    max_objects: int = 4
    n_slots: int = 6
    scale_range: tuple[float, float] = (0.2, 0.35)
    speed_range: tuple[float, float] = (0.02, 0.05)
    min_color_gap: float = 0.3

    @classmethod
    def from_run(cls, cfg: RunConfig, **kw) -> "DatasetConfig":
        kw.setdefault("max_objects", min(cls.max_objects, cfg.n_slots - 1))
        kw.setdefault("min_objects", min(cls.min_objects, kw["max_objects"]))
        return cls(clip_len=cfg.clip_len, frame_size=cfg.frame_size, n_slots=cfg.n_slots, **kw)


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, H, W, 3] float32 in [0, 1]
    gt_masks: np.ndarray  # [T, H, W] int32, 0 = background, k = sprite k
    gt_classes: np.ndarray  # [K] int32 in 1..3
    gt_boxes: np.ndarray  # [T, K, 4] float32 (cx, cy, w, h), normalized
    visible: np.ndarray  # [T, K] bool
    clip_id: str
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_objects(self) -> int:
        return len(self.gt_classes)

    def equals(self, other: "VideoClip") -> bool:
        arrays = ("frames", "gt_masks", "gt_classes", "gt_boxes", "visible")
        return (
            all(getattr(self, a).dtype == getattr(other, a).dtype and np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.clip_id == other.clip_id
            and self.seed == other.seed
        )


def _rasterize(sprite_class: str, cx: float, cy: float, r: float, size: int) -> np.ndarray:
    c = (np.arange(size) + 0.5) / size
    x, y = np.meshgrid(c, c)  # x varies along columns, y along rows
    dx, dy = x - cx, y - cy
    if sprite_class == "circle":
        return dx * dx + dy * dy <= r * r
    if sprite_class == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    # apex at the top, base at the bottom
    frac = (dy + r) / (2 * r)
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= r * frac)


def _step(pos: np.ndarray, vel: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    pos = pos + vel
    vel = vel.copy()
    for a in range(2):
        if pos[a] < r:
            pos[a] = 2 * r - pos[a]
            vel[a] = -vel[a]
        elif pos[a] > 1 - r:
            pos[a] = 2 * (1 - r) - pos[a]
            vel[a] = -vel[a]
    return pos, vel


def mask_box(mask: np.ndarray) -> tuple[np.ndarray, bool]:
    """Tight normalized (cx, cy, w, h) box of a boolean [H, W] mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return np.zeros(4, np.float32), False
    H, W = mask.shape
    x0, x1 = cols[0] / W, (cols[-1] + 1) / W
    y0, y1 = rows[0] / H, (rows[-1] + 1) / H
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], np.float32), True


def _sample_sprites(cfg: DatasetConfig, rng: np.random.Generator, background: np.ndarray) -> list[SpriteSpec]:
    k = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    depths = rng.permutation(k)
    sprites, colors = [], [background]
    for i in range(k):
        shape = SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))]
        scale = float(rng.uniform(*cfg.scale_range))
        r = scale / 2
        pos = rng.uniform(r, 1 - r, size=2)
        speed = rng.uniform(*cfg.speed_range)
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(100):
            color = rng.uniform(0, 1, size=3)
            if min(np.abs(color - c).max() for c in colors) >= cfg.min_color_gap:
                break
        colors.append(color)
        sprites.append(SpriteSpec(
            shape, tuple(float(v) for v in color), scale, (float(pos[0]), float(pos[1])),
            (float(speed * np.cos(angle)), float(speed * np.sin(angle))), int(depths[i]),
        ))
    return sprites


def generate_clip(cfg: DatasetConfig, seed: int, sprites: Sequence[SpriteSpec] | None = None,
                  background: Sequence[float] | None = None, clip_id: str | None = None) -> VideoClip:
    """Render one clip; a pure function of ``(cfg, seed)`` when ``sprites`` is None."""
    if cfg.clip_len < 2:
        raise ConfigError("clip_len must be >= 2")
    rng = make_rng(seed, "data")
    bg = np.asarray(background if background is not None else rng.uniform(0.0, 0.35, size=3), np.float64)
    if sprites is None:
        sprites = _sample_sprites(cfg, rng, bg)
    K = len(sprites)
    if K >= cfg.n_slots:
        raise ConfigError(f"{K} sprites need at least {K + 1} slots, have {cfg.n_slots}")
    if len({s.depth for s in sprites}) != K:
        raise ValueError("sprite depths must be distinct")

    T, S = cfg.clip_len, cfg.frame_size
    frames = np.empty((T, S, S, 3), np.float32)
    masks = np.zeros((T, S, S), np.int32)
    boxes = np.zeros((T, K, 4), np.float32)
    visible = np.zeros((T, K), bool)
    pos = [np.array(s.position, np.float64) for s in sprites]
    vel = [np.array(s.velocity, np.float64) for s in sprites]
    order = sorted(range(K), key=lambda i: sprites[i].depth)
    for t in range(T):
        if t > 0:
            for i, s in enumerate(sprites):
                pos[i], vel[i] = _step(pos[i], vel[i], s.scale / 2)
        img = np.broadcast_to(bg, (S, S, 3)).copy()
        for i in order:
            m = _rasterize(sprites[i].shape_class, pos[i][0], pos[i][1], sprites[i].scale / 2, S)
            img[m] = sprites[i].color
            masks[t][m] = i + 1
        frames[t] = img
        for i in range(K):
            boxes[t, i], visible[t, i] = mask_box(masks[t] == i + 1)
    classes = np.array([SHAPE_CLASSES.index(s.shape_class) + 1 for s in sprites], np.int32)
    meta = {"sprites": [asdict(s) for s in sprites], "background": bg.tolist(), "dataset": asdict(cfg)}
    return VideoClip(frames, masks, classes, boxes, visible, clip_id or f"clip_{seed}", int(seed), meta)


def save_clip(clip: VideoClip, path: str | Path) -> None:
    """Write the tensor container plus a ``.json`` sidecar with ids and metadata."""
    path = Path(path)
    tensors = {
        "frames": clip.frames, "gt_masks": clip.gt_masks, "gt_classes": clip.gt_classes,
        "gt_boxes": clip.gt_boxes, "visible": clip.visible,
    }
    write_tensors(path, tensors, {"kind": "clip", "clip_id": clip.clip_id, "seed": clip.seed})
    sidecar = {
        "clip_id": clip.clip_id, "seed": clip.seed, "n_objects": clip.n_objects,
        "classes": [SHAPE_CLASSES[c - 1] for c in clip.gt_classes.tolist()], "meta": clip.meta,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_clip(path: str | Path) -> VideoClip:
    path = Path(path)
    t, meta = read_tensors(path)
    side = path.with_suffix(".json")
    extra = json.loads(side.read_text()).get("meta", {}) if side.exists() else {}
    return VideoClip(t["frames"], t["gt_masks"], t["gt_classes"], t["gt_boxes"], t["visible"],
                     meta["clip_id"], int(meta["seed"]), extra)


def generate_dataset(out_dir: str | Path, n_clips: int, seed: int, cfg: DatasetConfig) -> Path:
    """Write ``n_clips`` clips and a ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = make_rng(seed, "dataset").integers(0, 2**31 - 1, size=n_clips)
    entries = []
    for i, s in enumerate(seeds.tolist()):
        clip_id = f"clip_{i:05d}"
        save_clip(generate_clip(cfg, s, clip_id=clip_id), out / f"{clip_id}{CLIP_SUFFIX}")
        entries.append({"clip_id": clip_id, "seed": s, "file": f"{clip_id}{CLIP_SUFFIX}"})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"seed": seed, "dataset": asdict(cfg), "clips": entries}, indent=1))
    return manifest


def load_dataset(data_dir: str | Path) -> list[VideoClip]:
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    return [load_clip(data_dir / e["file"]) for e in manifest["clips"]]


def generate_clips(cfg: DatasetConfig, n_clips: int, seed: int, prefix: str = "clip") -> list[VideoClip]:
    """In-memory equivalent of :func:`generate_dataset`."""
    seeds = make_rng(seed, "dataset").integers(0, 2**31 - 1, size=n_clips)
    return [generate_clip(cfg, int(s), clip_id=f"{prefix}_{i:05d}") for i, s in enumerate(seeds)]


def export_features(path: str | Path, features: np.ndarray, clip_id: str = "") -> None:
    """Write precomputed [T, h, w, c] features for later ingestion."""
    features = np.asarray(features)
    if features.ndim != 4:
        raise ShapeError("features must be [T, h, w, c]")
    T, h, w, c = features.shape
    write_tensors(path, {"features": features}, {"kind": "features", "clip_id": clip_id, "T": T, "h": h, "w": w, "c": c})


def ingest_external_features(path: str | Path, cfg: RunConfig) -> list[FeatureMap]:
    """Read an exported feature file; the maps are constants (frozen)."""
    t, meta = read_tensors(path)
    feats = t["features"]
    declared = tuple(meta.get(k) for k in ("T", "h", "w", "c"))
    if declared != feats.shape:
        raise ShapeError(f"declared dims {declared} disagree with payload {feats.shape}")
    expected = (cfg.clip_len, cfg.feature_size, cfg.feature_size, cfg.channels)
    for name, got, want in zip("Thwc", declared, expected):
        if got != want:
            raise ShapeError(f"feature dimension {name}={got} does not match config {name}={want}")
    return [FeatureMap(feats[i].copy(), i, True) for i in range(feats.shape[0])]
