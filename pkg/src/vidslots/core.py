"""Shared types, shape contracts, random streams and run configuration."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

SCHEMA_VERSION = 1

TRANSITIONER_KINDS = ("randsfq", "encoder_block", "identity")
TIME_INJECTIONS = ("sum", "append", "none")
ENCODER_KINDS = ("patch", "conv", "external")
QUERY_MODES = ("learned", "conditional")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class ShapeError(ValueError):
    """A tensor does not satisfy its named-dimension contract."""


@dataclass(frozen=True)
class TensorSpec:
    """Named-dimension shape contract, e.g. ``TensorSpec(("T", "h", "w", "c"))``.

    ``check`` binds every dimension name to a size and raises on any
    disagreement with sizes already bound in ``env``.
    """

    dims: tuple[str, ...]
    dtype: str = "float"

    def check(self, array: Any, env: dict[str, int] | None = None, what: str = "tensor") -> dict[str, int]:
        env = {} if env is None else env
        shape = tuple(array.shape)
        if len(shape) != len(self.dims):
            raise ShapeError(f"{what}: expected dims {self.dims}, got shape {shape}")
        for name, size in zip(self.dims, shape):
            if size <= 0:
                raise ShapeError(f"{what}: dimension {name} must be positive, got {size}")
            bound = env.setdefault(name, size)
            if bound != size:
                raise ShapeError(f"{what}: dimension {name}={size} disagrees with bound {name}={bound}")
        return env


def _stream_key(stream_name: str) -> int:
    return int.from_bytes(hashlib.sha256(stream_name.encode("utf-8")).digest()[:8], "little")


def make_rng(seed: int, stream_name: str) -> np.random.Generator:
    """Independent, reproducible generator for one purpose (data, init, sampler, ...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), _stream_key(stream_name)])))


def derive_seed(seed: int, stream_name: str) -> int:
    """63-bit integer seed for APIs that want a plain int (e.g. torch.Generator)."""
    return int(make_rng(seed, stream_name).integers(0, 2**63 - 1))


@dataclass
class OptimConfig:
    lr: float = 2e-3
    warmup_steps: int = 100
    steps: int = 2000
    batch_size: int = 8
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    eval_every: int = 250
    n_val_clips: int = 16


@dataclass
class RunConfig:
    """Every knob of one training/evaluation run.

    ``train_clip_len`` is the length of the random sub-window cut from each
    training clip per step (``None`` uses the whole clip); evaluation always
    unrolls whole clips.
    """

    n_slots: int = 6
    channels: int = 32
    window_size: int = 5
    clip_len: int = 20
    n_sa_iters: int = 3
    transitioner_kind: str = "randsfq"
    time_injection: str = "sum"
    use_next_feature: bool = True
    sample_pairs: bool = True
    n_heads: int = 4
    mlp_hidden: int = 64
    decoder_hidden: int = 64
    encoder: str = "patch"
    patch_size: int = 8
    frame_size: int = 64
    frame_channels: int = 3
    freeze_encoder: bool = True
    query_mode: str = "learned"
    train_clip_len: int | None = None
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    @property
    def feature_size(self) -> int:
        if self.encoder == "conv":
            return self.frame_size // 8
        return self.frame_size // self.patch_size

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if self.clip_len < 2:
            raise ConfigError(f"clip_len must be >= 2, got {self.clip_len}")
        if not 1 <= self.window_size <= self.clip_len - 1:
            raise ConfigError(f"window_size must lie in [1, clip_len-1] = [1, {self.clip_len - 1}], got {self.window_size}")
        if self.train_clip_len is not None and not self.window_size + 1 <= self.train_clip_len <= self.clip_len:
            raise ConfigError("train_clip_len must lie in [window_size+1, clip_len]")
        for name in ("n_slots", "channels", "n_sa_iters", "n_heads", "mlp_hidden", "decoder_hidden", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.channels % self.n_heads:
            raise ConfigError(f"channels={self.channels} not divisible by n_heads={self.n_heads}")
        if self.transitioner_kind not in TRANSITIONER_KINDS:
            raise ConfigError(f"transitioner_kind must be one of {TRANSITIONER_KINDS}")
        if self.time_injection not in TIME_INJECTIONS:
            raise ConfigError(f"time_injection must be one of {TIME_INJECTIONS}")
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {ENCODER_KINDS}")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {QUERY_MODES}")
        if self.encoder == "patch" and self.frame_size % self.patch_size:
            raise ConfigError("frame_size must be a multiple of patch_size")
        if self.encoder == "conv" and self.frame_size % 8:
            raise ConfigError("conv encoder needs frame_size divisible by 8")
        if self.optim.steps < 0 or self.optim.batch_size < 1:
            raise ConfigError("optim.steps must be >= 0 and optim.batch_size >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        optim = data.pop("optim", {}) or {}
        if isinstance(optim, Mapping):
            known_o = {f.name for f in dataclasses.fields(OptimConfig)}
            bad = set(optim) - known_o
            if bad:
                raise ConfigError(f"unknown optim keys: {sorted(bad)}")
            optim = OptimConfig(**optim)
        return cls(optim=optim, **data)

    def replace(self, **changes: Any) -> "RunConfig":
        return apply_overrides(self, changes)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(value: Any, current: Any) -> Any:
    if not isinstance(value, str):
        return value
    parsed = yaml.safe_load(value)
    if isinstance(current, bool) and not isinstance(parsed, bool):
        raise ConfigError(f"expected boolean, got {value!r}")
    return parsed


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any] | Sequence[str]) -> RunConfig:
    """Return a copy of ``cfg`` with dotted-key overrides applied and validated.

    ``overrides`` is either a mapping or a list of ``"key=value"`` strings
    (values parsed as YAML scalars, so ``window_size=3`` yields an int).
    """
    if not isinstance(overrides, Mapping):
        pairs = {}
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            pairs[key.strip()] = value
        overrides = pairs
    data = copy.deepcopy(cfg.to_dict())
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _coerce(value, node[parts[-1]])
    return RunConfig.from_dict(data).validate()


def load_config(path: str | Path, overrides: Mapping[str, Any] | Sequence[str] = ()) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if "schema_version" not in data:
        raise ConfigError(f"{path}: missing schema_version")
    return apply_overrides(RunConfig.from_dict(data), overrides)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
