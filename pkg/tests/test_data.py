import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from vidslots.core import ConfigError, RunConfig, ShapeError
from vidslots.data import (
    DatasetConfig,
    SpriteSpec,
    _step,
    export_features,
    generate_clip,
    generate_dataset,
    ingest_external_features,
    load_clip,
    load_dataset,
    save_clip,
)
from vidslots.eval.evaluate import clip_features
from vidslots.model import build_model
from vidslots.tensorio import ChecksumError, FormatVersionError, TruncatedFileError
from vidslots.train import unroll

CFG = DatasetConfig(clip_len=6, frame_size=32)


def test_empty_scene():
    clip = generate_clip(CFG, 0, sprites=[], background=(0.1, 0.2, 0.3))
    assert (clip.gt_masks == 0).all()
    assert np.allclose(clip.frames, np.array([0.1, 0.2, 0.3], np.float32))


def test_static_sprite_has_constant_masks():
    s = SpriteSpec("circle", (1.0, 0.0, 0.0), 0.3, (0.5, 0.5), (0.0, 0.0), 0)
    clip = generate_clip(DatasetConfig(clip_len=5, frame_size=32), 0, sprites=[s])
    assert all(np.array_equal(clip.gt_masks[0], m) for m in clip.gt_masks)


@pytest.mark.parametrize("shape", ["circle", "square", "triangle"])
def test_linear_motion_matches_analytic_displacement(shape):
    size = 64
    v = (0.03, -0.02)
    s = SpriteSpec(shape, (0.9, 0.9, 0.1), 0.2, (0.3, 0.7), v, 0)
    clip = generate_clip(DatasetConfig(clip_len=6, frame_size=size), 0, sprites=[s])
    # analytic oracle: center moves by v per frame (no wall is reached)
    centers = [np.argwhere(m == 1).mean(0)[::-1] for m in clip.gt_masks]  # (x, y) pixels
    for t in range(1, 6):
        disp = centers[t] - centers[t - 1]
        assert np.all(np.abs(disp - np.array(v) * size) <= 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.2), st.floats(0, 1), st.floats(0, 1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_bounce_keeps_sprite_inside(r, a, b, vx, vy):
    pos = np.array([r + a * (1 - 2 * r), r + b * (1 - 2 * r)])
    vel = np.array([vx, vy])
    for _ in range(50):
        pos, new_vel = _step(pos, vel, r)
        assert np.all(pos >= r - 1e-12) and np.all(pos <= 1 - r + 1e-12)
        assert np.allclose(np.abs(new_vel), np.abs(vel))
        vel = new_vel


def test_too_many_sprites_rejected():
    with pytest.raises(ConfigError):
        generate_clip(DatasetConfig(min_objects=6, max_objects=6, n_slots=6), 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_masks_partition_and_boxes_are_tight(seed):
    clip = generate_clip(CFG, seed)
    K = clip.n_objects
    assert clip.gt_masks.min() >= 0 and clip.gt_masks.max() <= K
    for t in range(CFG.clip_len):
        for k in range(K):
            m = clip.gt_masks[t] == k + 1
            assert clip.visible[t, k] == m.any()
            if not m.any():
                continue
            ys, xs = np.nonzero(m)
            x0, x1 = xs.min() / 32, (xs.max() + 1) / 32
            y0, y1 = ys.min() / 32, (ys.max() + 1) / 32
            expected = [(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0]
            assert np.allclose(clip.gt_boxes[t, k], expected, atol=1 / 32)


def test_generation_is_pure():
    assert generate_clip(CFG, 7).equals(generate_clip(CFG, 7))
    assert not generate_clip(CFG, 7).equals(generate_clip(CFG, 8))


def test_clip_round_trip(tmp_path):
    clip = generate_clip(CFG, 3)
    save_clip(clip, tmp_path / "c.vslt")
    assert load_clip(tmp_path / "c.vslt").equals(clip)


def test_corrupt_payload_is_checksum_error(tmp_path):
    path = tmp_path / "c.vslt"
    save_clip(generate_clip(CFG, 3), path)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_clip(path)


def test_version_bump_is_version_error(tmp_path):
    path = tmp_path / "c.vslt"
    save_clip(generate_clip(CFG, 3), path)
    raw = bytearray(path.read_bytes())
    raw[8] += 1  # uint16 version right after the 8-byte magic
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatVersionError):
        load_clip(path)


def test_truncated_file_error(tmp_path):
    path = tmp_path / "c.vslt"
    save_clip(generate_clip(CFG, 3), path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(TruncatedFileError):
        load_clip(path)


def test_dataset_manifest(tmp_path):
    generate_dataset(tmp_path, 3, 5, CFG)
    clips = load_dataset(tmp_path)
    assert [c.clip_id for c in clips] == ["clip_00000", "clip_00001", "clip_00002"]


def test_ingest_rejects_channel_mismatch(tmp_path):
    export_features(tmp_path / "f.feat", np.zeros((20, 8, 8, 32), np.float32))
    with pytest.raises(ShapeError):
        ingest_external_features(tmp_path / "f.feat", RunConfig(channels=64, encoder="external"))


def test_ingest_shapes(tmp_path):
    export_features(tmp_path / "f.feat", np.random.default_rng(0).random((20, 8, 8, 64), np.float32))
    maps = ingest_external_features(tmp_path / "f.feat", RunConfig(channels=64, encoder="external"))
    assert len(maps) == 20 and all(m.values.shape == (8, 8, 64) and m.frozen for m in maps)


def test_exported_features_reproduce_slots(tmp_path):
    cfg = RunConfig(clip_len=6, frame_size=32, patch_size=4, window_size=2)
    clip = generate_clip(DatasetConfig.from_run(cfg), 11)
    model = build_model(cfg)
    feats = clip_features(model, [clip])
    export_features(tmp_path / "f.feat", feats[0].numpy())
    maps = ingest_external_features(tmp_path / "f.feat", cfg)
    ingested = torch.as_tensor(np.stack([m.values for m in maps]))[None]
    with torch.no_grad():
        a = unroll(model, torch.as_tensor(clip.frames)[None])
        b = unroll(build_model(cfg), features=ingested)
    assert torch.equal(a.slots, b.slots) and torch.equal(a.masks, b.masks)
