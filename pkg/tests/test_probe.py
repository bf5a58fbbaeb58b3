import numpy as np
import pytest

from vidslots.data import DatasetConfig, generate_clips
from vidslots.eval import ProbeData, ProbeError, evaluate_probe, probe_targets, r2_score, train_probe
from vidslots.eval.evaluate import ClipOutputs


def test_r2_of_constant_mean_is_zero():
    target = np.random.default_rng(0).random((50, 4))
    assert r2_score(np.broadcast_to(target.mean(0), target.shape), target) == pytest.approx(0.0, abs=1e-12)
    assert r2_score(target, target) == 1.0


def perfect_slots(n, seed, c=16):
    """One-hot class plus exact box, embedded by a fixed random linear map."""
    rng = np.random.default_rng(seed)
    classes = rng.integers(0, 4, n)
    boxes = rng.random((n, 4)).astype(np.float32) * (classes > 0)[:, None]
    code = np.concatenate([np.eye(4)[classes], boxes], 1)
    embed = np.random.default_rng(1234).normal(size=(8, c))
    return ProbeData((code @ embed).astype(np.float32), classes, boxes)


def test_perfect_slots_are_perfectly_probed():
    probe = train_probe(perfect_slots(400, 0))
    scores = evaluate_probe(probe, perfect_slots(200, 1))
    assert scores["top1"] == 1.0 and scores["box_r2"] > 0.99


def test_all_background_matching_refuses():
    d = ProbeData(np.zeros((10, 4), np.float32), np.zeros(10, np.int64), np.zeros((10, 4), np.float32))
    with pytest.raises(ProbeError):
        train_probe(d)


def test_targets_follow_mask_matching():
    clip = generate_clips(DatasetConfig(clip_len=3, frame_size=32), 1, 5)[0]
    K = clip.n_objects
    # slot k+1 predicts sprite k exactly, remaining slots cover background
    masks = np.where(clip.gt_masks == 0, K + 1, clip.gt_masks)
    slots = np.random.default_rng(0).normal(size=(3, 6, 8)).astype(np.float32)
    data = probe_targets([ClipOutputs(clip.clip_id, slots, masks)], [clip], 6)
    assert data.slots.shape == (18, 8)
    per_frame = data.classes.reshape(3, 6)
    for t in range(3):
        vis = clip.visible[t]
        assert np.array_equal(per_frame[t, :K][vis], clip.gt_classes[vis])
        assert np.all(per_frame[t, K:] == 0)
        assert np.allclose(data.boxes.reshape(3, 6, 4)[t, :K][vis], clip.gt_boxes[t][vis])
