import numpy as np
import pytest

from vidslots.analysis import JobManifest, ablation_grid, config_diff, expand_variants, offset_matrix
from vidslots.core import ConfigError, RunConfig
from vidslots.data import DatasetConfig, generate_clips
from vidslots.eval import evaluate_model
from vidslots.model import build_model

TINY = dict(n_slots=4, channels=16, n_heads=2, mlp_hidden=32, decoder_hidden=32, frame_size=32,
            patch_size=8, clip_len=6, window_size=3)


@pytest.fixture(scope="module")
def model_and_clips():
    cfg = RunConfig(**TINY).validate()
    return build_model(cfg), generate_clips(DatasetConfig.from_run(cfg), 3, 0)


def test_freshest_cell_equals_standard_evaluation(model_and_clips):
    model, clips = model_and_clips
    mat = offset_matrix(model, clips, "ARI_fg")
    assert mat.at(1, 0) == evaluate_model(model, clips).aggregate["ARI_fg"]
    assert mat.index(1, 0) == (2, 2)  # bottom-right
    assert mat.slot_offsets == [3, 2, 1] and mat.feature_offsets == [2, 1, 0]
    assert mat.fallbacks[mat.index(1, 0)] == 0 and mat.fallbacks[mat.index(3, 2)] > 0


def test_matrix_is_pure(model_and_clips):
    model, clips = model_and_clips
    a, b = offset_matrix(model, clips, "ARI"), offset_matrix(model, clips, "ARI")
    assert np.array_equal(a.values, b.values)


def test_matrix_refuses_untrained_offsets(model_and_clips):
    model, clips = model_and_clips
    with pytest.raises(ConfigError):
        offset_matrix(model, clips, delta=4)


def test_matrix_resumes_from_manifest(model_and_clips, tmp_path):
    model, clips = model_and_clips
    manifest = JobManifest(tmp_path / "jobs.json")
    first = offset_matrix(model, clips, manifest=manifest, delta=2)
    reloaded = JobManifest(tmp_path / "jobs.json")
    assert len(reloaded.jobs) == 4
    # cached cells are used as-is: corrupt one and observe it in the output
    key = next(k for k in reloaded.jobs if k.endswith(":2,1"))
    reloaded.jobs[key]["metrics"]["ARI_fg"] = -7.0
    again = offset_matrix(model, clips, manifest=reloaded, delta=2)
    assert again.at(2, 1) == -7.0 and again.at(1, 0) == first.at(1, 0)


def test_variants_change_only_their_axis():
    base = RunConfig(**TINY).validate()
    variants = expand_variants(base, {"window_size": [2, 3, 9], "time_injection": ["sum", "append"],
                                      "sample_pairs": [False]})
    names = [v.name for v in variants]
    assert names == ["full", "window_size=2", "window_size=9", "time_injection=append", "sample_pairs=False"]
    bad = variants[2]
    assert bad.skipped and bad.config is None  # window 9 exceeds clip_len 6
    for v in variants[1:]:
        if v.config is not None:
            assert set(config_diff(base, v.config)) == set(v.overrides)


def test_incompatible_axes_are_skipped_with_reason():
    base = RunConfig(**{**TINY, "transitioner_kind": "identity"}).validate()
    (full, tv), = [expand_variants(base, {"time_injection": ["none"]})]
    assert "randsfq" in tv.skipped
    base = RunConfig(**{**TINY, "time_injection": "none"}).validate()
    assert expand_variants(base, {"time_injection": ["append"]})[1].skipped


def test_ablation_grid_tabulates_mean_and_spread():
    base = RunConfig(**TINY).validate()
    calls = []

    def runner(cfg):
        calls.append(cfg)
        return {"test": {"ARI_plus_ARIfg": cfg.window_size + cfg.seed / 10}}

    grid = ablation_grid(base, {"window_size": [2]}, [0, 1, 2], runner)
    w2 = grid["variants"]["window_size=2"]
    assert w2["mean"] == pytest.approx(2.1) and w2["spread"] == pytest.approx(np.std([2.0, 2.1, 2.2]))
    assert w2["config_diff"] == {"window_size": [3, 2]}
    assert len(calls) == 6 and sorted({c.seed for c in calls}) == [0, 1, 2]
