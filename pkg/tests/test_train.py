import numpy as np
import pytest
import torch

from vidslots.core import OptimConfig, RunConfig, make_rng
from vidslots.data import DatasetConfig, generate_clips
from vidslots.model import build_model
from vidslots.train import (
    EvictedError,
    RecurrenceTrace,
    load_checkpoint,
    lr_factor,
    parameter_hash,
    sample_pair,
    train_loop,
    unroll,
)

TINY = dict(n_slots=4, channels=16, n_heads=2, mlp_hidden=32, decoder_hidden=32, frame_size=32,
            patch_size=8, clip_len=6, window_size=3)


def tiny_cfg(**kw):
    return RunConfig(**{**TINY, **kw}).validate()


def frames(cfg, n=2, seed=0):
    clips = generate_clips(DatasetConfig.from_run(cfg, max_objects=min(3, cfg.n_slots - 1)), n, seed)
    return torch.as_tensor(np.stack([c.frames for c in clips])), clips


def full_trace(t, window):
    trace = RecurrenceTrace(window)
    for f in range(1, t + 1):
        trace.push_slots(f, f)
    for f in range(1, t + 2):
        trace.push_feature(f, f)
    return trace


# ---- sampler ------------------------------------------------------------------

def test_window_one_is_evaluation_pairing():
    rng = make_rng(0, "sampler")
    for _ in range(100):
        p = sample_pair(3, 1, full_trace(3, 1), rng)
        assert (p.t1, p.t2, p.slot_offset, p.feature_offset) == (3, 4, 1, 0)


@pytest.mark.parametrize("t,lo1,lo2", [(7, 3, 4), (2, 1, 1)])
def test_sampler_is_uniform_over_clamped_windows(t, lo1, lo2):
    n = 100_000
    rng = make_rng(1, "sampler")
    trace = full_trace(t, 5)
    draws = np.array([(p.t1, p.t2) for p in (sample_pair(t, 5, trace, rng) for _ in range(n))])
    for col, lo, hi in ((0, lo1, t), (1, lo2, t + 1)):
        values = np.arange(lo, hi + 1)
        assert set(np.unique(draws[:, col])) == set(values)
        p = 1 / len(values)
        freqs = np.array([(draws[:, col] == v).mean() for v in values])
        assert np.all(np.abs(freqs - p) < 5 * np.sqrt(p * (1 - p) / n))
    # independence of the two draws: joint frequencies factorize
    joint = np.mean((draws[:, 0] == t) & (draws[:, 1] == t + 1))
    assert abs(joint - (1 / (t - lo1 + 1)) / (t + 2 - lo2)) < 0.01


def test_sampler_offsets_stay_in_table_range():
    rng = make_rng(2, "sampler")
    for t in range(1, 20):
        p = sample_pair(t, 5, full_trace(t, 5), rng)
        assert 1 <= p.slot_offset <= 5 and 0 <= p.feature_offset <= 4


def test_evicted_frames_raise():
    trace = RecurrenceTrace(2)
    for f in range(1, 8):
        trace.push_slots(f, f)
        trace.push_feature(f, f)
    assert len(trace) == 2 and trace.slot_frames == [6, 7]
    with pytest.raises(EvictedError):
        trace.slots(5)
    with pytest.raises(EvictedError):
        sample_pair(7, 5, trace, make_rng(0, "sampler"))


# ---- unroll -------------------------------------------------------------------

def test_eval_unroll_is_deterministic():
    cfg = tiny_cfg()
    model = build_model(cfg)
    x, _ = frames(cfg)
    a, b = unroll(model, x), unroll(model, x)
    assert torch.equal(a.slots, b.slots) and torch.equal(a.loss, b.loss)


@pytest.mark.parametrize("overrides", [dict(window_size=1), dict(sample_pairs=False)])
def test_train_mode_degenerates_to_eval(overrides):
    cfg = tiny_cfg(**overrides)
    model = build_model(cfg)
    x, _ = frames(cfg)
    ev = unroll(model, x, mode="eval")
    tr = unroll(model, x, mode="train", rng=make_rng(0, "sampler"))
    for name in ("queries", "slots", "attention", "masks", "reconstruction", "loss"):
        assert torch.equal(getattr(ev, name), getattr(tr, name)), name


def test_identity_transitioner_copies_slots():
    cfg = tiny_cfg(transitioner_kind="identity")
    ro = unroll(build_model(cfg), frames(cfg)[0])
    assert torch.equal(ro.queries[:, 1:], ro.slots[:, :-1])


def test_train_mode_uses_sampled_pairs():
    cfg = tiny_cfg(window_size=3)
    ro = unroll(build_model(cfg), frames(cfg)[0], mode="train", rng=make_rng(3, "sampler"))
    offsets = {(p.slot_offset, p.feature_offset) for step in ro.pairs for p in step}
    assert len(offsets) > 1 and all(1 <= a <= 3 and 0 <= b <= 2 for a, b in offsets)


@pytest.mark.parametrize("kind", ["randsfq", "encoder_block", "identity"])
def test_unroll_permutation_equivariance(kind):
    cfg = tiny_cfg(transitioner_kind=kind)
    model = build_model(cfg, dtype=torch.float64)
    x = frames(cfg)[0].double()
    q = model.initial_query(2)
    perm = torch.tensor([3, 0, 2, 1])
    with torch.no_grad():
        a = unroll(model, x, query=q)
        b = unroll(model, x, query=q[:, perm])
    assert torch.allclose(b.slots, a.slots[:, :, perm], atol=1e-8)
    assert torch.allclose(b.queries, a.queries[:, :, perm], atol=1e-8)
    assert torch.allclose(b.attention, a.attention[:, :, perm], atol=1e-8)
    assert torch.equal(b.masks, torch.argsort(perm)[a.masks - 1] + 1)
    assert abs(float(a.loss) - float(b.loss)) < 1e-5


def test_gradient_reaches_every_trainable_part():
    cfg = tiny_cfg()
    model = build_model(cfg)
    ro = unroll(model, frames(cfg)[0], mode="train", rng=make_rng(0, "sampler"))
    ro.loss.backward()
    for prefix in ("aggregator", "transitioner.self_attn", "transitioner.cross_attn", "transitioner.time_table",
                   "decoder"):
        grads = [p.grad for n, p in model.named_parameters() if n.startswith(prefix)]
        assert grads and all(g is not None for g in grads) and any(g.abs().sum() > 0 for g in grads), prefix
    assert all(p.grad is None for p in model.encoder.parameters())


def test_nonfinite_loss_aborts_with_diagnostics():
    cfg = tiny_cfg()
    model = build_model(cfg)
    with torch.no_grad():
        model.decoder.fc3.bias.fill_(float("inf"))
    with pytest.raises(FloatingPointError, match="parameter norms"):
        unroll(model, frames(cfg)[0])


def test_matrix_offsets_fall_back_at_clip_start():
    cfg = tiny_cfg(window_size=3)
    ro = unroll(build_model(cfg), frames(cfg)[0], offsets=(3, 2))
    assert ro.fallbacks == 2  # transitions t=1,2 reach before frame 1
    assert [p.t1 for p in (step[0] for step in ro.pairs)] == [1, 1, 1, 2, 3]
    with pytest.raises(ValueError):
        unroll(build_model(cfg), frames(cfg)[0], offsets=(4, 0))


# ---- loop -----------------------------------------------------------------------

def test_lr_schedule_shape():
    assert lr_factor(0, 10, 100) == pytest.approx(0.1)
    assert lr_factor(9, 10, 100) == pytest.approx(1.0)
    assert lr_factor(100, 10, 100) == pytest.approx(0.0)


def test_training_is_bitwise_deterministic(tmp_path):
    cfg = tiny_cfg(optim=OptimConfig(steps=6, batch_size=2, eval_every=3, warmup_steps=2, n_val_clips=2))
    _, clips = frames(cfg, 4)
    train_loop(cfg, clips[:3], clips[3:], tmp_path / "a")
    train_loop(cfg, clips[:3], clips[3:], tmp_path / "b")
    for name in ("last.ckpt", "best.ckpt", "metrics.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_loss_decreases_and_frozen_encoder_unchanged():
    cfg = tiny_cfg(optim=OptimConfig(steps=500, batch_size=4, eval_every=1000, warmup_steps=20, lr=1e-3))
    _, clips = frames(cfg, 16, seed=4)
    model = build_model(cfg)
    before = parameter_hash(model.encoder)
    res = train_loop(cfg, clips, model=model)
    assert parameter_hash(model.encoder) == before
    assert res.final_loss < res.initial_loss


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg(optim=OptimConfig(steps=2, batch_size=2, eval_every=10))
    _, clips = frames(cfg, 2)
    res = train_loop(cfg, clips, out_dir=tmp_path)
    model, meta = load_checkpoint(tmp_path / "last.ckpt")
    assert meta["step"] == 2 and meta["config_hash"] == cfg.hash()
    assert parameter_hash(model) == parameter_hash(res.model)
