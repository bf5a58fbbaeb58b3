import numpy as np
import pytest
import torch

from vidslots.core import RunConfig, ShapeError
from vidslots.encoder import Encoder, encode
from vidslots.model import build_model
from vidslots.train import unroll


@pytest.mark.parametrize("kind", ["patch", "conv"])
def test_grid_shape_and_batch_commutation(kind):
    enc = Encoder(RunConfig(encoder=kind))
    frames = torch.as_tensor(np.random.default_rng(0).random((3, 64, 64, 3)), dtype=torch.float32)
    with torch.no_grad():
        batched = enc(frames)
    assert batched.shape == (3, 8, 8, 32)
    for i in range(3):
        single = encode(frames[i].numpy(), enc, i)
        assert single.values.shape == (8, 8, 32) and single.frame_index == i
        assert np.allclose(single.values, batched[i].numpy(), atol=1e-6)


def test_zero_frame_zero_weights_gives_zero_features():
    enc = Encoder(RunConfig())
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    assert not encode(np.zeros((64, 64, 3), np.float32), enc).values.any()


def test_identical_frames_identical_features():
    enc = Encoder(RunConfig())
    frame = np.random.default_rng(1).random((64, 64, 3)).astype(np.float32)
    assert np.array_equal(encode(frame, enc).values, encode(frame.copy(), enc).values)


def test_frame_validation():
    enc = Encoder(RunConfig())
    with pytest.raises(ShapeError):
        encode(np.zeros((32, 32, 3), np.float32), enc)
    with pytest.raises(ValueError):
        encode(np.full((64, 64, 3), 1.5, np.float32), enc)


@pytest.mark.parametrize("frozen", [True, False])
def test_frozen_encoder_receives_no_gradient(frozen):
    cfg = RunConfig(n_slots=3, channels=16, n_heads=2, mlp_hidden=16, decoder_hidden=16, frame_size=32,
                    clip_len=3, window_size=2, freeze_encoder=frozen, encoder="conv")
    model = build_model(cfg)
    frames = torch.as_tensor(np.random.default_rng(2).random((1, 3, 32, 32, 3)), dtype=torch.float32)
    unroll(model, frames).loss.backward()
    grads = [p.grad for p in model.encoder.parameters()]
    if frozen:
        assert all(g is None for g in grads)
    else:
        assert all(g is not None for g in grads) and any(g.abs().sum() > 0 for g in grads)
