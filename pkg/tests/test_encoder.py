import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clit.config import EncoderConfig
from clit.encoder import Encoder, ResBlock
from clit.numerics import Tensor

from helpers import conv_loop


def _encoder(**kw):
    return Encoder(EncoderConfig(**kw), np.random.default_rng(0))


def test_zero_image_with_zero_tail_gives_head_bias_pattern():
    enc = _encoder(channels=64, n_resblocks=2)
    enc.tail.set_zero()
    img = np.zeros((8, 8, 3), dtype=np.float32)
    out = enc(img).data
    assert out.shape == (8, 8, 64)
    # Head sees the constant -mean image: its output is a bias plus a border-dependent conv pattern.
    mean = np.asarray(enc.config.rgb_mean, dtype=np.float64)
    ref = conv_loop(np.broadcast_to(-mean, (8, 8, 3)), enc.head.weight.data.astype(np.float64),
                    enc.head.bias.data.astype(np.float64))
    np.testing.assert_allclose(out, ref, atol=1e-5)
    # interior pixels all equal
    assert np.allclose(out[1:-1, 1:-1], out[3, 3], atol=1e-6)


def test_one_resblock_matches_hand_computation():
    rng = np.random.default_rng(1)
    enc = Encoder(EncoderConfig(channels=4, n_resblocks=1, rgb_mean=(0.0, 0.0, 0.0)), rng)
    img = rng.uniform(size=(5, 6, 3))
    f64 = lambda t: t.data.astype(np.float64)  # noqa: E731
    head = conv_loop(img, f64(enc.head.weight), f64(enc.head.bias))
    blk = enc.blocks[0]
    mid = np.maximum(conv_loop(head, f64(blk.conv1.weight), f64(blk.conv1.bias)), 0)
    body = head + conv_loop(mid, f64(blk.conv2.weight), f64(blk.conv2.bias))
    ref = conv_loop(body, f64(enc.tail.weight), f64(enc.tail.bias)) + head
    np.testing.assert_allclose(enc(img.astype(np.float32)).data, ref, atol=1e-4)


@settings(max_examples=15, deadline=None)
@given(st.integers(3, 32), st.integers(3, 32))
def test_spatial_dims_preserved(h, w):
    enc = _encoder(channels=8, n_resblocks=1)
    assert enc(np.zeros((h, w, 3), np.float32)).shape == (h, w, 8)


def test_zeroed_second_convs_reduce_body_to_identity():
    rng = np.random.default_rng(2)
    enc = Encoder(EncoderConfig(channels=8, n_resblocks=3), rng)
    for b in enc.blocks:
        b.conv2.set_zero()
    enc.tail.set_identity()
    img = rng.uniform(size=(7, 7, 3)).astype(np.float32)
    x = Tensor(img - np.asarray(enc.config.rgb_mean, dtype=np.float32))
    head = enc.head(x).data
    # every block passes through, tail is identity, global skip doubles the head
    np.testing.assert_allclose(enc(img).data, 2 * head, atol=1e-6)


def test_rejects_non_rgb_input():
    enc = _encoder(channels=8, n_resblocks=1)
    with pytest.raises(ValueError, match="3\\)"):
        enc(np.zeros((4, 4, 1), np.float32))
    with pytest.raises(ValueError):
        enc(np.zeros((4, 4), np.float32))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(channels=0).validate()
    with pytest.raises(ValueError):
        EncoderConfig(n_resblocks=0).validate()
    with pytest.raises(ValueError):
        EncoderConfig(padding="reflect").validate()


def test_resblock_res_scale():
    rng = np.random.default_rng(3)
    blk = ResBlock(4, rng, res_scale=0.5)
    x = Tensor(rng.normal(size=(5, 5, 4)).astype(np.float32))
    full = ResBlock.__call__(blk, x).data
    blk.res_scale = 1.0
    unit = blk(x).data
    np.testing.assert_allclose(full - x.data, 0.5 * (unit - x.data), atol=1e-6)


def test_deterministic_given_parameters():
    enc = _encoder(channels=8, n_resblocks=2)
    img = np.random.default_rng(4).uniform(size=(6, 6, 3)).astype(np.float32)
    assert np.array_equal(enc(img).data, enc(img).data)
