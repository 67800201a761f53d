import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clit import CLIT, cslab_attend, freq_encode, hr_lattice, local_grid, positional_bias
from clit.config import CascadeConfig, EncoderConfig, LitConfig, ModelConfig
from clit.coords import QueryBatch, nearest_index, pixel_centers
from clit.lit import LIT
from clit.numerics import GradientTape, Linear, Tensor, no_grad, ops

from helpers import attention_oracle, check_gradients


def small_lit(channels=8, rng=0, padding="zeros", **kw):
    cfg = dict(heads=2, grid=(3, 3), decoder_hidden=16)
    cfg.update(kw)
    return LIT(channels, LitConfig(**cfg), np.random.default_rng(rng), padding)


def feat(h=6, w=5, c=8, seed=1, dtype=np.float32):
    return Tensor(np.random.default_rng(seed).normal(size=(h, w, c)).astype(dtype))


# ---------------------------------------------------------------- coordinates


def test_hr_lattice_examples():
    q2 = hr_lattice(2, 3)
    assert sorted(set(q2.coords[:, 0])) == [-0.5, 0.5]
    assert q2.cell[0] == 1.0
    q4 = hr_lattice(4, 1)
    assert q4.coords[:, 0].tolist() == [-0.75, -0.25, 0.25, 0.75]
    lat = hr_lattice(5, 7)
    assert np.array_equal(lat.coords.reshape(5, 7, 2)[:, 0, 0], pixel_centers(5))
    assert np.array_equal(lat.coords.reshape(5, 7, 2)[0, :, 1], pixel_centers(7))


@given(st.integers(1, 200))
def test_centers_symmetric_and_increasing(n):
    c = pixel_centers(n)
    assert np.all(np.diff(c) > 0)
    np.testing.assert_allclose(c, -c[::-1], atol=1e-12)


def test_local_grid_nearest_center_example():
    g = local_grid(np.array([[0.1, 0.1]]), (4, 4), (3, 3))
    assert tuple(g.center[0]) == (2, 2)
    np.testing.assert_allclose(g.offsets[0, 4], [-0.15, -0.15], atol=1e-12)
    assert g.index[0, 4] == 2 * 4 + 2


def test_local_grid_on_center_has_zero_offset():
    c = pixel_centers(6)
    g = local_grid(np.array([[c[3], c[1]]]), (6, 6), (5, 5))
    assert np.array_equal(g.offsets[0, 12], [0.0, 0.0])


def test_nearest_tie_goes_to_smaller_index():
    # 0.0 is halfway between the two middle centers of a 4-pixel axis
    assert nearest_index(np.array([0.0]), 4)[0] == 1
    assert nearest_index(np.array([-1.0]), 4)[0] == 0
    assert nearest_index(np.array([1.0]), 4)[0] == 3


def test_local_grid_corner_clamps_but_keeps_ideal_offsets():
    h = w = 5
    q = np.array([[-1.0, -1.0]])
    g = local_grid(q, (h, w), (7, 7))
    # hand enumeration: center (0, 0), rows/cols -3..3 clamp into 0..4
    rows = np.clip(np.arange(-3, 4), 0, h - 1)
    cols = np.clip(np.arange(-3, 4), 0, w - 1)
    expected_index = (rows[:, None] * w + cols[None, :]).ravel()
    assert np.array_equal(g.index[0], expected_index)
    ideal = -1 + (2 * np.arange(-3, 4) + 1) / h
    oy = g.offsets[0, :, 0].reshape(7, 7)
    np.testing.assert_allclose(oy[:, 0], -1.0 - ideal, atol=1e-12)
    lr_pitch = 2 / h
    span = oy.max() - oy.min()
    np.testing.assert_allclose(span, 6 * lr_pitch, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 12), st.integers(1, 12))
def test_center_offset_within_half_pitch(y, x, h, w):
    g = local_grid(np.array([[y, x]]), (h, w), (3, 3))
    off = g.offsets[0, 4]
    assert abs(off[0]) <= 1 / h + 1e-9 and abs(off[1]) <= 1 / w + 1e-9


def test_even_grid_rejected():
    with pytest.raises(ValueError):
        local_grid(np.zeros((1, 2)), (4, 4), (4, 3))
    with pytest.raises(ValueError):
        LitConfig(grid=(6, 7)).validate(64)


# ---------------------------------------------------------------- projections


def test_identity_projections_return_features():
    lit = small_lit()
    for conv in (lit.q_proj, lit.k_proj, lit.v_proj):
        conv.set_identity()
    f = feat()
    q, k, v = lit.project(f)
    for m in (q, k, v):
        assert np.array_equal(m.data, f.data)


def test_gradient_reaches_all_projections():
    lit = small_lit().to(np.float64)
    f = feat(dtype=np.float64)
    queries = QueryBatch(np.random.default_rng(2).uniform(-1, 1, (6, 2)), (0.2, 0.2))
    with GradientTape() as tape:
        tape.backward(ops.sum(lit(f, queries)))
    for name in ("q_proj", "k_proj", "v_proj"):
        w = getattr(lit, name).weight
        assert w.grad is not None and np.abs(w.grad).max() > 0, name


def test_channel_mismatch_error():
    with pytest.raises(ValueError, match="feature map"):
        small_lit().project(feat(c=4))


# ---------------------------------------------------------------- frequency encoding / bias


def test_freq_encode_zero_pattern_and_width():
    enc = freq_encode(np.zeros((1, 2)), 10)
    assert enc.shape == (1, 40)
    assert enc[0].tolist() == [0.0, 1.0] * 20


def test_freq_encode_first_entries():
    enc = freq_encode(np.array([[0.5, 0.0]]), 10)[0]
    np.testing.assert_allclose(enc[:4], [np.sin(0.5), np.cos(0.5), np.sin(1.0), np.cos(1.0)], atol=1e-15)
    # x block starts after the 20 y entries
    assert enc[20:24].tolist() == [0.0, 1.0, 0.0, 1.0]
    np.testing.assert_allclose(enc[18:20], [np.sin(0.5 * 2**9), np.cos(0.5 * 2**9)], atol=1e-12)


def test_positional_bias_zero_fc_and_equivariance():
    rng = np.random.default_rng(3)
    fc = Linear(40, 4, rng)
    offs = rng.uniform(-0.5, 0.5, size=(2, 9, 2))
    b = positional_bias(offs, fc).data
    assert b.shape == (2, 9, 4)
    perm = rng.permutation(9)
    np.testing.assert_allclose(positional_bias(offs[:, perm], fc).data, b[:, perm], atol=1e-6)
    fc.weight.data[:] = 0
    fc.bias.data[:] = 0
    assert np.all(positional_bias(offs, fc).data == 0)


def test_positional_bias_one_hot_row_selects_component():
    rng = np.random.default_rng(4)
    fc = Linear(40, 2, rng)
    fc.weight.data[:] = 0
    fc.bias.data[:] = 0
    fc.weight.data[2, 0] = 1.0  # sin(2 * dy) to head 0
    fc.weight.data[23, 1] = 1.0  # cos(2 * dx) to head 1
    offs = rng.uniform(-0.5, 0.5, size=(1, 5, 2))
    b = positional_bias(offs, fc).data.astype(np.float64)
    np.testing.assert_allclose(b[0, :, 0], np.sin(2 * offs[0, :, 0]), atol=1e-6)
    np.testing.assert_allclose(b[0, :, 1], np.cos(2 * offs[0, :, 1]), atol=1e-6)


def test_zero_bias_means_pure_content_attention():
    rng = np.random.default_rng(5)
    q, k, v = rng.normal(size=(1, 8)), rng.normal(size=(9, 8)), rng.normal(size=(9, 8))
    z0, w0 = cslab_attend(q, k, v, None, 2)
    z1, w1 = cslab_attend(q, k, v, np.zeros((2, 9)), 2)
    np.testing.assert_array_equal(z0, z1)


# ---------------------------------------------------------------- CSLAB


def test_cslab_single_key_returns_value():
    rng = np.random.default_rng(6)
    v = rng.normal(size=(1, 8))
    z, w = cslab_attend(rng.normal(size=(1, 8)), rng.normal(size=(1, 8)), v, rng.normal(size=(4, 1)), 4)
    assert np.array_equal(z, v)
    assert np.array_equal(w, np.ones((4, 1)))


def test_cslab_identical_keys_average_values():
    rng = np.random.default_rng(7)
    k = np.tile(rng.normal(size=(1, 4)), (5, 1))
    v = rng.normal(size=(5, 4))
    z, _ = cslab_attend(rng.normal(size=(1, 4)), k, v, np.zeros((2, 5)), 2)
    np.testing.assert_allclose(z[0], v.mean(0), atol=1e-12)


def test_cslab_matches_independent_oracle():
    rng = np.random.default_rng(8)
    q, k, v, b = rng.normal(size=(1, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(2, 3))
    z, w = cslab_attend(q, k, v, b, 2)
    zr, wr = attention_oracle(q, k, v, b, 2)
    np.testing.assert_allclose(z, zr, atol=1e-6)
    np.testing.assert_allclose(w, wr, atol=1e-6)


def test_cslab_empty_grid_errors():
    with pytest.raises(ValueError):
        cslab_attend(np.ones((1, 4)), np.ones((0, 4)), np.ones((0, 4)), None, 2)


# ---------------------------------------------------------------- decoder


def test_decoder_ignores_cell_when_disabled():
    lit = small_lit(use_cell=False)
    z = Tensor(np.random.default_rng(9).normal(size=(4, 8)).astype(np.float32))
    assert np.array_equal(lit.decode(z, (0.1, 0.1)).data, lit.decode(z, (1.5, 0.02)).data)


def test_decoder_depends_on_cell_when_enabled():
    lit = small_lit()
    z = Tensor(np.random.default_rng(9).normal(size=(4, 8)).astype(np.float32))
    assert not np.array_equal(lit.decode(z, (0.1, 0.1)).data, lit.decode(z, (1.5, 0.02)).data)


def test_zero_output_layer_gives_zero_residual():
    lit = small_lit()
    lit.zero_output()
    out = lit(feat(), hr_lattice(9, 7))
    assert np.all(out.data == 0)


def test_decoder_parameter_count():
    c = 64
    lit = LIT(c, LitConfig(), np.random.default_rng(0))
    weights = (c + 2) * 256 + 3 * 256 * 256 + 256 * 3
    biases = 4 * 256 + 3
    assert lit.decoder_parameter_count() == weights + biases
    assert len(lit.decoder.layers) == 5


# ---------------------------------------------------------------- forward


def test_identity_scale_lattice_is_finite():
    lit = small_lit()
    out = lit(feat(6, 5), hr_lattice(6, 5)).data
    assert out.shape == (30, 3) and np.all(np.isfinite(out))


@pytest.mark.parametrize("chunk", [1, 7, 64])
def test_batch_invariance(chunk):
    f = feat()
    q = QueryBatch(np.random.default_rng(10).uniform(-1, 1, (23, 2)), (0.13, 0.21))
    full = small_lit().forward(f, q)
    split = small_lit(query_chunk=chunk).forward(f, q)
    np.testing.assert_allclose(split.rgb.data, full.rgb.data, atol=1e-6)
    one = small_lit().forward(f, q.subset(slice(5, 6)))
    np.testing.assert_allclose(one.rgb.data[0], full.rgb.data[5], atol=1e-6)


def test_single_cell_grid_is_nearest_pixel_function():
    lit = small_lit(grid=(1, 1))
    f = feat()
    h, w, c = f.shape
    coords = np.random.default_rng(11).uniform(-1, 1, (17, 2))
    cell = (0.1, 0.2)
    got = lit(f, QueryBatch(coords, cell)).data
    v = lit.v_proj(f).data
    i, j = nearest_index(coords[:, 0], h), nearest_index(coords[:, 1], w)
    z = v[i, j]
    ref = lit.decoder(Tensor(np.concatenate([z, np.broadcast_to(np.float32(cell), (17, 2))], 1))).data
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_attention_off_uses_single_cell_grid():
    assert LitConfig(use_attention=False).effective_grid == (1, 1)


def test_attention_weights_normalized():
    lit = small_lit(heads=4, grid=(5, 5))
    q = QueryBatch(np.random.default_rng(12).uniform(-1, 1, (300, 2)), (0.1, 0.1))
    att = lit.forward(feat(), q).attention
    assert att.shape == (300, 4, 25)
    assert np.all(att >= 0)
    np.testing.assert_allclose(att.sum(-1), 1.0, atol=1e-6)


def test_dropping_attention_keeps_rgb():
    lit = small_lit(query_chunk=7)
    q = QueryBatch(np.random.default_rng(18).uniform(-1, 1, (30, 2)), (0.1, 0.1))
    kept, dropped = lit.forward(feat(), q), lit.forward(feat(), q, keep_attention=False)
    assert dropped.attention is None and kept.attention.shape == (30, 2, 9)
    assert np.array_equal(kept.rgb.data, dropped.rgb.data)


def test_ensemble_weights_sum_to_one():
    lit = small_lit(local_ensemble=True)
    coords = np.random.default_rng(13).uniform(-1, 1, (50, 2))
    w = lit.ensemble_weights(coords, (6, 5))
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)
    assert np.all(w >= 0)


def test_ensemble_on_lr_center_matches_plain_query():
    f = feat()
    centers = hr_lattice(6, 5)
    ens = small_lit(local_ensemble=True).forward(f, centers)
    plain = small_lit().forward(f, centers)
    assert ens.attention is None
    assert np.all(np.isfinite(ens.rgb.data))
    np.testing.assert_allclose(ens.rgb.data, plain.rgb.data, atol=1e-6)


@pytest.mark.parametrize("ensemble", [False, True])
def test_constant_image_gives_uniform_residual(ensemble):
    cfg = ModelConfig(
        encoder=EncoderConfig(channels=8, n_resblocks=1, padding="replicate"),
        lit=LitConfig(heads=2, grid=(3, 3), decoder_hidden=16, local_ensemble=ensemble),
        cascade=CascadeConfig(),
    )
    model = CLIT(cfg, rng=0)
    img = np.full((6, 6, 3), 0.4, np.float32)
    _, (res,), skip = model.upscale(img, 2.7, return_branches=True)
    np.testing.assert_allclose(res, np.broadcast_to(res[0, 0], res.shape), atol=1e-5)
    np.testing.assert_allclose(skip, 0.4, atol=1e-6)


def test_shift_equivariance_at_integer_scale():
    cfg = ModelConfig(
        encoder=EncoderConfig(channels=8, n_resblocks=1),
        lit=LitConfig(heads=2, grid=(3, 3), decoder_hidden=16),
    )
    model = CLIT(cfg, rng=3)
    img = np.random.default_rng(14).uniform(size=(24, 24, 3)).astype(np.float32)
    r = 2
    a = model.upscale(img[:, :23], r)
    b = model.upscale(img[:, 1:], r)
    border = 8 * r
    # column m + r of the left crop sees the same LR content as column m of the right crop
    np.testing.assert_allclose(a[border:-border, border + r : -border], b[border:-border, border : -border - r], atol=1e-4)


def test_lit_gradcheck_float64():
    lit = small_lit(channels=4, heads=2, grid=(3, 3), decoder_hidden=6, decoder_depth=3).to(np.float64)
    f = Tensor(np.random.default_rng(15).normal(size=(4, 4, 4)), requires_grad=True)
    q = QueryBatch(np.random.default_rng(16).uniform(-1, 1, (3, 2)), (0.3, 0.3))
    y = np.random.default_rng(17).normal(size=(3, 3))
    params = dict(lit.named_parameters())
    params["features"] = f
    errs = check_gradients(lambda: ops.l1_loss(lit(f, q), y), params)
    assert max(errs.values()) < 1e-3, errs


def test_no_grad_inference_records_nothing():
    lit = small_lit()
    with GradientTape() as tape, no_grad():
        lit(feat(), hr_lattice(4, 4))
    assert tape.ops == []
