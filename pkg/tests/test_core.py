import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fggb.autodiff import forward
from fggb.core import (
    aggregate,
    channel_weights,
    dump_saliency,
    explain_pair,
    gradient_stack,
    load_saliency,
    normalize_stack,
    parse_saliency,
    save_saliency,
    split,
)
from fggb.embedder import ModelParams, block_pool_spec, conv_spec, cosine, init_model, linear_spec
from fggb.errors import DegenerateEmbeddingError, FormatError, ShapeError

from oracles import central_jacobian, cos_py, fggb_map_py, rel_err

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# -- gradient_stack ---------------------------------------------------------------


def test_gradient_stack_linear_is_weight_rows(rng):
    spec = linear_spec((2, 3, 2), 4)
    W = rng.standard_normal((4, 12))
    params = ModelParams.from_weights(spec, [(), (W,)])
    g = gradient_stack(params, rng.random((2, 3, 2)))
    assert np.array_equal(g, W.reshape(4, 2, 3, 2))


def test_gradient_stack_matches_finite_differences(small_conv, rng):
    x = rng.random((16, 16, 1))
    g = gradient_stack(small_conv, x)
    assert g.shape == (8, 16, 16, 1)
    numeric = central_jacobian(lambda z: forward(small_conv, z)[0], x, 1e-5)
    for k in range(8):
        assert rel_err(g[k], numeric[k]) < 1e-4


def test_gradient_stack_deterministic_across_workers(tiny_conv, rng):
    x = rng.random((8, 8, 2))
    g1 = gradient_stack(tiny_conv, x)
    assert np.array_equal(g1, gradient_stack(tiny_conv, x))
    assert np.array_equal(g1, gradient_stack(tiny_conv, x, workers=3))


# -- normalize_stack --------------------------------------------------------------


def test_normalize_hand_example():
    g = np.array([[[3.0], [-4.0]], [[0.0], [0.0]]])[None]
    out = normalize_stack(g)
    np.testing.assert_allclose(out[0, :, :, 0], [[0.6, 0.8], [0.0, 0.0]], rtol=1e-15)


def test_normalize_zero_map_stays_zero(rng):
    g = np.stack([np.zeros((3, 3, 1)), rng.standard_normal((3, 3, 1))])
    out = normalize_stack(g)
    assert not out[0].any()
    assert np.sqrt(np.sum(out[1] ** 2)) == pytest.approx(1.0, abs=1e-12)


@given(arrays(np.float64, (3, 4, 4, 2), elements=finite), st.floats(1e-6, 1e6))
def test_normalize_unit_norm_nonnegative_and_scale_free(g, c):
    out = normalize_stack(g)
    assert (out >= 0).all()
    for k in range(3):
        if np.any(g[k]):
            assert np.sqrt(np.sum(out[k] ** 2)) == pytest.approx(1.0, abs=1e-9)
        else:
            assert not out[k].any()
    # rescaling subnormal entries would itself underflow
    if np.all((g == 0) | (np.abs(g) > 1e-200)):
        np.testing.assert_allclose(normalize_stack(c * g), out, rtol=0, atol=1e-12)


# -- channel_weights ---------------------------------------------------------------


def test_channel_weights_examples():
    np.testing.assert_array_equal(channel_weights([1.0, 0, 0], [1.0, 0, 0]), [1.0, 0, 0])
    np.testing.assert_allclose(channel_weights([3.0, 4.0], [3.0, 4.0]), [0.36, 0.64], rtol=1e-15)


def test_channel_weights_sum_to_cosine(rng):
    for _ in range(50):
        fa, fb = rng.standard_normal(128), rng.standard_normal(128)
        w = channel_weights(fa, fb)
        assert abs(w.sum() - cos_py(fa, fb)) < 1e-12


def test_channel_weights_degenerate():
    with pytest.raises(DegenerateEmbeddingError):
        channel_weights(np.zeros(3), np.ones(3))
    with pytest.raises(ShapeError):
        channel_weights(np.ones(3), np.ones(4))


# -- aggregate ------------------------------------------------------------------------


def test_aggregate_uniform_example():
    norm = np.full((2, 2, 2, 1), 0.5)
    s = aggregate(norm, np.array([0.5, 0.5]), 0.0)
    np.testing.assert_array_equal(s, np.full((2, 2), 0.5))


def test_aggregate_all_negative_coefficients(rng):
    norm = normalize_stack(rng.standard_normal((2, 3, 3, 1)))
    s = aggregate(norm, np.array([0.3, 0.3]), 1.0)
    assert (s <= 0).all()
    assert not split(s)[0].any()


def test_aggregate_matches_direct_formula(rng):
    g = rng.standard_normal((6, 4, 5, 3))
    g[2] = 0.0
    fa, fb = rng.standard_normal(6), rng.standard_normal(6)
    s = aggregate(normalize_stack(g), channel_weights(fa, fb), 0.3)
    np.testing.assert_allclose(s, fggb_map_py(g, fa, fb, 0.3), rtol=1e-12, atol=1e-14)


def test_aggregate_grayscale_needs_no_reduction(rng):
    norm = normalize_stack(rng.standard_normal((3, 4, 4, 1)))
    w = np.array([0.2, -0.1, 0.4])
    expect = sum(norm[k, :, :, 0] * (w[k] - 0.25 / 3) for k in range(3))
    np.testing.assert_array_equal(aggregate(norm, w, 0.25), expect)


def test_aggregate_length_mismatch():
    with pytest.raises(ShapeError):
        aggregate(np.zeros((3, 2, 2, 1)), np.zeros(2), 0.0)


def test_sign_lemma_positive_coefficients(rng):
    norm = normalize_stack(rng.standard_normal((5, 6, 6, 3)))
    w = rng.random(5) * 0.2 + 0.1
    s = aggregate(norm, w, 0.4)  # every w_k >= 0.1 > 0.4 / 5
    assert (s >= 0).all()


# -- split ----------------------------------------------------------------------------


def test_split_example():
    plus, minus = split(np.array([[0.2, -0.1], [0.0, 0.3]]))
    np.testing.assert_array_equal(plus, [[0.2, 0.0], [0.0, 0.3]])
    np.testing.assert_array_equal(minus, [[0.0, -0.1], [0.0, 0.0]])


def test_split_all_negative():
    plus, minus = split(-np.ones((3, 3)))
    assert not plus.any()
    assert (minus == -1).all()


@given(arrays(np.float64, (5, 7), elements=finite))
def test_split_reconstructs_exactly(s):
    plus, minus = split(s)
    assert np.array_equal(plus + minus, s)
    assert (plus >= 0).all() and (minus <= 0).all()
    assert not np.any((plus != 0) & (minus != 0))
    assert not np.any(minus[s == 0])


# -- explain_pair --------------------------------------------------------------------


def test_identical_images_at_zero_threshold_have_no_dissimilarity(small_conv, rng):
    x = rng.random((16, 16, 1))
    ex = explain_pair(small_conv, x, x, 0.0)
    assert ex.verdict.accept
    assert not ex.dissim_a.any() and not ex.dissim_b.any()
    assert ex.sim_a.any()


def test_explain_pair_is_composition_of_steps(tiny_conv, rng):
    ia, ib = rng.random((8, 8, 2)), rng.random((8, 8, 2))
    ex = explain_pair(tiny_conv, ia, ib, 0.2)
    fa, _ = forward(tiny_conv, ia)
    fb, _ = forward(tiny_conv, ib)
    w = channel_weights(fa, fb)
    sa = aggregate(normalize_stack(gradient_stack(tiny_conv, ia)), w, 0.2)
    sb = aggregate(normalize_stack(gradient_stack(tiny_conv, ib)), w, 0.2)
    for got, want in [((ex.sim_a, ex.dissim_a), split(sa)), ((ex.sim_b, ex.dissim_b), split(sb))]:
        assert np.array_equal(got[0], want[0]) and np.array_equal(got[1], want[1])
    assert ex.verdict.score == cosine(fa, fb)


def test_explain_pair_deterministic(tiny_conv, rng):
    ia, ib = rng.random((8, 8, 2)), rng.random((8, 8, 2))
    e1 = explain_pair(tiny_conv, ia, ib, 0.1)
    e2 = explain_pair(tiny_conv, ia, ib, 0.1, workers=4)
    for name, m in e1.maps().items():
        assert np.array_equal(m, e2.maps()[name])


def test_explain_pair_reconstructs_signed_maps(tiny_conv, rng):
    ex = explain_pair(tiny_conv, rng.random((8, 8, 2)), rng.random((8, 8, 2)), 0.9)
    assert (ex.sim_a >= 0).all() and (ex.dissim_a <= 0).all()
    assert np.array_equal(ex.s_a, ex.sim_a + ex.dissim_a)


def test_block_pool_similarity_concentrates_in_matching_block():
    params = init_model(block_pool_spec((16, 16, 1), 4), 0)
    ia = np.ones((16, 16, 1))
    ib = np.zeros((16, 16, 1))
    ib[4:8, 8:12] = 1.0  # block j = 6
    ex = explain_pair(params, ia, ib, 0.0)
    inside = ex.sim_a[4:8, 8:12].mean()
    mask = np.ones((16, 16), dtype=bool)
    mask[4:8, 8:12] = False
    assert inside > ex.sim_a[mask].mean()
    # w = e_6 / 4 and each normalized block map is 1/4 on its block
    expect = np.zeros((16, 16))
    expect[4:8, 8:12] = 0.0625
    np.testing.assert_allclose(ex.sim_a, expect, rtol=1e-15, atol=0)


# -- saliency file format --------------------------------------------------------------


def test_saliency_round_trip(tmp_path, rng):
    s = rng.standard_normal((5, 7))
    save_saliency(s, tmp_path / "m.sal")
    raw = (tmp_path / "m.sal").read_bytes()
    assert raw[:8] == b"FGGBSAL1"
    assert raw[8:16] == (5).to_bytes(4, "little") + (7).to_bytes(4, "little")
    assert len(raw) == 16 + 4 * 35
    back = load_saliency(tmp_path / "m.sal")
    np.testing.assert_array_equal(back, s.astype(np.float32).astype(np.float64))
    np.testing.assert_allclose(back, s, rtol=2 ** -23)


def test_saliency_format_errors():
    raw = dump_saliency(np.zeros((2, 2)))
    with pytest.raises(FormatError, match="magic"):
        parse_saliency(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        parse_saliency(raw[:-1])
    with pytest.raises(ShapeError):
        dump_saliency(np.zeros(3))
