"""Numeric core: construction rules, op semantics against independent oracles,
and the reverse-mode sweep contract."""

import math

import numpy as np
import pytest

from tokensieve.numerics import (
    MlpSpec,
    Parameter,
    Tensor,
    backward,
    bilinear_sample,
    bilinear_upsample,
    clip,
    concat,
    init_mlp_params,
    layer_norm,
    linear_forward,
    make_rng,
    mlp_forward,
    mul,
    no_grad,
    scatter_rows,
    sigmoid,
    slice_cols,
    softmax,
    take_rows,
    tensor_max,
    tensor_sum,
    topk_select,
)


class TestTensorBasics:
    def test_row_major_f64(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float64
        assert t.data.flags["C_CONTIGUOUS"]
        assert t.shape == (2, 2)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Tensor([1.0, float("nan")])

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            Tensor(np.array([np.inf]))

    def test_op_output_rejects_nonfinite(self):
        # log(0) would be -inf; the op constructor must refuse it
        with pytest.raises(ValueError):
            from tokensieve.numerics import log

            log(Tensor([0.0]))


class TestLinearForward:
    def test_identity(self):
        x = Tensor([[1.0, 0.0], [0.0, 1.0]])
        w = Parameter(np.eye(2), "w")
        b = Parameter(np.zeros(2), "b")
        out = linear_forward(x, w, b)
        assert np.array_equal(out.data, np.eye(2))

    def test_scalar_affine(self):
        out = linear_forward(
            Tensor([[2.0]]), Parameter([[3.0]], "w"), Parameter([1.0], "b")
        )
        assert out.data[0, 0] == 7.0

    def test_matches_triple_loop_oracle(self):
        rng = make_rng(7)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=5)
        out = linear_forward(Tensor(x), Parameter(w, "w"), Parameter(b, "b"))
        expect = np.zeros((4, 5))
        for n in range(4):
            for j in range(5):
                acc = b[j]
                for i in range(3):
                    acc += x[n][i] * w[i][j]
                expect[n][j] = acc
        assert np.max(np.abs(out.data - expect)) < 1e-12

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
            linear_forward(
                Tensor(np.zeros((2, 3))),
                Parameter(np.zeros((4, 5)), "w"),
                Parameter(np.zeros(5), "b"),
            )


class TestMlpForward:
    def test_zero_weights_sigmoid_head_gives_half(self):
        spec = MlpSpec((3, 4, 1), final_activation="sigmoid")
        params = init_mlp_params(spec, make_rng(0), "m")
        for p in params:
            p.tensor.data[...] = 0.0
        out = mlp_forward(Tensor(make_rng(1).normal(size=(6, 3))), spec, params)
        assert np.array_equal(out.data, np.full((6, 1), 0.5))

    def test_single_layer_equals_linear(self):
        spec = MlpSpec((3, 2))
        params = init_mlp_params(spec, make_rng(3), "m")
        x = Tensor(make_rng(4).normal(size=(5, 3)))
        out = mlp_forward(x, spec, params)
        ref = linear_forward(x, params[0], params[1])
        assert np.array_equal(out.data, ref.data)

    def test_two_layer_matches_composed_oracle(self):
        spec = MlpSpec((3, 4, 2), activation="relu", final_activation="sigmoid")
        params = init_mlp_params(spec, make_rng(5), "m")
        x = make_rng(6).normal(size=(7, 3))
        out = mlp_forward(Tensor(x), spec, params)
        h = np.maximum(x @ params[0].data + params[1].data, 0.0)
        z = h @ params[2].data + params[3].data
        expect = 1.0 / (1.0 + np.exp(-z))
        assert np.max(np.abs(out.data - expect)) < 1e-12

    def test_width_mismatch(self):
        spec = MlpSpec((3, 4))
        params = init_mlp_params(MlpSpec((3, 5)), make_rng(0), "m")
        with pytest.raises(ValueError):
            mlp_forward(Tensor(np.zeros((2, 3))), spec, params)


class TestSoftmax:
    def test_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.max(np.abs(out.data - 1.0 / 3.0)) < 1e-15

    def test_stability_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0]), axis=0)
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-300)

    def test_closed_form_123(self):
        out = softmax(Tensor([1.0, 2.0, 3.0]), axis=0)
        assert np.allclose(out.data, [0.09003, 0.24473, 0.66524], atol=5e-6)

    def test_sums_to_one_property(self):
        rng = make_rng(11)
        for _ in range(50):
            x = rng.normal(scale=50.0, size=(4, 7))
            out = softmax(Tensor(x), axis=1)
            assert np.max(np.abs(out.data.sum(axis=1) - 1.0)) < 1e-12
            assert np.all(out.data > 0)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = layer_norm(
            Tensor([[5.0, 5.0, 5.0]]),
            Parameter(np.ones(3), "g"),
            Parameter(np.zeros(3), "s"),
        )
        assert np.array_equal(out.data, np.zeros((1, 3)))

    def test_two_point_row_closed_form(self):
        out = layer_norm(
            Tensor([[1.0, -1.0]]), Parameter(np.ones(2), "g"), Parameter(np.zeros(2), "s")
        )
        expect = 1.0 / math.sqrt(1.0 + 1e-5)
        assert out.data[0, 0] == pytest.approx(expect, rel=1e-14)
        assert out.data[0, 1] == pytest.approx(-expect, rel=1e-14)

    def test_zero_gain_gives_shift(self):
        rng = make_rng(2)
        out = layer_norm(
            Tensor(rng.normal(size=(4, 5))),
            Parameter(np.zeros(5), "g"),
            Parameter(np.full(5, 2.5), "s"),
        )
        assert np.array_equal(out.data, np.full((4, 5), 2.5))


def _upsample_oracle(src: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Independent per-pixel closed form (align-corners-false, border clamp)."""
    sh, sw = src.shape
    out = np.zeros((th, tw))
    for j2 in range(th):
        for i2 in range(tw):
            y = min(max((j2 + 0.5) * sh / th - 0.5, 0.0), sh - 1.0)
            x = min(max((i2 + 0.5) * sw / tw - 0.5, 0.0), sw - 1.0)
            y0, x0 = int(math.floor(y)), int(math.floor(x))
            y1, x1 = min(y0 + 1, sh - 1), min(x0 + 1, sw - 1)
            ty, tx = y - y0, x - x0
            out[j2, i2] = (
                src[y0, x0] * (1 - ty) * (1 - tx)
                + src[y0, x1] * (1 - ty) * tx
                + src[y1, x0] * ty * (1 - tx)
                + src[y1, x1] * ty * tx
            )
    return out


class TestBilinearUpsample:
    def test_constant_preserved(self):
        out = bilinear_upsample(Tensor(np.full((3, 4), 2.5)), (7, 9))
        assert np.max(np.abs(out.data - 2.5)) < 1e-12

    def test_same_size_identity(self):
        src = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = bilinear_upsample(Tensor(src), (2, 2))
        assert np.array_equal(out.data, src)

    def test_2x2_to_4x4_matches_oracle(self):
        src = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = bilinear_upsample(Tensor(src), (4, 4))
        assert np.max(np.abs(out.data - _upsample_oracle(src, 4, 4))) < 1e-12

    def test_random_matches_oracle(self):
        src = make_rng(3).normal(size=(3, 5))
        out = bilinear_upsample(Tensor(src), (8, 11))
        assert np.max(np.abs(out.data - _upsample_oracle(src, 8, 11))) < 1e-12

    def test_shrinking_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample(Tensor(np.zeros((4, 4))), (2, 4))

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError):
            bilinear_upsample(Tensor(np.zeros((2, 2))), (0, 4))


def _sample_oracle(vol: np.ndarray, u: float, v: float) -> np.ndarray:
    """Scalar bilinear interpolation, channel by channel."""
    h, w, c = vol.shape
    x = min(max(u * w - 0.5, 0.0), w - 1.0)
    y = min(max(v * h - 0.5, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    tx, ty = x - x0, y - y0
    out = np.zeros(c)
    for ch in range(c):
        out[ch] = (
            vol[y0, x0, ch] * (1 - ty) * (1 - tx)
            + vol[y0, x1, ch] * (1 - ty) * tx
            + vol[y1, x0, ch] * ty * (1 - tx)
            + vol[y1, x1, ch] * ty * tx
        )
    return out


class TestBilinearSample:
    def test_pixel_center_exact(self):
        vol = make_rng(5).normal(size=(4, 6, 2))
        # center of pixel (i=2, j=1)
        pts = Tensor([[(2 + 0.5) / 6, (1 + 0.5) / 4]])
        out = bilinear_sample(Tensor(vol), pts)
        assert np.max(np.abs(out.data[0] - vol[1, 2])) < 1e-12

    def test_midpoint_is_mean(self):
        vol = make_rng(6).normal(size=(1, 2, 3))
        pts = Tensor([[0.5, 0.5]])
        out = bilinear_sample(Tensor(vol), pts)
        assert np.max(np.abs(out.data[0] - vol[0].mean(axis=0))) < 1e-12

    def test_fifty_random_points_match_oracle(self):
        rng = make_rng(7)
        vol = rng.normal(size=(5, 5, 3))
        uv = rng.uniform(0.0, 1.0, size=(50, 2))
        out = bilinear_sample(Tensor(vol), Tensor(uv))
        for p in range(50):
            assert np.max(np.abs(out.data[p] - _sample_oracle(vol, *uv[p]))) < 1e-12

    def test_out_of_range_clamps_to_border(self):
        vol = make_rng(8).normal(size=(3, 3, 1))
        out = bilinear_sample(Tensor(vol), Tensor([[-0.4, -0.4], [1.4, 1.4]]))
        assert out.data[0, 0] == pytest.approx(vol[0, 0, 0])
        assert out.data[1, 0] == pytest.approx(vol[2, 2, 0])


class TestTopkSelect:
    def test_basic(self):
        assert topk_select(Tensor([0.1, 0.9, 0.5]), 2) == [1, 2]

    def test_tie_break_ascending_index(self):
        assert topk_select(Tensor([0.5, 0.5, 0.5]), 3) == [0, 1, 2]

    def test_order_descending_score_then_index(self):
        assert topk_select(Tensor([0.2, 0.8, 0.8, 0.1]), 3) == [1, 2, 0]

    def test_thousand_random_matches_sort_oracle(self):
        rng = make_rng(9)
        scores = rng.uniform(size=1000)
        scores[rng.choice(1000, 60, replace=False)] = 0.5  # force ties
        got = topk_select(Tensor(scores), 100)
        expect = sorted(range(1000), key=lambda i: (-scores[i], i))[:100]
        assert got == expect

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            topk_select(Tensor([1.0, 2.0]), 3)
        with pytest.raises(ValueError):
            topk_select(Tensor([1.0, 2.0]), 0)

    def test_repeatable(self):
        scores = make_rng(10).uniform(size=200)
        assert topk_select(Tensor(scores), 50) == topk_select(Tensor(scores.copy()), 50)


class TestBackward:
    def test_product_gradient(self):
        w = Parameter(np.array([2.0]), "w")
        loss = tensor_sum(mul(w.tensor, Tensor([3.0])))
        backward(loss)
        assert w.gradient[0] == 3.0

    def test_sigmoid_gradient_at_zero(self):
        w = Parameter(np.array(0.0), "w")
        backward(tensor_sum(sigmoid(w.tensor)))
        assert w.gradient == pytest.approx(0.25)

    def test_non_scalar_loss_rejected(self):
        w = Parameter(np.ones(3), "w")
        with pytest.raises(ValueError):
            backward(mul(w.tensor, Tensor([1.0, 2.0, 3.0])))

    def test_constant_loss_rejected(self):
        with pytest.raises(ValueError):
            backward(tensor_sum(Tensor([1.0])))

    def test_gradients_accumulate_until_zeroed(self):
        w = Parameter(np.array([1.0]), "w")
        for _ in range(2):
            backward(tensor_sum(mul(w.tensor, Tensor([3.0]))))
        assert w.gradient[0] == 6.0
        w.zero_grad()
        assert w.gradient[0] == 0.0

    def test_tape_cleared_after_sweep(self):
        w = Parameter(np.array([1.0]), "w")
        loss = tensor_sum(mul(w.tensor, w.tensor))
        backward(loss)
        with pytest.raises(ValueError):
            backward(loss)

    def test_no_grad_scope_records_nothing(self):
        w = Parameter(np.array([1.0]), "w")
        with no_grad():
            loss = tensor_sum(mul(w.tensor, Tensor([3.0])))
        assert not loss.requires_grad

    def test_shared_input_fanout_accumulates(self):
        w = Parameter(np.array([2.0]), "w")
        loss = tensor_sum(mul(w.tensor, Tensor([1.0])) + mul(w.tensor, w.tensor))
        backward(loss)
        assert w.gradient[0] == pytest.approx(1.0 + 2.0 * 2.0)


class TestGatherScatter:
    def test_take_rows_with_duplicates_accumulates_grad(self):
        w = Parameter(np.arange(6.0).reshape(3, 2), "w")
        out = take_rows(w.tensor, [0, 0, 2])
        backward(tensor_sum(out))
        assert np.array_equal(w.gradient, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_scatter_preserves_other_rows_bitwise(self):
        base = Tensor(make_rng(1).normal(size=(5, 3)))
        rows = Tensor(make_rng(2).normal(size=(2, 3)))
        out = scatter_rows(base, [1, 3], rows)
        for r in (0, 2, 4):
            assert out.data[r].tobytes() == base.data[r].tobytes()
        assert np.array_equal(out.data[[1, 3]], rows.data)

    def test_scatter_rejects_duplicate_indices(self):
        with pytest.raises(ValueError):
            scatter_rows(Tensor(np.zeros((3, 2))), [1, 1], Tensor(np.ones((2, 2))))

    def test_concat_and_slice_roundtrip(self):
        a = Tensor(make_rng(3).normal(size=(2, 3)))
        b = Tensor(make_rng(4).normal(size=(2, 2)))
        merged = concat([a, b], axis=1)
        assert np.array_equal(slice_cols(merged, 0, 3).data, a.data)
        assert np.array_equal(slice_cols(merged, 3, 5).data, b.data)


class TestDeterminism:
    def test_seeded_init_is_bit_identical(self):
        a = init_mlp_params(MlpSpec((4, 3)), make_rng(42), "a")
        b = init_mlp_params(MlpSpec((4, 3)), make_rng(42), "b")
        assert a[0].data.tobytes() == b[0].data.tobytes()

    def test_forward_results_repeatable(self):
        spec = MlpSpec((4, 5, 2), final_activation="sigmoid")
        params = init_mlp_params(spec, make_rng(13), "m")
        x = make_rng(14).normal(size=(6, 4))
        r1 = mlp_forward(Tensor(x), spec, params).data.tobytes()
        r2 = mlp_forward(Tensor(x), spec, params).data.tobytes()
        assert r1 == r2

    def test_clip_and_max_helpers(self):
        t = Tensor([[1.0, 5.0, -2.0]])
        assert np.array_equal(clip(t, 0.0, 2.0).data, [[1.0, 2.0, 0.0]])
        assert tensor_max(t, axis=1).data[0] == 5.0
