"""Unit tests for the tape, backward sweep and differentiable primitives."""

import numpy as np
import pytest

from src.core.exceptions import ContractError, PropagationError, ShapeError
from src.diffcore import functional as F
from src.diffcore.gradcheck import finite_diff_check
from src.diffcore.tensor import DiffTensor, Tape, backward, no_grad


def _loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(F.matmul(np.eye(2), b).data, b)

    def test_projector_selects_first_row(self):
        out = F.matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]))
        assert np.array_equal(out.data, [[5.0, 6.0], [0.0, 0.0]])

    def test_matches_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        assert np.allclose(F.matmul(a, b).data, _loop_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            F.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_backward_products(self, rng):
        a = DiffTensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = DiffTensor(rng.normal(size=(4, 2)), requires_grad=True)
        upstream = rng.normal(size=(3, 2))
        with Tape():
            backward(F.sum_(F.mul(F.matmul(a, b), upstream)))
        assert np.allclose(a.grad, upstream @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ upstream)


class TestSoftmax:
    def test_uniform_row(self):
        assert np.allclose(F.softmax_rows(np.zeros((1, 3))).data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_analytic_exponentials(self):
        out = F.softmax_rows(np.array([[np.log(2.0), np.log(1.0)]]))
        assert np.allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_rows_sum_to_one_on_wide_inputs(self, rng):
        out = F.softmax_rows(rng.uniform(-50, 50, size=(20, 7)))
        assert np.all(out.data >= 0)
        assert np.allclose(out.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_nan_input_raises(self):
        with pytest.raises(PropagationError):
            F.softmax_rows(np.array([[0.0, np.nan]]))

    def test_gradient_matches_finite_difference(self, rng):
        weights = rng.normal(size=(1, 5))
        error = finite_diff_check(
            lambda x: F.sum_(F.mul(F.softmax_rows(x), weights)),
            DiffTensor(rng.normal(size=(1, 5))),
        )
        assert error <= 1e-6


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        out = F.layer_norm(np.full(4, 3.0), np.ones(4), np.zeros(4))
        assert np.allclose(out.data, 0.0)

    def test_two_element_vector(self):
        out = F.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        expected = np.array([1.0, -1.0]) / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.data, expected, rtol=0, atol=1e-12)

    def test_single_feature_rejected(self):
        with pytest.raises(ShapeError):
            F.layer_norm(np.zeros((3, 1)))

    def test_gradient_matches_finite_difference(self, rng):
        gain, bias = rng.normal(size=6), rng.normal(size=6)
        weights = rng.normal(size=(3, 6))
        error = finite_diff_check(
            lambda x: F.sum_(F.mul(F.layer_norm(x, gain, bias), weights)),
            DiffTensor(rng.normal(size=(3, 6))),
        )
        assert error <= 1e-6


class TestBilinearSample:
    def test_pixel_centre_returns_that_pixel(self, rng):
        fmap = rng.normal(size=(3, 5, 2))
        # u·(w−1) = 2, v·(h−1) = 1
        out = F.bilinear_sample(fmap, np.array([[0.5, 0.5]]))
        assert np.allclose(out.data[0], fmap[1, 2])

    def test_centre_of_four_pixels_is_their_mean(self, rng):
        fmap = rng.normal(size=(2, 2, 3))
        out = F.bilinear_sample(fmap, np.array([[0.5, 0.5]]))
        assert np.allclose(out.data[0], fmap.reshape(4, 3).mean(axis=0))

    def test_out_of_range_points_clamp_to_border(self, rng):
        fmap = rng.normal(size=(4, 4, 2))
        out = F.bilinear_sample(fmap, np.array([[-0.3, 1.7]]))
        assert np.allclose(out.data[0], fmap[3, 0])

    def test_coordinate_gradient_on_both_axes(self, rng):
        fmap = rng.normal(size=(5, 6, 3))
        weights = rng.normal(size=(2, 3))
        error = finite_diff_check(
            lambda p: F.sum_(F.mul(F.bilinear_sample(fmap, p), weights)),
            DiffTensor(np.array([[0.31, 0.62], [0.77, 0.13]])),
        )
        assert error <= 1e-5

    def test_feature_map_gradient(self, rng):
        points = np.array([[0.31, 0.62], [0.77, 0.13]])
        weights = rng.normal(size=(2, 3))
        error = finite_diff_check(
            lambda m: F.sum_(F.mul(F.bilinear_sample(m, points), weights)),
            DiffTensor(rng.normal(size=(5, 6, 3))),
        )
        assert error <= 1e-5

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_points_raise(self, rng, bad):
        with pytest.raises(PropagationError):
            F.bilinear_sample(rng.normal(size=(4, 4, 2)), np.array([[0.5, bad]]))


class TestBackward:
    def test_sum_gives_ones(self):
        x = DiffTensor(np.arange(4.0), requires_grad=True)
        with Tape():
            backward(F.sum_(x))
        assert np.array_equal(x.grad, np.ones(4))

    def test_dot_with_itself(self):
        values = np.array([1.0, -2.0, 0.5])
        x = DiffTensor(values, requires_grad=True)
        with Tape():
            backward(F.sum_(F.mul(x, x)))
        assert np.allclose(x.grad, 2 * values)

    def test_fan_out_doubles_gradient(self):
        once = DiffTensor(np.ones(3), requires_grad=True)
        twice = DiffTensor(np.ones(3), requires_grad=True)
        with Tape():
            backward(F.sum_(F.scale(once, 3.0)))
            backward(F.sum_(F.scale(F.add(twice, twice), 3.0)))
        assert np.allclose(twice.grad, 2 * once.grad)

    def test_non_scalar_loss_rejected(self):
        x = DiffTensor(np.ones(3), requires_grad=True)
        with Tape():
            with pytest.raises(ContractError):
                backward(F.scale(x, 2.0))

    def test_untracked_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(DiffTensor(1.0))

    def test_no_grad_records_nothing(self):
        x = DiffTensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            with no_grad():
                y = F.sum_(F.exp(x))
        assert len(tape) == 0
        assert not y.requires_grad

    def test_tape_is_topologically_ordered(self):
        x = DiffTensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            F.sum_(F.sigmoid(F.scale(x, 2.0)))
        for position, record in enumerate(tape.records):
            for input_id in record.input_ids:
                assert input_id is None or input_id < position

    def test_replay_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            w = DiffTensor(rng.normal(size=(4, 3)), requires_grad=True)
            x = rng.normal(size=(2, 4))
            with Tape():
                loss = F.sum_(F.gelu(F.matmul(x, w)))
                backward(loss)
            return loss.data.copy(), w.grad.copy()

        (loss_a, grad_a), (loss_b, grad_b) = run(), run()
        assert loss_a.tobytes() == loss_b.tobytes()
        assert grad_a.tobytes() == grad_b.tobytes()


@pytest.mark.parametrize(
    "name, fn, shape",
    [
        ("sigmoid", F.sigmoid, (3, 2)),
        ("gelu", F.gelu, (3, 2)),
        ("log_sigmoid", F.log_sigmoid, (4,)),
        ("exp", F.exp, (2, 3)),
        ("transpose", F.transpose, (2, 3)),
        ("slice", lambda x: x[1:, :2], (3, 3)),
        ("concat", lambda x: F.concat([x, F.scale(x, 2.0)], axis=1), (2, 2)),
        ("mean_axis", lambda x: F.mean(x, axis=0), (3, 4)),
        ("max_axis", lambda x: F.max_(x, axis=-1), (3, 4)),
        ("cosine_rows", lambda x: F.cosine_similarity_rows(x, np.ones((2, 3))), (2, 3)),
    ],
)
def test_primitive_gradients(name, fn, shape, rng):
    weights = None

    def scalar(x):
        nonlocal weights
        out = fn(x)
        if weights is None:
            weights = np.random.default_rng(1).normal(size=out.shape)
        return F.sum_(F.mul(out, weights))

    error = finite_diff_check(scalar, DiffTensor(rng.normal(size=shape)))
    assert error <= 1e-5, name


def test_sum_of_squares_check():
    error = finite_diff_check(
        lambda x: F.sum_(F.square(x)), DiffTensor(np.array([1.0, 2.0, 3.0]))
    )
    assert error <= 1e-8


def test_softmax_cross_entropy_composite(rng):
    target = np.eye(4)[[1, 3, 0]]

    def cross_entropy(logits):
        return F.scale(F.sum_(F.mul(F.log(F.softmax_rows(logits)), target)), -1.0 / 3)

    assert finite_diff_check(cross_entropy, DiffTensor(rng.normal(size=(3, 4)))) <= 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_random_composites_pass_finite_differences(seed):
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(2, 5, size=2)
    w = rng.normal(size=(cols, cols))
    weights = rng.normal(size=(rows, cols))

    def composite(x):
        h = F.layer_norm(F.matmul(x, w))
        return F.sum_(F.mul(F.sigmoid(F.add(h, F.softmax_rows(x))), weights))

    assert finite_diff_check(composite, DiffTensor(rng.normal(size=(rows, cols)))) <= 1e-5


@pytest.mark.parametrize("seed", range(100))
def test_random_bilinear_samples_pass_finite_differences(seed):
    rng = np.random.default_rng(seed)
    h, w, d = rng.integers(2, 7, size=3)
    fmap = rng.normal(size=(h, w, d))
    weights = rng.normal(size=(3, d))

    def sampled(points):
        return F.sum_(F.mul(F.bilinear_sample(fmap, points), weights))

    points = DiffTensor(rng.uniform(0.05, 0.95, size=(3, 2)))
    assert finite_diff_check(sampled, points) <= 1e-5
