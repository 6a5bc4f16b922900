import numpy as np
import numpy.testing as npt
import pytest

from casnet.errors import ShapeError
from casnet.gradcheck import op_gradient_checks
from casnet.tensor import (Tape, Tensor, backward, conv2d, grad_check, log_softmax,
                           matmul, max_axis, maxpool2d, mean, mul, relu, sum as tsum,
                           take_classes)

from _oracles import conv2d_naive, matmul_naive


def test_conv2d_all_ones_window():
    x = Tensor(np.ones((1, 1, 2, 2)))
    k = Tensor(np.ones((1, 1, 2, 2)))
    b = Tensor(np.zeros(1))
    out = conv2d(x, k, b)
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv2d_channel_extraction():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    k = np.zeros((1, 3, 1, 1))
    k[0, 0, 0, 0] = 1.0
    out = conv2d(x, Tensor(k), Tensor(np.zeros(1)))
    npt.assert_array_equal(out.data[:, 0], x.data[:, 0])


def test_conv2d_matches_naive_loop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 4))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding=1)
    ref = conv2d_naive(x, k, b, stride=1, padding=1)
    npt.assert_allclose(out.data, ref, rtol=1e-6, atol=1e-12)


def test_conv2d_strided_matches_naive_loop():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 6, 6))
    k = rng.standard_normal((4, 3, 2, 2))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=0)
    npt.assert_allclose(out.data, conv2d_naive(x, k, b, 2, 0), rtol=1e-6, atol=1e-12)


def test_conv2d_rejects_bad_configs():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.ones((1, 3, 2, 2))), Tensor(np.zeros(1)))  # Cin mismatch
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.ones((1, 2, 5, 5))), Tensor(np.zeros(1)))  # kernel too big
    with pytest.raises(ShapeError):
        conv2d(x, Tensor(np.ones((1, 2, 3, 3))), Tensor(np.zeros(1)), stride=2)  # no tile


def test_relu_examples():
    out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    npt.assert_array_equal(out.data, [0.0, 0.0, 2.0])
    x = Tensor(-np.ones((3, 3)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(relu(x))
    backward(tape, loss)
    npt.assert_array_equal(x.grad, np.zeros((3, 3)))


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(relu(x))
    backward(tape, loss)
    npt.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_matmul_identity():
    v = np.array([[3.0], [4.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(v))
    npt.assert_array_equal(out.data, v)


def test_matmul_matches_naive_loop():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 4))
    out = matmul(Tensor(a), Tensor(b))
    npt.assert_allclose(out.data, matmul_naive(a, b), rtol=1e-6)


def test_maxpool_single_window_gradient():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True)
    with Tape() as tape:
        out = maxpool2d(x)
        loss = tsum(out)
    assert out.data[0, 0, 0, 0] == 4.0
    backward(tape, loss)
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 1, 1] = 1.0
    npt.assert_array_equal(x.grad, expect)


def test_maxpool_tie_breaks_to_first_flat_index():
    x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
    with Tape() as tape:
        loss = tsum(maxpool2d(x))
    backward(tape, loss)
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 0, 0] = 1.0
    npt.assert_array_equal(x.grad, expect)


def test_maxpool_drops_odd_trailing_edge():
    x = Tensor(np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5))
    out = maxpool2d(x)
    assert out.shape == (1, 1, 2, 2)
    assert out.data[0, 0, 1, 1] == 18.0  # window rows 2-3, cols 2-3


def test_backward_sum_gives_ones():
    x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(x)
    backward(tape, loss)
    npt.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_half_square_gives_x():
    x = Tensor(np.random.default_rng(5).standard_normal((4, 4)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(x, x)) * 0.5
    backward(tape, loss)
    npt.assert_allclose(x.grad, x.data, rtol=1e-12)


def test_backward_accumulates_exactly():
    x = Tensor(np.random.default_rng(6).standard_normal((3, 3)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(x, x))
    backward(tape, loss)
    once = x.grad.copy()
    backward(tape, loss)
    npt.assert_array_equal(x.grad, 2.0 * once)


def test_backward_requires_scalar_and_tape_membership():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
        loss = tsum(y)
    with pytest.raises(ShapeError):
        backward(tape, y)
    other = Tensor(np.float64(1.0), requires_grad=True)
    with pytest.raises(ValueError):
        backward(tape, other)


def test_gradient_flows_through_shared_tensor_twice():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(x, x))  # x used twice in one node
    backward(tape, loss)
    npt.assert_allclose(x.grad, [4.0])


def test_forward_is_deterministic():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 8, 8))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    one = conv2d(Tensor(x), Tensor(k), Tensor(b), padding=1).data
    two = conv2d(Tensor(x), Tensor(k), Tensor(b), padding=1).data
    npt.assert_array_equal(one, two)


def test_grad_check_sum_is_exact():
    x = Tensor(np.random.default_rng(8).standard_normal((3, 4)))
    assert grad_check(tsum, x) < 1e-10


def test_grad_check_softmax_ce():
    rng = np.random.default_rng(9)
    y = rng.integers(0, 5, 4)
    x = Tensor(rng.standard_normal((4, 5)))
    f = lambda t: -mean(take_classes(log_softmax(t), y))
    assert grad_check(f, x, h=1e-5) < 1e-4


def test_grad_check_relu_away_from_kinks():
    rng = np.random.default_rng(10)
    raw = rng.standard_normal((3, 4))
    raw = np.where(np.abs(raw) < 1e-3, 0.5, raw)  # keep |x| >> 10h
    w = Tensor(rng.standard_normal((3, 4)))
    f = lambda t: tsum(mul(relu(t), w))
    assert grad_check(f, Tensor(raw), h=1e-5) < 1e-4


def test_grad_check_rejects_nonscalar():
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        grad_check(lambda t: mul(t, t), x)


def test_max_axis_first_index_on_ties():
    x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(max_axis(x, 1))
    backward(tape, loss)
    npt.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_elementwise_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        mul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2))))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_primitive_passes_finite_differences(seed):
    results = op_gradient_checks(seed=seed)
    worst = max(results, key=results.get)
    assert results[worst] < 1e-4, f"{worst}: {results[worst]:.3e}"


def test_no_nans_after_ops_on_finite_inputs():
    rng = np.random.default_rng(11)
    x = Tensor(rng.uniform(0, 1, (2, 2, 6, 6)))
    k = Tensor(rng.standard_normal((3, 2, 3, 3)))
    out = conv2d(x, k, Tensor(np.zeros(3)), padding=1)
    out = maxpool2d(relu(out))
    assert np.isfinite(out.data).all()
