"""Finite-difference verification batteries for the autodiff engine.

Two layers of checking:

  * per-op checks: every primitive op on small 64-bit inputs constructed
    away from non-differentiable points (relu kinks, max ties, clamp
    boundaries), verified exhaustively coordinate by coordinate.
  * whole-model check: the reference CNN with a suppression module and
    the combined CE + suppression objective, verified on a random sample
    of coordinates of every parameter tensor and of the input. A
    coordinate whose +/-h window straddles a kink is detected by
    comparing the h and h/2 central-difference estimates (they disagree
    wildly only at kinks) and skipped; an incorrect analytic gradient is
    still caught because both estimates then agree with each other and
    not with it.
"""

from __future__ import annotations

import numpy as np

from .losses import LossConfig, combined_loss
from .model import TRAIN, ModelConfig, Tensor, init_params, model_forward, small_conv_net
from .tensor import (Tape, backward, grad_check, add, add_bias, add_scalar, channel_scale,
                     clamp_min, conv2d, exp, log, log_softmax, matmul, max_axis, maxpool2d,
                     mean, mul, mul_scalar, neg, relu, reshape, sub, sum as tsum,
                     take_classes, take_columns)


def _away_from_zero(a: np.ndarray, margin: float = 0.1) -> np.ndarray:
    return np.where(a >= 0, a + margin, a - margin)


def _weighted(op, weights: np.ndarray):
    """Reduce an op output to a scalar through fixed random weights."""
    w = Tensor(weights)
    return lambda x: tsum(mul(op(x), w))


def op_gradient_checks(seed: int = 0, h: float = 1e-5) -> dict:
    """Max FD relative error for each primitive op; keys name the op/input."""
    rng = np.random.default_rng(seed)
    u = lambda *s: rng.uniform(-1.0, 1.0, s)
    results = {}

    a = Tensor(u(3, 4))
    b = Tensor(u(3, 4))
    w34 = u(3, 4)
    results["add"] = grad_check(_weighted(lambda x: add(x, b), w34), a, h)
    results["sub"] = grad_check(_weighted(lambda x: sub(x, b), w34), a, h)
    results["mul"] = grad_check(_weighted(lambda x: mul(x, b), w34), a, h)
    results["neg"] = grad_check(_weighted(neg, w34), a, h)
    results["add_scalar"] = grad_check(_weighted(lambda x: add_scalar(x, 0.7), w34), a, h)
    results["mul_scalar"] = grad_check(_weighted(lambda x: mul_scalar(x, -1.3), w34), a, h)
    results["exp"] = grad_check(_weighted(exp, w34), a, h)
    results["log"] = grad_check(_weighted(log, w34), Tensor(rng.uniform(0.5, 2.0, (3, 4))), h)
    results["relu"] = grad_check(_weighted(relu, w34), Tensor(_away_from_zero(u(3, 4))), h)
    results["clamp_min"] = grad_check(_weighted(lambda x: clamp_min(x, 0.0), w34),
                                      Tensor(_away_from_zero(u(3, 4))), h)
    results["reshape"] = grad_check(_weighted(lambda x: reshape(x, (4, 3)), u(4, 3)), a, h)

    m_left, m_right = Tensor(u(3, 5)), Tensor(u(5, 4))
    results["matmul.a"] = grad_check(_weighted(lambda x: matmul(x, m_right), w34), m_left, h)
    results["matmul.b"] = grad_check(_weighted(lambda x: matmul(m_left, x), w34), m_right, h)
    bias = Tensor(u(4))
    results["add_bias.x"] = grad_check(_weighted(lambda x: add_bias(x, bias), w34), a, h)
    results["add_bias.b"] = grad_check(_weighted(lambda x: add_bias(a, x), w34), bias, h)

    results["sum"] = grad_check(lambda x: tsum(x), a, h)
    results["sum.axis"] = grad_check(_weighted(lambda x: tsum(x, axis=1), u(3)), a, h)
    results["mean"] = grad_check(lambda x: mean(x), a, h)
    x4 = Tensor(u(2, 3, 4, 4))
    results["mean.spatial"] = grad_check(_weighted(lambda x: mean(x, axis=(2, 3)), u(2, 3)), x4, h)

    # distinct jitter keeps max selections unambiguous under +/-h probing
    spread = u(3, 6) + np.arange(18).reshape(3, 6) * 1e-2
    results["max_axis"] = grad_check(_weighted(lambda x: max_axis(x, 1), u(3)), Tensor(spread), h)
    pool_in = u(2, 3, 6, 6) + np.arange(216).reshape(2, 3, 6, 6) * 1e-2
    results["maxpool2d"] = grad_check(_weighted(maxpool2d, u(2, 3, 3, 3)), Tensor(pool_in), h)

    xc = Tensor(u(2, 2, 4, 4))
    kc = Tensor(u(3, 2, 3, 3))
    bc = Tensor(u(3))
    wc = u(2, 3, 4, 4)
    results["conv2d.x"] = grad_check(
        _weighted(lambda t: conv2d(t, kc, bc, stride=1, padding=1), wc), xc, h)
    results["conv2d.kernel"] = grad_check(
        _weighted(lambda t: conv2d(xc, t, bc, stride=1, padding=1), wc), kc, h)
    results["conv2d.bias"] = grad_check(
        _weighted(lambda t: conv2d(xc, kc, t, stride=1, padding=1), wc), bc, h)

    y = rng.integers(0, 4, 3)
    results["take_classes"] = grad_check(_weighted(lambda x: take_classes(x, y), u(3)), a, h)
    mk = Tensor(u(5, 4))
    results["take_columns"] = grad_check(_weighted(lambda x: take_columns(x, y), u(3, 5)), mk, h)
    w_ch = Tensor(u(2, 3))
    results["channel_scale.x"] = grad_check(
        _weighted(lambda t: channel_scale(t, w_ch), u(2, 3, 4, 4)), x4, h)
    results["channel_scale.w"] = grad_check(
        _weighted(lambda t: channel_scale(x4, t), u(2, 3, 4, 4)), w_ch, h)
    results["log_softmax"] = grad_check(_weighted(log_softmax, w34), Tensor(u(3, 4) * 3), h)
    return results


def model_gradient_check(seed: int = 0, config: ModelConfig | None = None,
                         coords_per_tensor: int = 8, h: float = 1e-5,
                         beta: float = 1.0):
    """Sampled FD check of the full forward + combined objective.

    Checks d(loss)/d(coordinate) for the input and every parameter tensor
    (including the suppression matrices) against central differences at
    64-bit. Returns (max_rel_err, n_checked, n_skipped); skipped
    coordinates are those whose FD window straddles a non-differentiable
    point.
    """
    if config is None:
        config = small_conv_net(input_shape=(1, 16, 16), num_classes=10, with_cas=True)
    rng = np.random.default_rng(seed)
    params = init_params(config, seed, dtype=np.float64)
    x = Tensor(rng.uniform(0.0, 1.0, (2,) + config.input_shape), requires_grad=True)
    y = rng.integers(0, config.num_classes, 2)
    lc = LossConfig(variant="AT", beta=beta, lam=1.0, S=config.num_cas)

    def loss_value() -> Tensor:
        logits, aux, _ = model_forward(x, params, config, TRAIN, y)
        return combined_loss(logits, aux, y, lc)

    with Tape() as tape:
        loss = loss_value()
    backward(tape, loss)

    max_err, checked, skipped = 0.0, 0, 0
    targets = [("input", x)] + list(params.items())
    for _, t in targets:
        analytic = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        k = min(coords_per_tensor, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            orig = flat[i]

            def value_at(v):
                flat[i] = v
                out = float(loss_value().data)
                flat[i] = orig
                return out

            fd = (value_at(orig + h) - value_at(orig - h)) / (2 * h)
            fd_half = (value_at(orig + h / 2) - value_at(orig - h / 2)) / h
            denom = max(abs(analytic[i]), 1e-8)
            if abs(fd - fd_half) / denom > 1e-5:
                skipped += 1
                continue
            checked += 1
            max_err = max(max_err, abs(analytic[i] - fd) / denom)
    return max_err, checked, skipped
