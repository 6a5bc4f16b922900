import math

import numpy as np
import numpy.testing as npt
import pytest

from casnet.errors import ConfigError
from casnet.losses import (LossConfig, bce_mart, cas_loss, combined_loss, cross_entropy,
                           cw_margin, kl_div, mart_cas_loss, trades_cas_loss)
from casnet.tensor import Tensor, grad_check

import _oracles as oracle


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _rand_logits(rng, n, c, scale=3.0):
    return rng.standard_normal((n, c)) * scale


def test_cross_entropy_uniform_logits():
    logits = _t(np.zeros((4, 10)))
    y = np.arange(4) % 10
    npt.assert_allclose(cross_entropy(logits, y).data, math.log(10), rtol=1e-12)


def test_cross_entropy_saturated_true_class():
    logits = np.zeros((2, 5))
    logits[:, 3] = 1e4
    assert cross_entropy(_t(logits), np.array([3, 3])).data < 1e-8


def test_cross_entropy_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    logits = _rand_logits(rng, 3, 4)
    y = rng.integers(0, 4, 3)
    ours = cross_entropy(_t(logits), y).data
    npt.assert_allclose(ours, oracle.cross_entropy_scalar(logits, y), rtol=1e-6)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(_t(np.zeros((2, 3))), np.array([0, 3]))


def test_cas_loss_is_cross_entropy():
    rng = np.random.default_rng(1)
    logits = _rand_logits(rng, 5, 10)
    y = rng.integers(0, 10, 5)
    assert cas_loss(_t(logits), y).data == cross_entropy(_t(logits), y).data
    npt.assert_allclose(cas_loss(_t(np.zeros((2, 10))), np.array([0, 9])).data,
                        math.log(10), rtol=1e-12)


def test_combined_loss_beta_zero_is_bit_equal_to_ce():
    rng = np.random.default_rng(2)
    logits = _t(_rand_logits(rng, 4, 6))
    aux = [_t(_rand_logits(rng, 4, 6))]
    y = rng.integers(0, 6, 4)
    cfg = LossConfig(variant="AT", beta=0.0, S=1)
    assert combined_loss(logits, aux, y, cfg).data == cross_entropy(logits, y).data


def test_combined_loss_duplicated_aux_doubles_ce():
    rng = np.random.default_rng(3)
    logits = _t(_rand_logits(rng, 4, 6))
    y = rng.integers(0, 6, 4)
    cfg = LossConfig(variant="AT", beta=1.0, S=1)
    out = combined_loss(logits, [logits], y, cfg).data
    npt.assert_allclose(out, 2.0 * cross_entropy(logits, y).data, rtol=1e-12)


def test_combined_loss_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    logits = _rand_logits(rng, 3, 5)
    aux = [_rand_logits(rng, 3, 5), _rand_logits(rng, 3, 5)]
    y = rng.integers(0, 5, 3)
    cfg = LossConfig(variant="AT", beta=4.0, S=2)
    ours = combined_loss(_t(logits), [_t(a) for a in aux], y, cfg).data
    npt.assert_allclose(ours, oracle.combined_scalar(logits, aux, y, 4.0, 2), rtol=1e-6)


def test_combined_loss_rejects_s_mismatch():
    with pytest.raises(ConfigError):
        combined_loss(_t(np.zeros((2, 3))), [], np.array([0, 1]),
                      LossConfig(variant="AT", beta=1.0, S=1))


def test_combined_loss_monotone_in_beta():
    rng = np.random.default_rng(5)
    logits = _t(_rand_logits(rng, 4, 6))
    aux = [_t(_rand_logits(rng, 4, 6))]
    y = rng.integers(0, 6, 4)
    values = [combined_loss(logits, aux, y, LossConfig(variant="AT", beta=b, S=1)).data
              for b in (0.0, 0.5, 1.0, 2.0, 5.0)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_kl_div_identical_is_zero_and_nonnegative():
    rng = np.random.default_rng(6)
    p = _rand_logits(rng, 4, 7)
    assert abs(kl_div(_t(p), _t(p)).data) < 1e-12
    for _ in range(20):
        a, b = _rand_logits(rng, 3, 5), _rand_logits(rng, 3, 5)
        assert kl_div(_t(a), _t(b)).data >= -1e-9


def test_kl_div_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    p, q = _rand_logits(rng, 2, 3), _rand_logits(rng, 2, 3)
    npt.assert_allclose(kl_div(_t(p), _t(q)).data, oracle.kl_scalar(p, q), rtol=1e-6)


def test_bce_mart_uniform_logits():
    # ln 10 + ln(1/(1 - 0.1)) = 2.302585 + 0.105361
    out = bce_mart(_t(np.zeros((3, 10))), np.array([0, 5, 9])).data
    npt.assert_allclose(out, 2.407946, atol=1e-6)


def test_bce_mart_saturated_true_class_vanishes():
    logits = np.zeros((2, 4))
    logits[:, 1] = 50.0
    assert bce_mart(_t(logits), np.array([1, 1])).data < 1e-8


def test_bce_mart_dominates_cross_entropy():
    rng = np.random.default_rng(8)
    for _ in range(20):
        logits = _rand_logits(rng, 3, 6)
        y = rng.integers(0, 6, 3)
        assert bce_mart(_t(logits), y).data >= cross_entropy(_t(logits), y).data - 1e-12


def test_bce_mart_matches_scalar_oracle():
    rng = np.random.default_rng(9)
    logits = _rand_logits(rng, 4, 5)
    y = rng.integers(0, 5, 4)
    npt.assert_allclose(bce_mart(_t(logits), y).data, oracle.bce_mart_scalar(logits, y),
                        rtol=1e-6)


def _trades_inputs(rng, n=3, c=5, s=2):
    nat = _rand_logits(rng, n, c)
    adv = _rand_logits(rng, n, c)
    nat_aux = [_rand_logits(rng, n, c) for _ in range(s)]
    adv_aux = [_rand_logits(rng, n, c) for _ in range(s)]
    y = rng.integers(0, c, n)
    return nat, adv, nat_aux, adv_aux, y


def test_trades_cas_beta_zero_is_plain_trades():
    rng = np.random.default_rng(10)
    nat, adv, nat_aux, adv_aux, y = _trades_inputs(rng)
    cfg = LossConfig(variant="TRADES", beta=0.0, lam=6.0, S=2)
    got = trades_cas_loss(_t(nat), _t(adv), [_t(a) for a in nat_aux],
                          [_t(a) for a in adv_aux], y, cfg).data
    npt.assert_allclose(got, oracle.trades_cas_scalar(nat, adv, [], [], y, 0.0, 6.0, 0),
                        rtol=1e-9)


def test_trades_cas_kl_vanishes_when_adv_equals_nat():
    rng = np.random.default_rng(11)
    nat, _, nat_aux, _, y = _trades_inputs(rng)
    cfg = LossConfig(variant="TRADES", beta=2.0, lam=6.0, S=2)
    got = trades_cas_loss(_t(nat), _t(nat), [_t(a) for a in nat_aux],
                          [_t(a) for a in nat_aux], y, cfg).data
    expect = oracle.cross_entropy_scalar(nat, y) + 1.0 * sum(
        oracle.cross_entropy_scalar(a, y) for a in nat_aux)  # beta/S = 1
    npt.assert_allclose(got, expect, rtol=1e-9)


def test_trades_cas_matches_scalar_oracle():
    rng = np.random.default_rng(12)
    nat, adv, nat_aux, adv_aux, y = _trades_inputs(rng)
    cfg = LossConfig(variant="TRADES", beta=1.5, lam=4.0, S=2)
    got = trades_cas_loss(_t(nat), _t(adv), [_t(a) for a in nat_aux],
                          [_t(a) for a in adv_aux], y, cfg).data
    npt.assert_allclose(got, oracle.trades_cas_scalar(nat, adv, nat_aux, adv_aux, y,
                                                      1.5, 4.0, 2), rtol=1e-6)


def test_mart_cas_beta_zero_is_plain_mart():
    rng = np.random.default_rng(13)
    nat, adv, nat_aux, adv_aux, y = _trades_inputs(rng)
    cfg = LossConfig(variant="MART", beta=0.0, lam=5.0, S=2)
    got = mart_cas_loss(_t(nat), _t(adv), [_t(a) for a in nat_aux],
                        [_t(a) for a in adv_aux], y, cfg).data
    npt.assert_allclose(got, oracle.mart_cas_scalar(nat, adv, [], [], y, 0.0, 5.0, 0),
                        rtol=1e-9)


def test_mart_cas_confident_nat_drops_kl_terms():
    rng = np.random.default_rng(14)
    n, c = 3, 4
    nat = np.full((n, c), -40.0)
    y = rng.integers(0, c, n)
    nat[np.arange(n), y] = 40.0  # p_y(nat) == 1 within float precision
    adv = _rand_logits(rng, n, c)
    aux = [_rand_logits(rng, n, c)]
    nat_aux = [nat.copy()]
    cfg = LossConfig(variant="MART", beta=2.0, lam=6.0, S=1)
    got = mart_cas_loss(_t(nat), _t(adv), [_t(a) for a in nat_aux],
                        [_t(a) for a in aux], y, cfg).data
    expect = oracle.bce_mart_scalar(adv, y) + 2.0 * oracle.bce_mart_scalar(aux[0], y)
    npt.assert_allclose(got, expect, rtol=1e-6)


def test_mart_cas_matches_scalar_oracle():
    rng = np.random.default_rng(15)
    nat, adv, nat_aux, adv_aux, y = _trades_inputs(rng)
    cfg = LossConfig(variant="MART", beta=0.7, lam=3.0, S=2)
    got = mart_cas_loss(_t(nat), _t(adv), [_t(a) for a in nat_aux],
                        [_t(a) for a in adv_aux], y, cfg).data
    npt.assert_allclose(got, oracle.mart_cas_scalar(nat, adv, nat_aux, adv_aux, y,
                                                    0.7, 3.0, 2), rtol=1e-6)


def test_cw_margin_examples():
    assert cw_margin(_t([[2.0, 5.0]]), np.array([0])).data == 3.0
    confident = np.zeros((1, 5))
    confident[0, 2] = 100.0
    assert cw_margin(_t(confident), np.array([2])).data == -100.0
    rng = np.random.default_rng(16)
    logits = _rand_logits(rng, 1, 6)
    y = np.array([2])
    base = cw_margin(_t(logits), y).data
    perm = logits.copy()
    wrong = [c for c in range(6) if c != 2]
    perm[0, wrong] = perm[0, list(reversed(wrong))]
    assert cw_margin(_t(perm), y).data == base


def test_cw_margin_matches_scalar_oracle():
    rng = np.random.default_rng(17)
    logits = _rand_logits(rng, 5, 7)
    y = rng.integers(0, 7, 5)
    npt.assert_allclose(cw_margin(_t(logits), y).data, oracle.cw_margin_scalar(logits, y),
                        rtol=1e-9)


@pytest.mark.parametrize("loss_fn", [
    lambda z, y: cross_entropy(z, y),
    lambda z, y: bce_mart(z, y),
    lambda z, y: cw_margin(z, y),
])
def test_losses_pass_finite_differences_wrt_logits(loss_fn):
    rng = np.random.default_rng(18)
    logits = Tensor(_rand_logits(rng, 3, 5, scale=1.0))
    y = rng.integers(0, 5, 3)
    assert grad_check(lambda t: loss_fn(t, y), logits, h=1e-5) < 1e-4


def test_kl_passes_finite_differences_both_sides():
    rng = np.random.default_rng(19)
    p = Tensor(_rand_logits(rng, 3, 4, scale=1.0))
    q = Tensor(_rand_logits(rng, 3, 4, scale=1.0))
    assert grad_check(lambda t: kl_div(t, q), p, h=1e-5) < 1e-4
    assert grad_check(lambda t: kl_div(p, t), q, h=1e-5) < 1e-4


def test_losses_are_deterministic():
    rng = np.random.default_rng(20)
    logits = _rand_logits(rng, 4, 6)
    y = rng.integers(0, 6, 4)
    assert cross_entropy(_t(logits), y).data == cross_entropy(_t(logits), y).data
    assert bce_mart(_t(logits), y).data == bce_mart(_t(logits), y).data
