"""Training and attack objectives.

All functions take (N, C) logit tensors plus integer label arrays and
return scalar tensors (batch means), differentiable through the tape.
When the suppression strength beta is 0 every combined objective returns
its base loss tensor unchanged, so the degenerate cases are bit-equal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Tensor, add, add_scalar, clamp_min, exp, log, log_softmax,
                     max_axis, mean, mul, mul_scalar, neg, sub, sum as tsum,
                     take_classes)

VARIANTS = ("AT", "TRADES", "MART")

_MASK_BIG = 1e9  # additive mask pushing the true class out of wrong-class maxima
_LOG_CLAMP = 1e-12


@dataclass
class LossConfig:
    variant: str = "AT"
    beta: float = 1.0  # suppression-loss strength
    lam: float = 6.0  # robustness trade-off weight (TRADES/MART)
    S: int = 0  # number of suppression modules

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if self.beta < 0 or self.lam < 0 or self.S < 0:
            raise ConfigError("beta, lam and S must be nonnegative")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "beta": self.beta, "lam": self.lam, "S": self.S}

    @staticmethod
    def from_dict(d: dict) -> "LossConfig":
        return LossConfig(variant=d.get("variant", "AT"), beta=d.get("beta", 1.0),
                          lam=d.get("lam", 6.0), S=d.get("S", 0))


def _check_labels(logits: Tensor, y) -> np.ndarray:
    if logits.ndim != 2:
        raise ShapeError(f"expected (N, C) logits, got {logits.shape}")
    y = np.asarray(y)
    if y.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {y.shape} != ({logits.shape[0]},)")
    if y.size and (y.min() < 0 or y.max() >= logits.shape[1]):
        raise ValueError(f"label outside [0, {logits.shape[1]})")
    return y


def cross_entropy(logits: Tensor, y) -> Tensor:
    """Mean over the batch of -log softmax(logits)[n, y_n]."""
    y = _check_labels(logits, y)
    return neg(mean(take_classes(log_softmax(logits), y)))


def cas_loss(aux_logits: Tensor, y) -> Tensor:
    """Cross entropy on an auxiliary classifier's logits."""
    return cross_entropy(aux_logits, y)


def combined_loss(logits: Tensor, aux_list, y, cfg: LossConfig) -> Tensor:
    """CE plus (beta/S) * sum of the suppression-module CE terms."""
    if len(aux_list) != cfg.S:
        raise ConfigError(f"got {len(aux_list)} aux outputs, config says S={cfg.S}")
    ce = cross_entropy(logits, y)
    if cfg.beta == 0 or cfg.S == 0:
        return ce
    total = cas_loss(aux_list[0], y)
    for aux in aux_list[1:]:
        total = add(total, cas_loss(aux, y))
    return add(ce, mul_scalar(total, cfg.beta / cfg.S))


def kl_div_per_example(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """KL(softmax(p) || softmax(q)) per example -> (N,)."""
    if p_logits.shape != q_logits.shape or p_logits.ndim != 2:
        raise ShapeError(f"kl_div: shapes {p_logits.shape} vs {q_logits.shape}")
    lp = log_softmax(p_logits)
    lq = log_softmax(q_logits)
    return tsum(mul(exp(lp), sub(lp, lq)), axis=1)


def kl_div(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Batch-mean KL divergence between two softmax distributions."""
    return mean(kl_div_per_example(p_logits, q_logits))


def bce_mart(logits: Tensor, y) -> Tensor:
    """Boosted CE: -log p_y - log(1 - max wrong-class probability).

    The wrong-class max is a hard selection (gradient to the argmax only)
    and the inner log argument is clamped at 1e-12.
    """
    y = _check_labels(logits, y)
    lp = log_softmax(logits)
    picked = take_classes(lp, y)  # log p_y
    wrong = mul(exp(lp), Tensor(_wrong_mask(logits.shape, y, logits.dtype)))
    m = max_axis(wrong, axis=1)  # max wrong-class probability
    term2 = log(clamp_min(add_scalar(neg(m), 1.0), _LOG_CLAMP))
    return neg(mean(add(picked, term2)))


def _wrong_mask(shape, y, dtype):
    mask = np.ones(shape, dtype=dtype)
    mask[np.arange(shape[0]), y] = 0
    return mask


def _prob_true_class(logits: Tensor, y) -> Tensor:
    return exp(take_classes(log_softmax(logits), y))


def trades_cas_loss(nat_logits: Tensor, adv_logits: Tensor, nat_aux, adv_aux,
                    y, cfg: LossConfig) -> Tensor:
    """Accuracy/robustness trade-off objective plus suppression terms.

    CE(nat, y) + lam * KL(nat || adv)
      + (beta/S) * sum_s CE(nat_aux_s, y)
      + beta * (lam/S) * sum_s KL(nat_aux_s || adv_aux_s)
    """
    if cfg.variant != "TRADES":
        raise ConfigError(f"trades_cas_loss called with variant {cfg.variant!r}")
    if len(nat_aux) != cfg.S or len(adv_aux) != cfg.S:
        raise ConfigError(f"aux list lengths {len(nat_aux)}/{len(adv_aux)} != S={cfg.S}")
    base = add(cross_entropy(nat_logits, y), mul_scalar(kl_div(nat_logits, adv_logits), cfg.lam))
    if cfg.beta == 0 or cfg.S == 0:
        return base
    ce_terms = cas_loss(nat_aux[0], y)
    kl_terms = kl_div(nat_aux[0], adv_aux[0])
    for na, aa in zip(nat_aux[1:], adv_aux[1:]):
        ce_terms = add(ce_terms, cas_loss(na, y))
        kl_terms = add(kl_terms, kl_div(na, aa))
    out = add(base, mul_scalar(ce_terms, cfg.beta / cfg.S))
    return add(out, mul_scalar(kl_terms, cfg.beta * cfg.lam / cfg.S))


def mart_cas_loss(nat_logits: Tensor, adv_logits: Tensor, nat_aux, adv_aux,
                  y, cfg: LossConfig) -> Tensor:
    """Misclassification-aware objective plus suppression terms.

    BCE(adv, y) + lam * mean_n[KL_n(nat || adv) * (1 - p_y(nat)_n)]
      + (beta/S) * sum_s BCE(adv_aux_s, y)
      + beta * (lam/S) * sum_s mean_n[KL_n(nat_aux_s || adv_aux_s)
                                      * (1 - p_y(nat_aux_s)_n)]
    """
    if cfg.variant != "MART":
        raise ConfigError(f"mart_cas_loss called with variant {cfg.variant!r}")
    if len(nat_aux) != cfg.S or len(adv_aux) != cfg.S:
        raise ConfigError(f"aux list lengths {len(nat_aux)}/{len(adv_aux)} != S={cfg.S}")
    y = _check_labels(nat_logits, y)

    def weighted_kl(p, q):
        w = add_scalar(neg(_prob_true_class(p, y)), 1.0)  # (N,) 1 - p_y
        return mean(mul(kl_div_per_example(p, q), w))

    base = add(bce_mart(adv_logits, y), mul_scalar(weighted_kl(nat_logits, adv_logits), cfg.lam))
    if cfg.beta == 0 or cfg.S == 0:
        return base
    bce_terms = bce_mart(adv_aux[0], y)
    kl_terms = weighted_kl(nat_aux[0], adv_aux[0])
    for na, aa in zip(nat_aux[1:], adv_aux[1:]):
        bce_terms = add(bce_terms, bce_mart(aa, y))
        kl_terms = add(kl_terms, weighted_kl(na, aa))
    out = add(base, mul_scalar(bce_terms, cfg.beta / cfg.S))
    return add(out, mul_scalar(kl_terms, cfg.beta * cfg.lam / cfg.S))


def cw_margin(logits: Tensor, y) -> Tensor:
    """Mean over the batch of (max wrong-class logit - true-class logit).

    Positive for misclassified examples; attacks maximize this.
    """
    y = _check_labels(logits, y)
    masked = add(logits, Tensor(-_MASK_BIG * _one_hot(logits.shape, y, logits.dtype)))
    return mean(sub(max_axis(masked, axis=1), take_classes(logits, y)))


def _one_hot(shape, y, dtype):
    out = np.zeros(shape, dtype=dtype)
    out[np.arange(shape[0]), y] = 1
    return out
