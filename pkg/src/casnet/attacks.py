"""White-box gradient attacks on [0,1] pixel inputs.

All attacks operate in raw pixel space (any normalization belongs inside
the model), take signed-gradient steps on a configurable objective, and
project every iterate into the L-inf ball around the clean input
intersected with [0,1]. Fixed seeds give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .losses import LossConfig, cas_loss, combined_loss, cross_entropy, cw_margin, kl_div
from .model import TEST, TRAIN, ModelConfig, Parameters, model_forward
from .tensor import Tape, Tensor, add, backward, mul_scalar

LOSS_KINDS = ("CE", "CAS", "CE+CAS", "CW", "TRADES-KL")


@dataclass
class AttackConfig:
    epsilon: float  # L-inf radius in pixel units
    step_size: float
    steps: int = 1
    random_start: bool = False
    loss_kind: str = "CE"
    seed: int = 0
    beta: float = 1.0  # weight of the suppression terms for CE+CAS

    def __post_init__(self):
        if self.epsilon < 0 or self.step_size < 0 or self.steps < 1:
            raise ConfigError("need epsilon >= 0, step_size >= 0, steps >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}; choose from {LOSS_KINDS}")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "step_size": self.step_size, "steps": self.steps,
                "random_start": self.random_start, "loss_kind": self.loss_kind,
                "seed": self.seed, "beta": self.beta}

    @staticmethod
    def from_dict(d: dict) -> "AttackConfig":
        return AttackConfig(epsilon=d["epsilon"], step_size=d["step_size"],
                            steps=d.get("steps", 1), random_start=d.get("random_start", False),
                            loss_kind=d.get("loss_kind", "CE"), seed=d.get("seed", 0),
                            beta=d.get("beta", 1.0))


def _project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    lo = np.maximum(x - epsilon, 0.0)
    hi = np.minimum(x + epsilon, 1.0)
    return np.clip(x_adv, lo, hi)


def project_linf(x_adv: Tensor, x: Tensor, epsilon: float) -> Tensor:
    """Clamp x_adv into the epsilon ball around x intersected with [0,1]."""
    if x_adv.shape != x.shape:
        raise ShapeError(f"project_linf: shapes {x_adv.shape} vs {x.shape}")
    return Tensor(_project(x_adv.data, x.data, epsilon))


def _attack_loss(config: ModelConfig, params: Parameters, xt: Tensor, y,
                 cfg: AttackConfig, phase: str, nat_logits: np.ndarray | None):
    labels = y if phase == TRAIN else None
    logits, aux, _ = model_forward(xt, params, config, phase=phase, labels=labels)
    kind = cfg.loss_kind
    if kind == "CE":
        return cross_entropy(logits, y)
    if kind == "CW":
        return cw_margin(logits, y)
    if kind == "CAS":
        if not aux:
            raise ConfigError("CAS attack objective needs at least one suppression module")
        return _cas_only(aux, y)
    if kind == "CE+CAS":
        lc = LossConfig(variant="AT", beta=cfg.beta, S=len(aux))
        return combined_loss(logits, aux, y, lc)
    if kind == "TRADES-KL":
        return kl_div(Tensor(nat_logits), logits)
    raise ConfigError(f"unknown loss kind {kind!r}")


def _cas_only(aux, y):
    """Mean of the suppression-module CE losses: (1/S) * sum_s CAS_s."""
    total = cas_loss(aux[0], y)
    for a in aux[1:]:
        total = add(total, cas_loss(a, y))
    return mul_scalar(total, 1.0 / len(aux))


def pgd(config: ModelConfig, params: Parameters, x: Tensor, y,
        cfg: AttackConfig, phase: str = TEST) -> Tensor:
    """Iterated signed-gradient ascent with L-inf ball projection.

    With random_start the iterate begins at a uniform draw in the epsilon
    ball (then clipped to [0,1]). The suppression modules' test-phase
    argmax is recomputed at every step but held constant inside each
    backward pass.
    """
    y = np.asarray(y)
    x0 = x.data.astype(x.data.dtype, copy=True)
    rng = np.random.default_rng(cfg.seed)
    if cfg.random_start:
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape).astype(x0.dtype)
        xa = np.clip(x0 + noise, 0.0, 1.0)
    else:
        xa = x0.copy()
    nat_logits = None
    if cfg.loss_kind == "TRADES-KL":
        logits, _, _ = model_forward(Tensor(x0), params, config, phase=phase,
                                     labels=y if phase == TRAIN else None)
        nat_logits = logits.data
    for _ in range(cfg.steps):
        xt = Tensor(xa, requires_grad=True)
        with Tape() as tape:
            loss = _attack_loss(config, params, xt, y, cfg, phase, nat_logits)
        backward(tape, loss)
        g = xt.grad if xt.grad is not None else np.zeros_like(xa)
        xa = xa + cfg.step_size * np.sign(g)
        xa = _project(xa, x0, cfg.epsilon)
    return Tensor(xa)


def fgsm(config: ModelConfig, params: Parameters, x: Tensor, y, epsilon: float,
         loss_kind: str = "CE", beta: float = 1.0, phase: str = TEST) -> Tensor:
    """Single signed-gradient step of size epsilon (sign(0) = 0)."""
    cfg = AttackConfig(epsilon=epsilon, step_size=epsilon, steps=1,
                       random_start=False, loss_kind=loss_kind, beta=beta)
    return pgd(config, params, x, y, cfg, phase=phase)


def cw_pgd(config: ModelConfig, params: Parameters, x: Tensor, y,
           cfg: AttackConfig, phase: str = TEST) -> Tensor:
    """PGD maximizing the wrong-vs-true logit margin."""
    return pgd(config, params, x, y, replace(cfg, loss_kind="CW"), phase=phase)


def adaptive_joint_attack(config: ModelConfig, params: Parameters, x: Tensor, y,
                          cfg: AttackConfig) -> Tensor:
    """PGD on the joint CE + suppression objective (test-phase forward).

    This is the default evaluation attack for models with suppression
    modules: the objective includes the modules' own loss terms.
    """
    if config.num_cas == 0:
        raise ConfigError("adaptive joint attack needs a model with suppression modules; "
                          "use pgd for plain models")
    return pgd(config, params, x, y, replace(cfg, loss_kind="CE+CAS"), phase=TEST)
