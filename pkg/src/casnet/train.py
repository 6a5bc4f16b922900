"""Training loop, SGD optimizer and robustness evaluation.

One epoch = seeded shuffle of the training subset, per-batch adversarial
example generation with the objective matching the loss variant, then a
joint SGD-with-momentum update of the network and suppression-module
parameters. A "last" checkpoint is written every epoch and a "best" one
whenever held-out PGD robustness improves. Identical config + seed gives
bit-identical checkpoints and metrics.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, adaptive_joint_attack, cw_pgd, fgsm, pgd
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, OptimizerConfig
from .data import BatchPlan, Dataset, batch_iter, subset_indices
from .errors import ConfigError
from .losses import combined_loss, mart_cas_loss, trades_cas_loss
from .model import TRAIN, ModelConfig, Parameters, Tensor, init_params, model_forward
from .tensor import Tape, backward

ATTACK_NAMES = ("fgsm", "pgd", "cw", "joint")


class SGD:
    """SGD with momentum; weight decay enters the gradient (L2 style)."""

    def __init__(self, params: Parameters, lr: float, momentum: float, weight_decay: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad + self.weight_decay * t.data
            v = self._velocity[name]
            v *= self.momentum
            v += g
            t.data -= t.data.dtype.type(self.lr) * v


def default_eval_loss_kind(model_cfg: ModelConfig) -> str:
    """Adaptive joint objective for suppression models, plain CE otherwise."""
    return "CE+CAS" if model_cfg.num_cas else "CE"


def run_attack(name: str, model_cfg: ModelConfig, params: Parameters,
               x: Tensor, y, cfg: AttackConfig) -> Tensor:
    if name == "fgsm":
        return fgsm(model_cfg, params, x, y, cfg.epsilon,
                    loss_kind=cfg.loss_kind, beta=cfg.beta)
    if name == "pgd":
        return pgd(model_cfg, params, x, y, cfg)
    if name == "cw":
        return cw_pgd(model_cfg, params, x, y, cfg)
    if name == "joint":
        return adaptive_joint_attack(model_cfg, params, x, y, cfg)
    raise ConfigError(f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}")


def predict(model_cfg: ModelConfig, params: Parameters, images: np.ndarray,
            batch_size: int = 256) -> np.ndarray:
    dtype = next(iter(params.tensors())).dtype
    preds = []
    for start in range(0, images.shape[0], batch_size):
        x = Tensor(images[start:start + batch_size].astype(dtype))
        logits, _, _ = model_forward(x, params, model_cfg)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds)


def natural_accuracy(model_cfg, params, images, labels, batch_size: int = 256) -> float:
    return float(np.mean(predict(model_cfg, params, images, batch_size) == labels))


def robust_accuracy(name: str, model_cfg, params, images, labels,
                    cfg: AttackConfig, batch_size: int = 128):
    """Accuracy under the named attack; per-batch seeds derive from cfg.seed."""
    dtype = next(iter(params.tensors())).dtype
    correct = 0
    for bi, start in enumerate(range(0, images.shape[0], batch_size)):
        rows = slice(start, start + batch_size)
        x = Tensor(images[rows].astype(dtype))
        y = labels[rows]
        x_adv = run_attack(name, model_cfg, params, x, y, replace(cfg, seed=cfg.seed + bi))
        logits, _, _ = model_forward(x_adv, params, model_cfg)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
    return correct, images.shape[0]


def _training_attack_cfg(cfg: ExperimentConfig, seed: int) -> AttackConfig:
    """Generation objective follows the loss variant."""
    if cfg.loss.variant == "AT":
        kind = "CE+CAS" if cfg.model.num_cas else "CE"
    elif cfg.loss.variant == "TRADES":
        kind = "TRADES-KL"
    else:  # MART generates with plain CE
        kind = "CE"
    return replace(cfg.train_attack, loss_kind=kind, beta=cfg.loss.beta, seed=seed)


def _batch_loss(cfg: ExperimentConfig, params: Parameters, x_nat: Tensor,
                x_adv: Tensor, y):
    variant = cfg.loss.variant
    if variant == "AT":
        logits, aux, _ = model_forward(x_adv, params, cfg.model, TRAIN, y)
        return combined_loss(logits, aux, y, cfg.loss)
    nat_logits, nat_aux, _ = model_forward(x_nat, params, cfg.model, TRAIN, y)
    adv_logits, adv_aux, _ = model_forward(x_adv, params, cfg.model, TRAIN, y)
    if variant == "TRADES":
        return trades_cas_loss(nat_logits, adv_logits, nat_aux, adv_aux, y, cfg.loss)
    return mart_cas_loss(nat_logits, adv_logits, nat_aux, adv_aux, y, cfg.loss)


def _holdout_eval(cfg: ExperimentConfig, params: Parameters, test_ds: Dataset):
    plan = BatchPlan(batch_size=1, subset_per_class=cfg.data.test_subset_per_class)
    idx = subset_indices(test_ds, plan)
    images, labels = test_ds.images[idx], test_ds.labels[idx]
    nat = natural_accuracy(cfg.model, params, images, labels)
    atk = replace(cfg.train_attack, loss_kind=default_eval_loss_kind(cfg.model),
                  beta=cfg.loss.beta, seed=cfg.seed + 9999)
    correct, total = robust_accuracy("pgd", cfg.model, params, images, labels, atk)
    return nat, correct / total


def train_model(cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset,
                callback=None) -> dict:
    """Run the full training recipe; writes checkpoints and a metrics CSV.

    Returns a history dict with per-epoch rows. The optional callback is
    invoked after every batch with a dict carrying epoch, batch index,
    the natural and adversarial batch, and the loss value.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = cfg.to_json()
    params = init_params(cfg.model, cfg.seed, dtype=np.float32)
    opt = SGD(params, cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay)
    attack_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xCA5]))
    history = []
    best_robust = -1.0

    if cfg.optimizer.epochs == 0:
        save_checkpoint(out_dir / "last.ckpt", config_text, 0, params)
        save_checkpoint(out_dir / "best.ckpt", config_text, 0, params)
        _write_metrics(out_dir / "metrics.csv", history)
        return {"epochs": [], "params": params}

    lr = cfg.optimizer.lr
    for epoch in range(1, cfg.optimizer.epochs + 1):
        if epoch in cfg.optimizer.lr_drop_epochs:
            lr /= cfg.optimizer.lr_drop_factor
            opt.lr = lr
        plan = BatchPlan(batch_size=cfg.data.batch_size,
                         shuffle_seed=cfg.seed * 1_000_003 + epoch,
                         subset_per_class=cfg.data.train_subset_per_class)
        losses = []
        for bi, (images, labels) in enumerate(batch_iter(train_ds, plan)):
            x_nat = Tensor(images.astype(np.float32))
            atk = _training_attack_cfg(cfg, int(attack_rng.integers(2 ** 31)))
            x_adv = pgd(cfg.model, params, x_nat, labels, atk, phase=TRAIN)
            params.zero_grad()
            with Tape() as tape:
                loss = _batch_loss(cfg, params, x_nat, x_adv, labels)
            backward(tape, loss)
            opt.step()
            losses.append(float(loss.data))
            if callback is not None:
                callback({"epoch": epoch, "batch": bi, "x_nat": x_nat, "y": labels,
                          "x_adv": x_adv, "loss": float(loss.data)})
        nat_acc, pgd_acc = _holdout_eval(cfg, params, test_ds)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               "nat_acc": nat_acc, "pgd_acc": pgd_acc}
        history.append(row)
        save_checkpoint(out_dir / "last.ckpt", config_text, epoch, params)
        if pgd_acc > best_robust:
            best_robust = pgd_acc
            save_checkpoint(out_dir / "best.ckpt", config_text, epoch, params)
    _write_metrics(out_dir / "metrics.csv", history)
    return {"epochs": history, "params": params}


def _write_metrics(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "nat_acc", "pgd_acc"])
        for row in history:
            w.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                        repr(row["nat_acc"]), repr(row["pgd_acc"])])
