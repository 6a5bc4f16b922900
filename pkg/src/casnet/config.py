"""Experiment configuration and its JSON document form.

The whole experiment (model, losses, training attack, optimizer, data
plan, seed, output directory) round-trips losslessly through a JSON text
document; the same text is embedded verbatim in checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig


@dataclass
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 20
    lr_drop_epochs: list = field(default_factory=lambda: [15, 18])
    lr_drop_factor: float = 10.0

    def to_dict(self) -> dict:
        return {"lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay,
                "epochs": self.epochs, "lr_drop_epochs": list(self.lr_drop_epochs),
                "lr_drop_factor": self.lr_drop_factor}

    @staticmethod
    def from_dict(d: dict) -> "OptimizerConfig":
        return OptimizerConfig(lr=d.get("lr", 0.1), momentum=d.get("momentum", 0.9),
                               weight_decay=d.get("weight_decay", 2e-4),
                               epochs=d.get("epochs", 20),
                               lr_drop_epochs=list(d.get("lr_drop_epochs", [])),
                               lr_drop_factor=d.get("lr_drop_factor", 10.0))


@dataclass
class DataConfig:
    kind: str  # mnist | cifar10
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_files: list = field(default_factory=list)  # cifar10 batch files
    test_files: list = field(default_factory=list)
    batch_size: int = 50
    train_subset_per_class: int | None = None
    test_subset_per_class: int | None = None

    def __post_init__(self):
        if self.kind not in ("mnist", "cifar10"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "train_images": self.train_images, "train_labels": self.train_labels,
                "test_images": self.test_images, "test_labels": self.test_labels,
                "train_files": list(self.train_files), "test_files": list(self.test_files),
                "batch_size": self.batch_size,
                "train_subset_per_class": self.train_subset_per_class,
                "test_subset_per_class": self.test_subset_per_class}

    @staticmethod
    def from_dict(d: dict) -> "DataConfig":
        return DataConfig(kind=d["kind"],
                          train_images=d.get("train_images", ""),
                          train_labels=d.get("train_labels", ""),
                          test_images=d.get("test_images", ""),
                          test_labels=d.get("test_labels", ""),
                          train_files=list(d.get("train_files", [])),
                          test_files=list(d.get("test_files", [])),
                          batch_size=d.get("batch_size", 50),
                          train_subset_per_class=d.get("train_subset_per_class"),
                          test_subset_per_class=d.get("test_subset_per_class"))

    def required_paths(self):
        if self.kind == "mnist":
            return [self.train_images, self.train_labels, self.test_images, self.test_labels]
        return list(self.train_files) + list(self.test_files)


@dataclass
class ExperimentConfig:
    model: ModelConfig
    loss: LossConfig
    train_attack: AttackConfig
    optimizer: OptimizerConfig
    data: DataConfig
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.loss.S != self.model.num_cas:
            raise ConfigError(
                f"loss config S={self.loss.S} but model has {self.model.num_cas} "
                "suppression modules")

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "loss": self.loss.to_dict(),
                "train_attack": self.train_attack.to_dict(),
                "optimizer": self.optimizer.to_dict(), "data": self.data.to_dict(),
                "seed": self.seed, "out_dir": self.out_dir}

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        return ExperimentConfig(model=ModelConfig.from_dict(d["model"]),
                                loss=LossConfig.from_dict(d["loss"]),
                                train_attack=AttackConfig.from_dict(d["train_attack"]),
                                optimizer=OptimizerConfig.from_dict(d["optimizer"]),
                                data=DataConfig.from_dict(d["data"]),
                                seed=d.get("seed", 0),
                                out_dir=d.get("out_dir", "runs/default"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid config JSON: {e}") from e
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return ExperimentConfig.from_json(p.read_text(encoding="utf-8"))
