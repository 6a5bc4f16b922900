"""Command-line interface.

Subcommands: train, eval, analyze, export-features, grad-check. All
failures exit nonzero after printing ``error[<category>]: <message>`` so
callers can dispatch on the category token.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import (ALL, compare_profiles, export_features, frequency_profile,
                       magnitude_profile, pooled_at_layer, uniformity,
                       write_comparison_csv, write_features_csv)
from .attacks import AttackConfig
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .data import Dataset, load_cifar10_binary, load_mnist_idx, subset_indices, BatchPlan
from .errors import CasnetError, ConfigError
from .gradcheck import model_gradient_check, op_gradient_checks
from .model import ModelConfig, Tensor
from .train import (ATTACK_NAMES, default_eval_loss_kind, natural_accuracy,
                    robust_accuracy, run_attack, train_model)

DEFAULT_THRESHOLDS = (0.005, 0.01, 0.05)


def _load_datasets(cfg: ExperimentConfig):
    for path in cfg.data.required_paths():
        if not Path(path).is_file():
            raise ConfigError(f"dataset file not found: {path}")
    if cfg.data.kind == "mnist":
        train = load_mnist_idx(cfg.data.train_images, cfg.data.train_labels)
        test = load_mnist_idx(cfg.data.test_images, cfg.data.test_labels)
    else:
        train = load_cifar10_binary(cfg.data.train_files)
        test = load_cifar10_binary(cfg.data.test_files)
    return train, test


def _eval_subset(cfg: ExperimentConfig, test: Dataset):
    idx = subset_indices(test, BatchPlan(batch_size=1,
                                         subset_per_class=cfg.data.test_subset_per_class))
    return test.images[idx], test.labels[idx]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    train_ds, test_ds = _load_datasets(cfg)
    result = train_model(cfg, train_ds, test_ds)
    last = result["epochs"][-1] if result["epochs"] else None
    if last:
        print(f"trained {len(result['epochs'])} epochs; "
              f"final nat_acc={last['nat_acc']:.4f} pgd_acc={last['pgd_acc']:.4f}")
    print(f"checkpoints and metrics written to {cfg.out_dir}")
    return 0


def _attack_config(args, cfg: ExperimentConfig, model: ModelConfig) -> AttackConfig:
    eps = args.eps if args.eps is not None else cfg.train_attack.epsilon
    steps = args.steps if args.steps is not None else 20
    alpha = args.alpha if args.alpha is not None else eps / 10.0
    beta = args.beta if args.beta is not None else cfg.loss.beta
    return AttackConfig(epsilon=eps, step_size=alpha, steps=steps, random_start=True,
                        loss_kind=default_eval_loss_kind(model), seed=args.seed, beta=beta)


def cmd_eval(args) -> int:
    config_text, epoch, params = load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig.from_json(config_text)
    if args.config:
        cfg.data = load_config(args.config).data
    _, test_ds = _load_datasets(cfg)
    images, labels = _eval_subset(cfg, test_ds)
    atk = _attack_config(args, cfg, cfg.model)
    names = args.attack or ["pgd"]
    for name in names:
        if name not in ATTACK_NAMES:
            raise ConfigError(f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}")
    rows = [("natural", 0.0, 0, int(round(natural_accuracy(cfg.model, params, images, labels)
                                          * len(labels))), len(labels))]
    for name in names:
        correct, total = robust_accuracy(name, cfg.model, params, images, labels, atk)
        rows.append((name, atk.epsilon, 1 if name == "fgsm" else atk.steps, correct, total))
    lines = ["attack,eps,steps,correct,total,accuracy_pct"]
    for name, eps, steps, correct, total in rows:
        lines.append(f"{name},{eps},{steps},{correct},{total},{100.0 * correct / total:.2f}")
    report = "\n".join(lines) + "\n"
    print(report, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(report, encoding="utf-8")
    return 0


def _penultimate_layer(model: ModelConfig) -> int:
    shapes = model.layer_shapes()
    for i in range(len(shapes) - 1, -1, -1):
        if len(shapes[i]) == 4:
            return i
    raise ConfigError("model has no 4-d activation layer")


def cmd_analyze(args) -> int:
    config_text, _, params = load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig.from_json(config_text)
    if args.config:
        cfg.data = load_config(args.config).data
    _, test_ds = _load_datasets(cfg)
    images, labels = _eval_subset(cfg, test_ds)
    class_id = args.class_id
    if class_id != ALL:
        class_id = int(class_id)
        if class_id < 0 or class_id >= cfg.model.num_classes:
            raise ConfigError(f"class {class_id} outside [0, {cfg.model.num_classes})")
    layer = _penultimate_layer(cfg.model)
    atk = _attack_config(args, cfg, cfg.model)
    name = args.attack[0] if args.attack else "pgd"

    x_adv_chunks = []
    for bi, start in enumerate(range(0, images.shape[0], 128)):
        rows = slice(start, start + 128)
        x = Tensor(images[rows].astype(np.float32))
        adv = run_attack(name, cfg.model, params, x, labels[rows],
                         replace(atk, seed=atk.seed + bi))
        x_adv_chunks.append(adv.data.astype(np.float64))
    adv_images = np.concatenate(x_adv_chunks)

    nat_pooled = pooled_at_layer(cfg.model, params, images, layer)
    adv_pooled = pooled_at_layer(cfg.model, params, adv_images, layer)
    out = Path(args.out or "analysis")
    out.mkdir(parents=True, exist_ok=True)
    thresholds = args.threshold or list(DEFAULT_THRESHOLDS)
    summary = []
    for frac in thresholds:
        nat_prof = frequency_profile(nat_pooled, frac, labels, class_id, layer)
        adv_prof = frequency_profile(adv_pooled, frac, labels, class_id, layer)
        rows = compare_profiles(nat_prof, adv_prof)
        path = out / f"channels_class{class_id}_t{frac}.csv"
        write_comparison_csv(path, rows)
        summary.append(f"threshold={frac} natural uniformity={uniformity(nat_prof)!r}")
        summary.append(f"threshold={frac} adversarial uniformity={uniformity(adv_prof)!r}")
    nat_mag = magnitude_profile(nat_pooled, labels, class_id, layer)
    adv_mag = magnitude_profile(adv_pooled, labels, class_id, layer)
    summary.append(f"natural mean_magnitude={float(nat_mag.mean_magnitude.mean())!r}")
    summary.append(f"adversarial mean_magnitude={float(adv_mag.mean_magnitude.mean())!r}")
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    print("\n".join(summary))
    print(f"channel CSVs written to {out}")
    return 0


def cmd_export_features(args) -> int:
    config_text, _, params = load_checkpoint(args.checkpoint)
    cfg = ExperimentConfig.from_json(config_text)
    if args.config:
        cfg.data = load_config(args.config).data
    _, test_ds = _load_datasets(cfg)
    images, labels = _eval_subset(cfg, test_ds)
    layer = args.layer if args.layer is not None else _penultimate_layer(cfg.model)
    rows = export_features(cfg.model, params, images, labels, layer)
    out = Path(args.out or "features")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    write_features_csv(path, rows)
    print(f"wrote {len(rows)} feature rows to {path}")
    return 0


def cmd_grad_check(args) -> int:
    results = op_gradient_checks(seed=args.seed)
    worst = max(results.values())
    for name in sorted(results):
        print(f"op {name}: max_rel_err={results[name]:.3e}")
    err, checked, skipped = model_gradient_check(seed=args.seed)
    print(f"model: max_rel_err={err:.3e} over {checked} coords ({skipped} near kinks skipped)")
    ok = worst < 1e-4 and err < 1e-4
    print("gradient check:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="casnet",
                                description="Adversarial training with channel-wise "
                                            "activation suppression")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report natural and robust accuracy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default=None, help="override dataset locations")
    e.add_argument("--attack", action="append", choices=list(ATTACK_NAMES))
    e.add_argument("--eps", type=float, default=None)
    e.add_argument("--alpha", type=float, default=None)
    e.add_argument("--steps", type=int, default=None)
    e.add_argument("--beta", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="emit channel magnitude/frequency profiles")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--class", dest="class_id", default=0)
    a.add_argument("--threshold", type=float, action="append")
    a.add_argument("--attack", action="append", choices=list(ATTACK_NAMES))
    a.add_argument("--eps", type=float, default=None)
    a.add_argument("--alpha", type=float, default=None)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--beta", type=float, default=None)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_analyze)

    x = sub.add_parser("export-features", help="dump pooled features for embedding tools")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--config", default=None)
    x.add_argument("--layer", type=int, default=None)
    x.add_argument("--out", default=None)
    x.set_defaults(func=cmd_export_features)

    g = sub.add_parser("grad-check", help="finite-difference gradient verification")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CasnetError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error[config-error]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
