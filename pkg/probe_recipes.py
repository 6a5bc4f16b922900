"""Dev-only probe for acceptance-scale training recipes (not shipped)."""
import sys
import time
import tempfile
import numpy as np
from sklearn.datasets import load_digits

from casnet.data import Dataset, write_mnist_idx, load_mnist_idx
from casnet.config import ExperimentConfig, OptimizerConfig, DataConfig
from casnet.losses import LossConfig
from casnet.attacks import AttackConfig
from casnet.model import small_conv_net
from casnet.train import train_model, robust_accuracy, natural_accuracy


def build_data(tmp):
    d = load_digits()
    imgs = np.kron(d.images, np.ones((2, 2)))
    images = ((imgs * 15).astype(np.uint8).astype(np.float64) / 255.0)[:, None, :, :]
    labels = d.target.astype(np.int64)
    rng = np.random.default_rng(12345)
    perm = rng.permutation(len(labels))
    tr, te = perm[:1300], perm[1300:]
    write_mnist_idx(f"{tmp}/tri.idx", f"{tmp}/trl.idx", Dataset(images[tr], labels[tr], 10))
    write_mnist_idx(f"{tmp}/tei.idx", f"{tmp}/tel.idx", Dataset(images[te], labels[te], 10))
    return (load_mnist_idx(f"{tmp}/tri.idx", f"{tmp}/trl.idx"),
            load_mnist_idx(f"{tmp}/tei.idx", f"{tmp}/tel.idx"))


def make_cfg(tmp, kind, seed, epochs, lr, eps, beta, drops):
    with_cas = kind in ("cas", "stdcas")
    model = small_conv_net((1, 16, 16), 10, with_cas=with_cas)
    if kind in ("std", "stdcas"):
        atk = AttackConfig(epsilon=0.0, step_size=0.0, steps=1, random_start=False,
                           loss_kind="CE", seed=0)
    else:
        atk = AttackConfig(epsilon=eps, step_size=eps / 4, steps=10, random_start=True,
                           loss_kind="CE+CAS" if with_cas else "CE", seed=0)
    return ExperimentConfig(
        model=model,
        loss=LossConfig(variant="AT", beta=beta if with_cas else 0.0, lam=6.0,
                        S=1 if with_cas else 0),
        train_attack=atk,
        optimizer=OptimizerConfig(lr=lr, momentum=0.9, weight_decay=2e-4, epochs=epochs,
                                  lr_drop_epochs=drops, lr_drop_factor=10.0),
        data=DataConfig(kind="mnist", train_images=f"{tmp}/tri.idx",
                        train_labels=f"{tmp}/trl.idx", test_images=f"{tmp}/tei.idx",
                        test_labels=f"{tmp}/tel.idx", batch_size=50,
                        train_subset_per_class=60, test_subset_per_class=30),
        seed=seed, out_dir=f"{tmp}/{kind}{seed}")


def main():
    kind = sys.argv[1]
    seeds = [int(s) for s in sys.argv[2].split(",")]
    epochs = int(sys.argv[3])
    lr = float(sys.argv[4])
    eps = float(sys.argv[5])
    beta = float(sys.argv[6])
    drops = [int(x) for x in sys.argv[7].split(",")] if len(sys.argv) > 7 and sys.argv[7] else []
    tmp = tempfile.mkdtemp()
    train_ds, test_ds = build_data(tmp)
    for seed in seeds:
        cfg = make_cfg(tmp, kind, seed, epochs, lr, eps, beta, drops)
        t0 = time.time()
        res = train_model(cfg, train_ds, test_ds)
        rows = res["epochs"]
        tail = " ".join("%.2f/%.2f/%.2f" % (r["train_loss"], r["nat_acc"], r["pgd_acc"])
                        for r in rows[-4:])
        # final robust acc under PGD-20 eval attack
        params = res["params"]
        images, labels = test_ds.images, test_ds.labels
        ev = AttackConfig(epsilon=eps or 0.1, step_size=(eps or 0.1) / 10,
                          steps=20, random_start=True,
                          loss_kind="CE+CAS" if kind in ("cas","stdcas") else "CE", seed=77, beta=beta)
        c, t = robust_accuracy("pgd", cfg.model, params, images, labels, ev)
        nat = natural_accuracy(cfg.model, params, images, labels)
        print(f"{kind} seed={seed}: last epochs [{tail}] nat={nat:.3f} "
              f"pgd20={c / t:.3f} ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
