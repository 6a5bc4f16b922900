"""Channel-wise activation diagnostics.

Profiles summarize pooled (spatially averaged) activations of one layer
over an example set: per-channel mean magnitudes, and activation
frequencies against a per-example dynamic threshold (a fraction of that
example's maximum pooled value). A normalized-entropy summary quantifies
how uniformly the channels fire.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import ModelConfig, Parameters, Tensor, model_forward

ALL = "ALL"  # class filter sentinel: use every example


@dataclass
class ChannelProfile:
    layer_index: int
    class_id: object  # int or ALL
    n_examples: int
    mean_magnitude: np.ndarray  # (K,)
    activation_count: np.ndarray  # (K,) int
    frequency: np.ndarray  # (K,) in [0,1]
    threshold_frac: float | None
    sort_order: np.ndarray  # (K,) permutation, descending by the profile's key

    @property
    def num_channels(self) -> int:
        return self.mean_magnitude.shape[0]


def _filter_rows(pooled: np.ndarray, labels, class_id):
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2:
        raise ShapeError(f"pooled activations must be (N, K), got {pooled.shape}")
    if class_id == ALL:
        sel = pooled
    else:
        if labels is None:
            raise ConfigError("class filtering requires labels")
        labels = np.asarray(labels)
        sel = pooled[labels == class_id]
    if sel.shape[0] == 0:
        raise ConfigError(f"class filter {class_id!r} selected no examples")
    return sel


def _descending_order(key: np.ndarray) -> np.ndarray:
    # stable sort so equal keys keep channel-index order
    return np.argsort(-key, kind="stable")


def magnitude_profile(pooled, labels=None, class_id=ALL, layer_index: int = -1) -> ChannelProfile:
    """Per-channel mean pooled activation, sorted descending by magnitude."""
    sel = _filter_rows(pooled, labels, class_id)
    mags = sel.mean(axis=0)
    k = mags.shape[0]
    return ChannelProfile(layer_index=layer_index, class_id=class_id,
                          n_examples=sel.shape[0], mean_magnitude=mags,
                          activation_count=np.zeros(k, dtype=np.int64),
                          frequency=np.zeros(k), threshold_frac=None,
                          sort_order=_descending_order(mags))


def frequency_profile(pooled, threshold_frac: float, labels=None, class_id=ALL,
                      layer_index: int = -1) -> ChannelProfile:
    """Fraction of examples activating each channel, sorted descending.

    A channel counts as activated for example n iff its pooled value is
    strictly greater than threshold_frac times the example's maximum
    pooled value (so an all-zero example activates nothing).
    """
    if not 0 < threshold_frac < 1:
        raise ConfigError(f"threshold_frac must be in (0,1), got {threshold_frac}")
    sel = _filter_rows(pooled, labels, class_id)
    thresholds = threshold_frac * sel.max(axis=1, keepdims=True)  # per example
    activated = sel > thresholds
    counts = activated.sum(axis=0).astype(np.int64)
    freq = counts / sel.shape[0]
    return ChannelProfile(layer_index=layer_index, class_id=class_id,
                          n_examples=sel.shape[0], mean_magnitude=sel.mean(axis=0),
                          activation_count=counts, frequency=freq,
                          threshold_frac=threshold_frac,
                          sort_order=_descending_order(freq))


def uniformity(profile: ChannelProfile) -> float:
    """Normalized entropy of the frequency vector; 1 = perfectly uniform."""
    f = profile.frequency
    k = f.shape[0]
    if k < 2:
        raise ConfigError("uniformity needs at least two channels")
    total = f.sum()
    if total <= 0:
        raise ConfigError("uniformity undefined for an all-zero frequency profile")
    p = f / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / np.log(k))


def compare_profiles(nat: ChannelProfile, adv: ChannelProfile):
    """Pair two profiles, ranked by the natural profile's frequency.

    Returns rows (rank, channel, nat_freq, adv_freq, nat_mag, adv_mag).
    """
    if nat.num_channels != adv.num_channels:
        raise ConfigError(f"channel counts differ: {nat.num_channels} vs {adv.num_channels}")
    if nat.layer_index != adv.layer_index or nat.class_id != adv.class_id:
        raise ConfigError("profiles describe different layers or classes")
    rows = []
    for rank, ch in enumerate(nat.sort_order):
        ch = int(ch)
        rows.append((rank, ch, float(nat.frequency[ch]), float(adv.frequency[ch]),
                     float(nat.mean_magnitude[ch]), float(adv.mean_magnitude[ch])))
    return rows


def write_comparison_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "channel", "nat_freq", "adv_freq", "nat_mag", "adv_mag"])
        for rank, ch, nf, af, nm, am in rows:
            w.writerow([rank, ch, repr(nf), repr(af), repr(nm), repr(am)])


def pooled_at_layer(config: ModelConfig, params: Parameters, images: np.ndarray,
                    layer_index: int, batch_size: int = 128) -> np.ndarray:
    """Pooled activations of one 4-d layer over a dataset, in dataset order."""
    shapes = config.layer_shapes()
    if layer_index < 0 or layer_index >= len(config.layers) or len(shapes[layer_index]) != 4:
        raise ConfigError(f"layer {layer_index} does not produce a 4-d activation")
    chunks = []
    dtype = next(iter(params.tensors())).dtype
    for start in range(0, images.shape[0], batch_size):
        x = Tensor(images[start:start + batch_size].astype(dtype))
        _, _, records = model_forward(x, params, config)
        rec = next(r for r in records if r.layer_index == layer_index)
        chunks.append(rec.pooled.astype(np.float64))
    return np.concatenate(chunks, axis=0)


def export_features(config: ModelConfig, params: Parameters, images: np.ndarray,
                    labels, layer_index: int):
    """Per-example feature rows (label, K pooled values) in dataset order."""
    pooled = pooled_at_layer(config, params, images, layer_index)
    labels = np.asarray(labels)
    return [(int(labels[n]), pooled[n].copy()) for n in range(pooled.shape[0])]


def write_features_csv(path, rows):
    k = rows[0][1].shape[0] if rows else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"c{i}" for i in range(k)])
        for label, feats in rows:
            w.writerow([label] + [repr(float(v)) for v in feats])
