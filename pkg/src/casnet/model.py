"""Configurable plain CNN with channel-wise activation suppression.

A model is a flat layer list (conv / relu / maxpool / flatten / gap /
linear) plus a set of attachment points where suppression modules sit.
Each module owns a K x C auxiliary classifier matrix M over the pooled
channel activations; the weight column of the target class (the label in
the train phase, the module's own prediction in the test phase) rescales
the activation map before it continues downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Tensor, add_bias, channel_scale, flatten2d, matmul, maxpool2d,
                     mean, relu, take_columns)
from . import tensor as T

TRAIN = "train"
TEST = "test"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | maxpool | flatten | gap | linear
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    out_features: int = 0

    def to_dict(self) -> dict:
        if self.kind == "conv":
            return {"kind": "conv", "out_channels": self.out_channels,
                    "kernel": self.kernel, "stride": self.stride, "padding": self.padding}
        if self.kind == "linear":
            return {"kind": "linear", "out_features": self.out_features}
        return {"kind": self.kind}

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        kind = d.get("kind")
        if kind == "conv":
            return conv(d["out_channels"], d["kernel"], d.get("stride", 1), d.get("padding", 0))
        if kind == "linear":
            return linear(d["out_features"])
        if kind in ("relu", "maxpool", "flatten", "gap"):
            return LayerSpec(kind)
        raise ConfigError(f"unknown layer kind {kind!r}")


def conv(out_channels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv", out_channels=out_channels, kernel=kernel,
                     stride=stride, padding=padding)


def linear(out_features: int) -> LayerSpec:
    return LayerSpec("linear", out_features=out_features)


RELU = LayerSpec("relu")
MAXPOOL = LayerSpec("maxpool")
FLATTEN = LayerSpec("flatten")
GAP = LayerSpec("gap")


@dataclass
class ModelConfig:
    input_shape: tuple  # (channels, H, W)
    num_classes: int
    layers: list = field(default_factory=list)
    cas_points: tuple = ()

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.cas_points = tuple(sorted(self.cas_points))
        shapes = self.layer_shapes()
        for idx in self.cas_points:
            if idx < 0 or idx >= len(self.layers):
                raise ConfigError(f"cas point {idx} outside layer range")
            if len(shapes[idx]) != 4:
                raise ConfigError(
                    f"cas point {idx} attaches to a {len(shapes[idx])}-d output; need 4-d")
        if shapes[-1] != (None, self.num_classes):
            raise ConfigError(
                f"final layer produces shape {shapes[-1][1:]}, expected ({self.num_classes},)")

    @property
    def num_cas(self) -> int:
        return len(self.cas_points)

    def layer_shapes(self) -> list:
        """Output shape after each layer, batch dim as None."""
        c, h, w = self.input_shape
        shape = (None, c, h, w)
        out = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv":
                if len(shape) != 4:
                    raise ConfigError(f"layer {i}: conv needs 4-d input, has {shape}")
                _, cin, h, w = shape
                hp, wp = h + 2 * spec.padding, w + 2 * spec.padding
                if spec.kernel > hp or spec.kernel > wp:
                    raise ConfigError(f"layer {i}: kernel {spec.kernel} exceeds input {hp}x{wp}")
                if (hp - spec.kernel) % spec.stride or (wp - spec.kernel) % spec.stride:
                    raise ConfigError(f"layer {i}: stride {spec.stride} does not tile input")
                shape = (None, spec.out_channels,
                         (hp - spec.kernel) // spec.stride + 1,
                         (wp - spec.kernel) // spec.stride + 1)
            elif spec.kind == "relu":
                pass
            elif spec.kind == "maxpool":
                if len(shape) != 4 or shape[2] < 2 or shape[3] < 2:
                    raise ConfigError(f"layer {i}: cannot maxpool shape {shape}")
                shape = (None, shape[1], shape[2] // 2, shape[3] // 2)
            elif spec.kind == "flatten":
                n = 1
                for d in shape[1:]:
                    n *= d
                shape = (None, n)
            elif spec.kind == "gap":
                if len(shape) != 4:
                    raise ConfigError(f"layer {i}: gap needs 4-d input, has {shape}")
                shape = (None, shape[1])
            elif spec.kind == "linear":
                if len(shape) != 2:
                    raise ConfigError(f"layer {i}: linear needs 2-d input, has {shape}")
                shape = (None, spec.out_features)
            else:
                raise ConfigError(f"layer {i}: unknown kind {spec.kind!r}")
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "num_classes": self.num_classes,
                "layers": [s.to_dict() for s in self.layers],
                "cas_points": list(self.cas_points)}

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(input_shape=tuple(d["input_shape"]),
                           num_classes=d["num_classes"],
                           layers=[LayerSpec.from_dict(s) for s in d["layers"]],
                           cas_points=tuple(d.get("cas_points", ())))


def small_conv_net(input_shape=(1, 28, 28), num_classes: int = 10,
                   with_cas: bool = True) -> ModelConfig:
    """Reference desk-scale CNN; suppression attaches after the final relu."""
    layers = [
        conv(16, 3, 1, 1), RELU, MAXPOOL,
        conv(32, 3, 1, 1), RELU, MAXPOOL,
        conv(64, 3, 1, 1), RELU, MAXPOOL,
        conv(64, 3, 1, 1), RELU,
        GAP,
        linear(num_classes),
    ]
    return ModelConfig(input_shape=input_shape, num_classes=num_classes,
                       layers=layers, cas_points=(10,) if with_cas else ())


class Parameters:
    """Named parameter store; insertion order is the canonical order."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor):
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._tensors[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self):
        return self._tensors.values()

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def copy(self) -> "Parameters":
        out = Parameters()
        for name, t in self._tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.add(name, c)
        return out

    def astype(self, dtype) -> "Parameters":
        out = Parameters()
        for name, t in self._tensors.items():
            out.add(name, Tensor(t.data.astype(dtype), requires_grad=t.requires_grad))
        return out


@dataclass
class CASModule:
    """Auxiliary classifier weights attached at one activation layer."""
    layer_index: int
    M: Tensor  # (K, C), no bias


@dataclass
class ActivationRecord:
    """Per-layer capture of a forward pass, as plain arrays."""
    layer_index: int
    raw: np.ndarray  # (N, K, H, W)
    pooled: np.ndarray  # (N, K) spatial means
    reweighted: np.ndarray | None = None
    aux_logits: np.ndarray | None = None


def gap(raw: Tensor) -> Tensor:
    """Global average pooling: (N,K,H,W) -> (N,K) spatial means."""
    if raw.ndim != 4:
        raise ShapeError(f"gap: expected 4-d activation, got {raw.shape}")
    return mean(raw, axis=(2, 3))


def _check_labels(labels, n: int, num_classes: int):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return labels


def cas_forward(raw: Tensor, module: CASModule, phase: str, labels=None):
    """Reweight an activation map by the class-indexed channel importances.

    Returns (reweighted, aux_logits). In the train phase the true label
    selects the column of M; in the test phase the module's own argmax
    does (lowest class index on ties), and that selection is a constant
    with respect to differentiation.
    """
    if raw.ndim != 4:
        raise ShapeError(f"cas_forward: expected 4-d activation, got {raw.shape}")
    n, k = raw.shape[0], raw.shape[1]
    if module.M.ndim != 2 or module.M.shape[0] != k:
        raise ShapeError(f"cas_forward: M shape {module.M.shape} does not match {k} channels")
    num_classes = module.M.shape[1]
    pooled = gap(raw)
    aux_logits = matmul(pooled, module.M)
    if phase == TRAIN:
        if labels is None:
            raise ValueError("cas_forward: train phase requires labels")
        selector = _check_labels(labels, n, num_classes)
    elif phase == TEST:
        selector = np.argmax(aux_logits.data, axis=1)  # constant w.r.t. gradients
    else:
        raise ValueError(f"unknown phase {phase!r}")
    weights = take_columns(module.M, selector)  # (N, K)
    return channel_scale(raw, weights), aux_logits


def model_forward(x: Tensor, params: Parameters, config: ModelConfig,
                  phase: str = TEST, labels=None):
    """Run the layer stack, applying suppression at each attachment point.

    Returns (logits, aux_logits_list, records). The reweighted activation
    replaces the raw one for all downstream layers; records capture every
    4-d layer output (raw + pooled) for channel analysis.
    """
    cin, hin, win = config.input_shape
    if x.ndim != 4 or x.shape[1:] != (cin, hin, win):
        raise ShapeError(f"input shape {x.shape} != (N, {cin}, {hin}, {win})")
    if phase == TRAIN and labels is None:
        raise ValueError("model_forward: train phase requires labels")
    h = x
    aux_list = []
    records = []
    for i, spec in enumerate(config.layers):
        if spec.kind == "conv":
            h = T.conv2d(h, params[f"layer{i}.weight"], params[f"layer{i}.bias"],
                         stride=spec.stride, padding=spec.padding)
        elif spec.kind == "relu":
            h = relu(h)
        elif spec.kind == "maxpool":
            h = maxpool2d(h)
        elif spec.kind == "flatten":
            h = flatten2d(h)
        elif spec.kind == "gap":
            h = gap(h)
        elif spec.kind == "linear":
            h = add_bias(matmul(h, params[f"layer{i}.weight"]), params[f"layer{i}.bias"])
        record = None
        if h.ndim == 4:
            record = ActivationRecord(layer_index=i, raw=h.data,
                                      pooled=h.data.mean(axis=(2, 3)))
            records.append(record)
        if i in config.cas_points:
            module = CASModule(layer_index=i, M=params[f"cas{i}.M"])
            h, aux = cas_forward(h, module, phase, labels)
            aux_list.append(aux)
            record.reweighted = h.data
            record.aux_logits = aux.data
    return h, aux_list, records


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> Parameters:
    """Fan-in-scaled normal weights (std = sqrt(2/fan_in)), zero biases.

    The suppression matrices draw from the same scheme with fan_in = K.
    Deterministic per seed; draws happen in layer order.
    """
    rng = np.random.default_rng(seed)
    params = Parameters()
    shapes = config.layer_shapes()
    shape = (None,) + config.input_shape
    for i, spec in enumerate(config.layers):
        if spec.kind == "conv":
            cin = shape[1]
            fan_in = cin * spec.kernel * spec.kernel
            w = rng.standard_normal((spec.out_channels, cin, spec.kernel, spec.kernel),
                                    dtype=dtype) * dtype(np.sqrt(2.0 / fan_in))
            params.add(f"layer{i}.weight", Tensor(w, requires_grad=True))
            params.add(f"layer{i}.bias",
                       Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True))
        elif spec.kind == "linear":
            fan_in = shape[-1] if len(shape) == 2 else int(np.prod(shape[1:]))
            w = rng.standard_normal((fan_in, spec.out_features),
                                    dtype=dtype) * dtype(np.sqrt(2.0 / fan_in))
            params.add(f"layer{i}.weight", Tensor(w, requires_grad=True))
            params.add(f"layer{i}.bias",
                       Tensor(np.zeros(spec.out_features, dtype=dtype), requires_grad=True))
        shape = shapes[i]
        if i in config.cas_points:
            k = shape[1]
            m = rng.standard_normal((k, config.num_classes),
                                    dtype=dtype) * dtype(np.sqrt(2.0 / k))
            params.add(f"cas{i}.M", Tensor(m, requires_grad=True))
    return params


def expected_param_shapes(config: ModelConfig) -> dict:
    """Name -> shape map implied by the config; used to validate checkpoints."""
    out = {}
    shapes = config.layer_shapes()
    shape = (None,) + config.input_shape
    for i, spec in enumerate(config.layers):
        if spec.kind == "conv":
            out[f"layer{i}.weight"] = (spec.out_channels, shape[1], spec.kernel, spec.kernel)
            out[f"layer{i}.bias"] = (spec.out_channels,)
        elif spec.kind == "linear":
            out[f"layer{i}.weight"] = (shape[-1], spec.out_features)
            out[f"layer{i}.bias"] = (spec.out_features,)
        shape = shapes[i]
        if i in config.cas_points:
            out[f"cas{i}.M"] = (shape[1], config.num_classes)
    return out
