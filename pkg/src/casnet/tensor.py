"""Dense tensors with tape-based reverse-mode automatic differentiation.

Everything is a ``Tensor`` wrapping a row-major numpy array (N x C x H x W
for images). Ops executed inside a ``with Tape() as tape:`` block are
recorded in execution order; ``backward(tape, loss)`` replays the tape in
reverse and accumulates d(loss)/d(t) into ``t.grad`` for every tensor that
requires gradients. Repeated backward calls on the same tape keep adding
into ``.grad`` (accumulation semantics).

Conventions fixed here and relied on by tests:
  * ReLU subgradient at 0 is 0.
  * max reductions and maxpool route the gradient to the first (lowest
    flat index) maximal element.
  * No broadcasting except scalar-tensor ops and the explicit bias-add
    helpers; binary elementwise ops require identical shapes.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered op record for one forward/backward episode."""

    def __init__(self):
        self._nodes = []  # (output, inputs, backward_fn)
        self._outputs = set()  # ids of tensors produced under this tape

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out, inputs, backward_fn):
        self._nodes.append((out, inputs, backward_fn))
        self._outputs.add(id(out))


class Tensor:
    """n-d array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """View of the same buffer, cut off from any tape."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common elementwise cases.
    def __add__(self, other):
        return add_scalar(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if np.isscalar(other) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _apply(out_data, inputs, backward_fn) -> Tensor:
    tape = _TAPES[-1] if _TAPES else None
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape._record(out, inputs, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor):
    """Populate ``.grad`` with d(loss)/d(t) for every tensor on the tape.

    Gradients add into existing ``.grad`` buffers; call ``zero_grad`` (or
    build a fresh tape with fresh leaves) to reset between steps.
    """
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise ValueError("loss was not produced under this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for out, inputs, backward_fn in reversed(tape._nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                holders[key] = inp
    for key, t in holders.items():
        t.grad = grads[key] if t.grad is None else t.grad + grads[key]


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _apply(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _apply(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _apply(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _apply(-a.data, (a,), lambda g: (-g,))


def add_scalar(a: Tensor, s) -> Tensor:
    s = a.data.dtype.type(s)
    return _apply(a.data + s, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, s) -> Tensor:
    s = a.data.dtype.type(s)
    return _apply(a.data * s, (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _apply(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _apply(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0
    return _apply(a.data * mask, (a,), lambda g: (g * mask,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    mask = a.data >= lo  # gradient passes where the value is not clamped
    return _apply(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra and structural ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _apply(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (N, C) + (C,)."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} do not align")
    return _apply(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.shape
    return _apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(in_shape),))


def flatten2d(a: Tensor) -> Tensor:
    """Collapse all trailing axes: (N, ...) -> (N, prod(...))."""
    return reshape(a, (a.shape[0], -1))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g, in_shape, axis):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return np.broadcast_to(np.expand_dims(g, axes), in_shape)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - numpy-style name
    in_shape = a.shape
    return _apply(a.data.sum(axis=axis), (a,),
                  lambda g: (_expand_reduced(g, in_shape, axis).copy(),))


def mean(a: Tensor, axis=None) -> Tensor:
    in_shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= in_shape[ax]
    inv = a.data.dtype.type(1.0 / count)
    return _apply(a.data.mean(axis=axis), (a,),
                  lambda g: (_expand_reduced(g * inv, in_shape, axis).copy(),))


def max_axis(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient goes to the first maximal element."""
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)
    in_shape = a.shape

    def bwd(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _apply(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw) plus bias.

    Output is (N, Cout, H', W') with H' = (H + 2*padding - kh)/stride + 1.
    Configurations where the stride does not tile the padded input exactly
    are rejected rather than silently truncated.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input/kernel, got {x.shape}, {kernel.shape}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"conv2d: stride {stride} does not tile padded input {hp}x{wp} with kernel {kh}x{kw}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, shape=(n, cin, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw), writeable=False)
    # (N,Cin,kh,kw,Ho,Wo) x (Cout,Cin,kh,kw) -> (N,Ho,Wo,Cout)
    out_data = np.tensordot(patches, kernel.data, axes=([1, 2, 3], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    out_data += bias.data[None, :, None, None]

    kdata = kernel.data

    def bwd(g):
        # g: (N,Cout,Ho,Wo)
        gk = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))  # (Cout,Cin,kh,kw)
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.tensordot(g, kdata, axes=([1], [0]))  # (N,Ho,Wo,Cin,kh,kw)
        gcols = gcols.transpose(0, 3, 4, 5, 1, 2)  # (N,Cin,kh,kw,Ho,Wo)
        gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding:hp - padding, padding:wp - padding]
        return (gxp, gk, gb)

    return _apply(out_data, (x, kernel, bias), bwd)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped.

    Ties within a window resolve to the lowest flat index (row-major within
    the window), so replays are deterministic.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool2d: spatial dims {h}x{w} too small for 2x2 window")
    v = x.data[:, :, :2 * ho, :2 * wo]
    windows = v.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = np.argmax(windows, axis=-1)  # first index wins ties
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1).squeeze(-1)

    def bwd(g):
        gw = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gv = gw.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        if 2 * ho == h and 2 * wo == w:
            return (gv,)
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        gx[:, :, :2 * ho, :2 * wo] = gv
        return (gx,)

    return _apply(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# indexed selection (class gathers)
# ---------------------------------------------------------------------------

def take_classes(x: Tensor, y) -> Tensor:
    """Pick x[n, y[n]] from (N, C) logits -> (N,)."""
    y = np.asarray(y)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"take_classes: shapes {x.shape} and {y.shape} do not align")
    n, c = x.shape
    rows = np.arange(n)

    def bwd(g):
        gx = np.zeros((n, c), dtype=g.dtype)
        gx[rows, y] = g
        return (gx,)

    return _apply(x.data[rows, y], (x,), bwd)


def take_columns(m: Tensor, idx) -> Tensor:
    """Gather columns of a (K, C) matrix per example: out[n] = m[:, idx[n]].

    The index vector is a constant; gradients scatter-add back into the
    selected columns only.
    """
    idx = np.asarray(idx)
    if m.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_columns: shapes {m.shape} and {idx.shape} do not align")
    k, c = m.shape

    def bwd(g):
        gmt = np.zeros((c, k), dtype=g.dtype)
        np.add.at(gmt, idx, g)
        return (gmt.T,)

    return _apply(m.data.T[idx], (m,), bwd)


def channel_scale(x: Tensor, w: Tensor) -> Tensor:
    """Per-example per-channel scaling: (N,K,H,W) * (N,K) -> (N,K,H,W)."""
    if x.ndim != 4 or w.ndim != 2 or x.shape[:2] != w.shape:
        raise ShapeError(f"channel_scale: shapes {x.shape} and {w.shape} do not align")
    xd, wd = x.data, w.data

    def bwd(g):
        return (g * wd[:, :, None, None], (g * xd).sum(axis=(2, 3)))

    return _apply(xd * wd[:, :, None, None], (x, w), bwd)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def log_softmax(z: Tensor) -> Tensor:
    """Row-wise log softmax of (N, C) logits, stabilized by max subtraction."""
    if z.ndim != 2:
        raise ShapeError(f"log_softmax: expected 2-d logits, got {z.shape}")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    sm = np.exp(out_data)
    return _apply(out_data, (z,), lambda g: (g - sm * g.sum(axis=1, keepdims=True),))


def softmax(z: Tensor) -> Tensor:
    return exp(log_softmax(z))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central finite differences.

    ``f`` must map a tensor to a scalar tensor. The check runs at 64-bit
    precision regardless of the input dtype. Per coordinate the error is
    |analytic - fd| / max(|analytic|, 1e-8); the maximum over coordinates
    is returned.
    """
    if h <= 0:
        raise ValueError(f"grad_check: step h must be positive, got {h}")
    xt = Tensor(x.data.astype(np.float64).copy(), requires_grad=True)
    with Tape() as tape:
        out = f(xt)
    if out.shape != ():
        raise ShapeError(f"grad_check: f must return a scalar, got shape {out.shape}")
    backward(tape, out)
    analytic = np.zeros_like(xt.data) if xt.grad is None else xt.grad.copy()

    flat = xt.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(xt).data)
        flat[i] = orig - h
        fm = float(f(xt).data)
        flat[i] = orig
        fd[i] = (fp - fm) / (2 * h)
    fd = fd.reshape(xt.data.shape)
    denom = np.maximum(np.abs(analytic), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))
