"""Dense tensors with reverse-mode autodiff on a global tape, plus 2-D FFT.

Conventions fixed here and relied on by the rest of the package:

* storage is row-major; supported dtypes are float32 (forward default),
  float64 (mandatory for gradient checks) and complex128 (FFT domain only)
* fft2 leaves the forward transform unscaled, ifft2 divides by H*W
* GELU is the tanh approximation
* tensors are immutable once built; optimizers may rewrite leaf ``.data``
  between graphs, never inside one

Every differentiable op appends one entry to the active tape.  backward()
replays the tape strictly in reverse execution order, which for eager
single-threaded construction is a valid topological order.  A tape is
consumed by backward(); recording automatically starts a fresh tape
afterwards, and reusing tensors from a consumed graph raises.
"""

from __future__ import annotations

import math

import numpy as np

REAL_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
SUPPORTED_DTYPES = REAL_DTYPES + (np.dtype(np.complex128),)

_GELU_C0 = math.sqrt(2.0 / math.pi)
_GELU_C1 = 0.044715


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(ValueError):
    """An operation was invoked outside its contract."""


# ---------------------------------------------------------------------------
# tape


class GradTape:
    """Ordered record of executed ops, replayed strictly in reverse."""

    def __init__(self):
        self.entries = []  # (output tensor, backward closure)
        self.used = False

    def record(self, out, fn):
        self.entries.append((out, fn))


_tape = GradTape()
_grad_enabled = True


def current_tape() -> GradTape:
    return _tape


def reset_tape() -> GradTape:
    """Drop the active tape and start a fresh one."""
    global _tape
    _tape = GradTape()
    return _tape


class no_grad:
    """Context manager disabling tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense N-d array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in SUPPORTED_DTYPES:
            arr = arr.astype(np.complex128 if np.iscomplexobj(arr) else np.float32)
        if arr.dtype not in SUPPORTED_DTYPES:
            raise ContractError(f"unsupported dtype {arr.dtype}")
        if requires_grad and arr.dtype not in REAL_DTYPES:
            raise ContractError("gradients are defined for real dtypes only")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def astype(self, dtype) -> "Tensor":
        return cast(self, dtype)

    def _accum(self, g):
        # binding without copy is safe: backward fns never mutate gradient
        # arrays in place, and accumulation always allocates a fresh result
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# recording machinery


def _result(data, requires_grad):
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = requires_grad
    t.grad = None
    t._tape = None
    return t


def _wants_grad(*tensors):
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _record(out, inputs, fn):
    global _tape
    if not out.requires_grad:
        return
    for t in inputs:
        if t._tape is not None and t._tape.used:
            raise ContractError(
                "input tensor belongs to a consumed graph; rebuild it after backward"
            )
    if _tape.used:
        _tape = GradTape()
    _tape.record(out, fn)
    out._tape = _tape


def backward(loss: Tensor):
    """Populate .grad on every requires_grad tensor reaching ``loss``.

    The loss must be scalar and built through recorded ops.  A second call
    on the same graph raises; recording new ops starts a fresh tape.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor loss")
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad or loss._tape is None:
        raise ContractError("loss was not built from tape-recorded operations")
    tape = loss._tape
    if tape.used:
        raise ContractError("graph already consumed by a previous backward call")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.entries):
        if out.grad is not None:
            fn(out.grad)
    tape.used = True


# ---------------------------------------------------------------------------
# shape helpers


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return _result(np.asarray(x, dtype=like.dtype), False)
    if isinstance(x, complex):
        return _result(np.asarray(x, dtype=np.complex128), False)
    raise ContractError(f"cannot operate on {type(x).__name__}")


def _binary_inputs(a, b):
    if isinstance(a, Tensor):
        b = _coerce(b, a)
    elif isinstance(b, Tensor):
        a = _coerce(a, b)
    else:
        raise ContractError("at least one operand must be a Tensor")
    ac, bc = a.dtype == np.complex128, b.dtype == np.complex128
    if ac != bc and (a.requires_grad or b.requires_grad):
        raise ContractError("complex arithmetic is forward-only")
    if not ac and not bc and a.dtype != b.dtype:
        raise ContractError(
            f"mixed float precision ({a.dtype} vs {b.dtype}); cast explicitly"
        )
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return a, b


def _check_real(x: Tensor, op: str):
    if x.dtype == np.complex128:
        raise ContractError(f"{op} is not defined for complex tensors")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    out = _result(a.data + b.data, _wants_grad(a, b))

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    _record(out, (a, b), fn)
    return out


def sub(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    out = _result(a.data - b.data, _wants_grad(a, b))

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    _record(out, (a, b), fn)
    return out


def mul(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    out = _result(a.data * b.data, _wants_grad(a, b))

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), fn)
    return out


def div(a, b) -> Tensor:
    a, b = _binary_inputs(a, b)
    out = _result(a.data / b.data, _wants_grad(a, b))

    def fn(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record(out, (a, b), fn)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s = float(s) if not isinstance(s, complex) else s
    out = _result(a.data * s, _wants_grad(a))

    def fn(g):
        a._accum(g * s)

    _record(out, (a,), fn)
    return out


def sigmoid(x: Tensor) -> Tensor:
    _check_real(x, "sigmoid")
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = _result(s, _wants_grad(x))

    def fn(g):
        x._accum(g * s * (1.0 - s))

    _record(out, (x,), fn)
    return out


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(c0*(x + c1*x^3)))."""
    _check_real(x, "gelu")
    d = x.data
    u = _GELU_C0 * (d + _GELU_C1 * d * d * d)
    t = np.tanh(u)
    out = _result(0.5 * d * (1.0 + t), _wants_grad(x))

    def fn(g):
        du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * d * d)
        local = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du
        x._accum(g * local)

    _record(out, (x,), fn)
    return out


def sqrt(x: Tensor) -> Tensor:
    _check_real(x, "sqrt")
    r = np.sqrt(x.data)
    out = _result(r, _wants_grad(x))

    def fn(g):
        x._accum(g * 0.5 / r)

    _record(out, (x,), fn)
    return out


def square(x: Tensor) -> Tensor:
    _check_real(x, "square")
    out = _result(x.data * x.data, _wants_grad(x))

    def fn(g):
        x._accum(g * 2.0 * x.data)

    _record(out, (x,), fn)
    return out


def absolute(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at the origin."""
    _check_real(x, "absolute")
    out = _result(np.abs(x.data), _wants_grad(x))

    def fn(g):
        x._accum(g * np.sign(x.data))

    _record(out, (x,), fn)
    return out


def cast(x: Tensor, dtype) -> Tensor:
    dt = np.dtype(dtype)
    if dt not in REAL_DTYPES:
        raise ContractError("cast targets real dtypes only")
    _check_real(x, "cast")
    out = _result(x.data.astype(dt), _wants_grad(x))

    def fn(g):
        x._accum(g.astype(x.dtype))

    _record(out, (x,), fn)
    return out


# ---------------------------------------------------------------------------
# reductions


def tensor_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_real(x, "sum")
    out = _result(x.data.sum(axis=axis, keepdims=keepdims), _wants_grad(x))

    def fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        x._accum(np.broadcast_to(gg, x.shape).copy())

    _record(out, (x,), fn)
    return out


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_real(x, "mean")
    out = _result(x.data.mean(axis=axis, keepdims=keepdims), _wants_grad(x))
    n = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        x._accum(np.broadcast_to(gg, x.shape) / n)

    _record(out, (x,), fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise ContractError("matmul expects two Tensors")
    _check_real(a, "matmul")
    _check_real(b, "matmul")
    if a.dtype != b.dtype:
        raise ContractError("matmul operands must share dtype")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    out = _result(out_data, _wants_grad(a, b))

    def fn(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    _record(out, (a, b), fn)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    _check_real(x, "softmax")
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s, _wants_grad(x))

    def fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        x._accum(s * (g - inner))

    _record(out, (x,), fn)
    return out


# ---------------------------------------------------------------------------
# structural ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if np.prod(shape, dtype=np.int64) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = _result(x.data.reshape(shape), _wants_grad(x))

    def fn(g):
        x._accum(g.reshape(x.shape))

    _record(out, (x,), fn)
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _result(np.ascontiguousarray(x.data.transpose(axes)), _wants_grad(x))

    def fn(g):
        x._accum(g.transpose(inv))

    _record(out, (x,), fn)
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    dt = tensors[0].dtype
    if any(t.dtype != dt for t in tensors):
        raise ContractError("concat operands must share dtype")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    out = _result(data, _wants_grad(*tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p)

    _record(out, tuple(tensors), fn)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.shape}"
        )
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _result(np.ascontiguousarray(x.data[idx]), _wants_grad(x))

    def fn(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[idx] = g
        x._accum(gx)

    _record(out, (x,), fn)
    return out


def _fold_replicate_pad(gp, pt, pb, pl, pr):
    """Adjoint of edge padding on the last two axes.  Mutates ``gp``."""
    H = gp.shape[-2]
    if pt:
        gp[..., pt, :] += gp[..., :pt, :].sum(axis=-2)
    if pb:
        gp[..., H - pb - 1, :] += gp[..., H - pb:, :].sum(axis=-2)
    g2 = gp[..., pt:H - pb if pb else None, :]
    W = g2.shape[-1]
    if pl:
        g2[..., :, pl] += g2[..., :, :pl].sum(axis=-1)
    if pr:
        g2[..., :, W - pr - 1] += g2[..., :, W - pr:].sum(axis=-1)
    return np.ascontiguousarray(g2[..., :, pl:W - pr if pr else None])


def pad_replicate(x: Tensor, pads) -> Tensor:
    """Edge-replicate pad of the last two axes; pads = (top, bottom, left, right)."""
    pt, pb, pl, pr = pads
    width = [(0, 0)] * (x.ndim - 2) + [(pt, pb), (pl, pr)]
    out = _result(np.pad(x.data, width, mode="edge"), _wants_grad(x))

    def fn(g):
        x._accum(_fold_replicate_pad(g.copy(), pt, pb, pl, pr))

    _record(out, (x,), fn)
    return out


def extract_windows(x: Tensor, size: int, stride: int) -> Tensor:
    """Tile [B,C,H,W] into [B, nh*nw, C, size, size] windows.

    Extents must tile exactly: (H-size) and (W-size) divisible by stride.
    Windows may overlap when stride < size; the backward pass scatter-adds.
    """
    B, C, H, W = x.shape
    if size > H or size > W or (H - size) % stride or (W - size) % stride:
        raise ShapeError(f"{H}x{W} does not tile with size={size} stride={stride}")
    nh = (H - size) // stride + 1
    nw = (W - size) // stride + 1
    s = x.data.strides
    view = np.lib.stride_tricks.as_strided(
        x.data,
        shape=(B, C, nh, nw, size, size),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
    )
    data = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B, nh * nw, C, size, size
    )
    out = _result(data, _wants_grad(x))

    def fn(g):
        # scatter-add on a tile grid of side gcd(size, stride): windows are
        # tile-aligned, so each of the (size/t)^2 tile offsets is one
        # vectorized strided add instead of a per-pixel loop
        t = math.gcd(size, stride)
        nt, st = size // t, stride // t
        gv = g.reshape(B, nh, nw, C, nt, t, nt, t).transpose(0, 3, 1, 2, 4, 6, 5, 7)
        gx = np.zeros((B, C, H // t, t, W // t, t), dtype=g.dtype)
        for a in range(nt):
            for b in range(nt):
                gx[:, :, a:a + st * nh:st, :, b:b + st * nw:st, :] += gv[
                    :, :, :, :, a, b
                ].transpose(0, 1, 2, 4, 3, 5)
        x._accum(gx.reshape(B, C, H, W))

    _record(out, (x,), fn)
    return out


def merge_windows(x: Tensor, nh: int, nw: int) -> Tensor:
    """Inverse of extract_windows for non-overlapping tiles."""
    B, L, C, size, _ = x.shape
    if L != nh * nw:
        raise ShapeError(f"{L} windows cannot form a {nh}x{nw} tiling")
    y = reshape(x, (B, nh, nw, C, size, size))
    y = transpose(y, (0, 3, 1, 4, 2, 5))
    return reshape(y, (B, C, nh * size, nw * size))


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    """[B,C,H,W] -> [B, C*r*r, H/r, W/r]."""
    B, C, H, W = x.shape
    if H % r or W % r:
        raise ShapeError(f"extents {H}x{W} not divisible by {r}")
    y = reshape(x, (B, C, H // r, r, W // r, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (B, C * r * r, H // r, W // r))


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """[B, C*r*r, H, W] -> [B, C, H*r, W*r]."""
    B, C, H, W = x.shape
    if C % (r * r):
        raise ShapeError(f"channel count {C} not divisible by {r * r}")
    y = reshape(x, (B, C // (r * r), r, r, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (B, C // (r * r), H * r, W * r))


# ---------------------------------------------------------------------------
# convolutions and pooling


def conv2d(x: Tensor, w: Tensor, mode: str) -> Tensor:
    """1x1 channel mix or depthwise 3x3 with replicate padding.

    pointwise_1x1:  w is [C_out, C_in], per-pixel channel mix.
    depthwise_3x3:  w is [C, 3, 3], one kernel per channel, spatial extents
    preserved through edge padding of 1.
    """
    _check_real(x, "conv2d")
    _check_real(w, "conv2d")
    if x.dtype != w.dtype:
        raise ContractError("conv2d operands must share dtype")
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [B,C,H,W], got {x.shape}")
    B, C, H, W = x.shape

    if mode == "pointwise_1x1":
        if w.ndim != 2 or w.shape[1] != C:
            raise ShapeError(f"pointwise weight {w.shape} does not match C={C}")
        O = w.shape[0]
        xr = x.data.reshape(B, C, H * W)
        out = _result(np.matmul(w.data, xr).reshape(B, O, H, W), _wants_grad(x, w))

        def fn(g):
            gr = g.reshape(B, O, H * W)
            if x.requires_grad:
                x._accum(np.matmul(w.data.T, gr).reshape(B, C, H, W))
            if w.requires_grad:
                w._accum(np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0))

        _record(out, (x, w), fn)
        return out

    if mode == "depthwise_3x3":
        if w.shape != (C, 3, 3):
            raise ShapeError(f"depthwise weight {w.shape} must be [{C},3,3]")
        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        acc = np.zeros_like(x.data)
        for di in range(3):
            for dj in range(3):
                acc += w.data[:, di, dj][None, :, None, None] * xp[
                    :, :, di:di + H, dj:dj + W
                ]
        out = _result(acc, _wants_grad(x, w))

        def fn(g):
            if x.requires_grad:
                gp = np.zeros_like(xp)
                for di in range(3):
                    for dj in range(3):
                        gp[:, :, di:di + H, dj:dj + W] += (
                            w.data[:, di, dj][None, :, None, None] * g
                        )
                x._accum(_fold_replicate_pad(gp, 1, 1, 1, 1))
            if w.requires_grad:
                gw = np.empty_like(w.data)
                for di in range(3):
                    for dj in range(3):
                        gw[:, di, dj] = (g * xp[:, :, di:di + H, dj:dj + W]).sum(
                            axis=(0, 2, 3)
                        )
                w._accum(gw)

        _record(out, (x, w), fn)
        return out

    raise ContractError(f"unknown conv2d mode {mode!r}")


def avg_pool(x: Tensor, mode: str, window: int | None = None) -> Tensor:
    """Average pooling: 'spatial' -> [B,C,1,1], 'channel' -> [B,1,H,W],
    'window' -> k x k box filter with replicate padding, same extents."""
    _check_real(x, "avg_pool")
    if x.ndim != 4:
        raise ShapeError(f"avg_pool input must be [B,C,H,W], got {x.shape}")
    if mode == "spatial":
        return mean(x, axis=(2, 3), keepdims=True)
    if mode == "channel":
        return mean(x, axis=1, keepdims=True)
    if mode != "window":
        raise ContractError(f"unknown avg_pool mode {mode!r}")
    if window is None or window < 1:
        raise ContractError("window mode needs window >= 1")
    k = int(window)
    B, C, H, W = x.shape
    pl, pr = (k - 1) // 2, k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr), (pl, pr)), mode="edge")
    acc = np.zeros_like(x.data)
    for di in range(k):
        for dj in range(k):
            acc += xp[:, :, di:di + H, dj:dj + W]
    acc /= k * k
    out = _result(acc, _wants_grad(x))

    def fn(g):
        gp = np.zeros_like(xp)
        gk = g / (k * k)
        for di in range(k):
            for dj in range(k):
                gp[:, :, di:di + H, dj:dj + W] += gk
        x._accum(_fold_replicate_pad(gp, pl, pr, pl, pr))

    _record(out, (x,), fn)
    return out


# ---------------------------------------------------------------------------
# FFT (forward-only; deconvolution is fixed preprocessing, no gradient flows
# through the frequency domain)


def fft2(x: Tensor) -> Tensor:
    """Unscaled 2-D FFT over the last two axes; real in, complex128 out."""
    if x.dtype == np.complex128:
        raise ContractError("fft2 expects a real tensor")
    if x.requires_grad:
        raise ContractError("fft2 is forward-only")
    if x.ndim < 2:
        raise ShapeError("fft2 needs at least 2 dimensions")
    if np.isnan(x.data).any():
        raise NumericError("fft2 input contains NaN")
    return _result(np.fft.fft2(x.data.astype(np.float64)), False)


def ifft2(x: Tensor) -> Tensor:
    """Inverse 2-D FFT scaled by 1/(H*W); returns the real part as float64."""
    if x.dtype != np.complex128:
        raise ContractError("ifft2 expects a complex tensor")
    if x.ndim < 2:
        raise ShapeError("ifft2 needs at least 2 dimensions")
    if np.isnan(x.data).any():
        raise NumericError("ifft2 input contains NaN")
    return _result(np.fft.ifft2(x.data).real, False)
