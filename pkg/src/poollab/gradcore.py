"""Minimal reverse-mode autodiff over dense numpy tensors.

Operations record nodes onto the active `Tape` (a linear computation
record in creation order, hence topologically sorted). `Tape.backward`
walks the record once in reverse, accumulating gradients into each
tensor's `grad` slot. Outside of a `with Tape()` block the same functions
run as plain numpy code with no recording, which is what evaluation-mode
forward passes use.

Tensors are 64-bit by default; building a model in 32-bit mode simply
flows float32 arrays through the same ops (python scalars do not promote
under numpy 2 weak promotion rules).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Dense real array plus a gradient slot and its tape position.

    `data` must be treated as immutable once the tensor has been consumed
    by a recorded operation; all ops here allocate fresh outputs.
    """

    __slots__ = ("data", "grad", "node_id")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class _Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


_TAPES: list["Tape"] = []


class Tape:
    """Linear computation record; context manager activating recording."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor):
        """Reverse sweep from a recorded scalar; fills `grad` slots."""
        if loss.node_id is None or loss.node_id >= len(self.nodes) or self.nodes[loss.node_id].out is not loss:
            raise ValueError("loss tensor was not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = node.out.grad
            if g is None:
                continue
            for inp, gin in zip(node.inputs, node.backward(g)):
                if gin is None:
                    continue
                if inp.grad is None:
                    inp.grad = gin
                else:
                    inp.grad = inp.grad + gin


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        out.node_id = len(tape.nodes)
        tape.nodes.append(_Node(op, tuple(inputs), out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _shape_error(op, *shapes):
    pretty = " vs ".join(str(tuple(s)) for s in shapes)
    return ValueError(f"{op}: incompatible shapes {pretty}")


# ---------------------------------------------------------------------------
# core algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    return _record("add", (a, b), out,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    return _record("scale", (x,), x.data * c, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product. Either operand may carry leading batch dims;
    gradients are summed back over broadcast batch dims."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    a_d, b_d = a.data, b.data
    out = np.matmul(a_d, b_d)

    def backward(g):
        ga = np.matmul(g, b_d.swapaxes(-1, -2))
        gb = np.matmul(a_d.swapaxes(-1, -2), g)
        if ga.shape != a_d.shape:
            ga = _unbroadcast(ga, a_d.shape)
        if gb.shape != b_d.shape:
            gb = _unbroadcast(gb, b_d.shape)
        return ga, gb

    return _record("matmul", (a, b), out, backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x of shape (..., in), w (in, out), b (out,)."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise _shape_error("affine", x.shape, w.shape, b.shape)
    x_d, w_d = x.data, w.data
    out = np.matmul(x_d, w_d) + b.data

    def backward(g):
        gx = np.matmul(g, w_d.T)
        x2 = x_d.reshape(-1, x_d.shape[-1])
        g2 = g.reshape(-1, w_d.shape[1])
        return gx, x2.T @ g2, g2.sum(axis=0)

    return _record("affine", (x, w, b), out, backward)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=-1)
    sizes = [p.shape[-1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=-1))

    return _record("concat_lastdim", tuple(parts), out, backward)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, d) -> (..., heads, N, d // heads)."""
    *lead, n, d = x.shape
    if d % heads != 0:
        raise ValueError(f"split_heads: feature extent {d} not divisible by {heads} heads")
    dh = d // heads
    out = x.data.reshape(*lead, n, heads, dh).swapaxes(-2, -3)

    def backward(g):
        return (g.swapaxes(-2, -3).reshape(*lead, n, d),)

    return _record("split_heads", (x,), out, backward)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, N, d_h) -> (..., N, heads * d_h)."""
    *lead, m, n, dh = x.shape
    out = x.data.swapaxes(-2, -3).reshape(*lead, n, m * dh)

    def backward(g):
        return (g.reshape(*lead, n, m, dh).swapaxes(-2, -3),)

    return _record("merge_heads", (x,), out, backward)


def transpose_last2(x: Tensor) -> Tensor:
    return _record("transpose_last2", (x,), x.data.swapaxes(-1, -2),
                   lambda g: (g.swapaxes(-1, -2),))


def reshape(x: Tensor, shape) -> Tensor:
    return _record("reshape", (x,), x.data.reshape(shape),
                   lambda g: (g.reshape(x.shape),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _record("narrow", (x,), x.data[idx].copy(), backward)


def index_axis(x: Tensor, axis: int, i: int) -> Tensor:
    """Select one index along an axis (the axis is dropped)."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = i
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _record("index_axis", (x,), x.data[idx].copy(), backward)


def reduce_sum(x: Tensor, axis: int) -> Tensor:
    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record("reduce_sum", (x,), x.data.sum(axis=axis), backward)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),)

    return _record("reduce_mean", (x,), x.data.mean(axis=axis), backward)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max along an axis; gradient routed to the first maximal element."""
    if x.shape[axis] == 0:
        raise ValueError("reduce_max: empty axis")
    amax = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(amax, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(amax, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record("reduce_max", (x,), out, backward)


def broadcast_over_axis(v: Tensor, axis: int, extent: int) -> Tensor:
    """Insert an axis of the given extent by repetition; backward sums it out."""
    ax = axis % (v.data.ndim + 1)
    out = np.broadcast_to(np.expand_dims(v.data, ax),
                          v.shape[:ax] + (extent,) + v.shape[ax:]).copy()

    def backward(g):
        return (g.sum(axis=ax),)

    return _record("broadcast_over_axis", (v,), out, backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations


def softmax_lastdim(x: Tensor) -> Tensor:
    """Stable softmax along the last axis (max-subtraction)."""
    if x.data.size == 0:
        raise ValueError("softmax_lastdim: empty input")
    out = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.einsum("...i,...i->...", g, out)[..., None]
        dx = g - dot
        dx *= out
        return (dx,)

    return _record("softmax_lastdim", (x,), out, backward)


def gelu(x: Tensor) -> Tensor:
    """Exact error-function GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x_d = x.data
    cdf = erf(x_d * _INV_SQRT2)
    cdf += 1.0
    cdf *= 0.5
    out = x_d * cdf

    def backward(g):
        pdf = x_d * x_d
        pdf *= -0.5
        np.exp(pdf, out=pdf)
        pdf *= x_d
        pdf *= _INV_SQRT2PI
        pdf += cdf
        pdf *= g
        return (pdf,)

    return _record("gelu", (x,), out, backward)


def seq_normalize(x: Tensor, g: Tensor, b: Tensor, eps: float = 1e-6) -> Tensor:
    """Standardize along the last axis, then gain/shift: g * xhat + b.

    Mean and population variance are taken over the last axis; `g` and `b`
    must broadcast against the leading axes of `x` (scalars, or per-head
    shapes like (1, M, 1, 1)). Constant input maps to `b`.
    """
    if eps <= 0:
        raise ValueError("seq_normalize: eps must be positive")
    if x.shape[-1] < 1:
        raise ValueError("seq_normalize: empty normalization axis")
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None]
    var /= n
    var += eps
    inv = 1.0 / np.sqrt(var)
    xhat *= inv
    g_d, g_shape, b_shape = g.data, g.shape, b.shape
    out = xhat * g_d
    out += b.data

    def backward(gout):
        dxhat = gout * g_d
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None]
        m2 /= n
        dg = _unbroadcast(gout * xhat, g_shape)
        db = _unbroadcast(gout, b_shape)
        dxhat -= m1
        dxhat -= xhat * m2
        dxhat *= inv
        return dxhat, dg, db

    return _record("seq_normalize", (x, g, b), out, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row standardization over the feature (last) axis with vector gain/bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias shapes {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match feature extent {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None]
    var /= d
    var += eps
    inv = 1.0 / np.sqrt(var)
    xhat *= inv
    gain_d = gain.data
    out = xhat * gain_d
    out += bias.data

    def backward(gout):
        dxhat = gout * gain_d
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = np.einsum("...i,...i->...", dxhat, xhat)[..., None]
        m2 /= d
        g2 = gout.reshape(-1, d)
        dgain = np.einsum("ri,ri->i", g2, xhat.reshape(-1, d))
        dbias = g2.sum(axis=0)
        dxhat -= m1
        dxhat -= xhat * m2
        dxhat *= inv
        return dxhat, dgain, dbias

    return _record("layer_norm", (x, gain, bias), out, backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode with rate > 0."""
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# loss, lookup, init, verification


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer id; backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding_lookup: id out of range [0, {table.shape[0]})")
    d = table.shape[1]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _record("embedding_lookup", (table,), table.data[ids], backward)


def cross_entropy_from_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]; logits shape (rows, classes)."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be 2-d, got {logits.shape}")
    rows, classes = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (rows,):
        raise _shape_error("cross_entropy targets", targets.shape, (rows,))
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise ValueError(f"cross_entropy: target index out of range [0, {classes})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = z[np.arange(rows), targets]
    out = np.asarray((lse - picked).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(rows), targets] -= 1.0
        return (p * (g / rows),)

    return _record("cross_entropy", (logits,), out, backward)


def truncated_normal_init(shape, std: float, rng: np.random.Generator,
                          dtype=np.float64) -> Tensor:
    """Zero-mean normal with draws beyond 2 std rejected and redrawn."""
    if std <= 0:
        raise ValueError("truncated_normal_init: std must be positive")
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return Tensor(out.astype(dtype, copy=False))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between recorded backward and central differences.

    `f` must map a Tensor to a scalar Tensor using recorded ops only. The
    relative error per coordinate is |analytic - numeric| divided by
    max(1, |analytic|, |numeric|).
    """
    probe = Tensor(x.data.copy())
    with Tape() as tape:
        out = f(probe)
        tape.backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    if not np.all(np.isfinite(analytic)):
        raise ValueError("grad_check: non-finite analytic gradient")

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        hi = float(f(Tensor(bumped.reshape(x.shape))).data)
        bumped[i] -= 2 * h
        lo = float(f(Tensor(bumped.reshape(x.shape))).data)
        numeric = (hi - lo) / (2 * h)
        if not math.isfinite(numeric):
            raise ValueError("grad_check: non-finite numeric gradient")
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
