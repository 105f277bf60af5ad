"""Differentiable primitives over :class:`DiffTensor`.

Each primitive computes its forward value with numpy and registers a closure
returning one gradient per input.  Broadcasting follows numpy; gradients are
summed back to the input shapes by :func:`backward`.
"""

from __future__ import annotations

import math
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, expit

from src.core.exceptions import PropagationError, ShapeError
from src.diffcore.tensor import DiffTensor, as_tensor, make_result

TensorLike = Union[DiffTensor, np.ndarray, float, int, Sequence[float]]

LAYER_NORM_EPS = 1e-5
COSINE_EPS = 1e-12


# ---------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        "mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data)
    )


def div(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_result(
        "div", out, (a, b), lambda g: (g / b.data, -g * out / b.data)
    )


def scale(a: TensorLike, factor: float) -> DiffTensor:
    a = as_tensor(a)
    factor = float(factor)
    return make_result("scale", a.data * factor, (a,), lambda g: (g * factor,))


def square(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return make_result("square", a.data**2, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return make_result("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make_result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: TensorLike) -> DiffTensor:
    """Stable ``log(sigmoid(a))``."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return make_result(
        "log_sigmoid", out, (a,), lambda g: (g * expit(-a.data),)
    )


def relu(a: TensorLike) -> DiffTensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a: TensorLike) -> DiffTensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return make_result("gelu", x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def clamp(a: TensorLike, low: float, high: float) -> DiffTensor:
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return make_result(
        "clamp", np.clip(a.data, low, high), (a,), lambda g: (g * inside,)
    )


def maximum(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return make_result(
        "maximum",
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


def minimum(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return make_result(
        "minimum",
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


# ---------------------------------------------------------------------
# Linear algebra and layout
# ---------------------------------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> DiffTensor:
    """Matrix product, batched over leading axes like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError.mismatch("matmul", a.shape, b.shape)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            np.matmul(g, np.swapaxes(b.data, -1, -2)),
            np.matmul(np.swapaxes(a.data, -1, -2), g),
        )

    return make_result("matmul", np.matmul(a.data, b.data), (a, b), _backward)


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> DiffTensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(
        "transpose",
        np.transpose(a.data, axes),
        (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def reshape(a: TensorLike, shape: Sequence[int]) -> DiffTensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError.mismatch("reshape", original, tuple(shape)) from exc
    return make_result("reshape", out, (a,), lambda g: (g.reshape(original),))


def slice_(a: TensorLike, index: Any) -> DiffTensor:
    """Basic or advanced indexing; repeated indices accumulate gradients."""
    a = as_tensor(a)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(
        p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice))
        for p in parts
    )

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result("slice", a.data[index], (a,), _backward)


def take_rows(a: TensorLike, rows: Sequence[int]) -> DiffTensor:
    """Select (and possibly repeat or reorder) entries of the first axis."""
    return slice_(a, np.asarray(rows, dtype=np.int64))


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> DiffTensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc

    def _backward(g: np.ndarray):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return make_result("concat", out, parts, _backward)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> DiffTensor:
    parts = [as_tensor(t) for t in tensors]
    expanded = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: TensorLike, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    shape = a.shape
    return make_result(
        "sum",
        np.sum(a.data, axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_restore_axes(g, shape, axis, keepdims),),
    )


def mean(a: TensorLike, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.size if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))
    return make_result(
        "mean",
        np.mean(a.data, axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_restore_axes(g, shape, axis, keepdims) / count,),
    )


def max_(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> DiffTensor:
    """Maximum; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    if axis is None:
        flat = int(np.argmax(a.data))

        def _backward_all(g: np.ndarray):
            full = np.zeros(a.size)
            full[flat] = float(np.reshape(g, -1)[0])
            return (full.reshape(a.shape),)

        out = np.max(a.data)
        if keepdims:
            out = np.reshape(out, (1,) * a.ndim)
        return make_result("max", np.asarray(out), (a,), _backward_all)

    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)

    def _backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        g_kept = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, arg, g_kept, axis=axis)
        return (full,)

    return make_result(
        "max", np.max(a.data, axis=axis, keepdims=keepdims), (a,), _backward
    )


# ---------------------------------------------------------------------
# Normalisation and attention helpers
# ---------------------------------------------------------------------


def softmax_rows(x: TensorLike) -> DiffTensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise PropagationError("softmax_rows received NaN input")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return make_result("softmax", out, (x,), _backward)


def layer_norm(
    x: TensorLike,
    gain: Optional[TensorLike] = None,
    bias: Optional[TensorLike] = None,
    eps: float = LAYER_NORM_EPS,
) -> DiffTensor:
    """Normalise the last axis to zero mean / unit variance, then apply the affine map."""
    x = as_tensor(x)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs a last axis of at least 2, got {x.shape}")
    gain_t = as_tensor(gain) if gain is not None else DiffTensor(np.ones(d))
    bias_t = as_tensor(bias) if bias is not None else DiffTensor(np.zeros(d))
    if gain_t.shape != (d,) or bias_t.shape != (d,):
        raise ShapeError.mismatch("layer_norm", x.shape, gain_t.shape)

    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat * gain_t.data + bias_t.data

    def _backward(g: np.ndarray):
        g_hat = g * gain_t.data
        dx = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return dx, g * x_hat, g

    return make_result("layer_norm", out, (x, gain_t, bias_t), _backward)


def cosine_similarity_rows(a: TensorLike, b: TensorLike) -> DiffTensor:
    """Row-wise cosine similarity along the last axis; zero-norm rows give 0."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        dots = np.sum(a.data * b.data, axis=-1)
    except ValueError as exc:
        raise ShapeError.mismatch("cosine_similarity_rows", a.shape, b.shape) from exc
    na = np.linalg.norm(a.data, axis=-1)
    nb = np.linalg.norm(b.data, axis=-1)
    valid = (na > COSINE_EPS) & (nb > COSINE_EPS)
    denom = np.where(valid, na * nb, 1.0)
    cos = np.where(valid, dots / denom, 0.0)

    def _backward(g: np.ndarray):
        gv = (g * valid)[..., None]
        safe_na = np.where(na > COSINE_EPS, na, 1.0)[..., None]
        safe_nb = np.where(nb > COSINE_EPS, nb, 1.0)[..., None]
        c = cos[..., None]
        da = gv * (b.data / (safe_na * safe_nb) - c * a.data / safe_na**2)
        db = gv * (a.data / (safe_na * safe_nb) - c * b.data / safe_nb**2)
        return da, db

    return make_result("cosine", cos, (a, b), _backward)


# ---------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------


def bilinear_sample(feature_map: TensorLike, points: TensorLike) -> DiffTensor:
    """Sample an ``h×w×d`` map at normalised ``(x, y)`` points.

    ``u ∈ [0, 1]`` maps to the continuous pixel coordinate ``u·(w−1)``;
    coordinates outside the map are clamped to the border, where the
    coordinate gradient is zero.
    """
    fmap, pts = as_tensor(feature_map), as_tensor(points)
    if fmap.ndim != 3 or fmap.shape[0] < 2 or fmap.shape[1] < 2:
        raise ShapeError(f"bilinear_sample needs an h×w×d map with h,w ≥ 2, got {fmap.shape}")
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError(f"bilinear_sample needs p×2 points, got {pts.shape}")
    if not np.isfinite(pts.data).all():
        raise PropagationError("bilinear_sample received non-finite sampling points")
    h, w, _ = fmap.shape

    px = pts.data[:, 0] * (w - 1)
    py = pts.data[:, 1] * (h - 1)
    inside_x = (px >= 0) & (px <= w - 1)
    inside_y = (py >= 0) & (py <= h - 1)
    px = np.clip(px, 0, w - 1)
    py = np.clip(py, 0, h - 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(py).astype(np.int64), h - 2)
    fx = (px - x0)[:, None]
    fy = (py - y0)[:, None]

    f00 = fmap.data[y0, x0]
    f01 = fmap.data[y0, x0 + 1]
    f10 = fmap.data[y0 + 1, x0]
    f11 = fmap.data[y0 + 1, x0 + 1]
    out = (1 - fy) * ((1 - fx) * f00 + fx * f01) + fy * ((1 - fx) * f10 + fx * f11)

    def _backward(g: np.ndarray):
        gmap = np.zeros_like(fmap.data)
        np.add.at(gmap, (y0, x0), g * (1 - fy) * (1 - fx))
        np.add.at(gmap, (y0, x0 + 1), g * (1 - fy) * fx)
        np.add.at(gmap, (y0 + 1, x0), g * fy * (1 - fx))
        np.add.at(gmap, (y0 + 1, x0 + 1), g * fy * fx)
        d_px = (1 - fy) * (f01 - f00) + fy * (f11 - f10)
        d_py = (1 - fx) * (f10 - f00) + fx * (f11 - f01)
        gpts = np.zeros_like(pts.data)
        gpts[:, 0] = np.sum(g * d_px, axis=-1) * (w - 1) * inside_x
        gpts[:, 1] = np.sum(g * d_py, axis=-1) * (h - 1) * inside_y
        return gmap, gpts

    return make_result("bilinear_sample", out, (fmap, pts), _backward)


def power(a: TensorLike, exponent: float) -> DiffTensor:
    """Elementwise ``a ** exponent`` for positive bases or integer exponents."""
    a = as_tensor(a)
    exponent = float(exponent)
    out = np.power(a.data, exponent)
    return make_result(
        "power",
        out,
        (a,),
        lambda g: (g * exponent * np.power(a.data, exponent - 1.0),),
    )
