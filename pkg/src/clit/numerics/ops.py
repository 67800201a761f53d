"""Differentiable kernels.

Every op takes/returns :class:`Tensor` and registers a closure computing
input gradients from the output gradient. Arrays keep the dtype of their
inputs, so a model cast to float64 runs the whole graph in float64.
"""

from __future__ import annotations

import math
import os
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from .. import coords as _coords
from .tensor import Tensor, as_tensor, make_result

_DEBUG = os.environ.get("CLIT_DEBUG", "") not in ("", "0")


def _result(data, inputs, backward):
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in forward op")
    return make_result(data, inputs, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)

        def backward_const(g):
            return (g * c,)

        return _result(a.data * c, (a,), backward_const)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    cdf = cdf.astype(xd.dtype, copy=False)

    def backward(g):
        pdf = (np.exp(-0.5 * xd * xd) * _INV_SQRT2PI).astype(xd.dtype, copy=False)
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, (x,), backward)


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_np(x.data, axis)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


# ---------------------------------------------------------------- reductions / shape


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).astype(g.dtype),)

    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size

    def backward(g):
        return (np.full(shape, g / n, dtype=g.dtype),)

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


# ---------------------------------------------------------------- dense layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for x (N, Din), weight (Din, Dout), bias (Dout,)."""
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ValueError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    if bias is not None and bias.shape != (wd.shape[1],):
        raise ValueError(f"linear: bias {bias.shape} does not match output width {wd.shape[1]}")
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.T @ g
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, backward)


def _pad(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    if mode == "zeros":
        return np.pad(x, ((p, p), (p, p), (0, 0)))
    if mode == "replicate":
        return np.pad(x, ((p, p), (p, p), (0, 0)), mode="edge")
    raise ValueError(f"unknown padding mode {mode!r}")


def _unpad(g: np.ndarray, p: int, h: int, w: int, mode: str) -> np.ndarray:
    if p == 0:
        return g
    if mode == "replicate":
        g = g.copy()
        g[p] += g[:p].sum(axis=0)
        g[p + h - 1] += g[p + h :].sum(axis=0)
        g[:, p] += g[:, :p].sum(axis=1)
        g[:, p + w - 1] += g[:, p + w :].sum(axis=1)
    return g[p : p + h, p : p + w]


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: str = "zeros") -> Tensor:
    """Same-size 2-D cross-correlation of an (H, W, Cin) map.

    ``kernel`` is (k, k, Cin, Cout) with odd k. Computed tap by tap: one
    (H*W, Cin) x (Cin, Cout) product per kernel position.
    """
    xd, kd = x.data, kernel.data
    if xd.ndim != 3:
        raise ValueError(f"conv2d expects an (H, W, C) input, got shape {xd.shape}")
    if kd.ndim != 4 or kd.shape[0] != kd.shape[1] or kd.shape[0] % 2 == 0:
        raise ValueError(f"conv2d expects an odd square (k, k, Cin, Cout) kernel, got {kd.shape}")
    if kd.shape[2] != xd.shape[2]:
        raise ValueError(
            f"conv2d channel mismatch: input has {xd.shape[2]} channels, kernel expects {kd.shape[2]}"
        )
    if bias is not None and bias.shape != (kd.shape[3],):
        raise ValueError(f"conv2d bias {bias.shape} does not match {kd.shape[3]} output channels")
    h, w, cin = xd.shape
    k, cout = kd.shape[0], kd.shape[3]
    p = k // 2
    xp = _pad(xd, p, padding)
    out = np.zeros((h * w, cout), dtype=np.result_type(xd, kd))
    for a in range(k):
        for b in range(k):
            out += xp[a : a + h, b : b + w].reshape(h * w, cin) @ kd[a, b]
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(h * w, cout)
        gk = np.empty_like(kd)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for a in range(k):
            for b in range(k):
                gk[a, b] = xp[a : a + h, b : b + w].reshape(h * w, cin).T @ g2
                gxp[a : a + h, b : b + w] += (g2 @ kd[a, b].T).reshape(h, w, cin)
        gx = _unpad(gxp, p, h, w, padding)
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out.reshape(h, w, cout), inputs, backward)


# ---------------------------------------------------------------- sampling


def sparse_apply(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """``matrix @ x`` for a constant sparse matrix and a 2-D tensor."""
    xd = x.data
    if xd.ndim != 2 or matrix.shape[1] != xd.shape[0]:
        raise ValueError(f"sparse_apply shape mismatch: {matrix.shape} @ {xd.shape}")
    m = matrix.astype(xd.dtype, copy=False)
    mt = None

    def backward(g):
        nonlocal mt
        if mt is None:
            mt = m.T.tocsr()
        return (np.asarray(mt @ g),)

    return _result(np.asarray(m @ xd), (x,), backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of a 2-D tensor picked by an integer array of any shape."""
    xd = x.data
    index = np.asarray(index, dtype=np.int64)
    n_rows = xd.shape[0]

    def backward(g):
        flat = index.ravel()
        scatter = sp.csr_matrix(
            (np.ones(flat.size, dtype=g.dtype), (flat, np.arange(flat.size))),
            shape=(n_rows, flat.size),
        )
        return (np.asarray(scatter @ g.reshape(flat.size, -1)),)

    return _result(xd[index], (x,), backward)


def bilinear_sample(grid: Tensor, coords: np.ndarray) -> Tensor:
    """Bilinear sample of an (H, W, C) grid at normalized (y, x) coords."""
    if grid.ndim != 3:
        raise ValueError(f"bilinear_sample expects an (H, W, C) grid, got shape {grid.shape}")
    h, w, c = grid.shape
    m = _coords.bilinear_matrix(coords, h, w, dtype=grid.dtype)
    return sparse_apply(m, reshape(grid, (h * w, c)))


def upsampled_size(n: int, factor: float) -> int:
    # Guard against products like 48 * (64 / 48) landing a hair above 64.
    return max(1, int(math.ceil(n * factor - 1e-9)))


@lru_cache(maxsize=64)
def _upsample_matrix(h: int, w: int, h_out: int, w_out: int, dtype_str: str) -> sp.csr_matrix:
    q = _coords.hr_lattice(h_out, w_out)
    return _coords.bilinear_matrix(q.coords, h, w, dtype=np.dtype(dtype_str))


def bilinear_resize(grid: Tensor, h_out: int, w_out: int) -> Tensor:
    h, w, c = grid.shape
    if (h_out, w_out) == (h, w):
        # The lattice maps back onto exact pixel centers; skip the no-op product.
        return grid
    m = _upsample_matrix(h, w, h_out, w_out, grid.dtype.str)
    return reshape(sparse_apply(m, reshape(grid, (h * w, c))), (h_out, w_out, c))


def bilinear_upsample(grid: Tensor, r_h: float, r_w: float | None = None) -> Tensor:
    """Bilinear resampling onto a ceil(r_h*H) x ceil(r_w*W) lattice."""
    if r_w is None:
        r_w = r_h
    if r_h <= 0 or r_w <= 0:
        raise ValueError(f"upsampling factors must be positive, got {(r_h, r_w)}")
    h, w, _ = grid.shape
    return bilinear_resize(grid, upsampled_size(h, r_h), upsampled_size(w, r_w))


# ---------------------------------------------------------------- attention


def local_attention(
    q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None, heads: int
) -> tuple[Tensor, np.ndarray]:
    """Multi-head attention of one query against its own G keys.

    q: (N, C); k, v: (N, G, C); bias: (N, G, heads) or None.
    Returns the (N, C) attended features and the (N, heads, G) weights.
    """
    qd, kd, vd = q.data, k.data, v.data
    if qd.ndim != 2 or kd.ndim != 3 or vd.shape != kd.shape:
        raise ValueError(f"local_attention shapes: q {qd.shape}, k {kd.shape}, v {vd.shape}")
    n, g_len, c = kd.shape
    if g_len == 0:
        raise ValueError("local_attention needs at least one key")
    if qd.shape != (n, c):
        raise ValueError(f"query shape {qd.shape} does not match keys {kd.shape}")
    if c % heads:
        raise ValueError(f"channels {c} not divisible by {heads} heads")
    d = c // heads
    scale = 1.0 / math.sqrt(d)
    qh = qd.reshape(n, heads, d)
    kt = kd.reshape(n, g_len, heads, d).transpose(0, 2, 1, 3)  # (N, h, G, d)
    vt = vd.reshape(n, g_len, heads, d).transpose(0, 2, 1, 3)
    logits = np.matmul(kt, qh[..., None])[..., 0] * np.asarray(scale, dtype=qd.dtype)
    if bias is not None:
        if bias.shape != (n, g_len, heads):
            raise ValueError(f"bias shape {bias.shape}, expected {(n, g_len, heads)}")
        logits = logits + bias.data.transpose(0, 2, 1)
    attn = _softmax_np(logits, axis=-1)  # (N, h, G)
    z = np.matmul(attn[:, :, None, :], vt)[:, :, 0, :].reshape(n, c)

    def backward(gz):
        gzh = gz.reshape(n, heads, d)
        ga = np.matmul(vt, gzh[..., None])[..., 0]
        gv = (attn[..., None] * gzh[:, :, None, :]).transpose(0, 2, 1, 3).reshape(n, g_len, c)
        gs = attn * (ga - np.sum(attn * ga, axis=-1, keepdims=True))
        gq = np.matmul(gs[:, :, None, :], kt)[:, :, 0, :].reshape(n, c) * scale
        gk = (gs[..., None] * qh[:, :, None, :]).transpose(0, 2, 1, 3).reshape(n, g_len, c) * scale
        grads = [gq.astype(qd.dtype, copy=False), gk.astype(kd.dtype, copy=False), gv]
        if bias is not None:
            grads.append(gs.transpose(0, 2, 1))
        return grads

    inputs = (q, k, v) if bias is None else (q, k, v, bias)
    return _result(z, inputs, backward), attn


# ---------------------------------------------------------------- loss


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all elements."""
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if td.shape != pred.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {td.shape}")
    diff = pred.data - td
    n = diff.size

    def backward(g):
        return (np.sign(diff) * (g / n),)

    return _result(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred,), backward)
