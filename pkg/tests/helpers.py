"""Shared test utilities: finite-difference gradients and small models."""

from __future__ import annotations

import numpy as np
from scipy import integrate

from clit.numerics import GradientTape, Tensor


def numeric_grad(f, arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = float(f())
        arr[i] = old - h
        fm = float(f())
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(np.ravel(a)), np.linalg.norm(np.ravel(b)), 1e-12)
    return float(num / den)


def analytic_grads(loss_fn, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    with GradientTape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}


def check_gradients(loss_fn, params: dict[str, Tensor], h: float = 1e-4) -> dict[str, float]:
    """Relative error per parameter between tape gradients and central differences."""
    grads = analytic_grads(loss_fn, params)
    errs = {}
    for name, p in params.items():
        num = numeric_grad(lambda: loss_fn().data, p.data, h)
        errs[name] = rel_error(grads[name], num)
    return errs


def conv_loop(x: np.ndarray, k: np.ndarray, b: np.ndarray | None, pad: str = "zeros") -> np.ndarray:
    """Six nested loops over output pixel, channels and taps."""
    h, w, cin = x.shape
    ks, _, _, cout = k.shape
    p = ks // 2
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for co in range(cout):
                acc = 0.0 if b is None else float(b[co])
                for a in range(ks):
                    for c in range(ks):
                        yi, xj = i + a - p, j + c - p
                        if pad == "replicate":
                            yi, xj = min(max(yi, 0), h - 1), min(max(xj, 0), w - 1)
                        elif not (0 <= yi < h and 0 <= xj < w):
                            continue
                        for ci in range(cin):
                            acc += x[yi, xj, ci] * k[a, c, ci, co]
                out[i, j, co] = acc
    return out


def bilinear_oracle(grid: np.ndarray, y: float, x: float) -> np.ndarray:
    """Textbook 4-neighbour interpolation on pixel centers with border clamping."""
    h, w, _ = grid.shape
    u = min(max(((y + 1) * h - 1) / 2, 0.0), h - 1)
    v = min(max(((x + 1) * w - 1) / 2, 0.0), w - 1)
    i0, j0 = int(np.floor(u)), int(np.floor(v))
    i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
    a, b = u - i0, v - j0
    return ((1 - a) * (1 - b) * grid[i0, j0] + (1 - a) * b * grid[i0, j1]
            + a * (1 - b) * grid[i1, j0] + a * b * grid[i1, j1])


def attention_oracle(q, k, v, bias, heads):
    """Multi-head softmax(q k^T / sqrt(d) + B) v, written with explicit loops in float64."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    c = q.shape[-1]
    d = c // heads
    g = k.shape[0]
    z = np.zeros(c)
    weights = np.zeros((heads, g))
    for hd in range(heads):
        sl = slice(hd * d, (hd + 1) * d)
        logits = np.array([q[0, sl] @ k[j, sl] / np.sqrt(d) for j in range(g)])
        if bias is not None:
            logits = logits + np.asarray(bias, dtype=np.float64)[hd]
        e = np.exp(logits - logits.max())
        wts = e / e.sum()
        weights[hd] = wts
        z[sl] = sum(wts[j] * v[j, sl] for j in range(g))
    return z[None], weights


def tiny_model_config(n_branches: int = 1, channels: int = 8, blocks: int = 1, **lit):
    from clit.config import CascadeConfig, EncoderConfig, LitConfig, ModelConfig

    lit_cfg = dict(heads=2, grid=(3, 3), decoder_hidden=16)
    lit_cfg.update(lit)
    return ModelConfig(
        encoder=EncoderConfig(channels=channels, n_resblocks=blocks),
        lit=LitConfig(**lit_cfg),
        cascade=CascadeConfig(n_branches=n_branches, branch_scales=(1.0,) + (2.0,) * (n_branches - 1)),
    )


def textured_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Smooth gradients, hard-edged rectangles and stripes in [0, 1]."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    y, x = y / h, x / w
    img = np.empty((h, w, 3))
    img[..., 0] = 0.5 + 0.4 * np.sign(np.sin(2 * np.pi * (3 * x + 2 * y) + seed))
    img[..., 1] = 0.3 + 0.5 * (((x - 0.5) ** 2 + (y - 0.6) ** 2) < 0.08)
    img[..., 2] = 0.5 + 0.3 * np.sin(2 * np.pi * 7 * x * y)
    for _ in range(6):
        r0, c0 = rng.integers(0, max(1, h - 20)), rng.integers(0, max(1, w - 20))
        hh, ww = rng.integers(6, 20, 2)
        img[r0 : r0 + hh, c0 : c0 + ww] = rng.uniform(0, 1, 3)
    return np.clip(img, 0, 1).astype(np.float32)


def product_cdf(t: float) -> float:
    """P(s1 * s2 <= t) for independent s1, s2 ~ U(1, 4), by quadrature."""
    f = lambda s: np.clip((t / s - 1.0) / 3.0, 0.0, 1.0) / 3.0  # noqa: E731
    return integrate.quad(f, 1.0, 4.0, points=[max(1.0, min(4.0, t / 4)), max(1.0, min(4.0, t))])[0]
