"""Image resampling and 8-bit PNG I/O.

The cubic resizer follows the classic ``imresize`` construction: a
Keys kernel with a = -0.5, widened by 1/scale when minifying
(anti-aliasing), symmetric (mirror) border extension, and per-output
weights normalized to sum to one. It is applied separably as two dense
matrix products.
"""

from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

CUBIC_A = -0.5


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


@lru_cache(maxsize=128)
def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Dense (n_out, n_in) cubic interpolation operator along one axis."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    scale = n_out / n_in
    if scale < 1 and antialias:
        width = 4.0 / scale

        def kernel(x):
            return scale * cubic(scale * x)
    else:
        width = 4.0
        kernel = cubic
    out = np.arange(1, n_out + 1, dtype=np.float64)
    # 1-based source position of each output sample (pixel-center aligned).
    u = out / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    wts = kernel(u[:, None] - idx)
    wts = wts / wts.sum(axis=1, keepdims=True)
    # Mirror out-of-range taps back into [1, n_in].
    period = 2 * n_in
    j = np.mod(idx - 1, period)
    j = np.where(j >= n_in, period - 1 - j, j).astype(np.int64)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.broadcast_to(np.arange(n_out)[:, None], j.shape)
    np.add.at(m, (rows, j), wts)
    return m


def bicubic_resize(image: np.ndarray, h_out: int, w_out: int, antialias: bool = True) -> np.ndarray:
    """Resize an (H, W, C) float image to (h_out, w_out, C)."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {image.shape}")
    h, w, c = image.shape
    mh = resize_matrix(h, h_out, antialias)
    mw = resize_matrix(w, w_out, antialias)
    x = image.astype(np.float64)
    x = np.tensordot(mh, x, axes=(1, 0))  # (h_out, W, C)
    x = np.tensordot(mw, x, axes=(1, 1)).transpose(1, 0, 2)  # (h_out, w_out, C)
    return x.astype(image.dtype if image.dtype.kind == "f" else np.float32)


def bicubic_downsample(image: np.ndarray, h_out: int, w_out: int) -> np.ndarray:
    return bicubic_resize(image, h_out, w_out, antialias=True)


def bicubic_upsample(image: np.ndarray, r_h: float, r_w: float | None = None,
                     out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Cubic upsampling to ceil(r * size) per axis (or an explicit shape)."""
    r_w = r_h if r_w is None else r_w
    h, w = image.shape[:2]
    if out_shape is None:
        out_shape = (max(1, math.ceil(h * r_h - 1e-9)), max(1, math.ceil(w * r_w - 1e-9)))
    return bicubic_resize(image, *out_shape)


# ---------------------------------------------------------------- dihedral group


def dihedral(image: np.ndarray, hflip: bool, vflip: bool, transpose: bool) -> np.ndarray:
    """Apply flips then an optional transpose to the two leading axes."""
    if hflip:
        image = image[:, ::-1]
    if vflip:
        image = image[::-1]
    if transpose:
        image = image.transpose(1, 0, *range(2, image.ndim))
    return np.ascontiguousarray(image)


def dihedral_coords(coords: np.ndarray, hflip: bool, vflip: bool, transpose: bool) -> np.ndarray:
    """Map normalized (y, x) coordinates the same way :func:`dihedral` maps pixels."""
    c = np.array(coords, dtype=np.float64, copy=True)
    if hflip:
        c[:, 1] = -c[:, 1]
    if vflip:
        c[:, 0] = -c[:, 0]
    if transpose:
        c = c[:, ::-1].copy()
    return c


def rot90(image: np.ndarray) -> np.ndarray:
    """Counter-clockwise quarter turn, expressed as transpose + vertical flip."""
    return dihedral(dihedral(image, False, False, True), False, True, False)


# ---------------------------------------------------------------- PNG


def quantize(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8 with round-half-away-from-zero."""
    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def read_png(path: str | Path) -> np.ndarray:
    """Load an image as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def write_png(path: str | Path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    else:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
