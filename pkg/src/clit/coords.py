"""Coordinate convention shared by sampling, local grids and training.

Every axis of length ``n`` spans the normalized interval [-1, 1]; pixel
``i`` has its center at ``-1 + (2i + 1) / n``. All conversions between
normalized coordinates and pixel indices go through this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Pixel-space positions this close to an integer are snapped onto it, so
# that lattice points map back to exact indices.
_SNAP = 1e-9


def pixel_centers(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"axis length must be positive, got {n}")
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def _snap(u: np.ndarray) -> np.ndarray:
    r = np.rint(u)
    return np.where(np.abs(u - r) < _SNAP, r, u)


def to_pixel(y: np.ndarray, n: int) -> np.ndarray:
    """Continuous pixel-index position of normalized coordinate ``y``."""
    return _snap(((np.asarray(y, dtype=np.float64) + 1.0) * n - 1.0) / 2.0)


def nearest_index(y: np.ndarray, n: int) -> np.ndarray:
    """Index of the closest pixel center; ties go to the smaller index."""
    t = _snap((np.asarray(y, dtype=np.float64) + 1.0) * n / 2.0)
    return np.clip(np.ceil(t).astype(np.int64) - 1, 0, n - 1)


@dataclass(frozen=True)
class QueryBatch:
    """Normalized (y, x) query coordinates plus the shared cell size."""

    coords: np.ndarray  # (N, 2) float64
    cell: tuple[float, float]

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError(f"coords must be (N, 2), got {c.shape}")
        object.__setattr__(self, "coords", c)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def subset(self, sl) -> "QueryBatch":
        return QueryBatch(self.coords[sl], self.cell)


def hr_lattice(h: int, w: int) -> QueryBatch:
    """Row-major pixel centers of an ``h`` x ``w`` image and its cell."""
    ys = pixel_centers(h)
    xs = pixel_centers(w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([yy.ravel(), xx.ravel()], axis=-1)
    return QueryBatch(coords, (2.0 / h, 2.0 / w))


def cell_for(h_out: int, w_out: int) -> tuple[float, float]:
    return (2.0 / h_out, 2.0 / w_out)


def bilinear_weights(coords: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Four-neighbour flat indices and weights for each query.

    Positions outside the outermost centers are clamped to the border.
    Returns ``(idx, wts)`` both shaped (N, 4) in order
    (top-left, top-right, bottom-left, bottom-right).
    """
    coords = np.asarray(coords, dtype=np.float64)
    u = np.clip(to_pixel(coords[:, 0], h), 0.0, h - 1)
    v = np.clip(to_pixel(coords[:, 1], w), 0.0, w - 1)
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fu = u - i0
    fv = v - j0
    idx = np.stack([i0 * w + j0, i0 * w + j1, i1 * w + j0, i1 * w + j1], axis=-1)
    wts = np.stack(
        [(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv], axis=-1
    )
    return idx, wts


def bilinear_matrix(coords: np.ndarray, h: int, w: int, dtype=np.float32) -> sp.csr_matrix:
    """Sparse (N, h*w) operator that bilinearly samples a flattened grid."""
    idx, wts = bilinear_weights(coords, h, w)
    n = idx.shape[0]
    rows = np.repeat(np.arange(n), 4)
    m = sp.csr_matrix(
        (wts.ravel().astype(dtype), (rows, idx.ravel())), shape=(n, h * w)
    )
    return m


@dataclass(frozen=True)
class LocalGrid:
    """Gather indices and relative offsets of each query's local grid."""

    index: np.ndarray  # (N, G) flat LR indices, clamped to the image
    offsets: np.ndarray  # (N, G, 2) query minus ideal grid-center coordinate
    center: np.ndarray  # (N, 2) row/col of the grid center
    size: tuple[int, int]


def check_grid_size(grid: tuple[int, int]) -> tuple[int, int]:
    gh, gw = int(grid[0]), int(grid[1])
    if gh < 1 or gw < 1 or gh % 2 == 0 or gw % 2 == 0:
        raise ValueError(f"local grid dimensions must be odd and positive, got {grid}")
    return gh, gw


def local_grid(
    coords: np.ndarray,
    lr_shape: tuple[int, int],
    grid: tuple[int, int] = (7, 7),
    center: np.ndarray | None = None,
) -> LocalGrid:
    """Local grid around the LR center nearest each query.

    ``center`` may force the (row, col) of the grid center per query; this
    is how the local ensemble anchors at the four neighbours. Offsets are
    taken against the unclamped ideal positions, indices are clamped.
    """
    gh, gw = check_grid_size(grid)
    h, w = lr_shape
    coords = np.asarray(coords, dtype=np.float64)
    if center is None:
        ci = nearest_index(coords[:, 0], h)
        cj = nearest_index(coords[:, 1], w)
    else:
        center = np.asarray(center, dtype=np.int64)
        ci, cj = center[:, 0], center[:, 1]
    di = np.arange(gh) - gh // 2
    dj = np.arange(gw) - gw // 2
    rows = ci[:, None, None] + di[None, :, None]  # (N, gh, 1)
    cols = cj[:, None, None] + dj[None, None, :]  # (N, 1, gw)
    rows, cols = np.broadcast_arrays(rows, cols)
    ideal_y = -1.0 + (2.0 * rows + 1.0) / h
    ideal_x = -1.0 + (2.0 * cols + 1.0) / w
    n = coords.shape[0]
    offsets = np.stack(
        [coords[:, 0, None, None] - ideal_y, coords[:, 1, None, None] - ideal_x], axis=-1
    ).reshape(n, gh * gw, 2)
    index = (np.clip(rows, 0, h - 1) * w + np.clip(cols, 0, w - 1)).reshape(n, gh * gw)
    return LocalGrid(index, offsets, np.stack([ci, cj], axis=-1), (gh, gw))
