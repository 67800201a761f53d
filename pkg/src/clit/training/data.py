"""Patch preparation: scale sampling, paired crops, augmentation, pixel sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..coords import hr_lattice
from ..imaging import bicubic_downsample, dihedral, dihedral_coords

LOW = (1.0, 4.0)
HIGH = (4.0, 12.0)
WIDE = (1.0, 12.0)

DISTRIBUTIONS = {"low": LOW, "high": HIGH, "wide": WIDE}


@dataclass(frozen=True)
class ScaleDraw:
    """Total scale ``r`` and the per-branch factors whose product it is."""

    r: float
    factors: tuple[float, ...]
    source: str  # distribution the draw came from

    def feature_factors(self) -> list[float]:
        """Cumulative feature upsampling seen by each branch: 1, s1, s1*s2, ..."""
        out = [1.0]
        for s in self.factors[:-1]:
            out.append(out[-1] * s)
        return out


def distribution_for(kind: str, iteration: int) -> str:
    """Which uniform range a single-LIT strategy draws from at ``iteration``."""
    if kind == "baseline":
        return "low"
    if kind == "wide":
        return "wide"
    if kind == "alternating":
        return "low" if iteration % 2 == 0 else "high"
    if kind in DISTRIBUTIONS:
        return kind
    raise ValueError(f"unknown sampling kind {kind!r}")


def sample_scale(kind: str, iteration: int, rng: np.random.Generator, n_branches: int = 1) -> ScaleDraw:
    """Draw the upsampling scale for one batch.

    ``kind`` is baseline | wide | alternating | low | high | cascade. The
    cascade kind draws every branch factor from U(1, 4) and multiplies them;
    the others draw a single total scale, split evenly (geometrically) over
    the branches when there are several.
    """
    if kind == "cascade":
        lo, hi = LOW
        factors = tuple(float(s) for s in rng.uniform(lo, hi, size=n_branches))
        return ScaleDraw(float(np.prod(factors)), factors, "cascade")
    src = distribution_for(kind, iteration)
    lo, hi = DISTRIBUTIONS[src]
    r = float(rng.uniform(lo, hi))
    if n_branches == 1:
        return ScaleDraw(r, (r,), src)
    # A single total scale shared evenly across the branches.
    s = r ** (1.0 / n_branches)
    return ScaleDraw(r, (s,) * n_branches, src)


def hr_patch_size(lr_patch: int, r: float) -> int:
    return max(lr_patch, int(math.ceil(lr_patch * r - 1e-9)))


def clip_scale(draw: ScaleDraw, hr_shape: tuple[int, int], lr_patch: int = 48) -> ScaleDraw:
    """Shrink the first factor until the HR crop fits inside the image."""
    limit = min(hr_shape[:2])
    if limit < lr_patch:
        raise ValueError(f"image {hr_shape[:2]} is smaller than the LR patch size {lr_patch}")
    if hr_patch_size(lr_patch, draw.r) <= limit:
        return draw
    r_max = limit / lr_patch
    rest = draw.r / draw.factors[0]
    first = max(r_max / rest, 1.0) if rest <= r_max else 1.0
    factors = (first, *draw.factors[1:])
    r = float(np.prod(factors))
    if hr_patch_size(lr_patch, r) > limit:
        # s1 is already 1 and the later factors alone overshoot; shrink them evenly.
        shrink = (r_max / rest) ** (1.0 / (len(factors) - 1))
        factors = (1.0, *(max(1.0, f * shrink) for f in factors[1:]))
        r = float(np.prod(factors))
    return replace(draw, r=r, factors=factors)


@dataclass
class PatchPair:
    lr: np.ndarray  # (p, p, 3)
    hr: np.ndarray  # (P, P, 3)
    r: float
    coords: np.ndarray | None = None  # (M, 2) sampled normalized coords
    rgb: np.ndarray | None = None  # (M, 3) ground truth at coords

    @property
    def cell(self) -> tuple[float, float]:
        h, w = self.hr.shape[:2]
        return (2.0 / h, 2.0 / w)


def crop_pair(hr_image: np.ndarray, r: float, rng: np.random.Generator, lr_patch: int = 48) -> PatchPair:
    """Random HR crop of side ceil(lr_patch * r) and its cubic-downsampled LR patch."""
    size = hr_patch_size(lr_patch, r)
    h, w = hr_image.shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop {size} does not fit image {h}x{w}; clip the scale first")
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    hr = np.ascontiguousarray(hr_image[y0 : y0 + size, x0 : x0 + size], dtype=np.float32)
    lr = hr.copy() if size == lr_patch else bicubic_downsample(hr, lr_patch, lr_patch)
    return PatchPair(lr=lr.astype(np.float32), hr=hr, r=size / lr_patch)


def random_dihedral(rng: np.random.Generator) -> tuple[bool, bool, bool]:
    return bool(rng.random() < 0.5), bool(rng.random() < 0.5), bool(rng.random() < 0.5)


def augment(pair: PatchPair, rng: np.random.Generator, transform=None) -> PatchPair:
    """Apply one of the 8 flip/transpose combinations to LR, HR and any sampled coords."""
    t = random_dihedral(rng) if transform is None else tuple(transform)
    coords = None if pair.coords is None else dihedral_coords(pair.coords, *t)
    return PatchPair(
        lr=dihedral(pair.lr, *t),
        hr=dihedral(pair.hr, *t),
        r=pair.r,
        coords=coords,
        rgb=pair.rgb,
    )


def sample_pixels(hr_patch: np.ndarray, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``count`` distinct HR pixels: normalized centers and their RGB values."""
    h, w = hr_patch.shape[:2]
    total = h * w
    if count > total:
        raise ValueError(f"cannot sample {count} pixels from a {h}x{w} patch")
    idx = rng.choice(total, size=count, replace=False)
    lattice = hr_lattice(h, w)
    return lattice.coords[idx], hr_patch.reshape(total, -1)[idx]


def prepare_patch(hr_image: np.ndarray, draw: ScaleDraw, rng: np.random.Generator,
                  lr_patch: int = 48, pixels: int = 48 * 48, do_augment: bool = True) -> PatchPair:
    pair = crop_pair(hr_image, draw.r, rng, lr_patch)
    if do_augment:
        pair = augment(pair, rng)
    coords, rgb = sample_pixels(pair.hr, min(pixels, pair.hr.shape[0] * pair.hr.shape[1]), rng)
    pair.coords, pair.rgb = coords, rgb
    return pair
