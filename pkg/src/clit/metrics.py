"""PSNR with optional border shave and BT.601 luma."""

from __future__ import annotations

import math

import numpy as np

# Luma of [0, 1] RGB, offset included (it cancels in differences).
_Y_COEFFS = np.array([65.481, 128.553, 24.966]) / 255.0
_Y_OFFSET = 16.0 / 255.0


def rgb_to_y(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) @ _Y_COEFFS + _Y_OFFSET


def shave_border(image: np.ndarray, shave: int) -> np.ndarray:
    if shave <= 0:
        return image
    if 2 * shave >= image.shape[0] or 2 * shave >= image.shape[1]:
        raise ValueError(f"shave {shave} leaves nothing of a {image.shape[:2]} image")
    return image[shave:-shave, shave:-shave]


def psnr(pred: np.ndarray, target: np.ndarray, mode: str = "rgb", shave: int = 0) -> float:
    """10 * log10(1 / MSE) for images in [0, 1]; ``inf`` when they are identical."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"psnr shape mismatch: {pred.shape} vs {target.shape}")
    if mode == "y":
        pred, target = rgb_to_y(pred), rgb_to_y(target)
    elif mode != "rgb":
        raise ValueError(f"mode must be 'rgb' or 'y', got {mode!r}")
    diff = shave_border(pred - target, shave)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def default_shave(scale: float, mode: str) -> int:
    """Benchmark convention: ceil(scale) for luma, ceil(scale) + 6 for RGB."""
    s = int(math.ceil(scale - 1e-9))
    return s if mode == "y" else s + 6
