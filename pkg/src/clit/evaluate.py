"""Dataset evaluation, single-image inference and attention-map dumps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CLIT
from .checkpoint import file_digest, load_checkpoint
from .coords import pixel_centers
from .imaging import bicubic_downsample, bicubic_resize, quantize, read_png, write_png
from .metrics import default_shave, psnr
from .numerics import no_grad, ops

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)


@dataclass
class EvalRow:
    image: str
    scale: float
    psnr: float
    psnr_bicubic: float
    psnr_bilinear: float
    shape: tuple[int, int]


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def scales(self) -> list[float]:
        return sorted({r.scale for r in self.rows})

    def mean(self, scale: float, key: str = "psnr") -> float:
        vals = [getattr(r, key) for r in self.rows if r.scale == scale]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            f"x{s:g}": {
                "psnr": self.mean(s),
                "psnr_bicubic": self.mean(s, "psnr_bicubic"),
                "psnr_bilinear": self.mean(s, "psnr_bilinear"),
                "images": sum(1 for r in self.rows if r.scale == s),
            }
            for s in self.scales()
        }

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "summary": self.summary(),
            "rows": [asdict(r) for r in self.rows],
            "skipped": self.skipped,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".csv":
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["image", "scale", "psnr", "psnr_bicubic", "psnr_bilinear"])
                for r in self.rows:
                    w.writerow([r.image, r.scale, r.psnr, r.psnr_bicubic, r.psnr_bilinear])
        else:
            path.write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(type(o))


def synthesize_pair(hr: np.ndarray, scale: float, quantize_lr: bool = True):
    """Ground truth cropped to a size compatible with ``scale`` and its cubic LR."""
    h, w = hr.shape[:2]
    lh, lw = int(math.floor(h / scale + 1e-9)), int(math.floor(w / scale + 1e-9))
    if lh < 1 or lw < 1:
        raise ValueError(f"image {h}x{w} too small for scale {scale}")
    gh = min(h, int(math.ceil(lh * scale - 1e-9)))
    gw = min(w, int(math.ceil(lw * scale - 1e-9)))
    gt = hr[:gh, :gw]
    lr = bicubic_downsample(gt, lh, lw)
    if quantize_lr:
        lr = quantize(lr).astype(np.float32) / 255.0
    return gt, lr.astype(np.float32)


def evaluate_image(model: CLIT, hr: np.ndarray, scale: float, mode: str = "rgb",
                   shave: int | None = None, quantize_lr: bool = True):
    gt, lr = synthesize_pair(hr, scale, quantize_lr)
    out_shape = gt.shape[:2]
    sr = np.clip(model.upscale(lr, scale, out_shape=out_shape), 0.0, 1.0)
    bic = np.clip(bicubic_resize(lr, *out_shape), 0.0, 1.0)
    with no_grad():
        bil = ops.bilinear_resize(ops.as_tensor(lr), *out_shape).data
    s = default_shave(scale, mode) if shave is None else shave
    return psnr(sr, gt, mode, s), psnr(bic, gt, mode, s), psnr(np.clip(bil, 0, 1), gt, mode, s)


def list_images(dataset_dir: str | Path) -> list[Path]:
    d = Path(dataset_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def eval_dataset(
    checkpoint,
    dataset_dir: str | Path,
    scales,
    mode: str = "rgb",
    shave: int | None = None,
    workers: int = 0,
    limit: int | None = None,
    quantize_lr: bool = True,
) -> EvalReport:
    """PSNR of the model and of the cubic/bilinear baselines on every image.

    ``checkpoint`` is a path or an already loaded :class:`CLIT`. Unreadable
    images are skipped and listed in ``report.skipped``.
    """
    if isinstance(checkpoint, CLIT):
        model, digest = checkpoint, None
    else:
        model, _ = load_checkpoint(checkpoint)
        digest = file_digest(checkpoint)
    scales = [float(s) for s in scales]
    if any(s < 1 for s in scales):
        raise ValueError(f"scales must be >= 1, got {scales}")
    paths = list_images(dataset_dir)
    if limit is not None:
        paths = paths[:limit]
    report = EvalReport(meta={
        "dataset": str(dataset_dir),
        "checkpoint_sha256": digest,
        "color_space": mode,
        "shave": "auto" if shave is None else shave,
        "scales": scales,
    })

    def run(path: Path):
        try:
            hr = read_png(path)
        except Exception as e:  # noqa: BLE001 - any decode failure skips the file
            return path, None, str(e)
        rows = []
        for s in scales:
            p, pb, pl = evaluate_image(model, hr, s, mode, shave, quantize_lr)
            rows.append(EvalRow(path.name, s, p, pb, pl, hr.shape[:2]))
        return path, rows, None

    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, paths))
    else:
        results = [run(p) for p in paths]
    for path, rows, err in sorted(results, key=lambda t: t[0].name):
        if err is not None:
            log.warning("skipping %s: %s", path, err)
            report.skipped.append({"image": path.name, "error": err})
            continue
        report.rows.extend(rows)
    return report


def parse_scale(text: str) -> tuple[float, float]:
    """'2.5' -> (2.5, 2.5); '2x3' -> (2.0, 3.0)."""
    parts = text.lower().split("x")
    if len(parts) == 1:
        r = float(parts[0])
        return r, r
    if len(parts) == 2:
        return float(parts[0]), float(parts[1])
    raise ValueError(f"cannot parse scale {text!r}")


def infer(checkpoint, input_image, r_h: float, r_w: float | None = None, out_path=None) -> np.ndarray:
    """Upscale one image; writes an 8-bit PNG when ``out_path`` is given."""
    model = checkpoint if isinstance(checkpoint, CLIT) else load_checkpoint(checkpoint)[0]
    image = read_png(input_image) if isinstance(input_image, (str, Path)) else np.asarray(input_image, dtype=np.float32)
    out = model.upscale(image, r_h, r_w)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values in the upscaled image")
    out = np.clip(out, 0.0, 1.0)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        write_png(out_path, out)
    return out


# ---------------------------------------------------------------- attention maps


def pixel_to_coord(row: float, col: float, shape: tuple[int, int]) -> tuple[float, float]:
    """Input pixel position (row, col), centers at integers, to normalized (y, x)."""
    h, w = shape
    return -1.0 + (2.0 * row + 1.0) / h, -1.0 + (2.0 * col + 1.0) / w


def attention_maps(model: CLIT, image: np.ndarray, coords: np.ndarray) -> list[np.ndarray]:
    """Head-averaged local attention per branch: a list of (N, G_h, G_w) arrays."""
    from .coords import QueryBatch

    queries = QueryBatch(np.asarray(coords, dtype=np.float64), (2.0 / image.shape[0], 2.0 / image.shape[1]))
    maps = []
    with no_grad():
        feat = model.encoder(image)
        from .cascade import multiscale_features

        for lit, f in zip(model.lits, multiscale_features(feat, model.inference_factors())):
            z, attn = lit.attend(lit.prepare(f), queries.coords)
            gh, gw = lit.grid
            maps.append(attn.mean(axis=1).reshape(len(queries), gh, gw))
    return maps


def _heatmap(weights: np.ndarray, cell_px: int) -> np.ndarray:
    peak = weights.max()
    norm = weights / peak if peak > 0 else weights
    return np.kron(norm, np.ones((cell_px, cell_px)))


def _overlay(image: np.ndarray, row: float, col: float, zoom: int) -> np.ndarray:
    big = np.kron(image, np.ones((zoom, zoom, 1)))
    cy, cx = int(round((row + 0.5) * zoom)), int(round((col + 0.5) * zoom))
    r = max(1, zoom // 2)
    ys = np.arange(big.shape[0])[:, None]
    xs = np.arange(big.shape[1])[None, :]
    mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    big[mask] = (1.0, 0.0, 0.0)
    return big


def dump_attention(checkpoint, input_image, points, out_dir, cell_px: int = 32) -> list[dict]:
    """Write one heatmap per query and branch plus an overlay marking the query.

    ``points`` are (row, col) positions in input-pixel units.
    """
    model = checkpoint if isinstance(checkpoint, CLIT) else load_checkpoint(checkpoint)[0]
    image = read_png(input_image) if isinstance(input_image, (str, Path)) else np.asarray(input_image, dtype=np.float32)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = image.shape[:2]
    coords = np.array([pixel_to_coord(r, c, (h, w)) for r, c in points], dtype=np.float64)
    maps = attention_maps(model, image, coords)
    zoom = max(1, 256 // max(h, w))
    records = []
    for qi, (row, col) in enumerate(points):
        write_png(out / f"query{qi}_input.png", _overlay(image, row, col, zoom))
        for bi, m in enumerate(maps):
            weights = m[qi]
            path = out / f"query{qi}_branch{bi + 1}.png"
            write_png(path, _heatmap(weights, cell_px))
            records.append({
                "query": qi, "branch": bi + 1, "point": (row, col),
                "coord": tuple(coords[qi]), "weights": weights, "path": str(path),
            })
    return records


__all__ = [
    "EvalReport",
    "EvalRow",
    "attention_maps",
    "dump_attention",
    "eval_dataset",
    "evaluate_image",
    "infer",
    "parse_scale",
    "pixel_centers",
    "pixel_to_coord",
    "synthesize_pair",
]
