"""Command-line entry point: ``clit train|eval|infer|attn|init``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, preset, preset_names

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("clit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parse_scales(text: str) -> list[float]:
    try:
        scales = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"bad --scales {text!r}: {e}") from e
    if not scales or any(not math.isfinite(s) or s < 1 for s in scales):
        raise UsageError(f"--scales needs finite values >= 1, got {text!r}")
    return scales


def _parse_points(text: str) -> list[tuple[float, float]]:
    points = []
    for part in text.split(";"):
        if not part.strip():
            continue
        try:
            y, x = (float(v) for v in part.split(","))
        except ValueError as e:
            raise UsageError(f"bad point {part!r}; expected 'row,col'") from e
        points.append((y, x))
    if not points:
        raise UsageError("--points needs at least one 'row,col' pair")
    return points


def _load_images(data_dir: str) -> list[np.ndarray]:
    from .evaluate import list_images
    from .imaging import read_png

    images = []
    for p in list_images(data_dir):
        try:
            images.append(read_png(p))
        except Exception as e:  # noqa: BLE001
            log.warning("skipping %s: %s", p, e)
    if not images:
        raise ConfigError(f"no readable PNG images in {data_dir}")
    return images


def _run_config(args) -> RunConfig:
    if args.config and args.preset:
        raise UsageError("use either --config or --preset, not both")
    if args.config:
        return load_config(args.config)
    return preset(args.preset or "desk")


def cmd_train(args) -> int:
    import copy

    from .cascade import CLIT
    from .training import run_plan

    cfg = _run_config(args)
    if args.data:
        cfg.data = args.data
    if args.out:
        cfg.out = args.out
    if args.max_iterations is not None:
        cfg.train.max_iterations = args.max_iterations
    if args.seed is not None:
        cfg.train.seed = args.seed
    if cfg.data is None:
        raise UsageError("no training data: pass --data or set 'data' in the config")
    images = _load_images(cfg.data)
    final = cfg.model.cascade
    start = copy.deepcopy(cfg.model)
    if cfg.train.strategy == "cumulative":
        start.cascade.n_branches = 1
        start.cascade.branch_scales = (1.0,)
    model = CLIT(start, rng=np.random.default_rng([cfg.train.seed, 0]))
    workers = 0 if args.deterministic else args.workers
    result = run_plan(model, images, cfg.train, n_branches=final.n_branches,
                      branch_scales=tuple(final.branch_scales), out_dir=cfg.out, workers=workers)
    last = result.log[-1] if result.log else {}
    print(json.dumps({"out": str(cfg.out), "iterations": len(result.log),
                      "final_loss": last.get("loss"), "branches": model.n_branches}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import eval_dataset

    if args.mode not in ("rgb", "y"):
        raise UsageError("--mode must be rgb or y")
    shave = None if args.shave == "auto" else int(args.shave)
    report = eval_dataset(args.ckpt, args.data, _parse_scales(args.scales), args.mode, shave,
                          workers=0 if args.deterministic else args.workers, limit=args.limit)
    if args.out:
        report.write(args.out)
    summary = {"meta": report.meta, "summary": report.summary(), "skipped": report.skipped}
    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .evaluate import infer, parse_scale

    try:
        r_h, r_w = parse_scale(args.scale)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if r_h < 1 or r_w < 1 or not (math.isfinite(r_h) and math.isfinite(r_w)):
        raise UsageError(f"--scale must be finite and >= 1, got {args.scale!r}")
    out = infer(args.ckpt, args.input, r_h, r_w, args.out)
    print(json.dumps({"out": args.out, "shape": list(out.shape[:2])}))
    return EXIT_OK


def cmd_attn(args) -> int:
    from .evaluate import dump_attention

    records = dump_attention(args.ckpt, args.input, _parse_points(args.points), args.out)
    print(json.dumps([{k: v for k, v in r.items() if k != "weights"} for r in records], default=str))
    return EXIT_OK


def cmd_init(args) -> int:
    from .cascade import CLIT
    from .checkpoint import save_checkpoint

    cfg = _run_config(args)
    seed = args.seed if args.seed is not None else cfg.train.seed
    model = CLIT(cfg.model, rng=np.random.default_rng([seed, 0]))
    save_checkpoint(model, args.out, {"init": True, "seed": seed})
    print(json.dumps({"out": args.out, "parameters": model.num_parameters()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clit", description="Arbitrary-scale super-resolution with cascaded local implicit transformers.")
    p.add_argument("--version", action="version", version=f"clit {__version__}")
    p.add_argument("--seed", type=int, default=None, help="override the random seed")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, serial data preparation")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config or preset")
    t.add_argument("--config", help="TOML run file")
    t.add_argument("--preset", choices=preset_names(), help="named configuration used when --config is absent")
    t.add_argument("--data", help="directory of HR PNG images (overrides the config)")
    t.add_argument("--out", help="run directory for checkpoints and metrics.csv")
    t.add_argument("--max-iterations", type=int, help="stop after this many optimizer steps")
    t.add_argument("--workers", type=int, default=0, help="patch-preparation threads")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR on a directory of PNG images")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="directory of HR PNG images")
    e.add_argument("--scales", default="2,3,4", help="comma-separated scales (default 2,3,4)")
    e.add_argument("--mode", default="rgb", choices=["rgb", "y"], help="PSNR colour space")
    e.add_argument("--shave", default="auto", help="border pixels to ignore, or 'auto'")
    e.add_argument("--limit", type=int, help="only the first N images")
    e.add_argument("--workers", type=int, default=0, help="evaluation threads")
    e.add_argument("--out", help="write the report (.json or .csv)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="upscale one image")
    i.add_argument("--ckpt", required=True, help="checkpoint file")
    i.add_argument("--in", dest="input", required=True, help="input PNG")
    i.add_argument("--scale", required=True, help="'2.5' or 'RHxRW', e.g. '2x3'")
    i.add_argument("--out", required=True, help="output PNG")
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("attn", help="dump local attention heatmaps")
    a.add_argument("--ckpt", required=True, help="checkpoint file")
    a.add_argument("--in", dest="input", required=True, help="input PNG")
    a.add_argument("--points", required=True, help="'row,col;row,col' in input pixels")
    a.add_argument("--out", required=True, help="directory for the heatmap PNGs")
    a.set_defaults(func=cmd_attn)

    n = sub.add_parser("init", help="write a randomly initialized checkpoint")
    n.add_argument("--config", help="TOML run file")
    n.add_argument("--preset", choices=preset_names(), help="named configuration")
    n.add_argument("--out", required=True, help="checkpoint to write")
    n.set_defaults(func=cmd_init)
    return p


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        with _thread_limit(args):
            return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"clit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"clit: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - any failure at run time maps to exit 2
        if os.environ.get("CLIT_DEBUG"):
            raise
        print(f"clit: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
