"""Command-line entry point: ``fggb {embed,explain,eval,render,gradcheck}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import grad_check
from .config import Config, load_config
from .core import explain_pair, load_saliency, save_saliency
from .embedder import builtin_spec, embed, init_model, load_model, BUILTIN_MODELS
from .errors import FGGBError, ShapeError
from .evaluation import EXPLAINERS, dataset_eval, read_pairs
from .images import load_image, render_heatmap, write_pixels


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--steps", type=int)
    p.add_argument("--blur-kernel", dest="blur_kernel", type=int)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.add_argument("--model", choices=BUILTIN_MODELS)
    p.add_argument("--model-file", dest="model_file", help="serialized FGGBMDL1 model")
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument("--workers", type=int)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fggb", description="Saliency explanations for embedding-based verification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common], help="print the embedding of an image")
    p.add_argument("image")

    p = sub.add_parser("explain", parents=[common], help="similarity/dissimilarity maps for a pair")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--shared-scale", dest="shared_scale", action="store_true", default=None,
                   help="render all four heatmaps on one color scale")
    p.add_argument("--heatmap-format", dest="heatmap_format", choices=("ppm", "png"))

    p = sub.add_parser("eval", parents=[common], help="Deletion/Insertion metrics over a pair list")
    p.add_argument("--pairs", required=True)
    p.add_argument("--explainer", action="append", choices=EXPLAINERS,
                   help="repeatable; default fggb")
    p.add_argument("--output", default="metrics.csv", help="CSV file name inside --out-dir")

    p = sub.add_parser("render", parents=[common], help="render a saliency file as a heatmap")
    p.add_argument("saliency")
    p.add_argument("--base")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="compare gradients with finite differences")
    p.add_argument("image", nargs="?")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--size", type=int, default=16, help="random image size when no image is given")
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    keys = ("seed", "threshold", "out_dir", "steps", "blur_kernel", "blur_sigma", "model",
            "model_file", "embedding_dim", "workers", "shared_scale", "heatmap_format")
    return cfg.updated(**{k: getattr(args, k, None) for k in keys})


def build_params(cfg: Config, input_shape):
    if cfg.model_file:
        params = load_model(cfg.model_file)
        if tuple(params.spec.input_shape) != tuple(input_shape):
            raise ShapeError(f"model expects input {params.spec.input_shape}, image is {tuple(input_shape)}")
        return params
    return init_model(builtin_spec(cfg.model, input_shape, cfg.embedding_dim, cfg.grid), cfg.seed)


def _cmd_embed(args, cfg: Config) -> None:
    image = load_image(args.image)
    values = embed(build_params(cfg, image.shape), image)
    for v in values:
        print(repr(float(v)))


def _cmd_explain(args, cfg: Config) -> None:
    ia, ib = load_image(args.image_a), load_image(args.image_b)
    params = build_params(cfg, ia.shape)
    ex = explain_pair(params, ia, ib, cfg.threshold, workers=cfg.workers)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = ex.maps()
    vmin = vmax = None
    if cfg.shared_scale:
        vmin = min(float(m.min()) for m in maps.values())
        vmax = max(float(m.max()) for m in maps.values())
    for name, s in maps.items():
        base = ia if name.endswith("A") else ib
        save_saliency(s, out / f"{name}.sal")
        heat = render_heatmap(s, base, cfg.heatmap_alpha, vmin, vmax)
        write_pixels(out / f"{name}.{cfg.heatmap_format}", heat)
    v = ex.verdict
    print(f"{'accept' if v.accept else 'reject'} score={v.score!r} threshold={v.threshold!r}")


def _cmd_eval(args, cfg: Config) -> None:
    pairs = read_pairs(args.pairs)
    if not pairs:
        raise FGGBError(f"{args.pairs}: no pairs")
    params = build_params(cfg, pairs[0].image_a.shape)
    ecfg = cfg.eval_config()
    tables = [dataset_eval(params, pairs, name, ecfg) for name in (args.explainer or ["fggb"])]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_text = tables[0].to_csv() + "".join(t.to_csv().split("\n", 1)[1] for t in tables[1:])
    (out / args.output).write_text(csv_text)
    for t in tables:
        print(f"{t.rows[0].explainer}: deletion={t.deletion_acc:.2f}% insertion={t.insertion_acc:.2f}%")


def _cmd_render(args, cfg: Config) -> None:
    s = load_saliency(args.saliency)
    base = load_image(args.base) if args.base else None
    alpha = cfg.heatmap_alpha if args.alpha is None else args.alpha
    write_pixels(args.output, render_heatmap(s, base, alpha))


def _cmd_gradcheck(args, cfg: Config) -> None:
    if args.image:
        image = load_image(args.image)
    else:
        image = np.random.default_rng(cfg.seed).random((args.size, args.size, 1))
    params = build_params(cfg, image.shape)
    print(repr(grad_check(params, image, args.step)))


COMMANDS = {
    "embed": _cmd_embed,
    "explain": _cmd_explain,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "gradcheck": _cmd_gradcheck,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (FGGBError, OSError, ValueError, IndexError) as exc:
        print(f"fggb {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
