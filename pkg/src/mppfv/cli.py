"""Command-line driver.

Every subcommand reads the same flat config (file via --config, overridden
by repeated --set key=value), so a full run is a sequence like:

    mppfv synth --out data/ --classes blob,hstripes,checker --noise 0.4
    mppfv extract --set manifest=data/manifest.json --set cache_dir=cache
    mppfv fit-pca ... && mppfv fit-gmm ... && mppfv encode ...
    mppfv train-svm ... && mppfv eval ...
"""

from __future__ import annotations

import argparse
import json
import sys

from . import kernels
from .confmap import build_map, export_map
from .dataset import DatasetManifest, load_image, synthetic_manifest
from .descriptors import DescriptorSet
from .errors import MppfvError
from .gmm import GmmModel
from .pca import PcaModel, project
from .pipeline import (CACHE_ENV, PipelineConfig, build_network, run_pipeline,
                       scale_sweep, stage_encode, stage_eval, stage_extract,
                       stage_gmm, stage_pca, stage_svm)
from .pooling import STRATEGIES
from .svm import LinearModel, score
from . import pyramid


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("--pool", choices=STRATEGIES, help="pooling strategy override")


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise MppfvError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    if getattr(args, "pool", None):
        overrides["pool"] = args.pool
    if args.config:
        return PipelineConfig.from_file(args.config, overrides)
    return PipelineConfig.from_pairs(overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mppfv",
        description="Multi-scale pyramid-pooled Fisher vector pipeline "
                    f"(kernel backend: {kernels.BACKEND}; cache dir env: {CACHE_ENV})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic PGM dataset + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="blob,hstripes,checker")
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    for name, help_text in (
        ("extract", "dense multi-scale descriptors for every manifest image"),
        ("fit-pca", "fit the projection on sampled training descriptors"),
        ("fit-gmm", "fit the visual vocabulary on projected samples"),
        ("encode", "pool each image into its final representation"),
        ("train-svm", "train one-vs-rest classifiers"),
        ("eval", "score the test split and write the report"),
        ("run", "all stages in order"),
        ("sweep", "scale-range sweep over pooling strategies"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_args(p)

    p = sub.add_parser("predict", help="score one image with the trained model")
    _add_config_args(p)
    p.add_argument("image", help="path to a PGM/PPM image")

    p = sub.add_parser("confmap", help="export a per-class confidence map")
    _add_config_args(p)
    p.add_argument("image")
    p.add_argument("--class", dest="class_label", required=True)
    p.add_argument("--grid", default="8x8", help="HxW cells")
    p.add_argument("--out", required=True, help="output PGM path")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except MppfvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "synth":
        from pathlib import Path

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = synthetic_manifest(
            classes=tuple(args.classes.split(",")), n_train=args.train,
            n_test=args.test, seed=args.seed, size=args.size, noise=args.noise,
        )
        manifest.save(out / "manifest.json")
        print(f"wrote {out / 'manifest.json'} "
              f"({len(manifest.records)} records, classes {manifest.classes})")
        return 0

    cfg = _config(args)

    if args.command == "extract":
        counters = stage_extract(cfg)
        print(json.dumps(counters, indent=1, sort_keys=True))
        return 0
    if args.command == "fit-pca":
        model = stage_pca(cfg)
        print(f"projection {model.d_in} -> {model.d_out} "
              f"(top eigenvalue {model.explained_variance[0]:.6g})")
        return 0
    if args.command == "fit-gmm":
        model = stage_gmm(cfg)
        print(f"vocabulary K={model.K} d={model.dim}")
        return 0
    if args.command == "encode":
        stage_encode(cfg)
        print(f"pooled representations written (strategy {cfg.pool})")
        return 0
    if args.command == "train-svm":
        model = stage_svm(cfg)
        print(f"classes {model.classes}, lambda {model.lambda_reg:g}")
        return 0
    if args.command == "eval":
        report = stage_eval(cfg)
        print(report.to_json(), end="")
        return 0
    if args.command == "run":
        report = run_pipeline(cfg)
        print(report.to_json(), end="")
        return 0
    if args.command == "sweep":
        report = scale_sweep(cfg)
        print(report.to_json(), end="")
        return 0
    if args.command == "predict":
        return _predict(cfg, args.image)
    if args.command == "confmap":
        return _confmap(cfg, args)
    raise MppfvError(f"unhandled command {args.command}")


def _image_descriptors(cfg: PipelineConfig, image_path: str) -> DescriptorSet:
    net = build_network(cfg)
    image = load_image(image_path if ":" in image_path else f"file:{image_path}", ".")
    return pyramid.extract_all(net, image, cfg.scales, growth=cfg.growth)


def _models(cfg: PipelineConfig):
    cache = cfg.resolve_cache()
    return (PcaModel.load(cache / "pca.mppp"), GmmModel.load(cache / "gmm.mppg"),
            LinearModel.load(cache / f"svm-{cfg.pool}.mpps"))


def _predict(cfg: PipelineConfig, image_path: str) -> int:
    from .pooling import pool

    pca_model, gmm_model, model = _models(cfg)
    dset = _image_descriptors(cfg, image_path)
    rep = pool(cfg.pool, gmm_model, project(pca_model, dset),
               scales=cfg.effective_scales)
    values = score(model, rep)
    for cls, val in sorted(zip(model.classes, values), key=lambda cv: -cv[1]):
        print(f"{cls}\t{val:+.6f}")
    return 0


def _confmap(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    pca_model, gmm_model, model = _models(cfg)
    dset = _image_descriptors(cfg, args.image)
    h, w = (int(t) for t in args.grid.lower().split("x"))
    cmap = build_map(project(pca_model, dset), gmm_model, model,
                     args.class_label, grid=(h, w))
    export_map(cmap, args.out)
    peak = cmap.argmax_cell()
    print(f"wrote {args.out}; peak cell row={peak[0]} col={peak[1]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
