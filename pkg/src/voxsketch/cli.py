"""Command-line entry point for the whole pipeline.

Subcommands: dataset, train-stage1, train-stage2, generate, evaluate, ablate,
serve. A JSON config file supplies settings; flags override file values. The
output root comes from --out-root or the VOXSKETCH_OUT environment variable.

Exit codes: 0 success, 2 configuration error, 3 missing dependency, 4 numeric
or training failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, DependencyError, TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_NUMERIC = 4


def _log(message):
    print(message, flush=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="voxsketch", description=__doc__)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", choices=["desk", "full"], help="config preset")
    parser.add_argument("--out-root", help="artifact root (default $VOXSKETCH_OUT or ./runs)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a dotted config key, e.g. --set stage2.width=128",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("dataset", help="build the shape corpus")
    sub.add_parser("train-stage1", help="train the shape autoencoder")

    p2 = sub.add_parser("train-stage2", help="train the masked token model")
    p2.add_argument("--augment", help="comma list from {affine,color,canny,all,none}")
    p2.add_argument("--provider", help="feature provider: toy or files:<dir>")
    p2.add_argument("--layer", type=int, help="encoder layer for grid features")
    p2.add_argument("--cond", choices=["grid", "global"], help="conditioning mode")

    pg = sub.add_parser("generate", help="generate shapes from a sketch image")
    pg.add_argument("--sketch", required=True, help="sketch image file")
    pg.add_argument("--samples", type=int, help="shapes per sketch")
    pg.add_argument("--steps", type=int, help="decode steps")
    pg.add_argument("--scale", type=float, help="guidance scale")
    pg.add_argument("--out", required=True, help="output directory")
    pg.add_argument("--deterministic", action="store_true", help="disable confidence noise")

    pe = sub.add_parser("evaluate", help="zero-shot evaluation on edge-map sketches")
    pe.add_argument("--split", default="test", choices=["train", "val", "test"])
    pe.add_argument("--jitter", action="store_true", help="heavy affine jitter on sketches")
    pe.add_argument("--limit", type=int, help="cap the number of sketches")
    pe.add_argument("--name", default="eval", help="report name")

    pa = sub.add_parser("ablate", help="run a controlled comparison")
    pa.add_argument("--variant", required=True)
    pa.add_argument("--jitter", action="store_true")
    pa.add_argument("--limit", type=int)

    ps = sub.add_parser("serve", help="run the HTTP inference service")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8764)

    return parser


def _overrides_from(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.command == "train-stage2":
        if args.augment:
            overrides["augment.names"] = args.augment
        if args.provider:
            overrides["provider.kind"] = args.provider
        if args.layer is not None:
            overrides["provider.layer"] = args.layer
        if args.cond:
            overrides["provider.mode"] = args.cond
    if args.command == "generate":
        if args.samples is not None:
            overrides["decode.samples"] = args.samples
        if args.steps is not None:
            overrides["decode.steps"] = args.steps
        if args.scale is not None:
            overrides["decode.scale"] = args.scale
        if args.deterministic:
            overrides["decode.deterministic"] = True
    return overrides


def _run(args):
    from . import pipeline as pl

    out_root = Path(args.out_root or os.environ.get("VOXSKETCH_OUT", "runs"))
    config = parse_config(args.config, overrides=_overrides_from(args), preset=args.preset)

    if args.command == "dataset":
        corpus = pl.ensure_corpus(config, out_root, build=True, log=_log)
        _log(f"corpus ready: {len(corpus)} shapes under {corpus.root}")
        return EXIT_OK

    if args.command == "train-stage1":
        corpus = pl.ensure_corpus(config, out_root, build=False)
        pl.ensure_stage1(config, out_root, corpus, build=True, log=_log)
        _log(f"stage-1 checkpoint ready (fingerprint {pl.stage1_fingerprint(config)})")
        return EXIT_OK

    if args.command == "train-stage2":
        corpus = pl.ensure_corpus(config, out_root, build=False)
        stage1 = pl.ensure_stage1(config, out_root, corpus, build=False)
        provider = pl.ensure_provider(config, out_root, corpus, build=True, log=_log)
        pl.ensure_stage2(config, out_root, corpus, stage1, provider, build=True, log=_log)
        _log(f"stage-2 checkpoint ready (fingerprint {pl.stage2_fingerprint(config)})")
        return EXIT_OK

    if args.command == "generate":
        from .sketch_io import load_sketch
        from .voxels import export_mesh, save_voxels

        pipeline = pl.load_pipeline(config, out_root, build=False, classifier=False, log=_log)
        sketch = load_sketch(args.sketch)
        grids, tokens, _ = pipeline.generate(sketch)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "fingerprint": config.fingerprint(),
            "fingerprints": pipeline.fingerprints(),
            "seed": config.seed,
            "sketch": str(args.sketch),
            "samples": [],
        }
        from .vqvae import save_tokens

        for i, grid in enumerate(grids):
            save_voxels(grid, out_dir / f"sample{i}.svox")
            export_mesh(grid, out_dir / f"sample{i}.obj")
            save_tokens(out_dir / f"sample{i}.toks", tokens[i])
            manifest["samples"].append(f"sample{i}.svox")
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        _log(f"wrote {len(grids)} shapes to {out_dir}")
        return EXIT_OK

    if args.command == "evaluate":
        pipeline = pl.load_pipeline(config, out_root, build=False, log=_log)
        report = pl.evaluate_pipeline(
            pipeline, name=args.name, split=args.split,
            jitter=args.jitter, limit=args.limit, log=_log,
        )
        directory = out_root / f"eval-{config.fingerprint()}"
        report.save(directory)
        _log(f"report written under {directory}")
        return EXIT_OK

    if args.command == "ablate":
        pl.run_ablation(
            args.variant, config, out_root, jitter=args.jitter,
            limit=args.limit, log=_log,
        )
        return EXIT_OK

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        def loader():
            return pl.load_pipeline(config, out_root, build=False, log=_log)

        uvicorn.run(create_app(loader=loader), host=args.host, port=args.port)
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except DependencyError as exc:
        _log(f"dependency error: {exc}")
        return EXIT_DEPENDENCY
    except (TrainingError, ArithmeticError) as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
