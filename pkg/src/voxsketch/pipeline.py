"""Orchestration: artifact directories, stage execution, end-to-end bundle.

Artifacts are content-addressed: every stage directory name embeds a
fingerprint of exactly the configuration that influences it, so reruns with
an identical config reuse cached results and ablation arms share what they do
not vary. Each directory carries a ``meta.json`` with the resolved config,
seed, and fingerprint, which is enough to reproduce it.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .corpus import build_corpus, load_corpus
from .errors import DependencyError
from .evalharness import (
    EvalReport,
    VoxelClassifier,
    build_sketch_eval_set,
    classifier_accuracy,
    iou,
    plan_ablation,
    train_classifier,
)
from .features import ToyEncoder, ToyFeatureProvider, pretrain_toy_encoder, FileFeatureProvider
from .maskformer import MaskFormer, train_stage2
from .sampler import DecodeConfig, decode_many
from .vqvae import VqVae, train_stage1, codebook_utilization

def _fp(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def corpus_fingerprint(config):
    return _fp({"per_category": config.corpus.per_category, "seed": config.seed})


def provider_fingerprint(config):
    return _fp({
        "corpus": corpus_fingerprint(config),
        "dim": config.provider.dim,
        "pretrain_epochs": config.provider.pretrain_epochs,
        "seed": config.seed,
    })


def stage1_fingerprint(config):
    return _fp({
        "corpus": corpus_fingerprint(config),
        "stage1": vars(config.stage1).copy(),
        "seed": config.seed,
    })


def stage2_fingerprint(config):
    return _fp({
        "stage1": stage1_fingerprint(config),
        "provider": provider_fingerprint(config),
        "layer": config.provider.layer,
        "mode": config.provider.mode,
        "kind": config.provider.kind,
        "stage2": vars(config.stage2).copy(),
        "augment": vars(config.augment).copy(),
        "seed": config.seed,
    })


def classifier_fingerprint(config):
    return _fp({"corpus": corpus_fingerprint(config), "seed": config.seed})


def _write_meta(directory, config, fingerprint, extra=None):
    meta = {
        "config": config.to_dict(),
        "seed": config.seed,
        "fingerprint": fingerprint,
        **(extra or {}),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _read_meta(directory):
    return json.loads((directory / "meta.json").read_text())


def ensure_corpus(config, out_root, build=True, log=None):
    out_root = Path(out_root)
    directory = out_root / f"corpus-{corpus_fingerprint(config)}"
    if (directory / "manifest.tsv").exists():
        return load_corpus(directory)
    if not build:
        raise DependencyError(
            f"corpus not found at {directory}; run the dataset step first"
        )
    if log:
        log(f"building corpus ({config.corpus.per_category}/category) at {directory}")
    corpus = build_corpus(config.corpus.per_category, config.seed, directory)
    _write_meta(directory, config, corpus_fingerprint(config))
    return corpus


def ensure_provider(config, out_root, corpus=None, build=True, log=None):
    """The frozen feature source. Toy encoders are pretrained once and cached."""
    if config.provider.kind.startswith("files:"):
        return FileFeatureProvider(config.provider.kind[len("files:"):], config.provider.dim)
    out_root = Path(out_root)
    directory = out_root / f"provider-{provider_fingerprint(config)}"
    ckpt = directory / "encoder.ckpt"
    if ckpt.exists():
        encoder = ToyEncoder.load(ckpt)
    else:
        if not build:
            raise DependencyError(f"frozen encoder not found at {ckpt}")
        corpus = corpus or ensure_corpus(config, out_root, build=build, log=log)
        if log:
            log(f"pretraining feature encoder ({config.provider.pretrain_epochs} epochs)")
        start = time.time()
        encoder, accuracy = pretrain_toy_encoder(
            corpus, epochs=config.provider.pretrain_epochs, seed=config.seed,
            accuracy_floor=config.provider.accuracy_floor, log=log,
        )
        directory.mkdir(parents=True, exist_ok=True)
        encoder.save(ckpt)
        encoder = ToyEncoder.load(ckpt)  # freeze from the persisted bytes
        _write_meta(
            directory, config, provider_fingerprint(config),
            {"val_accuracy": accuracy, "checksum": encoder.checksum(),
             "elapsed_s": time.time() - start},
        )
    return ToyFeatureProvider(encoder, config.provider.layer, config.provider.mode)


def ensure_stage1(config, out_root, corpus=None, build=True, log=None):
    out_root = Path(out_root)
    directory = out_root / f"stage1-{stage1_fingerprint(config)}"
    ckpt = directory / "stage1.ckpt"
    if ckpt.exists():
        return VqVae.load(ckpt, config.vqvae_config())
    if not build:
        raise DependencyError(f"stage-1 checkpoint not found at {ckpt}")
    corpus = corpus or ensure_corpus(config, out_root, build=build, log=log)
    if log:
        log(f"training stage 1 ({config.stage1.epochs} epochs)")
    start = time.time()
    model, history = train_stage1(
        corpus, config.vqvae_config(), seed=config.seed, log=log
    )
    directory.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    _write_meta(
        directory, config, stage1_fingerprint(config),
        {"history": history, "elapsed_s": time.time() - start},
    )
    return VqVae.load(ckpt, config.vqvae_config())


def ensure_stage2(config, out_root, corpus=None, stage1=None, provider=None,
                  build=True, log=None):
    out_root = Path(out_root)
    directory = out_root / f"stage2-{stage2_fingerprint(config)}"
    ckpt = directory / "stage2.ckpt"
    if ckpt.exists():
        return MaskFormer.load(ckpt, config.maskformer_config())
    if not build:
        raise DependencyError(f"stage-2 checkpoint not found at {ckpt}")
    corpus = corpus or ensure_corpus(config, out_root, build=build, log=log)
    stage1 = stage1 or ensure_stage1(config, out_root, corpus, build=False, log=log)
    provider = provider or ensure_provider(config, out_root, corpus, build=True, log=log)
    if log:
        log(f"training stage 2 ({config.stage2.epochs} epochs, {config.provider.mode} conditioning)")
    start = time.time()
    model, history = train_stage2(
        corpus, stage1, provider, config.maskformer_config(),
        seed=config.seed, augment_spec=config.augment_spec(), log=log,
    )
    directory.mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    _write_meta(
        directory, config, stage2_fingerprint(config),
        {"history": history, "elapsed_s": time.time() - start},
    )
    return MaskFormer.load(ckpt, config.maskformer_config())


def ensure_classifier(config, out_root, corpus=None, build=True, log=None):
    out_root = Path(out_root)
    directory = out_root / f"classifier-{classifier_fingerprint(config)}"
    ckpt = directory / "classifier.ckpt"
    if ckpt.exists():
        return VoxelClassifier.load(ckpt)
    if not build:
        raise DependencyError(f"classifier checkpoint not found at {ckpt}")
    corpus = corpus or ensure_corpus(config, out_root, build=build, log=log)
    if log:
        log("training evaluation classifier")
    clf, accuracy = train_classifier(corpus, seed=config.seed, log=log)
    directory.mkdir(parents=True, exist_ok=True)
    clf.save(ckpt)
    _write_meta(
        directory, config, classifier_fingerprint(config), {"val_accuracy": accuracy}
    )
    return VoxelClassifier.load(ckpt)


class Pipeline:
    """Loaded checkpoints bundled behind the generation entry point."""

    def __init__(self, config, corpus, provider, stage1, stage2, classifier=None):
        self.config = config
        self.corpus = corpus
        self.provider = provider
        self.stage1 = stage1
        self.stage2 = stage2
        self.classifier = classifier

    def fingerprints(self):
        return {
            "provider": provider_fingerprint(self.config),
            "stage1": stage1_fingerprint(self.config),
            "stage2": stage2_fingerprint(self.config),
        }

    def decode_config(self, k=None, seed=None, steps=None, scale=None):
        d = self.config.decode
        return DecodeConfig(
            steps=steps if steps is not None else d.steps,
            guidance_scale=scale if scale is not None else d.scale,
            temperature=d.temperature,
            samples=k if k is not None else d.samples,
            seed=self.config.seed if seed is None else seed,
            deterministic=d.deterministic,
        )

    def generate(self, sketch, k=None, seed=None, steps=None, scale=None):
        """Sketch image -> (grids, tokens, traces)."""
        cfg = self.decode_config(k, seed, steps, scale)
        features = self.provider.encode(np.asarray(sketch, dtype=np.float32))
        seeds = [cfg.seed + i for i in range(cfg.samples)]
        tokens, traces = decode_many(self.stage2, features, cfg, seeds)
        return list(self.stage1.decode_token_batch(tokens)), tokens, traces

    def generate_grids(self, sketch, k, seed):
        grids, _, _ = self.generate(sketch, k=k, seed=seed)
        return grids


def load_pipeline(config, out_root, build=False, classifier=True, log=None):
    corpus = ensure_corpus(config, out_root, build=build, log=log)
    provider = ensure_provider(config, out_root, corpus, build=build, log=log)
    stage1 = ensure_stage1(config, out_root, corpus, build=build, log=log)
    stage2 = ensure_stage2(config, out_root, corpus, stage1, provider, build=build, log=log)
    # the metric classifier depends only on the corpus, so it may always build
    clf = ensure_classifier(config, out_root, corpus, build=True, log=log) if classifier else None
    return Pipeline(config, corpus, provider, stage1, stage2, clf)


def evaluate_pipeline(pipeline, name="eval", split="test", jitter=False, limit=None,
                      scale=None, seed=None, log=None):
    """Zero-shot evaluation on edge-map sketches of held-out shapes."""
    config = pipeline.config
    seed = config.seed if seed is None else seed
    sketches = build_sketch_eval_set(
        pipeline.corpus, split=split, seed=seed, jitter=jitter, limit=limit
    )
    by_id = {r.shape_id: r for r in pipeline.corpus.records}
    ious = []

    def collect(sk, grids):
        truth = pipeline.corpus.load_grid(by_id[sk.shape_id])
        ious.extend(iou(truth, g) for g in grids)

    k = config.decode.samples
    accuracy, per_cat = classifier_accuracy(
        sketches,
        lambda image, kk, s: pipeline.generate(image, k=kk, seed=s, scale=scale)[0],
        pipeline.classifier,
        k=k,
        seed=seed,
        collect_iou=collect,
    )
    report = EvalReport(
        name=name,
        accuracy=accuracy,
        per_category=per_cat,
        iou_mean=float(np.mean(ious)) if ious else None,
        fingerprint=config.fingerprint(),
        seed=seed,
        samples_per_sketch=k,
        sketch_count=len(sketches),
        extra={"jitter": jitter, "scale": scale if scale is not None else config.decode.scale},
    )
    if log:
        log(report.table())
    return report


def run_ablation(variant, base_config, out_root, jitter=False, limit=None, log=None):
    """Train/evaluate every arm of a controlled comparison with shared seeds."""
    arms = plan_ablation(variant, base_config)
    reports = {}
    for arm in arms:
        overrides = dict(arm["overrides"])
        arm_config = _with_overrides(base_config, overrides)
        if log:
            log(f"ablation arm {arm['name']}: overrides {overrides}")
        pipeline = load_pipeline(arm_config, out_root, build=True, log=log)
        reports[arm["name"]] = evaluate_pipeline(
            pipeline, name=f"{variant}-{arm['name']}",
            jitter=jitter or variant == "augmentation", limit=limit, log=log,
        )
    directory = Path(out_root) / f"ablation-{variant}-{base_config.fingerprint()}"
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"ablation: {variant}", f"base fingerprint: {base_config.fingerprint()}"]
    for name, report in reports.items():
        report.save(directory)
        lines.append(f"  {name:12s} accuracy {report.accuracy:.4f}")
    (directory / "summary.txt").write_text("\n".join(lines) + "\n")
    if log:
        log("\n".join(lines))
    return reports


def _with_overrides(config, dotted_overrides):
    from .config import config_from_dict

    return config_from_dict(
        config.to_dict(), overrides=dotted_overrides, preset=config.preset
    )
