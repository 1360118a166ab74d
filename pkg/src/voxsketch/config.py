"""Pipeline configuration: schema, defaults, file/flag parsing, fingerprints.

Defaults follow the published training recipe (codebook 512, 8^3 token grid,
embedding width 64, 8 transformer blocks of width 256 with 8 heads, learning
rate 1e-4, 300/250 epochs, 15 decode steps at guidance 3). The ``desk``
preset shrinks epochs, corpus, and the stage-2 trunk so the whole pipeline
runs on a laptop CPU; anything it changes is an explicit override.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentSpec
from .errors import ConfigError
from .maskformer import ATTENTION_VARIANTS, MaskFormerConfig
from .vqvae import VqVaeConfig


@dataclass
class CorpusSection:
    root: str = "corpus"
    per_category: int = 500


@dataclass
class ProviderSection:
    kind: str = "toy"           # "toy" or "files:<dir>"
    layer: int = 4
    mode: str = "grid"          # "grid" or "global"
    dim: int = 64
    pretrain_epochs: int = 12
    accuracy_floor: float = 0.90


@dataclass
class Stage1Section:
    codebook: int = 512
    dim: int = 64
    grid: int = 8
    beta: float = 0.25
    decay: float = 0.99
    epochs: int = 300
    batch: int = 8
    learning_rate: float = 1e-4


@dataclass
class Stage2Section:
    blocks: int = 8
    heads: int = 8
    width: int = 256
    mapping_layers: int = 2
    null_prob: float = 0.05
    epochs: int = 250
    batch: int = 16
    learning_rate: float = 1e-4
    attention: str = "cross"


@dataclass
class AugmentSection:
    names: str = "none"         # comma list from {affine,color,canny,all,none}
    rotation_deg: float = 15.0
    translation: float = 0.10
    scale_min: float = 0.85
    scale_max: float = 1.15
    gain_min: float = 0.7
    gain_max: float = 1.3
    bias_min: float = -0.15
    bias_max: float = 0.15
    edge_low: float = 0.1
    edge_high: float = 0.3


@dataclass
class DecodeSection:
    steps: int = 15
    scale: float = 3.0
    temperature: float = 1.0
    samples: int = 5
    deterministic: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    preset: str = "full"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    provider: ProviderSection = field(default_factory=ProviderSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    augment: AugmentSection = field(default_factory=AugmentSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    # -- derived views ----------------------------------------------------

    def vqvae_config(self):
        s = self.stage1
        return VqVaeConfig(
            codebook_size=s.codebook, dim=s.dim, grid=s.grid, beta=s.beta,
            decay=s.decay, epochs=s.epochs, batch_size=s.batch,
            learning_rate=s.learning_rate,
        )

    def maskformer_config(self):
        s = self.stage2
        cond_length = 64 if self.provider.mode == "grid" else 1
        return MaskFormerConfig(
            tokens=self.stage1.grid**3, vocab=self.stage1.codebook,
            width=s.width, blocks=s.blocks, heads=s.heads,
            mapping_layers=s.mapping_layers, cond_dim=self.provider.dim,
            cond_length=cond_length, null_prob=s.null_prob,
            attention=s.attention, batch_size=s.batch,
            learning_rate=s.learning_rate, epochs=s.epochs,
        )

    def augment_spec(self):
        import math

        a = self.augment
        spec = AugmentSpec.from_names(a.names)
        spec.rotation = math.radians(a.rotation_deg)
        spec.translation = a.translation
        spec.scale_range = (a.scale_min, a.scale_max)
        spec.gain_range = (a.gain_min, a.gain_max)
        spec.bias_range = (a.bias_min, a.bias_max)
        spec.edge_low = a.edge_low
        spec.edge_high = a.edge_high
        return spec

    def to_dict(self):
        return dataclasses.asdict(self)

    def fingerprint(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# the desk preset compresses the full recipe onto a laptop CPU: smaller
# corpus, 10x fewer epochs (with learning rates raised to compensate), and a
# slimmer stage-2 trunk; every change is an explicit override here
PRESETS = {
    "full": {},
    "desk": {
        "corpus": {"per_category": 100},
        "provider": {"pretrain_epochs": 100},
        "stage1": {"epochs": 30, "batch": 16, "learning_rate": 1e-3},
        "stage2": {
            "epochs": 40, "width": 128, "blocks": 4, "heads": 2,
            "learning_rate": 1e-3,
        },
    },
}


def _coerce(value, target, key):
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"config key {key!r} expects a boolean, got {value!r}")
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigError(f"config key {key!r} expects an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} expects an integer, got {value!r}")
    if isinstance(target, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} expects a number, got {value!r}")
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string, got {value!r}")
        return value
    raise ConfigError(f"config key {key!r} has unsupported type")


def _apply(config, updates, prefix=""):
    for key, value in updates.items():
        path = f"{prefix}{key}"
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {path!r}")
        current = getattr(config, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} expects a section object")
            _apply(current, value, prefix=f"{path}.")
        else:
            setattr(config, key, _coerce(value, current, path))


def _apply_dotted(config, dotted_key, value):
    parts = dotted_key.split(".")
    node = config
    for part in parts[:-1]:
        if not hasattr(node, part) or not dataclasses.is_dataclass(getattr(node, part)):
            raise ConfigError(f"unknown config key {dotted_key!r}")
        node = getattr(node, part)
    if not hasattr(node, parts[-1]):
        raise ConfigError(f"unknown config key {dotted_key!r}")
    current = getattr(node, parts[-1])
    setattr(node, parts[-1], _coerce(value, current, dotted_key))


def validate(config):
    if config.corpus.per_category < 10:
        raise ConfigError("corpus.per_category must be at least 10")
    if config.decode.steps < 1:
        raise ConfigError("decode.steps must be at least 1")
    if config.decode.scale < 0:
        raise ConfigError("decode.scale must be nonnegative")
    if config.decode.samples < 1:
        raise ConfigError("decode.samples must be at least 1")
    if not 0 <= config.stage2.null_prob <= 1:
        raise ConfigError("stage2.null_prob must lie in [0, 1]")
    if config.stage2.attention not in ATTENTION_VARIANTS:
        raise ConfigError(f"stage2.attention must be one of {ATTENTION_VARIANTS}")
    if config.provider.mode not in ("grid", "global"):
        raise ConfigError("provider.mode must be 'grid' or 'global'")
    if not (config.provider.kind == "toy" or config.provider.kind.startswith("files:")):
        raise ConfigError("provider.kind must be 'toy' or 'files:<dir>'")
    if config.stage1.epochs < 1 or config.stage2.epochs < 1:
        raise ConfigError("epochs must be at least 1")
    if config.stage2.width % config.stage2.heads:
        raise ConfigError("stage2.width must be divisible by stage2.heads")
    for name, section in (("stage1", config.stage1), ("stage2", config.stage2)):
        if section.learning_rate <= 0:
            raise ConfigError(f"{name}.learning_rate must be positive")
    try:
        config.augment_spec()
    except ValueError as exc:
        raise ConfigError(str(exc))
    return config


def config_from_dict(data, overrides=None, preset=None):
    """Resolve a config: defaults <- preset <- data <- dotted overrides."""
    config = PipelineConfig()
    preset = preset or data.get("preset") or "full"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    config.preset = preset
    _apply(config, PRESETS[preset])
    _apply(config, {k: v for k, v in data.items() if k != "preset"})
    for dotted_key, value in (overrides or {}).items():
        _apply_dotted(config, dotted_key, value)
    return validate(config)


def parse_config(file=None, overrides=None, preset=None):
    """Resolve a config from an optional JSON file plus dotted overrides."""
    file_data = {}
    if file is not None:
        try:
            file_data = json.loads(Path(file).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {file} is not valid JSON: {exc}")
        if not isinstance(file_data, dict):
            raise ConfigError("config file must hold a JSON object")
    return config_from_dict(file_data, overrides=overrides, preset=preset)
