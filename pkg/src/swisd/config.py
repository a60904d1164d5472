"""Layered experiment configuration with strict key checking.

A config document has sections {data, preprocess, encoder, loss, pretrain,
downstream, analysis} plus a global ``seed``.  Unknown keys are rejected with
their dotted path.  Values come from defaults, then an optional YAML file,
then ``--set section.key=value`` overrides, in that order.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

# YAML 1.1 floats require a dot and a signed exponent, so plain scientific
# notation like ``1e-6`` or ``2.5e3`` parses as a string; accept it anyway.
_SCI_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+$")

from .encoder import EncoderConfig
from .preprocess import AugmentParams
from .pretrain import PretrainConfig
from .probe import ProbeConfig


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values, naming the dotted key path."""


@dataclass
class DataConfig:
    manifest: str | None = None
    dataset: str | None = None
    iam_test_fraction: float = 0.5


@dataclass
class PreprocessConfig:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    translate_frac: float = 0.1
    crop_scale_min: float = 0.8
    crop_scale_max: float = 1.0

    def augment_params(self) -> AugmentParams:
        return AugmentParams(
            brightness=self.brightness,
            contrast=self.contrast,
            saturation=self.saturation,
            translate_frac=self.translate_frac,
            crop_scale_min=self.crop_scale_min,
            crop_scale_max=self.crop_scale_max,
        )


@dataclass
class LossConfig:
    variant: str = "literal"
    eps: float = 1e-8
    unbiased: bool = False


@dataclass
class PretrainSection:
    epochs: int = 500
    base_lr: float = 1e-3
    warmup_epochs: int = 10
    batch_size: int = 64
    weight_decay: float = 0.0
    checkpoint_interval: int = 100
    c_dump_interval: int = 0
    max_missing_fraction: float = 0.01
    cache_images: bool = True
    log_variance_spectrum: bool = True


@dataclass
class DownstreamConfig:
    epochs: int = 500
    lr: float = 1e-4
    batch_size: int = 32
    eval_batch_size: int = 64
    finetune_mode: str = "full"
    augment: bool = True
    cache_images: bool = True
    fraction: float = 0.10
    mode: str = "intra_script"


@dataclass
class AnalysisConfig:
    rho0: float = 0.8
    alpha: float = 0.05
    max_images: int | None = None
    kde_points: int = 512


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.pretrain.epochs,
            base_lr=self.pretrain.base_lr,
            warmup_epochs=self.pretrain.warmup_epochs,
            batch_size=self.pretrain.batch_size,
            loss_variant=self.loss.variant,
            eps=self.loss.eps,
            unbiased=self.loss.unbiased,
            weight_decay=self.pretrain.weight_decay,
            checkpoint_interval=self.pretrain.checkpoint_interval,
            c_dump_interval=self.pretrain.c_dump_interval,
            max_missing_fraction=self.pretrain.max_missing_fraction,
            cache_images=self.pretrain.cache_images,
            log_variance_spectrum=self.pretrain.log_variance_spectrum,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            epochs=self.downstream.epochs,
            lr=self.downstream.lr,
            batch_size=self.downstream.batch_size,
            eval_batch_size=self.downstream.eval_batch_size,
            finetune_mode=self.downstream.finetune_mode,
            augment=self.downstream.augment,
            cache_images=self.downstream.cache_images,
        )

    def to_dict(self) -> dict:
        doc = {"seed": self.seed}
        for name in _SECTIONS:
            section = asdict(getattr(self, name))
            if name == "encoder":
                section["small_cnn_channels"] = list(section["small_cnn_channels"])
            doc[name] = section
        return doc


_SECTIONS = {
    "data": DataConfig,
    "preprocess": PreprocessConfig,
    "encoder": EncoderConfig,
    "loss": LossConfig,
    "pretrain": PretrainSection,
    "downstream": DownstreamConfig,
    "analysis": AnalysisConfig,
}

_TUPLE_FIELDS = {("encoder", "small_cnn_channels")}


def _build_section(name: str, cls, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key: {name}.{unknown[0]}")
    kwargs = dict(values)
    for section, key in _TUPLE_FIELDS:
        if section == name and key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value in section '{name}': {err}") from err


def config_from_dict(doc: dict | None) -> ExperimentConfig:
    """Strictly parse a config document; unknown keys fail with dotted paths."""
    doc = dict(doc or {})
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown key: {unknown[0]}")
    seed = doc.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    sections = {
        name: _build_section(name, cls, doc.get(name, {})) for name, cls in _SECTIONS.items()
    }
    config = ExperimentConfig(seed=seed, **sections)
    for section, check in (
        ("encoder", config.encoder.validate),
        ("pretrain", config.pretrain_config().validate),
        ("downstream", config.probe_config().validate),
    ):
        try:
            check()
        except ValueError as err:
            raise ConfigError(f"invalid value in section '{section}': {err}") from err
    return config


def load_config_file(path: str | Path) -> dict:
    with Path(path).open("r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a mapping at top level")
    return doc


def apply_overrides(doc: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` (or ``seed=value``) overrides to a document.

    Values parse as YAML scalars, so ``epochs=2`` is an int and
    ``augment=false`` a bool.
    """
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override '{assignment}' is not of the form key=value")
        key, raw = assignment.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse value for '{key}': {err}") from err
        if isinstance(value, str) and _SCI_FLOAT.match(value.strip()):
            value = float(value)
        parts = key.split(".")
        if len(parts) == 1:
            out[parts[0]] = value
        elif len(parts) == 2:
            out.setdefault(parts[0], {})
            if not isinstance(out[parts[0]], dict):
                raise ConfigError(f"'{parts[0]}' is not a section")
            out[parts[0]][parts[1]] = value
        else:
            raise ConfigError(f"unknown key: {key}")
    return out


def resolve_config(
    config_path: str | Path | None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """File -> overrides -> optional seed flag, then strict parse."""
    doc = load_config_file(config_path) if config_path else {}
    doc = apply_overrides(doc, overrides or [])
    if seed is not None:
        doc["seed"] = seed
    return config_from_dict(doc)


def write_resolved_config(config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Echo the fully resolved document to ``<out>/config.resolved``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved"
    with path.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    return path
