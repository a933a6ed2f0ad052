"""Run configuration: one validated tree covering every module.

Configs load from JSON or YAML files, can be overridden by ``REFVIDSEG_``
environment variables and command-line ``--set`` flags (file < env < CLI),
and reject unknown keys outright.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, get_args, get_origin

import yaml

ENV_PREFIX = "REFVIDSEG_"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = "data/synthetic"
    dataset_name: str = "synthetic"
    # exclude each validation video from training when evaluating it (off by default)
    leave_one_video_out: bool = False


@dataclass
class EncoderConfig:
    pyramid_channels: tuple[int, int, int] = (32, 64, 96)
    stem_channels: int = 16
    fusion_stride: int = 16
    temporal_mixing: bool = True
    pixel_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    pixel_std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    text_dim: int = 64
    text_layers: int = 1
    text_heads: int = 4
    text_ffn: int = 128
    max_text_len: int = 32


@dataclass
class DetectorConfig:
    provider: str = "ground_truth"  # ground_truth | threshold_detector | external
    max_per_frame: int = 8
    track_iou_threshold: float = 0.3
    brightness_threshold: int = 40
    min_area: int = 16
    sidecar_dir: str = ""  # for the external provider: {sidecar_dir}/{video_id}.json


@dataclass
class InstrumentBranchConfig:
    enabled: bool = True
    patch_dim: int = 64
    patch_pool: int = 56
    patch_widths: tuple[int, int, int] = (16, 32, 64)


@dataclass
class GrmConfig:
    enabled: bool = True
    graph_propagation_enabled: bool = True
    layers: int = 1


@dataclass
class FusionConfig:
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 8
    ffn_dim: int = 512
    num_queries: int = 50
    mask_dim: int = 32
    dropout: float = 0.0


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 5
    lr: float = 1e-4
    lr_decay: float = 0.6
    decay_epochs: tuple[int, ...] = (20, 40)
    window: int = 3
    resize_enabled: bool = True
    resize_min_short: int = 360
    resize_max_long: int = 640
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    lambda_dice: float = 5.0
    lambda_ref: float = 2.0
    supervise_unreferred_masks: bool = True
    checkpoint_interval: int = 10
    val_interval: int = 0  # 0 = only at the end

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.window < 1:
            raise ConfigError("epochs, batch_size and window must be positive")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr must be positive and lr_decay in (0, 1]")
        if any(e >= self.epochs or e < 0 for e in self.decay_epochs):
            raise ConfigError(f"decay_epochs {self.decay_epochs} must lie in [0, epochs)")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/run"
    deterministic: bool = True
    video_encoder: str = "toy"
    text_encoder: str = "toy"
    shared_dim: int = 128
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    instrument_branch: InstrumentBranchConfig = field(default_factory=InstrumentBranchConfig)
    grm: GrmConfig = field(default_factory=GrmConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        self.train.validate()
        if self.shared_dim < 6 or self.shared_dim % 2 != 0:
            raise ConfigError("shared_dim must be even and >= 6")
        if self.video_encoder != "toy" or self.text_encoder != "toy":
            raise ConfigError(
                "only the 'toy' encoder tier ships with this package; adapters for "
                "externally supplied backbones must register their own builders"
            )
        if self.detector.provider not in ("ground_truth", "threshold_detector", "external"):
            raise ConfigError(f"unknown detector provider '{self.detector.provider}'")
        if self.encoder.fusion_stride not in (4, 8, 16):
            raise ConfigError("encoder.fusion_stride must be 4, 8 or 16")
        if self.grm.layers < 1:
            raise ConfigError("grm.layers must be >= 1")


# ---------------------------------------------------------------------------
# strict (de)serialization


def _coerce(value: Any, annotation: Any, where: str) -> Any:
    origin = get_origin(annotation)
    if is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return dataclass_from_dict(annotation, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a sequence")
        args = get_args(annotation)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, where) for v, a in zip(value, args))
    if annotation is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if annotation in (int, float, str, bool):
        if isinstance(value, bool) and annotation is not bool:
            raise ConfigError(f"{where}: expected {annotation.__name__}, got bool")
        if not isinstance(value, annotation):
            raise ConfigError(
                f"{where}: expected {annotation.__name__}, got {type(value).__name__}"
            )
        return value
    return value


def dataclass_from_dict(cls, data: dict, where: str = "") -> Any:
    import typing

    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where or cls.__name__}")
    kwargs = {}
    for name, value in data.items():
        path = f"{where}.{name}" if where else name
        kwargs[name] = _coerce(value, hints[name], path)
    return cls(**kwargs)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return data


def _set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set '{dotted}': '{key}' is not a section")
    node[keys[-1]] = value


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ=None) -> dict:
    """REFVIDSEG_TRAIN__EPOCHS=5 -> {"train": {"epochs": 5}}."""
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for key, value in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        dotted = key[len(ENV_PREFIX) :].lower().replace("__", ".")
        _set_path(tree, dotted, _parse_scalar(value))
    return tree


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(
    config_path: str | Path | None = None,
    cli_sets: list[str] | None = None,
    environ=None,
) -> RunConfig:
    """Merge file < environment < CLI overrides into a validated RunConfig."""
    tree: dict = {}
    if config_path is not None:
        tree = load_config_file(config_path)
    tree = _merge(tree, env_overrides(environ))
    for item in cli_sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got '{item}'")
        dotted, _, raw = item.partition("=")
        _set_path(tree, dotted.strip(), _parse_scalar(raw.strip()))
    cfg = dataclass_from_dict(RunConfig, tree)
    cfg.validate()
    return cfg
