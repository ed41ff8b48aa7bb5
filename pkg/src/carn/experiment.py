"""Experiment configuration: one flat record covering model variant, loss
variant, architecture widths, and optimizer settings.

Configs can be read from a flat ``key = value`` text file (``#`` comments
allowed); every key can also be supplied or overridden on the command
line. The four benchmark configurations are the cross product of
variant in {carn, cnn-baseline} and loss in {loss_p, loss_t}.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .losses import LossConfig
from .model import CARNConfig

VARIANTS = ("carn", "cnn-baseline")
LOSSES = ("loss_p", "loss_t")


@dataclass
class ExperimentConfig:
    dataset: str = ""
    out_dir: str = ""
    variant: str = "carn"
    loss: str = "loss_t"
    seed: int = 0
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_l: float = 1.0
    lambda_p: float = 1e-4
    k: int = 5
    squared_weight_norm: bool = False
    stem_channels: int = 8
    cl_schedule: tuple = (8, 8, 16, 16, 32, 32)
    head_channels: int = 64
    eval_batch_size: int = 64

    def __post_init__(self):
        if isinstance(self.cl_schedule, list):
            self.cl_schedule = tuple(self.cl_schedule)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def model_config(self, image_hw):
        return CARNConfig(
            input_hw=tuple(image_hw),
            stem_channels=self.stem_channels,
            au_cl_schedule=self.cl_schedule,
            head_channels=self.head_channels,
            variant=self.variant,
        )

    def loss_config(self):
        return LossConfig(
            lambda_l=self.lambda_l if self.loss == "loss_t" else 0.0,
            lambda_p=self.lambda_p,
            k=self.k,
            squared_weight_norm=self.squared_weight_norm,
        )

    def with_overrides(self, **kwargs):
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key, raw):
    raw = raw.strip()
    if key not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {key!r}")
    ftype = _FIELD_TYPES[key]
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {raw!r}")
    if ftype == "tuple":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def parse_config_text(text):
    """Parse flat ``key = value`` lines into a dict of typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw)
    return values


def load_config(path=None, overrides=None):
    """Build an ExperimentConfig from an optional file plus overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig(**values)
