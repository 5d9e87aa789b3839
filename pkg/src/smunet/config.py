"""Run configuration: line-oriented ``key = value`` text with sections.

Unknown keys (and unknown sections) are hard errors; a typo cannot
silently fall back to a default. The resolved configuration serializes
back to the same format, and feeding the serialized copy back in
reproduces the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import SyntheticSpec
from .network import VARIANTS, NetConfig

__all__ = ["RunConfig", "ConfigError", "parse_config", "parse_config_file", "render_config"]


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # [network]
    stages: int = 4
    base_channels: int = 16
    num_classes: int = 3
    alpha: float = 0.125
    variant: str = "full"
    input_height: int = 64
    input_width: int = 64
    # [optimizer]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    # [training]
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    # [data]
    source: str = "synthetic"  # synthetic | manifest
    manifest_path: str = ""
    train_count: int = 60
    test_count: int = 20
    noise_sigma: float = 0.05
    contrast: float = 1.0
    # [output]
    out_dir: str = "runs/default"

    def net_config(self) -> NetConfig:
        return NetConfig(
            stages=self.stages,
            base_channels=self.base_channels,
            num_classes=self.num_classes,
            alpha=self.alpha,
            variant=self.variant,
            input_size=(self.input_height, self.input_width),
        )

    def synthetic_spec(self, dataset_seed: int, count: int) -> SyntheticSpec:
        return SyntheticSpec(
            size=(self.input_height, self.input_width),
            num_classes=self.num_classes,
            families=("ellipse", "tube", "rings")[: max(1, self.num_classes - 1)],
            noise_sigma=self.noise_sigma,
            contrast=self.contrast,
            count=count,
            seed=dataset_seed,
        )

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "manifest" and not self.manifest_path:
            raise ConfigError("manifest source requires manifest_path")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        try:
            self.net_config().validate()
        except Exception as err:
            raise ConfigError(str(err)) from err


_SECTIONS: dict[str, dict[str, type]] = {
    "network": {
        "stages": int,
        "base_channels": int,
        "num_classes": int,
        "alpha": float,
        "variant": str,
        "input_height": int,
        "input_width": int,
    },
    "optimizer": {
        "lr": float,
        "beta1": float,
        "beta2": float,
        "eps": float,
        "grad_clip": float,
    },
    "training": {"epochs": int, "batch_size": int, "seed": int},
    "data": {
        "source": str,
        "manifest_path": str,
        "train_count": int,
        "test_count": int,
        "noise_sigma": float,
        "contrast": float,
    },
    "output": {"out_dir": str},
}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        schema = _SECTIONS[section]
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        typ = schema[key]
        try:
            setattr(cfg, key, typ(value))
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from err
    cfg.validate()
    return cfg


def parse_config_file(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)


def render_config(cfg: RunConfig) -> str:
    lines = []
    for section, schema in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key, typ in schema.items():
            value = getattr(cfg, key)
            if typ is float:
                lines.append(f"{key} = {value!r}")
            else:
                lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
