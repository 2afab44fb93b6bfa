"""Run configuration: one flat key=value section per pipeline stage.

Unknown sections or keys are rejected; the resolved configuration is
serialized into every manifest and report for provenance.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_args, get_origin


class ConfigError(ValueError):
    """Unknown or ill-typed configuration entry."""


@dataclass
class RunSection:
    views: tuple[str, ...] = ("lax+sax", "lax")  # view configurations to train/evaluate


@dataclass
class CohortSection:
    count: int = 200
    n_frames: int = 16
    detail: int = 2
    n_modes: int = 8
    pca_cohort: int = 40
    train: int = 140
    validation: int = 30
    test: int = 30
    seed: int = 7


@dataclass
class DatasetSection:
    image_size: int = 64
    fov_mm: float = 160.0
    noise_sigma: float = 0.05
    blur_sigma: float = 0.0
    seed: int = 11


@dataclass
class ImageAeSection:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    kappa: float = 1e-4
    latent_dim: int = 16
    conv_channels: tuple[int, ...] = (8, 16, 32)
    hidden: int = 64
    seed: int = 21


@dataclass
class MeshAeSection:
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    kappa: float = 1e-4
    latent_dim: int = 16
    gc_width: int = 32
    vertex_feat: int = 8
    hidden: int = 64
    coord_scale: float = 0.02
    delta_scale: float = 0.1
    disp_scale: float = 10.0
    seed: int = 22


@dataclass
class EfSection:
    epochs: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    hidden: tuple[int, ...] = (32, 16)
    structure: str = "LV"
    seed: int = 23


@dataclass
class MappingSection:
    max_epochs: int = 150
    patience: int = 10
    batch_size: int = 16
    lr_generator: float = 1e-3
    lr_discriminator: float = 1e-3
    hidden: int = 64
    n_layers: int = 3
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 10.0
    beta4: float = 10.0
    seed: int = 24


@dataclass
class EvalSection:
    asd_mode: str = "gt_to_mesh"
    surface_samples: int = 2000
    icp_max_iters: int = 30
    icp_tol: float = 1e-6
    refine_iters: int = 10
    n_frames_out: int = 0  # 0 keeps the input frame count
    seed: int = 25


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    cohort: CohortSection = field(default_factory=CohortSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    image_ae: ImageAeSection = field(default_factory=ImageAeSection)
    mesh_ae: MeshAeSection = field(default_factory=MeshAeSection)
    ef: EfSection = field(default_factory=EfSection)
    mapping: MappingSection = field(default_factory=MappingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def _parse_value(raw: str, annotation, where: str):
    origin = get_origin(annotation)
    if origin is tuple:
        item_type = get_args(annotation)[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_parse_value(p, item_type, where) for p in parts)
    if annotation is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected integer, got {raw!r}") from exc
    if annotation is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{where}: expected float, got {raw!r}") from exc
    if annotation is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{where}: expected boolean, got {raw!r}")
    if annotation is str:
        return raw.strip()
    raise ConfigError(f"{where}: unsupported option type {annotation}")


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def default_config() -> RunConfig:
    return RunConfig()


def _hints(section) -> dict[str, object]:
    import typing

    return typing.get_type_hints(type(section))


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply ``section.key=value`` strings onto a config."""
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section_name, key = dotted.split(".", 1)
        sections = config.sections()
        if section_name not in sections:
            raise ConfigError(f"unknown config section {section_name!r}")
        section = sections[section_name]
        hints = _hints(section)
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
        setattr(section, key, _parse_value(raw, hints[key], f"{section_name}.{key}"))
    return config


def load_config(path: str | Path) -> RunConfig:
    """Parse a config file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text, source=str(path))
    config = RunConfig()
    sections = config.sections()
    for section_name in parser.sections():
        if section_name not in sections:
            raise ConfigError(f"unknown config section [{section_name}]")
        section = sections[section_name]
        hints = _hints(section)
        for key, raw in parser.items(section_name):
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
            setattr(section, key, _parse_value(raw, hints[key], f"{section_name}.{key}"))
    return config


def config_text(config: RunConfig) -> str:
    """Canonical INI serialization of a resolved config."""
    out = io.StringIO()
    for name, section in config.sections().items():
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(section):
            out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_text(config), encoding="utf-8")
