"""Run configuration files.

Flat ``key = value`` entries grouped in ``[train]``, ``[data]``, ``[ood]`` and
``[active]`` sections. Unknown sections or keys are errors, reported with
their line number.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .active import AlConfig
from .data import BlobSpec, Dataset, gen_blobs, load_csv, load_idx
from .ood import ODIN_EPSILONS, ODIN_TEMPERATURES
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    kind: str = "blobs"
    num_classes: int = 4
    dim: int = 2
    per_class: int = 500
    test_per_class: int = 500
    radius: float = 3.0
    means: str = ""  # "x,y; x,y; ..." overrides the ring layout
    std: float = 1.0
    noise: float = 0.1
    test_noise: float = 0.1
    seed: int = 1000
    test_seed: int = 2000
    ood_offset_stds: float = 6.0
    train_path: str = ""
    train_labels_path: str = ""
    test_path: str = ""
    test_labels_path: str = ""

    def __post_init__(self):
        if self.kind not in ("blobs", "csv", "idx"):
            raise ConfigError(f"data kind must be blobs, csv or idx, got {self.kind!r}")

    def blob_spec(self, split: str) -> BlobSpec:
        means = None
        if self.means.strip():
            means = np.array([[float(v) for v in row.split(",")] for row in self.means.split(";") if row.strip()])
        test = split == "test"
        return BlobSpec(self.num_classes, self.dim, self.test_per_class if test else self.per_class, means,
                        self.std, self.test_noise if test else self.noise,
                        self.test_seed if test else self.seed, self.radius)

    def load(self, split: str) -> Dataset:
        """``train``, ``test`` or ``ood`` (the test split shifted by ``ood_offset_stds`` stds)."""
        if split == "ood":
            if self.kind != "blobs":
                raise ConfigError("the translated OOD split is only defined for blob data")
            return self.load("test").translated(self.ood_offset_stds * self.std)
        if split not in ("train", "test"):
            raise ConfigError(f"unknown split {split!r}")
        if self.kind == "blobs":
            return gen_blobs(self.blob_spec(split), split)
        path = self.train_path if split == "train" else self.test_path
        if not path:
            raise ConfigError(f"[data] {split}_path is not set")
        if self.kind == "csv":
            return load_csv(path, split, self.num_classes)
        labels = self.train_labels_path if split == "train" else self.test_labels_path
        return load_idx(path, labels, split, self.num_classes)


@dataclass
class OodSection:
    detector: str = "msp"
    temperatures: list[float] = field(default_factory=lambda: list(ODIN_TEMPERATURES))
    epsilons: list[float] = field(default_factory=lambda: list(ODIN_EPSILONS))
    holdout_seed: int = 5000
    exclude_misclassified: bool = False


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ood: OodSection = field(default_factory=OodSection)
    active: AlConfig = field(default_factory=AlConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(TrainConfig(**d["train"]), DataConfig(**d["data"]), OodSection(**d["ood"]),
                   AlConfig(**d["active"]))


SECTIONS = {"train": TrainConfig, "data": DataConfig, "ood": OodSection, "active": AlConfig}


def _coerce(raw: str, annotation):
    text = raw.strip()
    origin = typing.get_origin(annotation)
    if origin is list:
        (inner,) = typing.get_args(annotation)
        return [_coerce(v, inner) for v in re.split(r"[,\s]+", text) if v]
    if annotation is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if annotation is int:
        return int(text)
    if annotation is float:
        return float(text)
    return text


def _line_of(lines: list[str], section: str, key: str | None) -> int:
    current = None
    for no, line in enumerate(lines, start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
        elif current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return no
    return 0


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{_line_of(lines, section, None)}: unknown section [{section}]")
        types = typing.get_type_hints(SECTIONS[section])
        known = {f.name for f in fields(SECTIONS[section])}
        for key, raw in parser.items(section):
            line = _line_of(lines, section, key)
            if key not in known:
                raise ConfigError(f"{source}:{line}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = _coerce(raw, types[key])
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: [{section}] {key}: {exc}") from None
    try:
        return RunConfig(*(SECTIONS[name](**values[name]) for name in SECTIONS))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    out = []
    for name, section in cfg.to_dict().items():
        out.append(f"[{name}]")
        for key, value in section.items():
            if isinstance(value, list):
                value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)
