"""Run configuration: one INI file with a section per component.

Every key has a default; a file overrides defaults and ``--section.key``
flags override the file. All problems (unknown keys, unparsable values,
violated invariants) are collected and raised together as one ConfigError.
"""
import collections.abc
import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .data import SynthConfig, file_digest
from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class ModelSection:
    """Model hyperparameters; input_dim and num_classes default to the dataset's."""
    model_dim: int = 16
    num_layers: int = 5
    num_decoders: int = 2
    heads: int = 1
    r: int = 1
    split_heads: bool = True
    cross_mode: str = "all"
    window: Optional[int] = None
    input_dim: Optional[int] = None
    num_classes: Optional[int] = None

    def build(self, input_dim=None, num_classes=None):
        kw = dataclasses.asdict(self)
        kw["input_dim"] = self.input_dim if self.input_dim is not None else input_dim
        kw["num_classes"] = self.num_classes if self.num_classes is not None else num_classes
        return ModelConfig(**kw)

    def problems(self):
        # placeholders for dims the dataset will supply
        return self.build(input_dim=1, num_classes=2).problems()


@dataclass
class SynthSection(SynthConfig):
    seed: int = 0


@dataclass
class DataSection:
    profile: str = "synthetic"
    frame_step: Optional[int] = None  # None: 2 for the 50salads profile, else 1
    train_split: str = "train"
    test_split: str = "test"

    def resolved_frame_step(self):
        from .data import default_frame_step
        return self.frame_step if self.frame_step is not None else default_frame_step(self.profile)

    def problems(self):
        if self.frame_step is not None and self.frame_step < 1:
            return [f"data.frame_step={self.frame_step!r} must be >= 1 or unset"]
        return []


@dataclass
class GradCheckSection:
    frames: int = 12
    input_dim: int = 4
    num_classes: int = 3
    num_params: int = 200
    h: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 0

    def problems(self):
        out = [f"gradcheck.{k}={getattr(self, k)!r} must be >= 1"
               for k in ("frames", "input_dim", "num_params") if getattr(self, k) < 1]
        if self.num_classes < 2:
            out.append(f"gradcheck.num_classes={self.num_classes!r} must be >= 2")
        if not self.h > 0:
            out.append(f"gradcheck.h={self.h!r} must be > 0")
        if not self.tolerance > 0:
            out.append(f"gradcheck.tolerance={self.tolerance!r} must be > 0")
        return out


@dataclass
class AblateSection:
    seeds: Sequence[int] = (0,)
    layers: Sequence[int] = (5, 6, 7, 8, 9, 10)
    # heads x model_dim rows
    heads: Sequence[str] = ("1x64", "2x64", "3x64", "4x64", "2x128")

    def head_rows(self):
        rows = []
        for item in self.heads:
            h, d = item.lower().split("x")
            rows.append((int(h), int(d)))
        return rows

    def problems(self):
        out = []
        if not self.seeds:
            out.append("ablate.seeds must list at least one seed")
        if any(n < 0 for n in self.layers):
            out.append("ablate.layers must be non-negative")
        try:
            if any(h < 1 or d < 1 for h, d in self.head_rows()):
                out.append("ablate.heads entries must be positive")
        except ValueError:
            out.append(f"ablate.heads={list(self.heads)!r} entries must look like '<heads>x<dim>'")
        return out


SECTIONS = {
    "model": ModelSection,
    "loss": LossConfig,
    "train": TrainConfig,
    "synth": SynthSection,
    "data": DataSection,
    "gradcheck": GradCheckSection,
    "ablate": AblateSection,
}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    data: DataSection = field(default_factory=DataSection)
    gradcheck: GradCheckSection = field(default_factory=GradCheckSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    def problems(self):
        out = []
        for name in SECTIONS:
            out.extend(getattr(self, name).problems())
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def replace(self, section, **changes):
        """Copy with some keys of one section changed."""
        new = dataclasses.replace(self)
        setattr(new, section, dataclasses.replace(getattr(self, section), **changes))
        return new


# ---------------------------------------------------------------- parsing

def _field_types(cls):
    return typing.get_type_hints(cls)


def _parse_scalar(tp, raw):
    if tp is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if tp is int:
        return int(raw.strip())
    if tp is float:
        return float(raw.strip())
    return raw.strip()


def parse_value(tp, raw):
    """Convert the text ``raw`` to the annotated type ``tp``."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return parse_value(inner, raw)
    if origin in (list, tuple, collections.abc.Sequence):
        item = args[0] if args else str
        return tuple(_parse_scalar(item, part) for part in raw.split(",") if part.strip())
    return _parse_scalar(tp, raw)


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def config_keys():
    """Every settable ``section.key`` with its annotated type and default."""
    out = []
    for section, cls in SECTIONS.items():
        types = _field_types(cls)
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            out.append((f"{section}.{f.name}", types[f.name], default))
    return out


def _apply(values, section, key, raw, where, problems):
    cls = SECTIONS.get(section)
    if cls is None:
        problems.append(f"{where}: unknown section [{section}]")
        return
    types = _field_types(cls)
    if key not in types:
        problems.append(f"{where}: unknown key {section}.{key}")
        return
    try:
        values[section][key] = parse_value(types[key], raw)
    except ValueError as exc:
        problems.append(f"{where}: {section}.{key}: {exc}")


def shipped_config(name):
    """Path of a config bundled with the package (``toy``, ``benchmark``, ``full``)."""
    return resources.files("cetnet") / "configs" / f"{name}.ini"


def resolve_config_path(name_or_path):
    path = Path(name_or_path)
    if path.exists():
        return path
    bundled = shipped_config(name_or_path)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError([f"config file {name_or_path!r} not found (and no bundled config of that name)"])


def load_config(path=None, overrides=None):
    """Defaults, then the INI file at ``path``, then ``overrides`` ({'section.key': text})."""
    problems = []
    values = {s: {} for s in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"{path}: {exc}"]) from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(values, section, key, raw, str(path), problems)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        _apply(values, section, key, raw, f"--{dotted}", problems)
    sections = {}
    for name, cls in SECTIONS.items():
        try:
            sections[name] = cls(**values[name])
        except (TypeError, ValueError) as exc:
            problems.append(f"[{name}]: {exc}")
            sections[name] = cls()
    cfg = RunConfig(**sections)
    problems.extend(cfg.problems())
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_ini(cfg):
    """Fully resolved config as INI text; loading it gives back ``cfg``."""
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {format_value(v)}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict  # path -> sha256
    version: str = __version__
    tool: str = "cetnet"

    @classmethod
    def build(cls, command, cfg, seed, input_files=(), base=None):
        inputs = {}
        for p in input_files:
            p = Path(p)
            key = str(p.relative_to(base)) if base is not None and Path(base) in p.parents else str(p)
            inputs[key] = file_digest(p)
        return cls(command, cfg.to_dict(), int(seed), dict(sorted(inputs.items())))

    def to_dict(self):
        return dataclasses.asdict(self)
