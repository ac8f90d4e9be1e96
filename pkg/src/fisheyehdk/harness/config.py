"""Experiment configuration: TOML files plus ``section.key=value`` overrides.

A config file has up to four tables and a top-level seed/out::

    seed = 0
    out = "runs/toy"

    [dataset]
    n_train = 24
    size = 64
    f = 50.0

    [model]
    mode = "hdk"
    channels = [16, 16, 16]
    deformable_layers = [0]

    [optim]
    epochs = 10

    [compare]
    modes = ["none", "rdc", "hdk"]
    seeds = [0, 1, 2, 3, 4]

Missing keys take the dataclass defaults below; unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..fisheye import FisheyeProfile
from ..io import atomic_write_text
from .checkpoint import config_hash
from .model import MODES


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    n_train: int = 24
    n_val: int = 8
    size: int = 64
    num_classes: int = 4
    f: float = 50.0
    coeffs: list = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    f_u: float | None = None
    noise: float = 0.08
    seed: int = 1234

    def profile(self) -> FisheyeProfile | None:
        """Lens profile, or None when ``f`` is 0 (undistorted data)."""
        if not self.f:
            return None
        return FisheyeProfile(self.f, tuple(self.coeffs), f_u=self.f_u)


@dataclass
class ModelSpec:
    mode: str = "hdk"
    channels: list = field(default_factory=lambda: [16, 16, 16])
    kernel_size: int = 3
    deformable_layers: list = field(default_factory=lambda: [0])
    placement: str | None = None  # "first" or "last": overrides deformable_layers
    num_deformable: int = 1
    curvature: float = 1.0
    m: int = 2
    connectivity: int = 4
    hdk_init: str = "xavier"
    rsgd_weights: bool = True
    freeze_hyperbolic: bool = False

    def layers(self):
        n = len(self.channels)
        if self.placement is None:
            return list(self.deformable_layers)
        k = min(self.num_deformable, n)
        if self.placement == "first":
            return list(range(k))
        if self.placement == "last":
            return list(range(n - k, n))
        raise ConfigError(f"placement must be 'first' or 'last', got {self.placement!r}")


@dataclass
class OptimSpec:
    epochs: int = 10
    batch_size: int = 4
    lr_encoder: float = 1e-3
    lr_decoder: float = 1e-2
    lr_hyperbolic: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    class_weighting: str = "inverse"
    # epochs of mode-none training on undistorted scenes before the fisheye run
    pretrain_epochs: int = 0


@dataclass
class CompareSpec:
    modes: list = field(default_factory=lambda: list(MODES))
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    compare: CompareSpec = field(default_factory=CompareSpec)

    # ----------------------------------------------------------- validation
    def validate(self) -> "ExperimentConfig":
        d, m, o = self.dataset, self.model, self.optim
        if d.size < 8 or d.size > 512:
            raise ConfigError("dataset.size must be in [8, 512]")
        if d.n_train < 1 or d.n_val < 0:
            raise ConfigError("dataset.n_train must be >= 1 and n_val >= 0")
        if not 2 <= d.num_classes <= 255:
            raise ConfigError("dataset.num_classes must be in [2, 255]")
        if len(d.coeffs) != 4:
            raise ConfigError("dataset.coeffs needs four entries")
        if d.f is not None and d.f < 0:
            raise ConfigError("dataset.f must be positive, or 0 for undistorted data")
        if d.f:
            try:
                d.profile()
            except ValueError as exc:
                raise ConfigError(f"bad distortion profile: {exc}") from exc
        if m.mode not in MODES:
            raise ConfigError(f"model.mode must be one of {MODES}")
        if not m.channels or any(int(c) < 1 for c in m.channels):
            raise ConfigError("model.channels must be a non-empty list of positive ints")
        if m.kernel_size < 1 or m.kernel_size % 2 == 0:
            raise ConfigError("model.kernel_size must be odd and positive")
        for i in m.layers():
            if not 0 <= i < len(m.channels):
                raise ConfigError(f"deformable layer {i} outside 0..{len(m.channels) - 1}")
        if m.mode != "none" and not m.layers():
            raise ConfigError(f"mode {m.mode!r} needs at least one deformable layer")
        if m.curvature <= 0:
            raise ConfigError("model.curvature must be positive")
        if m.m < 0 or d.size % (2 ** m.m):
            raise ConfigError("dataset.size must be divisible by 2**model.m")
        if m.connectivity not in (4, 8):
            raise ConfigError("model.connectivity must be 4 or 8")
        if m.hdk_init not in ("xavier", "zeros"):
            raise ConfigError("model.hdk_init must be 'xavier' or 'zeros'")
        if o.epochs < 1 or o.batch_size < 1:
            raise ConfigError("optim.epochs and optim.batch_size must be >= 1")
        if o.pretrain_epochs < 0:
            raise ConfigError("optim.pretrain_epochs must be >= 0")
        for name in ("lr_encoder", "lr_decoder", "lr_hyperbolic"):
            if getattr(o, name) <= 0:
                raise ConfigError(f"optim.{name} must be positive")
        if not 0 <= o.momentum < 1:
            raise ConfigError("optim.momentum must be in [0, 1)")
        if o.class_weighting not in ("inverse", "uniform"):
            raise ConfigError("optim.class_weighting must be 'inverse' or 'uniform'")
        if any(mode not in MODES for mode in self.compare.modes) or not self.compare.seeds:
            raise ConfigError("compare.modes must be drawn from none/rdc/hdk and seeds non-empty")
        return self

    # ---------------------------------------------------------- conversion
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        sections = {"dataset": DatasetSpec, "model": ModelSpec, "optim": OptimSpec, "compare": CompareSpec}
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                kwargs[key] = _build(sections[key], value, key)
            elif key in ("seed", "out"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kwargs)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def estimator_params(self, seed=None) -> dict:
        m, o = self.model, self.optim
        return dict(
            num_classes=self.dataset.num_classes, mode=m.mode, channels=tuple(m.channels),
            kernel_size=m.kernel_size, deformable_layers=tuple(m.layers()), curvature=m.curvature,
            m=m.m, connectivity=m.connectivity, hdk_init=m.hdk_init, rsgd_weights=m.rsgd_weights,
            freeze_hyperbolic=m.freeze_hyperbolic, epochs=o.epochs, batch_size=o.batch_size,
            lr_encoder=o.lr_encoder, lr_decoder=o.lr_decoder, lr_hyperbolic=o.lr_hyperbolic,
            momentum=o.momentum, weight_decay=o.weight_decay, poly_power=o.poly_power,
            class_weighting=o.class_weighting, random_state=self.seed if seed is None else seed,
        )


TOY_F50 = {
    "seed": 0,
    "out": "runs/toy_f50",
    "dataset": {"n_train": 24, "n_val": 8, "size": 96, "num_classes": 4, "f": 50.0},
    "model": {"mode": "hdk", "channels": [16, 16, 16], "deformable_layers": [0], "hdk_init": "zeros"},
    "optim": {"epochs": 12, "pretrain_epochs": 8, "lr_encoder": 0.02, "lr_decoder": 0.05,
              "lr_hyperbolic": 1.0},
    "compare": {"modes": ["none", "rdc", "hdk"], "seeds": [0, 1, 2, 3, 4]},
}


def _placement(where, count):
    model = dict(TOY_F50["model"], channels=[16, 16, 16, 16], placement=where, num_deformable=count)
    return dict(TOY_F50, model=model, out=f"runs/{where}_l{count}")


PRESETS = {
    "default": {},
    "toy_f50": TOY_F50,
    # deformable blocks at the start or the end of a four-block backbone
    "first_l1": _placement("first", 1),
    "first_l3": _placement("first", 3),
    "last_l1": _placement("last", 1),
    "last_l3": _placement("last", 3),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(PRESETS[name]).validate()


def _build(spec_cls, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(spec_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return spec_cls(**values)


def _coerce(text: str):
    """Parse an override value with TOML value syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``section.key=value`` (or ``seed=3``) strings and return a new config."""
    data = config.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        path = key.strip().split(".")
        target = data
        for part in path[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config section {part!r} in {item!r}")
            target = target[part]
        if path[-1] not in target:
            raise ConfigError(f"unknown config key {key!r}")
        value = _coerce(text.strip())
        if isinstance(target[path[-1]], float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        target[path[-1]] = value
    return ExperimentConfig.from_dict(data)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a TOML file (or ``preset:NAME``), apply overrides and validate."""
    if path is None:
        cfg = ExperimentConfig()
    elif str(path).startswith("preset:"):
        cfg = preset(str(path)[len("preset:"):])
    else:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = ExperimentConfig.from_dict(data)
    return apply_overrides(cfg, overrides).validate()


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def dumps_config(config: ExperimentConfig) -> str:
    data = config.to_dict()
    lines = []
    for key, value in data.items():
        if not isinstance(value, dict) and value is not None:
            lines.append(f"{key} = {_toml_value(value)}")
    for key, value in data.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"[{key}]")
            # TOML has no null; omitted keys fall back to their defaults on load
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in value.items() if v is not None)
    return "\n".join(lines) + "\n"


def save_config(config: ExperimentConfig, path):
    atomic_write_text(path, dumps_config(config))
