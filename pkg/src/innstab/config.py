"""Experiment configuration: nested dataclasses with a JSON round trip."""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1
TASKS = ("denoise", "ct")


@dataclass
class DataConfig:
    image_size: int = 32
    n_train: int = 320
    n_val: int = 40
    n_test: int = 40
    seed: int = 1234
    noise_sigma: float = 25.0 / 255.0
    # CT only: network input is clip((fbp - offset) / scale, 0, 1)
    fbp_offset: float = -0.15
    fbp_scale: float = 1.0


@dataclass
class GeometryConfig:
    num_angles: int = 180
    missing_wedge: list | None = field(default_factory=lambda: [75.0, 105.0])


@dataclass
class ArchConfig:
    kind: str = "denoise"  # "denoise" (residual all-conv) or "unet"
    depth: int = 6
    channels: int = 16
    dropout: float = 0.05


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16


@dataclass
class INNConfig:
    beta: float = 1e-3
    k: int | None = None  # interval layers; None = half of the affine layers
    epochs: int = 5
    lr: float = 1e-4
    batch_size: int = 16


@dataclass
class McDropSettings:
    T: int = 128


@dataclass
class ProbOutConfig:
    epochs: int = 5
    lr: float = 1e-4
    batch_size: int = 16


@dataclass
class AttackSettings:
    lam: float = 0.5
    patch_size: int | None = None  # None: scaled from the image size
    max_iterations: int = 500
    optimizer: str = "lbfgsb"


@dataclass
class OODSettings:
    mode: str = "saltpepper"  # or "silhouette"
    amount: float = 0.1
    area_fraction: float = 0.03
    intensity: float = 1.0


@dataclass
class ExperimentConfig:
    task: str = "denoise"
    methods: list = field(default_factory=lambda: ["inn", "mcdrop", "probout"])
    data: DataConfig = field(default_factory=DataConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inn: INNConfig = field(default_factory=INNConfig)
    mcdrop: McDropSettings = field(default_factory=McDropSettings)
    probout: ProbOutConfig = field(default_factory=ProbOutConfig)
    attack: AttackSettings = field(default_factory=AttackSettings)
    ood: OODSettings = field(default_factory=OODSettings)
    master_seed: int = 0
    runs: int = 3
    n_eval: int = 30
    n_panels: int = 2
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        unknown = set(self.methods) - {"inn", "mcdrop", "probout"}
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema {self.schema_version} not supported (expected {SCHEMA_VERSION})")
        if self.n_eval > self.data.n_test:
            raise ConfigError("n_eval exceeds the test split")
        if self.mcdrop.T < 2:
            raise ConfigError("MC dropout needs T >= 2")
        if self.ood.mode not in ("saltpepper", "silhouette"):
            raise ConfigError(f"unknown OoD mode {self.ood.mode!r}")
        if self.ood.mode == "saltpepper" and not 0 < self.ood.amount <= 1:
            raise ConfigError("salt-and-pepper amount must lie in (0, 1]")
        if self.ood.mode == "silhouette" and self.ood.area_fraction <= 0:
            raise ConfigError("silhouette area fraction must be positive")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.arch.kind == "unet" and self.data.image_size % 4:
            raise ConfigError("U-Net needs an image size divisible by 4")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = cls.__dataclass_fields__[name].default_factory
        proto = default() if default is not dataclasses.MISSING else None
        kwargs[name] = _build(type(proto), value) if dataclasses.is_dataclass(proto) else value
    return cls(**kwargs)


def default_config(task: str = "denoise") -> ExperimentConfig:
    """Desk-scale defaults per task."""
    if task == "denoise":
        cfg = ExperimentConfig(task="denoise")
    elif task == "ct":
        cfg = ExperimentConfig(
            task="ct",
            data=DataConfig(image_size=64),
            arch=ArchConfig(kind="unet", channels=6, dropout=0.7),
            train=TrainConfig(epochs=20, lr=1e-3, batch_size=8),
            inn=INNConfig(beta=1e-4, epochs=5, lr=1e-4, batch_size=8),
            mcdrop=McDropSettings(T=64),
            probout=ProbOutConfig(epochs=5, lr=1e-4, batch_size=8),
            attack=AttackSettings(lam=0.0),
            ood=OODSettings(mode="silhouette"),
        )
    else:
        raise ConfigError(f"unknown task {task!r}")
    return cfg.validate()


def set_path(cfg: ExperimentConfig, dotted: str, value) -> None:
    """Override one field, e.g. ``set_path(cfg, "train.epochs", 5)``."""
    obj = cfg
    *parents, last = dotted.split(".")
    for p in parents:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
            raise ConfigError(f"unknown config field {dotted!r}")
        obj = getattr(obj, p)
    if not dataclasses.is_dataclass(obj) or not hasattr(obj, last):
        raise ConfigError(f"unknown config field {dotted!r}")
    setattr(obj, last, value)


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integers and strings."""
    ints = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
