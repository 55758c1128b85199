"""Workbench configuration: one JSON file with a section per module.

Every run echoes its full resolved configuration into the run directory, so
any result can be reproduced from (config, seed) alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .culture import CultureConfig
from .dsp import DetectorConfig
from .esn import EsnConfig


@dataclass(frozen=True)
class ReadoutConfig:
    epochs: int = 1000
    lr0: float = 0.01
    batch_size: int = 8
    standardize: bool = False
    lr_decay_epochs: float = 250.0
    k_folds: int = 5

    def train_kwargs(self) -> dict:
        return {"epochs": self.epochs, "lr0": self.lr0, "batch_size": self.batch_size,
                "standardize": self.standardize, "lr_decay_epochs": self.lr_decay_epochs}


@dataclass(frozen=True)
class ProtocolConfig:
    repetitions_per_pattern: int = 20
    isi_s: float = 10.0             # bookkeeping only; relaxation is simulated as warm-up
    n_replicates: int = 3
    n_days: int = 3
    W_ms: float | None = None       # None = family default (5 ms, 10 ms for images)
    pre_ms: float = 50.0
    post_ms: float = 60.0
    mask_margin: int = 2
    V_thr_uV: float = 500.0
    w_thr: float = 25.0
    drift_rewire_frac: float = 0.15
    drift_weight_jitter_cv: float = 0.2
    noise_windows: int = 21
    noise_window_ms: float = 100.0
    # image-family settings
    mnist_images_path: str | None = None
    mnist_labels_path: str | None = None
    mnist_subset: int = 200
    mnist_repetitions: int = 1
    mnist_target_res: int = 16
    mnist_region_origin: tuple = (24, 16)
    mnist_invert: bool = False      # set for raw files that store ink as high values

    def validate(self) -> None:
        if self.repetitions_per_pattern < 20:
            raise ValueError("repetitions_per_pattern must be at least 20")
        if self.n_days < 1 or self.n_replicates < 1:
            raise ValueError("n_replicates and n_days must be at least 1")
        if self.pre_ms < 0 or self.post_ms <= 0:
            raise ValueError("recording windows must be positive")
        if self.mnist_repetitions < 1:
            raise ValueError("mnist_repetitions must be at least 1")


@dataclass(frozen=True)
class WorkbenchConfig:
    seed: int = 42
    culture: CultureConfig = field(default_factory=CultureConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    esn: EsnConfig = field(default_factory=EsnConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)

    def validate(self) -> None:
        self.culture.validate()
        self.esn.validate()
        self.protocol.validate()

    def to_dict(self) -> dict:
        def section(obj):
            d = dataclasses.asdict(obj)
            return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
        return {
            "seed": self.seed,
            "culture": section(self.culture),
            "detector": section(self.detector),
            "esn": section(self.esn),
            "protocol": section(self.protocol),
            "readout": section(self.readout),
        }


_SECTIONS = {
    "culture": CultureConfig,
    "detector": DetectorConfig,
    "esn": EsnConfig,
    "protocol": ProtocolConfig,
    "readout": ReadoutConfig,
}

_TUPLE_FIELDS = {"artifact_sharp_uV", "artifact_long_uV", "mnist_region_origin"}


def config_from_dict(doc: dict) -> WorkbenchConfig:
    kwargs = {"seed": doc.get("seed", 42)}
    for name, cls in _SECTIONS.items():
        body = dict(doc.get(name, {}))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(body) - known
        if unknown:
            raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
        for key in list(body):
            if key in _TUPLE_FIELDS and isinstance(body[key], list):
                body[key] = tuple(body[key])
        kwargs[name] = cls(**body)
    cfg = WorkbenchConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> WorkbenchConfig:
    with open(path, encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(path, cfg: WorkbenchConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
