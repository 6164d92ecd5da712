"""Experiment configuration: YAML schema, preprocessing and SNR-policy strings.

A config file looks like::

    arch: resnet3
    preprocess: uniform:4        # none | pca:F | uniform:F | random:F[:SEED] | magrank:F | polar
    snr_policy: all              # all | single:S | pair:S1,S2 | fraction:P[:SEED]
    dataset: data/train.bin      # split at train_fraction unless test_dataset is given
    test_dataset: null
    output: runs/resnet3
    train_fraction: 0.5
    split_seed: 0
    val_fraction: 0.1
    replay: false
    train:
      batch_size: 1024
      learning_rate: 0.001
      epochs: 100
      patience: 10
      seed: 0

Unset ``train`` keys fall back to the architecture's defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..channel import SNR_GRID
from ..models import ArchKind
from ..nn.optim import TrainConfig
from ..preprocess import FACTORS

PREPROCESS_METHODS = ("none", "pca", "uniform", "random", "magrank", "polar")

# LSTM2 trains with its own batch size and step
ARCH_TRAIN_DEFAULTS = {
    ArchKind.LSTM2: {"batch_size": 400, "learning_rate": 0.0018},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessSpec:
    method: str = "none"
    factor: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.method not in PREPROCESS_METHODS:
            raise ConfigError(f"unknown preprocessing method {self.method!r}; expected one of {PREPROCESS_METHODS}")
        if self.factor not in FACTORS:
            raise ConfigError(f"reduction factor must be one of {FACTORS}, got {self.factor}")
        if self.method in ("none", "polar") and self.factor != 1:
            raise ConfigError(f"{self.method} takes no reduction factor")

    @classmethod
    def parse(cls, text: str) -> "PreprocessSpec":
        parts = str(text).strip().lower().split(":")
        method = parts[0]
        try:
            factor = int(parts[1]) if len(parts) > 1 else 1
            seed = int(parts[2]) if len(parts) > 2 else None
        except ValueError as exc:
            raise ConfigError(f"cannot parse preprocessing {text!r}") from exc
        if len(parts) > 3 or (seed is not None and method != "random"):
            raise ConfigError(f"cannot parse preprocessing {text!r}")
        if method == "random" and seed is None:
            seed = 0
        return cls(method, factor, seed)

    def __str__(self) -> str:
        if self.method in ("none", "polar"):
            return self.method
        if self.method == "random":
            return f"random:{self.factor}:{self.seed}"
        return f"{self.method}:{self.factor}"


@dataclass(frozen=True)
class SnrPolicy:
    kind: str = "all"
    snrs: tuple[int, ...] = ()
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("all", "single", "pair", "fraction"):
            raise ConfigError(f"unknown snr policy {self.kind!r}")
        want = {"all": 0, "single": 1, "pair": 2, "fraction": 0}[self.kind]
        if len(self.snrs) != want:
            raise ConfigError(f"snr policy {self.kind} takes {want} SNR value(s), got {list(self.snrs)}")
        bad = [s for s in self.snrs if s not in SNR_GRID]
        if bad:
            raise ConfigError(f"snr policy {self}: {bad} not on the grid {SNR_GRID[0]}..{SNR_GRID[-1]} step 2")
        if self.kind == "pair" and self.snrs[0] == self.snrs[1]:
            raise ConfigError(f"snr policy {self}: the pair needs two different values")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"snr policy fraction must lie in (0, 1], got {self.fraction}")

    @classmethod
    def parse(cls, text: str) -> "SnrPolicy":
        text = str(text).strip().lower()
        kind, _, rest = text.partition(":")
        if kind == "all" and not rest:
            return cls()
        try:
            if kind in ("single", "pair"):
                snrs = tuple(int(v) for v in rest.split(","))
            elif kind == "fraction":
                frac, _, seed = rest.partition(":")
                num, _, den = frac.partition("/")
                value = float(num) / float(den) if den else float(num)
                seed = int(seed) if seed else 0
            else:
                raise ValueError(kind)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"cannot parse snr policy {text!r}") from exc
        if kind == "fraction":
            return cls("fraction", (), value, seed)
        return cls(kind, snrs)

    def __str__(self) -> str:
        if self.kind == "all":
            return "all"
        if self.kind == "fraction":
            return f"fraction:{self.fraction:g}:{self.seed}"
        return f"{self.kind}:{','.join(str(s) for s in self.snrs)}"

    def select(self, snrs, cells=None) -> np.ndarray:
        """Indices of the examples this policy keeps.

        ``fraction`` keeps round(p * n) examples from every (mod, snr) cell, so
        ``cells`` (one hashable label per example) must be given for it.
        """
        snrs = np.asarray(snrs)
        if self.kind == "all":
            return np.arange(len(snrs))
        if self.kind in ("single", "pair"):
            return np.flatnonzero(np.isin(snrs, self.snrs))
        rng = np.random.default_rng(self.seed)
        cells = np.asarray(cells)
        keep = []
        for c in np.unique(cells):
            idx = np.flatnonzero(cells == c)
            keep.append(np.sort(rng.permutation(idx)[: int(round(self.fraction * idx.size))]))
        return np.sort(np.concatenate(keep)) if keep else np.zeros(0, np.int64)


def default_train_config(arch, **overrides) -> TrainConfig:
    base = dict(ARCH_TRAIN_DEFAULTS.get(ArchKind(arch), {}))
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class ExperimentConfig:
    arch: ArchKind = ArchKind.RESNET3
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    snr_policy: SnrPolicy = field(default_factory=SnrPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    test_dataset: str | None = None
    output: str | None = None
    train_fraction: float = 0.5
    split_seed: int = 0
    val_fraction: float = 0.1
    normalize: bool = True
    augment_phase: bool = True
    replay: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "preprocess": str(self.preprocess),
            "snr_policy": str(self.snr_policy),
            "train": self.train.to_dict(),
            "dataset": self.dataset,
            "test_dataset": self.test_dataset,
            "output": self.output,
            "train_fraction": self.train_fraction,
            "split_seed": self.split_seed,
            "val_fraction": self.val_fraction,
            "normalize": self.normalize,
            "augment_phase": self.augment_phase,
            "replay": self.replay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            arch = ArchKind(str(d.pop("arch", "resnet3")).lower())
        except ValueError as exc:
            raise ConfigError(f"unknown arch; expected one of {[a.value for a in ArchKind]}") from exc
        train = dict(d.pop("train", None) or {})
        try:
            train_cfg = default_train_config(arch, **train)
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            arch=arch,
            preprocess=PreprocessSpec.parse(d.pop("preprocess", "none")),
            snr_policy=SnrPolicy.parse(d.pop("snr_policy", "all")),
            train=train_cfg,
            **d,
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Replace top-level fields; ``train`` may be a dict of TrainConfig fields."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "arch" in changes and not isinstance(changes["arch"], ArchKind):
            changes["arch"] = ArchKind(str(changes["arch"]).lower())
        if "preprocess" in changes and not isinstance(changes["preprocess"], PreprocessSpec):
            changes["preprocess"] = PreprocessSpec.parse(changes["preprocess"])
        if "snr_policy" in changes and not isinstance(changes["snr_policy"], SnrPolicy):
            changes["snr_policy"] = SnrPolicy.parse(changes["snr_policy"])
        if isinstance(changes.get("train"), dict):
            changes["train"] = replace(self.train, **changes["train"])
        return replace(self, **changes)

    @property
    def digest(self) -> str:
        """SHA-256 over everything that influences results (paths and replay flag excluded)."""
        d = self.to_dict()
        for key in ("dataset", "test_dataset", "output", "replay"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return ExperimentConfig.from_dict(data or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


__all__ = [
    "ARCH_TRAIN_DEFAULTS", "ConfigError", "ExperimentConfig", "PREPROCESS_METHODS", "PreprocessSpec",
    "SnrPolicy", "default_train_config", "dump_config", "load_config",
]
