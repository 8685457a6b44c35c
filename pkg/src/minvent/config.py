"""Run configuration: one flat key=value file, every key also a CLI flag."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ._io import format_kv, parse_kv
from .errors import InputError
from .graph import PATTERNS, VGG16_WIDTHS, NetConfig
from .pruning import SCOPES
from .synth import DatasetManifest, SynthParams
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # dataset
    subjects: int = 103
    female: int = -1  # -1: the 53/103 cohort proportion
    windows: int = 400
    fs_hz: float = 25.0
    window_seconds: float = 60.0
    data_seed: int = 0
    split: str = "0.7,0.15,0.15"
    # per-level-unit RMS of the (wander, bursts, white) artifact components
    flow_artifact_rms: str = "0.12,0.16,0.08"
    heart_artifact_rms: str = "4.0,6.0,2.0"
    # architecture
    arch: str = ""  # path to a plain-text graph spec; empty builds the VGG layout
    width_mult: float = 1.0
    dense_units: str = "352,352"
    net_seed: int = 0
    # training
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    train_seed: int = 0
    finetune_epochs: int = 10
    # proxy pretraining
    pretrain: bool = True
    proxy_samples: int = 2000
    proxy_classes: int = 4
    proxy_epochs: int = 10
    # pruning
    sparsity: float = 0.9
    scope: str = "per-layer"
    pattern: str = "block-skip"
    skip_density: float = 0.1
    exempt: str = "auto"  # auto: blocks 1-2 and the output layer; none: prune everything
    calibration_windows: int = 0
    # evaluation
    alpha: float = 0.05

    def validate(self) -> "RunConfig":
        if self.female > self.subjects or self.female < -1:
            raise InputError(f"female must be in [0, subjects] or -1, got {self.female}")
        self.manifest().validate()
        self.synth_params()
        if self.width_mult <= 0:
            raise InputError("width_mult must be positive")
        units = self.dense_tuple()
        if any(u < 1 for u in units):
            raise InputError(f"dense_units must be positive integers, got {self.dense_units!r}")
        if self.arch and not Path(self.arch).is_file():
            raise FileNotFoundError(self.arch)
        self.train_config().validate()
        if self.proxy_samples < 10 or self.proxy_classes < 2 or self.proxy_epochs < 1:
            raise InputError("proxy task needs >= 10 samples, >= 2 classes and >= 1 epoch")
        if not 0 <= self.sparsity < 1:
            raise InputError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.scope not in SCOPES:
            raise InputError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.pattern not in PATTERNS:
            raise InputError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if not 0 <= self.skip_density <= 1:
            raise InputError("skip_density must lie in [0, 1]")
        if self.calibration_windows < 0:
            raise InputError("calibration_windows must be >= 0 (0 disables rescaling)")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        return self

    # -- derived views ----------------------------------------------------------------

    def n_female(self) -> int:
        return self.female if self.female >= 0 else int(round(self.subjects * 53 / 103))

    def manifest(self) -> DatasetManifest:
        try:
            split = tuple(float(s) for s in self.split.split(","))
        except ValueError:
            raise InputError(f"split must be three comma-separated fractions, got {self.split!r}") from None
        nf = self.n_female()
        return DatasetManifest(n_subjects=self.subjects, n_female=nf, n_male=self.subjects - nf,
                               windows_per_subject=self.windows, fs_hz=self.fs_hz,
                               window_seconds=self.window_seconds, rng_seed=self.data_seed, split=split)

    def synth_params(self) -> SynthParams:
        tables = []
        for key in ("flow_artifact_rms", "heart_artifact_rms"):
            try:
                vals = tuple(float(v) for v in getattr(self, key).split(","))
            except ValueError:
                raise InputError(f"{key} must be three comma-separated numbers") from None
            if len(vals) != 3 or any(v < 0 for v in vals):
                raise InputError(f"{key} must be three non-negative numbers, got {vals}")
            tables.append(vals)
        return SynthParams(flow_artifact_rms=tables[0], heart_artifact_rms=tables[1])

    def dense_tuple(self) -> tuple:
        try:
            return tuple(int(u) for u in self.dense_units.split(",") if u.strip())
        except ValueError:
            raise InputError(f"dense_units must be comma-separated integers, got {self.dense_units!r}") from None

    def net_config(self, input_length: int) -> NetConfig:
        return NetConfig(input_length=input_length, widths=VGG16_WIDTHS, width_mult=self.width_mult,
                         dense_units=self.dense_tuple(), seed=self.net_seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(optimizer=self.optimizer, learning_rate=self.learning_rate,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           early_stop_patience=self.patience, seed=self.train_seed,
                           finetune_epochs=self.finetune_epochs)

    def exempt_tuple(self):
        """Layer ids to keep dense; ``None`` selects the pruning default."""
        if self.exempt.strip() == "auto":
            return None
        if self.exempt.strip() in ("", "none"):
            return ()
        return tuple(s.strip() for s in self.exempt.split(",") if s.strip())

    def to_text(self) -> str:
        return format_kv((f.name, getattr(self, f.name)) for f in dataclasses.fields(self))


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw):
    kind = FIELDS[name].type
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return low in ("1", "true", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise InputError(f"config key {name!r}: cannot read {raw!r} as {kind}") from None
    return raw


def make_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """``base`` (or defaults) with ``values`` applied; unknown keys are rejected."""
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise InputError(f"unknown config key(s): {', '.join(unknown)}")
    base = base or RunConfig()
    return dataclasses.replace(base, **{k: _coerce(k, v) for k, v in values.items()})


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        values = parse_kv(path.read_text(), str(path))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return make_config(values)


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def key_name(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")

