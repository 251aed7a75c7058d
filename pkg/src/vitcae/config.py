"""Training configuration and its flat ``key = value`` file format.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Every key is a :class:`TrainConfig` field; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import PatchConfig
from .dynamics import FreezePolicy
from .errors import ConfigError
from .latent import LossWeights


@dataclass(frozen=True)
class TrainConfig:
    # architecture
    image_h: int = 16
    image_w: int = 16
    channels: int = 3
    patch_size: int = 4
    embed_dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 4
    d_global: int = 32
    d_local: int = 8
    pt_hidden: int = 128
    pt_layers: int = 3
    # objective
    lambda_l1: float = 0.1
    lambda_l2: float = 0.9
    lambda_cls: float = 1.0
    lambda_pt: float = 1.0
    lambda_pt_disc: float = 0.1
    alpha_mix: float = 0.9999
    warmup_epochs: int = 5
    mmd_c: float = 1.0
    # head control
    temperature_schedule: bool = True
    alpha_temp: float = 1.0
    eps_eig: float = 1e-6
    ground_metric: str = "index"
    drift_threshold: float = 0.01
    drift_window: int = 3
    kappa_window: int = 5
    min_epoch: int | None = None
    # optimisation
    batch_size: int = 64
    epochs: int = 40
    lr: float = 1e-3
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    mask_prob: float = 0.25  # share of samples trained with half their patches masked
    precision: str = "float64"
    # data and run
    seed: int = 0
    dataset: str = "shapes"
    dataset_size: int = 512
    heldout_size: int = 64
    probe_size: int = 32
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.patch_config()  # validates geometry
        self.loss_weights()
        self.freeze_policy()
        positive = ("dec_layers", "ffn_mult", "d_global", "d_local", "pt_hidden", "pt_layers",
                    "batch_size", "probe_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.mmd_c <= 0:
            raise ConfigError("mmd_c must be positive")
        if self.alpha_temp <= 0:
            raise ConfigError("alpha_temp must be positive")
        if self.eps_eig <= 0:
            raise ConfigError("eps_eig must be positive")
        if self.ground_metric not in ("index", "grid"):
            raise ConfigError("ground_metric must be 'index' or 'grid'")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be 'float32' or 'float64'")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError("mask_prob must lie in [0, 1]")
        if self.lr <= 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ConfigError("lr and grad_clip must be positive, weight_decay non-negative")
        if not 0.0 < self.plateau_factor <= 1.0 or self.plateau_patience < 0:
            raise ConfigError("plateau_factor must lie in (0, 1] and plateau_patience >= 0")
        if self.dataset_size < 2 or self.heldout_size < 1:
            raise ConfigError("dataset_size must be >= 2 and heldout_size >= 1")

    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.image_h, self.image_w, self.channels, self.patch_size,
                           self.embed_dim, self.n_heads, self.n_layers)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_l1, self.lambda_l2, self.lambda_cls, self.lambda_pt,
                           self.lambda_pt_disc, self.alpha_mix, self.warmup_epochs)

    def freeze_policy(self) -> FreezePolicy:
        min_epoch = self.warmup_epochs + 1 if self.min_epoch is None else self.min_epoch
        try:
            return FreezePolicy(self.drift_threshold, self.drift_window, self.kappa_window, min_epoch)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _default(name: str):
    return _FIELDS[name].default


def _parse_value(key: str, raw: str):
    default = _default(key)
    raw = raw.strip()
    try:
        if key == "min_epoch":
            return None if raw.lower() in ("auto", "none", "") else int(raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), **overrides)


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)
