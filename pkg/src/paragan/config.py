"""Flat ``key = value`` run configuration with a stable content hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # toy dataset
    image_size: int = 64
    channels: int = 1
    n_per_domain: int = 200
    n_val: int | None = None
    n_test: int | None = None
    severity_lo: float = 0.35
    severity_hi: float = 0.6
    noise_sigma: float = 0.0
    data_seed: int = 0

    # auxiliary classifier (hinge-trained hyperplane)
    aux_epochs: int = 30
    aux_lr: float = 1e-3
    aux_batch_size: int = 16
    clf_width: int = 16
    geometric_distance: bool = False

    # ParaGAN
    epochs_const: int = 25
    epochs_decay: int = 25
    base_lr: float = 2e-4
    lambda_proj: float = 0.1
    lambda_cyc: float = 10.0
    batch_size: int = 1
    seed: int = 0
    base_width: int = 16
    n_res_blocks: int = 3
    d_layers: int = 3
    gen_mode: str = "non_saturating"
    update_order: str = "d_first"
    joint_g_optimizer: bool = True
    normalize_condition: bool = False
    pool_size: int = 0
    checkpoint_every: int = 0

    # downstream classifier
    alpha: float = 0.2
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    ds_epochs: int = 15
    ds_lr: float = 1e-3
    ds_batch_size: int = 8
    syn_ratio: float = 1.0
    ca: bool = True
    ca_hflip: bool = True
    ca_vflip: bool = True
    ca_crop_pad: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("epochs_const", "epochs_decay", "aux_epochs", "ds_epochs", "pool_size",
                     "checkpoint_every", "ca_crop_pad"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("batch_size", "aux_batch_size", "ds_batch_size", "n_per_domain",
                     "base_width", "clf_width", "d_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("base_lr", "aux_lr", "ds_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("lambda_proj", "lambda_cyc", "alpha", "syn_ratio", "noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.image_size < 16 or self.image_size % 4:
            raise ConfigError("image_size must be >= 16 and divisible by 4")
        if not 0 < self.severity_lo <= self.severity_hi <= 1:
            raise ConfigError("need 0 < severity_lo <= severity_hi <= 1")
        if self.gen_mode not in ("non_saturating", "literal"):
            raise ConfigError("gen_mode must be non_saturating or literal")
        if self.update_order not in ("d_first", "g_first"):
            raise ConfigError("update_order must be d_first or g_first")
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")

    @property
    def total_epochs(self) -> int:
        return self.epochs_const + self.epochs_decay

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]}")
        return cls(**d)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key: str, raw: str) -> Any:
    """Convert the text of one config value to the field's type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key}")
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    if "None" in typ and raw.lower() in ("", "none"):
        return None
    try:
        if typ.startswith("int"):
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("list"):
            return [int(tok) for tok in raw.replace(" ", "").split(",") if tok]
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, raw)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return values


def load_config(path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a flat config file; absent keys keep their defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text())
    values.update(overrides or {})
    return RunConfig.from_dict(values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(i) for i in v)
        elif v is None:
            v = "none"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
