"""Model and run configuration, stored as flat ``key: value`` text.

The file syntax is deliberately the same as a plain hyperparameter listing::

    patch_size: [8, 8]
    vq_in_ts: True,
    dropout: 0.4

A trailing comma after a value is tolerated. Unknown keys are rejected.
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    patch_size: list = field(default_factory=lambda: [8, 8])
    image_size: list = field(default_factory=lambda: [64, 64])
    ctx_channels: int = 1
    ts_channels: int = 1
    pe_type: str = "rope"
    use_glu: bool = True
    freq_type: str = "lucidrains"
    max_freq: int = 128
    ctx_masking_ratio: float = 0.99
    ts_masking_ratio: float = 0.0
    dim: int = 64
    depth: int = 12
    heads: int = 8
    mlp_ratio: int = 4
    dim_head: int = 64
    dropout: float = 0.4
    num_mlp_heads: int = 1
    decoder_dim: int = 128
    decoder_depth: int = 4
    decoder_heads: int = 6
    decoder_dim_head: int = 128
    vq_in_ts: bool = True
    vq_in_ctx: bool = True
    vq_in_guide: bool = False
    # horizon and covariates
    T_in: int = 24
    T_out: int = 24
    aux_channels: int = 15
    # vector quantization
    codebook_size: int = 128
    num_quantizers: int = 2
    vq_decay: float = 0.99
    vq_eps: float = 1e-5
    commitment_weight: float = 0.25
    commit_weight_ctx: float = 1.0
    commit_weight_ts: float = 1.0
    commit_weight_aux: float = 1.0
    dead_code_threshold: int = 100
    reseed_dead_codes: bool = True
    # ablation switches
    use_ts: bool = True
    use_ctx: bool = True
    use_aux: bool = True
    masking: bool = True

    def validate(self) -> ModelConfig:
        ph, pw = self.patch_size
        h, w = self.image_size
        if h % ph or w % pw:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % 2:
            raise ConfigError(f"dim must be even, got {self.dim}")
        if self.dim_head % 4 or self.decoder_dim_head % 2:
            raise ConfigError("dim_head must be divisible by 4 and decoder_dim_head by 2 for rotary tables")
        for key in ("ctx_masking_ratio", "ts_masking_ratio"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.T_in != self.T_out:
            raise ConfigError(f"T_in ({self.T_in}) must equal T_out ({self.T_out}) for hour-aligned fusion")
        if not (self.use_ts or self.use_aux):
            raise ConfigError("at least one of use_ts / use_aux is required")
        if self.pe_type != "rope":
            raise ConfigError(f"pe_type {self.pe_type!r} unsupported (only 'rope')")
        if self.num_mlp_heads != 1:
            raise ConfigError("num_mlp_heads other than 1 is not supported")
        return self


@dataclass
class RunConfig(ModelConfig):
    data_dir: str = "data"
    out_dir: str = "runs"
    seed: int = 42
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 16
    weight_decay: float = 0.05
    split_mode: str = "chronological"
    threads: int = 1
    select_best: bool = True  # keep the epoch with the lowest validation MAE
    eval_every: int = 10

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def validate(self) -> RunConfig:
        super().validate()
        if self.split_mode not in ("chronological", "by-plant"):
            raise ConfigError(f"split_mode must be 'chronological' or 'by-plant', got {self.split_mode!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0 or self.eval_every < 1:
            raise ConfigError("batch_size >= 1, epochs >= 0, lr > 0 and eval_every >= 1 required")
        return self


def _parse_value(text: str):
    text = text.strip()
    if text.endswith(","):
        text = text[:-1].rstrip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [int(v) for v in value]
    return str(value)


def parse_text(text: str, cls=RunConfig, base=None):
    """Parse ``key: value`` lines over the defaults of ``cls`` (or over ``base``)."""
    cfg = dataclasses.replace(base) if base is not None else cls()
    known = {f.name for f in fields(cls)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"line {lineno}: expected 'key: value', got {raw!r}")
        key, val = line.split(":", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, _parse_value(val), getattr(cfg, key)))
    return cfg


def apply_overrides(cfg, overrides: dict):
    known = {f.name for f in fields(cfg)}
    for key, val in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, _coerce(key, _parse_value(val) if isinstance(val, str) else val, getattr(cfg, key)))
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(str(v) for v in value) + "]"
    if isinstance(value, str):
        return value
    return str(value)


def dump_text(cfg) -> str:
    return "".join(f"{f.name}: {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load(path, cls=RunConfig):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_text(text, cls)


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` under a root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


def config_digest(cfg) -> str:
    return hashlib.sha256(dump_text(cfg).encode()).hexdigest()[:16]
