"""Run configuration: defaults, ``key = value`` files and flag overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # opcode view
    window_length: int = 4
    row_cap: int = 200_000
    # image view
    image_size: int = 224
    plane_width: int = 256
    so_sections: tuple[str, ...] = (".text", ".data", ".rodata")
    # callgraph view
    permission_map: str = ""  # empty: the shipped default
    # encoders
    embed_dim: int = 256
    gcn_layers: int = 2
    gcn_hidden: int = 64
    kernel_heights: tuple[int, ...] = (3, 4, 5)
    filters: int = 64
    cnn_channels: tuple[int, ...] = (8, 16, 32, 32)
    # fusion
    mfb_k: int = 5
    mfb_o: int = 512
    mfb_dropout: float = 0.1
    attn_heads: int = 4
    attn_u: int = 256
    attn_p: int = 64
    fused_dim: int = 1024
    # classifier and training
    hidden_dims: tuple[int, ...] = (512, 256, 128, 64)
    dropout: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 20
    val_fraction: float = 0.2
    freeze_encoders: bool = False
    views: tuple[str, ...] = ("sensitivity", "context", "environment")
    seed: int = 0
    cache_dir: str = "cache"
    extract_workers: int = 1

    FEATURE_KEYS = ("window_length", "row_cap", "image_size", "plane_width", "so_sections", "permission_map")

    def __post_init__(self):
        if not 1 <= self.window_length <= 6:
            raise ConfigError(f"window_length must be in 1..6, got {self.window_length}")
        if self.image_size < 1 or self.plane_width < 1:
            raise ConfigError("image_size and plane_width must be positive")
        bad = set(self.views) - {"sensitivity", "context", "environment"}
        if bad or not self.views:
            raise ConfigError(f"unknown or empty views: {sorted(bad)}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in names:
                raise ConfigError(f"unknown config key {k!r}")
            kwargs[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)

    def feature_digest(self) -> str:
        """Digest of the settings that determine extracted features."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in self.FEATURE_KEYS}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(field_, text: str):
    default = field_.default
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{field_.name}: not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [x.strip() for x in text.split(",") if x.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(x) for x in items)
        return tuple(items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def parse_overrides(pairs: dict) -> dict:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(fields[key], str(raw))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return out


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return parse_overrides(pairs)


def load_config(path=None, **flag_overrides) -> RunConfig:
    """Defaults, then the file, then flags (flags win)."""
    values = {}
    if path:
        values.update(read_config_file(path))
    values.update({k: v for k, v in flag_overrides.items() if v is not None})
    return RunConfig(**values)
