"""Flat ``key = value`` configuration files."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .evaluation import EvalConfig, gaussian_kernel

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class Config:
    model: str = "conv"
    model_file: str = ""
    embedding_dim: int = 128
    grid: int = 4
    seed: int = 0
    threshold: float = 0.5
    blur_kernel: int = 11
    blur_sigma: float = 2.0
    insertion_kernel: int = 11
    insertion_sigma: float = 5.0
    steps: int = 20
    fill: str = "mean"
    perturb_both: bool = False
    mask_count: int = 256
    mask_prob: float = 0.5
    mask_seed: int = 0
    mask_cell: int = 4
    out_dir: str = "out"
    heatmap_alpha: float = 0.5
    heatmap_format: str = "ppm"
    shared_scale: bool = False
    workers: int = 1

    def validate(self) -> "Config":
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [-1, 1], got {self.threshold}")
        for name in ("embedding_dim", "grid", "steps", "mask_count", "mask_cell", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")
        if self.mask_count < 2:
            raise ConfigError(f"mask_count must be >= 2, got {self.mask_count}")
        gaussian_kernel(self.blur_kernel, self.blur_sigma)
        gaussian_kernel(self.insertion_kernel, self.insertion_sigma)
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must be in [0, 1], got {self.mask_prob}")
        if not 0.0 <= self.heatmap_alpha <= 1.0:
            raise ConfigError(f"heatmap_alpha must be in [0, 1], got {self.heatmap_alpha}")
        if self.heatmap_format not in ("ppm", "png"):
            raise ConfigError(f"heatmap_format must be ppm or png, got {self.heatmap_format!r}")
        return self

    def eval_config(self) -> EvalConfig:
        keys = {f.name for f in fields(EvalConfig)}
        return EvalConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def updated(self, **overrides) -> "Config":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None}).validate()


def _convert(name: str, raw: str, kind: type):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def parse_config(text: str, source: str = "<config>") -> Config:
    types = {f.name: type(f.default) for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return Config(**values).validate()


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
