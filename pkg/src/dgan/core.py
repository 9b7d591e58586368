"""Shared value types, pixel conventions and run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import torch

# Six basic expressions plus neutral; index order is the label-code order.
EXPRESSIONS = ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise")


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def check_shape(name: str, actual: Sequence[int], expected: Sequence[int | None]) -> None:
    """Raise ShapeError unless ``actual`` matches ``expected`` (None matches any size)."""
    actual = tuple(actual)
    ok = len(actual) == len(expected) and all(e is None or a == e for a, e in zip(actual, expected))
    if not ok:
        exp = "x".join("*" if e is None else str(e) for e in expected)
        act = "x".join(str(a) for a in actual)
        raise ShapeError(f"{name}: expected shape {exp}, got {act}")


def normalize_image(raw, size: int = 64) -> np.ndarray:
    """Map an HxWx3 array of 0..255 pixels onto [-1, 1] via v/127.5 - 1."""
    raw = np.asarray(raw)
    check_shape("image", raw.shape, (size, size, 3))
    return raw.astype(np.float64) / 127.5 - 1.0


def denormalize_image(t) -> np.ndarray:
    """Inverse of :func:`normalize_image`; rounds half away from zero and clamps to 0..255."""
    v = (np.asarray(t, dtype=np.float64) + 1.0) * 127.5
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def differential(x, y):
    """Elementwise ``x - y`` with no rescaling; values land in [-2, 2]."""
    if tuple(x.shape) != tuple(y.shape):
        raise ShapeError(f"differential: shapes differ, {tuple(x.shape)} vs {tuple(y.shape)}")
    return x - y


def one_hot(index: int, n: int, intensity: float = 1.0) -> np.ndarray:
    code = np.zeros(n)
    code[index] = intensity
    return code


def check_label_code(code, n: int | None = None) -> np.ndarray:
    code = np.asarray(code, dtype=np.float64).reshape(-1)
    if n is not None and code.size != n:
        raise ShapeError(f"label code: expected length {n}, got {code.size}")
    if np.any(code < 0) or np.any(code > 1):
        raise ValueError("label code entries must lie in [0, 1]")
    return code


@dataclass(frozen=True)
class RunConfig:
    image_size: int = 64
    label_count: int = len(EXPRESSIONS)
    lambda_diff: float = 0.5
    lambda_standard: float = 1.0
    lambda_recon: float = 100.0
    learning_rate: float = 0.0002
    momentum_beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    max_iterations: int | None = None
    seed: int = 0
    dropout_at_synthesis: bool = True
    dropout_rate: float = 0.5
    leak_slope: float = 0.2
    # model width knobs; 64 / auto reproduce the full-size layer table
    base_width: int = 64
    gen_depth: int | None = None
    embed_hidden: int = 256
    use_standard_d: bool = True
    use_diff_d: bool = True
    checkpoint_every: int = 1000

    def __post_init__(self):
        for name in ("lambda_diff", "lambda_standard", "lambda_recon"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.image_size < 8 or self.image_size & (self.image_size - 1):
            raise ConfigError(f"unsupported image size {self.image_size}")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")

    @property
    def depth(self) -> int:
        return self.gen_depth if self.gen_depth is not None else int(np.log2(self.image_size))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def _coerce(field: dataclasses.Field, raw: str):
    text = raw.strip()
    kind = str(field.type)
    if text.lower() == "none":
        if "None" not in kind:
            raise ConfigError(f"{field.name} cannot be none")
        return None
    if "bool" in kind:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{field.name}: not a boolean: {raw!r}")
    try:
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{field.name}: cannot parse {raw!r}") from exc
    return text


def parse_config_text(text: str, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse flat ``key = value`` lines (``#`` comments) into a RunConfig."""
    by_name = {f.name: f for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(by_name[key], raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(by_name[key], val) if isinstance(val, str) else val
    return RunConfig(**values)


def load_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config_text(text, overrides)


def make_rng(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


# fixed offsets so each parameter group gets an independent init stream
SEED_OFFSETS = {"generator": 0, "embed": 1, "d_standard": 2, "d_diff": 3, "train": 4}


def derived_seed(seed: int, role: str) -> int:
    return int(seed) * 16 + SEED_OFFSETS[role]
