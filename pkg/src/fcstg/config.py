"""Model and training hyperparameters, their text format, and ablation switches.

Config files are flat ``key = value`` lines grouped in ``[model]`` and
``[train]`` sections, so a sweep can patch a single key textually::

    [model]
    patch_size = 6
    window = 2
    delta = 0.9

Unknown keys are rejected; missing keys take the defaults below.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError

ABLATIONS = ("none", "no_fc_gc2", "no_mp", "no_pooling", "no_decay")
HEADS = ("regression", "classification")


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 6          # f
    feature_dim: int = 16        # d
    window: int = 2              # M
    stride: int = 1              # s
    delta: float = 0.9
    branches: int = 2            # B
    head: str = "classification"
    repr_dim: int = 128          # D
    ablation: str = "none"
    n_classes: int = 2
    rul_norm: bool = False       # regression output = sigmoid * dataset max_rul

    def __post_init__(self):
        validate(self)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    epochs: int = 40
    lr: float = 1e-3
    seed: int = 0
    patience: int = 0            # 0 disables early stopping

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr >= 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")


def validate(cfg: ModelConfig) -> None:
    checks = [
        ("patch_size", cfg.patch_size >= 1),
        ("feature_dim", cfg.feature_dim >= 1),
        ("window", cfg.window >= 1),
        ("stride", cfg.stride >= 1),
        ("delta", 0.0 < cfg.delta <= 1.0),
        ("branches", cfg.branches >= 1),
        ("head", cfg.head in HEADS),
        ("repr_dim", cfg.repr_dim >= 1),
        ("ablation", cfg.ablation in ABLATIONS),
        ("n_classes", cfg.head != "classification" or cfg.n_classes >= 2),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigError(f"invalid value for {name}: {getattr(cfg, name)!r}")


@dataclass(frozen=True)
class Architecture:
    """The concrete wiring an ablation switch resolves to for a given patch count."""

    window: int
    stride: int
    delta: float
    pool: bool          # average each window over its patches
    window_mean: bool   # average pooled features over windows instead of concatenating


def ablation_variant(cfg: ModelConfig, n_patches: int) -> Architecture:
    """Map a config (and its one ablation switch) to window/pool/decay settings."""
    if cfg.ablation == "no_fc_gc2":
        return Architecture(1, 1, cfg.delta, True, True)
    if cfg.ablation == "no_mp":
        return Architecture(n_patches, 1, cfg.delta, False, False)
    if cfg.ablation == "no_pooling":
        return Architecture(cfg.window, cfg.stride, cfg.delta, False, False)
    if cfg.ablation == "no_decay":
        return Architecture(cfg.window, cfg.stride, 1.0, True, False)
    return Architecture(cfg.window, cfg.stride, cfg.delta, True, False)


# ---------------------------------------------------------------------------
# text format


def _coerce(cls, section: str, raw: dict[str, str]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kind = type(known[key].default)
        try:
            if kind is bool:
                low = text.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(text)
                kwargs[key] = low in ("true", "1", "yes")
            elif kind is int:
                kwargs[key] = int(text)
            elif kind is float:
                kwargs[key] = float(text)
            else:
                value = text.strip()
                if "," in value:
                    raise ConfigError(f"{key} takes a single value, got {value!r}")
                kwargs[key] = value
        except ValueError:
            raise ConfigError(f"cannot parse {key} = {text!r} in [{section}]") from None
    return cls(**kwargs)


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig, dict[str, dict[str, str]]]:
    """Parse config text into model and train configs.

    Sections other than ``model`` and ``train`` are returned raw.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    extra = {s: dict(cp[s]) for s in cp.sections() if s not in ("model", "train")}
    model = _coerce(ModelConfig, "model", dict(cp["model"]) if cp.has_section("model") else {})
    train = _coerce(TrainConfig, "train", dict(cp["train"]) if cp.has_section("train") else {})
    return model, train, extra


def load_config(path) -> tuple[ModelConfig, TrainConfig, dict[str, dict[str, str]]]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _section(name: str, obj) -> str:
    lines = [f"[{name}]"]
    for f in fields(obj):
        lines.append(f"{f.name} = {getattr(obj, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"


def dump_config(model: ModelConfig, train: TrainConfig | None = None,
                extra: dict[str, dict[str, str]] | None = None) -> str:
    parts = [_section("model", model)]
    if train is not None:
        parts.append(_section("train", train))
    for name, kv in (extra or {}).items():
        body = "".join(f"{k} = {v}\n" for k, v in kv.items())
        parts.append(f"[{name}]\n{body}")
    return "\n".join(parts)


def with_value(model: ModelConfig, key: str, value) -> ModelConfig:
    """Copy of ``model`` with one field replaced (and re-validated)."""
    if key not in {f.name for f in fields(ModelConfig)}:
        raise ConfigError(f"unknown model key {key!r}")
    return dataclasses.replace(model, **{key: value})
