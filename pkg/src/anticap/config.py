"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # sample layout
    k: int = 4
    concepts_per_image: int = 10
    M: int = 6
    L: int = 12
    N: int = 16
    d: int = 32
    feature_dim: int = 64
    # graph and decoding choices
    two_hop_mode: str = "ball"
    scorer_mode: str = "cosine"
    decode_mode: str = "iterative"
    # frozen decoder
    decoder_blocks: int = 2
    decoder_heads: int = 4
    decoder_head_scale: float = 4.0
    max_positions: int = 256
    gat_dropout: float = 0.0
    pretrain_epochs: int = 120
    pretrain_lr: float = 2e-3
    pretrain_m: int = 6
    # seeds
    corpus_seed: int = 0
    init_seed: int = 0
    decoder_seed: int = 0
    embed_seed: int = 0
    # optimization
    optimizer: str = "adam"
    lr: float = 1e-3
    batch: int = 8
    epochs: int = 300
    target_loss: float = 0.0
    # corpus
    corpus_size: int = 32
    test_size: int = 16
    pretrain_size: int = 512
    eval_split: str = "test"
    ablate_m: tuple[int, ...] = (0, 6)
    # paths, resolved against the config file's directory
    edge_dump: Path = Path("conceptnet.tsv")
    corpus: Path = Path("corpus")
    checkpoint: Path = Path("model.ckpt")
    report_dir: Path = Path("reports")
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("k", "concepts_per_image", "L", "N", "d", "feature_dim", "decoder_blocks",
                    "decoder_heads", "max_positions", "batch", "corpus_size", "test_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.M < 0 or self.pretrain_m < 0:
            raise ConfigError(f"M must be >= 0, got {self.M}")
        if min(self.epochs, self.lr, self.pretrain_epochs, self.pretrain_lr) < 0:
            raise ConfigError("epochs and learning rates must be non-negative")
        if any(m < 0 for m in self.ablate_m):
            raise ConfigError("ablate_m entries must be >= 0")
        if self.N < self.k:
            raise ConfigError("need at least one ROI per image (N >= k)")
        if self.d % self.decoder_heads:
            raise ConfigError("d must be divisible by decoder_heads")
        if not 0.0 <= self.gat_dropout < 1.0:
            raise ConfigError("gat_dropout must lie in [0, 1)")
        choices = {
            "two_hop_mode": ("ball", "exact"),
            "scorer_mode": ("cosine", "linear-head"),
            "decode_mode": ("iterative", "one-shot"),
            "optimizer": ("adam", "sgd"),
            "eval_split": ("train", "test"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        longest = self.L + 2 + self.k * self.concepts_per_image + max((self.M, self.pretrain_m, *self.ablate_m)) + self.N
        if longest > self.max_positions:
            raise ConfigError(f"prompt length {longest} exceeds max_positions={self.max_positions}")

    def path(self, name: str) -> Path:
        p = getattr(self, name)
        return p if p.is_absolute() else self.base_dir / p

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            out[f.name] = str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v
        return out


_FIELDS = {f.name: f for f in fields(PipelineConfig) if f.name != "base_dir"}


def _coerce(name: str, raw: str):
    default = PipelineConfig.__dataclass_fields__[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if isinstance(default, Path):
            return Path(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_pairs(pairs) -> dict:
    values = {}
    for lineno, line in pairs:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Read a config file (or defaults when ``path`` is None) and apply ``key=value`` overrides."""
    values = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        with open(path, encoding="utf-8") as fh:
            values.update(parse_pairs(enumerate(fh, 1)))
        base = path.parent
    values.update(parse_pairs((f"override {i}", o) for i, o in enumerate(overrides, 1)))
    return PipelineConfig(**values, base_dir=base)


PROFILE_DIR = Path(__file__).parent / "profiles"


def profile_path(name: str) -> Path:
    return PROFILE_DIR / f"{name}.cfg"
