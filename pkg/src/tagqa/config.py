"""Model/training configuration and its plain-text ``key=value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

CONFIG_KEYS = (
    "d", "layers", "heads", "k_cap", "m_cap", "n_cap", "t_cap", "dropout",
    "lr", "batch_size", "max_iters", "lr_decay_steps", "lr_decay_factor", "seed",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    # architecture (desk-scale defaults; the full-size setting is d=768,
    # layers=4, heads=12, k_cap=220, m_cap=100, n_cap=100, t_cap=30)
    d: int = 64
    layers: int = 2
    heads: int = 4
    k_cap: int = 40
    m_cap: int = 8
    n_cap: int = 12
    t_cap: int = 12
    dropout: float = 0.1
    # training
    lr: float = 1e-3
    batch_size: int = 32
    max_iters: int = 2000
    lr_decay_steps: tuple[int, ...] = (1200, 1600)
    lr_decay_factor: float = 0.1
    seed: int = 0
    # fixed feature widths, not part of the config file
    appearance_dim: int = 32
    lex_dim: int = 64
    max_answer_words: int = 20

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        for key in ("k_cap", "m_cap", "n_cap", "t_cap", "layers", "heads", "d"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        object.__setattr__(self, "lr_decay_steps", tuple(int(s) for s in self.lr_decay_steps))

    @property
    def ffn_dim(self) -> int:
        return 4 * self.d

    @property
    def seq_len(self) -> int:
        return self.k_cap + self.m_cap + self.n_cap + self.t_cap

    def with_(self, **changes) -> ModelConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lr_decay_steps"] = list(self.lr_decay_steps)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if k == "lr_decay_steps" else v) for k, v in d.items() if k in known})


_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "lr_decay_steps":
            return tuple(int(s) for s in raw.replace(",", " ").split())
        if key in ("dropout", "lr", "lr_decay_factor"):
            return float(raw)
        return int(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from None


def parse_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return replace(base or ModelConfig(), **values)


def load_config(path, base: ModelConfig | None = None) -> ModelConfig:
    return parse_config(Path(path).read_text(), base)


def format_config(cfg: ModelConfig) -> str:
    lines = []
    for key in CONFIG_KEYS:
        v = getattr(cfg, key)
        if key == "lr_decay_steps":
            v = ",".join(str(s) for s in v)
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"
