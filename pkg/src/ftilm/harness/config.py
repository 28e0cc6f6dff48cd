"""Run configuration, plain-text config files, and named random streams."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..decode import DecodeConfig
from ..errors import InvalidInputError
from ..factorization import FusionWeights
from ..mwer import BandConfig

# Stable ids for the named random streams; never renumber.
STREAMS = {"data": 0, "init": 1, "batch": 2, "lm_init": 3, "lm_batch": 4, "ext_lm_init": 5}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose, derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[name],)))


@dataclass
class RunConfig:
    seed: int = 0

    # synthetic corpus
    feature_dim: int = 8
    n_common: int = 12
    n_rare: int = 4
    successors: int = 3
    eos_prob: float = 0.2
    min_words: int = 3
    max_words: int = 7
    min_word_frames: int = 2
    max_word_frames: int = 3
    noise: float = 0.5
    twin_distance: float = 0.8
    rare_prob_text: float = 0.6
    rare_prob_paired: float = 0.05
    rare_threshold: float = 0.03
    n_train: int = 400
    n_dev: int = 150
    n_text: int = 4000
    n_adapt: int = 150

    # internal LM
    lm_order: int = 2
    lm_embed_dim: int = 16
    lm_hidden_dim: int = 32
    lm_steps: int = 400
    lm_lr: float = 0.5
    lm_momentum: float = 0.9

    # factorized transducer
    enc_window: int = 1
    enc_hidden_dim: int = 32
    blank_embed_dim: int = 8
    init_scale: float = 0.1
    ft_epochs: int = 20
    ft_lr: float = 0.05
    ft_momentum: float = 0.9
    batch_size: int = 16
    grad_clip: float = 5.0
    train_band: bool = False

    # decoding
    beam_size: int = 5
    alpha: float = 0.6
    beta: float = 0.6
    length_norm: bool = True
    max_symbols_per_frame: int = 5
    ext_lm_weight: float = 0.6
    ilm_subtract_weight: float = -0.2
    alpha_grid: tuple = (0.0, 0.6, 1.0, 1.3)
    beta_grid: tuple = (0.0, 0.3, 0.6, 0.9, 1.2, 1.5)

    # MWER
    mwer_epochs: int = 2
    mwer_lr: float = 0.001
    mwer_batch_size: int = 8
    mwer_split: str = "adapt"
    lambda_rnnt: float = 0.1
    left_context: int = 15
    right_context: int = 15

    def __post_init__(self):
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        self.beta_grid = tuple(float(b) for b in self.beta_grid)
        if not self.alpha_grid or not self.beta_grid:
            raise InvalidInputError("sweep grids must be non-empty")
        if self.min_words < 1 or self.max_words < self.min_words:
            raise InvalidInputError("invalid sentence length range")
        if self.min_word_frames < 1 or self.max_word_frames < self.min_word_frames:
            raise InvalidInputError("invalid word duration range")

    @property
    def weights(self) -> FusionWeights:
        return FusionWeights(self.alpha, self.beta)

    def decode_config(self, weights: FusionWeights | None = None, length_norm: bool | None = None,
                      beam_size: int | None = None, forbidden=()) -> DecodeConfig:
        return DecodeConfig(
            beam_size=self.beam_size if beam_size is None else beam_size,
            weights=self.weights if weights is None else weights,
            length_norm=self.length_norm if length_norm is None else length_norm,
            max_symbols_per_frame=self.max_symbols_per_frame,
            ext_lm_weight=self.ext_lm_weight,
            ilm_subtract_weight=self.ilm_subtract_weight,
            forbidden_tokens=tuple(forbidden),
        )

    @property
    def band(self) -> BandConfig:
        return BandConfig(self.left_context, self.right_context)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidInputError(f"{name}: expected a boolean, got {raw!r}")
    if kind is tuple:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    try:
        return kind(raw)
    except ValueError as exc:
        raise InvalidInputError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


def field_types() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def parse_overrides(pairs: dict) -> dict:
    """Convert string values keyed by field name into typed values."""
    types = field_types()
    out = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key not in types:
            raise InvalidInputError(f"unknown config key {key!r}")
        out[key] = _coerce(key, types[key], raw) if isinstance(raw, str) else raw
    return out


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return parse_overrides(pairs)


def load_config(path=None, **overrides) -> RunConfig:
    values = read_config_file(path) if path else {}
    values.update(parse_overrides({k: v for k, v in overrides.items() if v is not None}))
    return RunConfig(**values)
