"""Training configuration (JSON-backed)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError
from ..heads import LossWeights

HORIZONS = (336, 1344)
ABLATIONS = ("no_film", "no_dis", "no_belief", "no_memory")


@dataclass
class TrainConfig:
    dataset: str = ""
    variant: str = "ssm_lite"
    epochs: int = 5
    batch_size: int = 21
    lr: float = 1e-3
    lr_fast: float = 1e-2
    lr_slow: float = 1e-4
    momentum: float = 0.9
    grad_clip: float | None = 10.0
    beta: float = 1.0
    lambda_dis: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.1
    mape_eps: float = 1.0
    d_factor: int = 16
    d_hidden: int = 32
    d_ctx: int = 48
    d_ctx_hidden: int = 64
    d_s: int = 48
    d_m: int = 32
    n_heads: int = 4
    bank_size: int = 128
    replay_capacity: int = 10_000
    neighborhood_bins: int = 336
    seed: int = 0
    horizon_bins: int = 336
    input_window: int = 336
    anchor_stride: int = 12
    split: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    no_film: bool = False
    no_dis: bool = False
    no_belief: bool = False
    no_memory: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in ("ssm_lite", "attn_lite"):
            raise ConfigurationError(f"variant must be ssm_lite or attn_lite, got {self.variant!r}")
        if self.horizon_bins not in HORIZONS:
            raise ConfigurationError(f"horizon_bins must be one of {HORIZONS}, got {self.horizon_bins}")
        if self.input_window != 336:
            raise ConfigurationError("input_window is fixed at 336 bins (7 days)")
        if self.epochs < 1 or self.batch_size < 1 or self.anchor_stride < 1:
            raise ConfigurationError("epochs, batch_size and anchor_stride must be positive")
        if min(self.lr, self.lr_fast, self.lr_slow) <= 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("learning rates must be positive and momentum in [0, 1)")
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigurationError(f"split fractions must be three positive values summing to 1, got {self.split}")
        if self.d_s % 2:
            raise ConfigurationError("d_s must be even (coupling flow splits it in half)")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(self.beta, self.lambda_dis, 0.0 if self.no_dis else self.lambda1,
                               self.lambda2, self.mape_eps)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    @property
    def ablation(self) -> str:
        on = [a for a in ABLATIONS if getattr(self, a)]
        return "+".join(on) if on else "full"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
