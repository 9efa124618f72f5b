"""Chronological evaluation: per-instance masked MAPE over one split."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .. import heads as hd
from ..errors import ConfigurationError
from ..synthgen import SynthDataset
from .baselines import make_baseline
from .config import TrainConfig
from .data import ForecastData, Split, check_no_leakage, chronological_split, split_anchors, warmup_anchors
from .model import Forecaster
from .train import TrainResult, warm_up

# batch -> (y_hat (B, 4), n_hat (B,), alpha (B,) or None)
Predictor = Callable[[dict], tuple]


@dataclass
class InstanceRecord:
    instance: str
    opinion: str
    platform: str
    anchor: int
    alpha: float                     # nan when the method has no fusion gate
    level_mape: tuple                # nan at masked levels
    engagement_mape: float
    volume_mape: float


@dataclass
class EvalReport:
    method: str
    split: str
    horizon_bins: int
    platforms: list
    records: list = field(default_factory=list)

    def _select(self, platform=None):
        return [r for r in self.records if platform is None or r.platform == platform]

    def engagement_mape(self, platform=None) -> float:
        return float(np.mean([r.engagement_mape for r in self._select(platform)]))

    def volume_mape(self, platform=None) -> float:
        return float(np.mean([r.volume_mape for r in self._select(platform)]))

    def per_platform(self) -> dict[str, tuple[float, float]]:
        return {p: (self.engagement_mape(p), self.volume_mape(p)) for p in self.platforms if self._select(p)}

    def mean_alpha(self) -> float:
        vals = [r.alpha for r in self.records if not math.isnan(r.alpha)]
        return float(np.mean(vals)) if vals else math.nan

    def write_csv(self, path) -> Path:
        """``eval.csv``: one row per platform, then an ``all`` row."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["platform", "horizon_bins", "engagement_mape", "volume_mape"])
            for p, (eng, vol) in self.per_platform().items():
                w.writerow([p, self.horizon_bins, f"{eng:.6f}", f"{vol:.6f}"])
            w.writerow(["all", self.horizon_bins, f"{self.engagement_mape():.6f}", f"{self.volume_mape():.6f}"])
        return path


def resolve_split(ds: SynthDataset, cfg: TrainConfig, split) -> Split:
    if isinstance(split, Split):
        return split
    parts = {s.name: s for s in chronological_split(ds.n_bins, cfg.split)}
    if split not in parts:
        raise ConfigurationError(f"unknown split {split!r}; choose from {sorted(parts)}")
    return parts[split]


def run_protocol(data: ForecastData, split: Split, anchors: np.ndarray, predict: Predictor,
                 method: str, eps: float = 1.0) -> EvalReport:
    """Score ``predict`` on every stream at each anchor, in chronological order."""
    ds = data.ds
    report = EvalReport(method, split.name, data.horizon, list(ds.platforms))
    rows = np.arange(data.n_streams)
    for a in anchors:
        check_no_leakage(split, int(a), data.window, data.horizon)
        batch = data.batch(rows, np.full(len(rows), a))
        with torch.no_grad():
            y_hat, n_hat, alpha = predict(batch)
            y_hat, n_hat = torch.as_tensor(y_hat, dtype=torch.float64), torch.as_tensor(n_hat, dtype=torch.float64)
            terms = hd.mape_terms(y_hat, batch["y"], eps)
            eng = hd.mape_rows(y_hat, batch["y"], batch["mask"], eps)
            vol = hd.mape_terms(n_hat, batch["n"], eps)
        terms = torch.where(batch["mask"], terms, torch.full_like(terms, math.nan)).numpy()
        alpha = np.full(len(rows), math.nan) if alpha is None else alpha.detach().numpy()
        for i, (o, p) in enumerate(zip(batch["o"], batch["p"])):
            report.records.append(InstanceRecord(
                f"{ds.opinions[o]}/{ds.platforms[p]}/{int(a)}", ds.opinions[o], ds.platforms[p], int(a),
                float(alpha[i]), tuple(float(v) for v in terms[i]), float(eng[i]), float(vol[i])))
    return report


def model_predictor(model: Forecaster, data: ForecastData, first_anchor: int) -> Predictor:
    """Stateful eval-mode predictor: warms stream state, then advances per call.

    Nothing is written to the episodic bank or the replay buffer.
    """
    remap = np.array([model.platforms.index(p) for p in data.ds.platforms])
    cfg = model.cfg
    states, nbhd = model.fresh_states(data.n_streams, len(data.ds.opinions))

    def relabel(batch):
        return {**batch, "p": remap[batch["p"]]}

    warm_up(model, data, states, nbhd, warmup_anchors(first_anchor, cfg.neighborhood_bins, cfg.anchor_stride), remap)

    def predict(batch):
        batch = relabel(batch)
        rows = batch["rows"]
        pending: dict = {}
        with torch.no_grad():
            out = model.forward(batch, states.gather(rows), nbhd.means(), "eval")
        states.advance(rows, out.state, pending)
        if out.b_flow is not None:
            nbhd.push(batch["p"], out.b_flow)
        states.commit(pending)
        return out.y_hat, out.n_hat, out.alpha
    return predict


def evaluate(source, ds: SynthDataset, split="test", horizon: int | None = None,
             predictor: Predictor | None = None, method: str | None = None) -> EvalReport:
    """Evaluate a trained model (``TrainResult``/``Forecaster``) or an injected predictor.

    ``source`` supplies the configuration; with ``predictor`` given, the model
    itself is not run. The horizon must match the one used in training.
    """
    model = source.model if isinstance(source, TrainResult) else source
    cfg = model.cfg if isinstance(model, Forecaster) else source
    if not isinstance(cfg, TrainConfig):
        raise TypeError("source must be a TrainResult, Forecaster or TrainConfig")
    if horizon is not None and horizon != cfg.horizon_bins:
        raise ConfigurationError(f"model was trained for a {cfg.horizon_bins}-bin horizon, not {horizon}")
    if isinstance(model, Forecaster):
        for p in ds.platforms:
            model.platforms.index(p)           # unknown platform -> UnknownPlatformError
    data = ForecastData(ds, cfg.input_window, cfg.horizon_bins)
    part = resolve_split(ds, cfg, split)
    anchors = split_anchors(part, cfg.input_window, cfg.horizon_bins, cfg.anchor_stride)
    if predictor is None:
        if not isinstance(model, Forecaster):
            raise TypeError("a model is required when no predictor is injected")
        predictor = model_predictor(model, data, int(anchors[0]))
        method = method or "model"
    return run_protocol(data, part, anchors, predictor, method or "predictor", cfg.mape_eps)


def evaluate_baseline(name: str, cfg: TrainConfig, ds: SynthDataset, split="test") -> EvalReport:
    data = ForecastData(ds, cfg.input_window, cfg.horizon_bins)
    train_split = chronological_split(ds.n_bins, cfg.split)[0]
    return evaluate(cfg, ds, split, predictor=make_baseline(name, data, train_split), method=name)
