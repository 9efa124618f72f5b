"""Train the full model and each single-component ablation on the same data and seed."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from ..synthgen import SynthDataset
from .config import ABLATIONS, TrainConfig
from .evaluate import EvalReport, evaluate
from .train import train

log = logging.getLogger(__name__)

VARIANTS = ("full",) + ABLATIONS


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    flags = {a: a == variant for a in ABLATIONS}
    return cfg.replace(**flags)


def run_ablations(cfg: TrainConfig, ds: SynthDataset, split: str = "test",
                  variants=VARIANTS) -> dict[str, EvalReport]:
    reports = {}
    for v in variants:
        log.info("ablation variant %s", v)
        result = train(variant_config(cfg, v), ds)
        reports[v] = evaluate(result, ds, split, method=v)
    return reports


def write_ablation(path, reports: dict[str, EvalReport]) -> Path:
    """``ablation.csv``: variant, engagement MAPE per platform, then their mean."""
    path = Path(path)
    platforms = next(iter(reports.values())).platforms
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *platforms, "mean"])
        for v, rep in reports.items():
            per = [rep.engagement_mape(p) for p in platforms]
            w.writerow([v, *(f"{m:.6f}" for m in per), f"{np.mean(per):.6f}"])
    return path
