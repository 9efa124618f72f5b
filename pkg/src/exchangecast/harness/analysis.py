"""Post-hoc analyses of trained models: fusion-gate weights and FiLM exchange rates."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .. import adaptation as ad
from .evaluate import EvalReport
from .model import Forecaster

CENTROID = "centroid"


def memory_weight_rows(report: EvalReport, threshold: float = 0.10) -> list[tuple[str, int, float]]:
    """``(instance, level, alpha)`` for well-predicted instances, then per-level centroids.

    An instance qualifies when its engagement MAPE is below ``threshold``; it
    contributes one row per available level. Instances without a fusion gate
    are skipped.
    """
    rows = []
    for r in report.records:
        if math.isnan(r.alpha) or not r.engagement_mape < threshold:
            continue
        rows += [(r.instance, lvl, r.alpha) for lvl, m in enumerate(r.level_mape) if not math.isnan(m)]
    levels = sorted({lvl for _, lvl, _ in rows})
    centroids = [(CENTROID, lvl, float(np.mean([a for _, l, a in rows if l == lvl]))) for lvl in levels]
    return rows + centroids


def write_memory_weights(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "level", "alpha"])
        for inst, lvl, a in rows:
            w.writerow([inst, lvl, f"{a:.6f}"])
    return path


def write_exchange_rates(path, model: Forecaster) -> Path:
    if model.cfg.no_film:
        raise ValueError("model was trained without FiLM; there are no exchange rates to extract")
    gamma, beta = ad.extract_exchange_rates(model.store)
    return ad.write_exchange_rates(path, model.platforms.ids, gamma, beta)
