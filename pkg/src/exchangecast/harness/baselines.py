"""Classical per-stream baselines: historical average, persistence, least-squares AR(p)."""

from __future__ import annotations

import logging

import numpy as np
import torch

from .data import ForecastData, Split

log = logging.getLogger(__name__)

AR_ORDER = 8


def _series(data: ForecastData) -> np.ndarray:
    """All per-bin count series stacked as ``(O, P, 5, T)``: four levels then new posts."""
    masked = data.ds.y * data.ds.mask[None, :, None, :]
    return np.concatenate([np.moveaxis(masked, 2, 3), data.ds.n[:, :, None, :]], axis=2).astype(np.float64)


def _as_prediction(values: np.ndarray, batch: dict):
    """Split gathered ``(B, 5)`` horizon totals into model-shaped outputs."""
    v = torch.from_numpy(np.ascontiguousarray(values))
    return v[:, :4], v[:, 4], None


def histavg(data: ForecastData, train: Split):
    """Mean per-bin training count times the horizon length."""
    if train.hi <= train.lo:
        raise ValueError("histavg needs a non-empty training window")
    means = _series(data)[..., train.lo:train.hi].mean(-1) * data.horizon      # (O, P, 5)

    def predict(batch):
        return _as_prediction(means[batch["o"], batch["p"]], batch)
    return predict


def persistence(data: ForecastData):
    """Total of the last ``horizon`` observed bins (ending at the anchor)."""
    cum = np.concatenate([np.zeros(_series(data).shape[:-1] + (1,)), np.cumsum(_series(data), -1)], -1)
    H = data.horizon

    def predict(batch):
        a = batch["anchor"]
        lo = np.maximum(a + 1 - H, 0)
        span = (a + 1 - lo)[:, None]
        tot = cum[batch["o"], batch["p"], :, a + 1] - cum[batch["o"], batch["p"], :, lo]
        return _as_prediction(tot * (H / span), batch)
    return predict


def fit_ar(series: np.ndarray, order: int) -> tuple[np.ndarray, float] | None:
    """Least-squares AR(order) on the mean-centred series.

    Returns ``(coef, level)`` with coefficients newest lag first, or None if
    the design matrix is rank deficient.
    """
    T = len(series)
    if T <= order:
        return None
    level = float(series.mean())
    x = series - level
    X = np.stack([x[order - k - 1:T - k - 1] for k in range(order)], axis=1)
    if np.linalg.matrix_rank(X) < order:
        return None
    coef, *_ = np.linalg.lstsq(X, x[order:], rcond=None)
    return coef, level


def ar_forecast(history: np.ndarray, coef: np.ndarray, steps: int, level=0.0) -> np.ndarray:
    """Iterate the recursion ``steps`` times; ``history`` is ``(..., >= p)`` oldest first.

    Works on stacked series: ``coef`` broadcasts as ``(..., p)`` and ``level``
    as ``(...)``.
    """
    p = coef.shape[-1]
    level = np.asarray(level, dtype=np.float64)
    buf = (history[..., -p:] - level[..., None])[..., ::-1].copy()        # newest first
    out = np.empty(history.shape[:-1] + (steps,))
    for t in range(steps):
        nxt = (buf * coef).sum(-1)
        out[..., t] = nxt + level
        buf = np.concatenate([nxt[..., None], buf[..., :-1]], axis=-1)
    return out


def ar(data: ForecastData, train: Split, order: int = AR_ORDER):
    """Per-series AR(order) fit on the training bins, iterated over the horizon.

    Aggregates are clipped at zero. Series whose design matrix is rank
    deficient fall back to the historical average with a warning.
    """
    series = _series(data)                                          # (O, P, 5, T)
    O, P, S, _ = series.shape
    coef = np.zeros((O, P, S, order))
    level = np.zeros((O, P, S))
    fallback = np.zeros((O, P, S), dtype=bool)
    avail = np.concatenate([data.ds.mask, np.ones((P, 1), dtype=bool)], axis=1)  # (P, 5)
    for o in range(O):
        for p in range(P):
            for s in range(S):
                if not avail[p, s]:
                    continue
                fit = fit_ar(series[o, p, s, train.lo:train.hi], order)
                if fit is None:
                    log.warning("AR(%d) design rank deficient for %s/%s series %d; using histavg",
                                order, data.ds.opinions[o], data.ds.platforms[p], s)
                    fallback[o, p, s] = True
                else:
                    coef[o, p, s], level[o, p, s] = fit
    hist = histavg(data, train)
    H = data.horizon

    def predict(batch):
        o, p, a = batch["o"], batch["p"], batch["anchor"]
        idx = a[:, None] + np.arange(-order + 1, 1)[None, :]
        history = np.moveaxis(series[o[:, None], p[:, None], :, idx], 1, 2)   # (B, 5, order)
        tot = np.clip(ar_forecast(history, coef[o, p], H, level[o, p]).sum(-1), 0.0, None)
        fb = fallback[o, p]
        if fb.any():
            y_avg, n_avg, _ = hist(batch)
            tot = np.where(fb, torch.cat([y_avg, n_avg[:, None]], 1).numpy(), tot)
        return _as_prediction(tot * avail[p], batch)
    return predict


BASELINES = ("histavg", "persistence", "ar")


def make_baseline(name: str, data: ForecastData, train: Split):
    if name == "histavg":
        return histavg(data, train)
    if name == "persistence":
        return persistence(data)
    if name == "ar":
        return ar(data, train)
    raise ValueError(f"unknown baseline {name!r}; choose from {BASELINES}")
