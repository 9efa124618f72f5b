import logging

import numpy as np
import torch

from exchangecast.harness import baselines as bl
from exchangecast.harness.config import TrainConfig
from exchangecast.harness.data import ForecastData, chronological_split
from exchangecast.harness.evaluate import evaluate_baseline
from helpers import constant_dataset


def test_histavg_exact_on_constant_series():
    ds = constant_dataset()
    rep = evaluate_baseline("histavg", TrainConfig(), ds)
    assert rep.engagement_mape() == 0.0 and rep.volume_mape() == 0.0


def test_persistence_exact_on_constant_series():
    rep = evaluate_baseline("persistence", TrainConfig(), constant_dataset())
    assert rep.engagement_mape() == 0.0


def test_ar_ramp_one_step_extrapolation():
    ramp = 2.0 + 0.5 * np.arange(40)
    coef, level = bl.fit_ar(ramp, 2)
    nxt = bl.ar_forecast(ramp, coef, 1, level)
    assert abs(nxt[0] - (2.0 + 0.5 * 40)) < 1e-8
    assert np.allclose(bl.ar_forecast(ramp, coef, 5, level), 2.0 + 0.5 * np.arange(40, 45), atol=1e-8)


def test_ar_rank_deficient_falls_back(caplog):
    assert bl.fit_ar(np.full(50, 4.0), 8) is None
    assert bl.fit_ar(np.arange(5.0), 8) is None
    ds = constant_dataset()
    cfg = TrainConfig()
    with caplog.at_level(logging.WARNING, logger=bl.log.name):
        rep = evaluate_baseline("ar", cfg, ds)
    assert "rank deficient" in caplog.text
    assert rep.engagement_mape() == 0.0


def test_ar_recovers_planted_process():
    g = np.random.default_rng(0)
    x = np.zeros(4000)
    for t in range(2, 4000):
        x[t] = 0.6 * x[t - 1] - 0.2 * x[t - 2] + g.standard_normal()
    coef, level = bl.fit_ar(x + 10.0, 2)
    assert np.allclose(coef, [0.6, -0.2], atol=0.05) and abs(level - 10.0) < 0.2


def test_ar_predictions_non_negative_and_masked(small_ds):
    data = ForecastData(small_ds, 336, 336)
    train = chronological_split(small_ds.n_bins, (0.7, 0.1, 0.2))[0]
    predict = bl.ar(data, train)
    batch = data.batch(np.arange(data.n_streams), np.full(data.n_streams, 500))
    y_hat, n_hat, alpha = predict(batch)
    assert alpha is None and bool((y_hat >= 0).all()) and bool((n_hat >= 0).all())
    assert float(y_hat[~batch["mask"]].abs().sum()) == 0.0


def test_unknown_baseline(small_ds):
    data = ForecastData(small_ds, 336, 336)
    try:
        bl.make_baseline("prophet", data, chronological_split(small_ds.n_bins, (0.7, 0.1, 0.2))[0])
    except ValueError as exc:
        assert "histavg" in str(exc)
    else:
        raise AssertionError("expected ValueError")
