"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

Training runs are cached per session, so the full model of criterion 5 is
reused by criterion 7. Run alone with ``pytest -m acceptance -s``.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from exchangecast import memory as mem
from exchangecast import synthgen as sg
from exchangecast.adaptation import extract_exchange_rates
from exchangecast.harness import checkpoint as ck
from exchangecast.harness.ablate import VARIANTS
from exchangecast.harness.config import TrainConfig
from exchangecast.harness.data import Split, check_no_leakage, chronological_split, split_anchors
from exchangecast.harness.evaluate import evaluate, evaluate_baseline
from exchangecast.harness.train import train
from helpers import ACCEPTANCE

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
DEFAULT_BINS = 12 * sg.BINS_PER_WEEK
TESTS = Path(__file__).parent

# criterion 8 needs a test split holding a 7-day window plus a 28-day horizon
LONG_BINS = 16 * sg.BINS_PER_WEEK
LONG_SPLIT = [0.45, 0.2, 0.35]

# criterion 9: level rates reverse their order at the midpoint
SHIFT_SCALE = [2.0, 1.0, 0.5, 0.25]
SHIFT_SPLIT = [0.9, 0.05, 0.05]
PHASE_A_TEST = chronological_split(DEFAULT_BINS, [0.7, 0.1, 0.2])[2]

_datasets: dict = {}
_runs: dict = {}


def report(number, ok, detail):
    ACCEPTANCE.append((number, bool(ok), detail))
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def dataset(kind, seed):
    key = (kind, seed)
    if key not in _datasets:
        if kind == "default":
            sc = sg.default_scenario()
        elif kind in ("fast", "slow"):
            sc = sg.regime_scenario(kind)
        elif kind == "long":
            sc = sg.default_scenario(LONG_BINS)
        elif kind == "two_phase":
            scale = {p.id: SHIFT_SCALE for p in sg.default_profiles()}
            sc = sg.default_scenario(shift=sg.RegimeShift(DEFAULT_BINS // 2, scale))
        elif kind == "phase_a":
            # fresh draw of the first regime, never seen in training
            sc, seed = sg.default_scenario(), seed + 1000
        else:
            raise KeyError(kind)
        _datasets[key] = sg.simulate(sc, seed)
    return _datasets[key]


def trained(kind, seed, **overrides):
    """(TrainResult, seconds) for one configuration, trained once per session."""
    key = (kind, seed, repr(sorted(overrides.items())))
    if key not in _runs:
        cfg = TrainConfig(seed=seed, **overrides)
        t0 = time.perf_counter()
        result = train(cfg, dataset(kind, seed))
        _runs[key] = (result, time.perf_counter() - t0)
    return _runs[key]


def run_pytest(*args):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *args],
                          cwd=TESTS.parent, capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    return proc.returncode == 0, time.perf_counter() - t0, tail


def test_criterion_01_gradient_suite():
    ok, secs, tail = run_pytest(str(TESTS), "-m", "not acceptance", "-k", "gradients")
    report(1, ok and secs < 60.0, f"finite-difference gradient checks ({tail}) in {secs:.1f} s, limit 60 s")


GEOMETRY = " or ".join([
    "test_unit_project_norm_and_direction", "test_fuse_context_norm_property", "test_flow_round_trip",
    "test_fuse_memory_is_between_inputs", "test_engagement_between_heads_and_nonnegative",
    "test_softmax_normalised_and_shift_invariant", "test_ema_is_convex_combination"])


def test_criterion_02_geometry_properties():
    ok, secs, tail = run_pytest(str(TESTS), "-m", "not acceptance", "-k", GEOMETRY)
    report(2, ok, f"hypothesis geometry properties, 1000 cases each ({tail})")


CLOSED_FORMS = " or ".join([
    "test_kl_closed_forms", "test_mape_closed_forms", "test_utility_arithmetic",
    "test_exchange_value_arithmetic", "test_emotional_value_arithmetic"])


def test_criterion_03_closed_forms():
    ok, _, tail = run_pytest(str(TESTS), "-m", "not acceptance", "-k", CLOSED_FORMS)
    report(3, ok, f"closed-form oracles to 1e-12 ({tail})")


def test_criterion_04_total_correlation_oracle():
    from test_representation import histogram_mi
    from exchangecast.numcore import tensor
    from exchangecast.representation import total_correlation
    gaps, dup = [], []
    for seed in range(10):
        z = np.random.default_rng(seed).standard_normal((512, 2))
        gaps.append(float(total_correlation(tensor(z))) - histogram_mi(z[:, 0], z[:, 1]))
        dup.append(float(total_correlation(tensor(np.stack([z[:, 0], z[:, 0]], 1)))))
    gap, d = float(np.mean(gaps)), float(np.mean(dup))
    report(4, abs(gap) <= 0.1 and d > 0.5,
           f"independent batches: estimate minus histogram MI {gap:+.4f} (band 0.1); duplicated: {d:.3f} (> 0.5)")


def test_criterion_05_exchange_rate_recovery():
    planted = sg.planted_rates(sg.default_scenario())
    rhos, secs = [], []
    for seed in SEEDS:
        result, t = trained("default", seed)
        secs.append(t)
        gamma, _ = extract_exchange_rates(result.model.store)
        mask = dataset("default", seed).mask
        rhos.append([spearmanr(gamma[p, mask[p]], planted[p, mask[p]])[0] for p in range(len(mask))])
    per_platform = np.mean(rhos, axis=0)
    ids = dataset("default", 0).platforms
    detail = ", ".join(f"{p} {r:+.2f}" for p, r in zip(ids, per_platform))
    report(5, bool(np.all(per_platform >= 0.8)) and max(secs) < 600,
           f"3-seed mean Spearman per platform: {detail}; slowest run {max(secs):.0f} s")


def test_criterion_06_timescale_recovery():
    alphas = {}
    for kind in ("fast", "slow"):
        alphas[kind] = [evaluate(trained(kind, s)[0], dataset(kind, s), "test").mean_alpha() for s in SEEDS]
    gap = float(np.mean(alphas["fast"]) - np.mean(alphas["slow"]))
    report(6, gap >= 0.15, f"mean fusion gate fast {np.mean(alphas['fast']):.4f}, slow "
                           f"{np.mean(alphas['slow']):.4f}, gap {gap:+.4f} (need >= 0.15)")


def test_criterion_07_ablation_direction():
    mape = {}
    for v in VARIANTS:
        flags = {} if v == "full" else {v: True}
        mape[v] = float(np.mean([evaluate(trained("default", s, **flags)[0], dataset("default", s), "test")
                                 .engagement_mape() for s in SEEDS]))
    full = mape["full"]
    worse = all(full <= mape[v] for v in VARIANTS[1:])
    order = mape["no_dis"] - full >= mape["no_memory"] - full
    detail = ", ".join(f"{v} {m:.4f}" for v, m in mape.items())
    report(7, worse and order, f"3-seed test MAPE: {detail}")


def test_criterion_08_baseline_ordering():
    table = {}
    for H in (336, 1344):
        cfg = TrainConfig(horizon_bins=H, split=LONG_SPLIT)
        rows = {"model": [], "histavg": [], "ar": []}
        for s in SEEDS:
            ds = dataset("long", s)
            rows["model"].append(evaluate(trained("long", s, horizon_bins=H, split=LONG_SPLIT)[0], ds, "test")
                                 .engagement_mape())
            for b in ("histavg", "ar"):
                rows[b].append(evaluate_baseline(b, cfg.replace(seed=s), ds, "test").engagement_mape())
        table[H] = {k: float(np.mean(v)) for k, v in rows.items()}
    beats = all(t["model"] < t["histavg"] and t["model"] < t["ar"] for t in table.values())
    decay = {m: table[1344][m] >= table[336][m] for m in ("model", "histavg", "ar")}
    detail = "; ".join(f"{m}: 7d {table[336][m]:.4f} 28d {table[1344][m]:.4f}" for m in ("model", "histavg", "ar"))
    report(8, beats and all(decay.values()),
           f"model beats baselines at both horizons: {beats}; 28d >= 7d per method: {decay}; {detail}")


def test_criterion_09_replay_efficacy():
    scores = {}
    for lam in (0.1, 0.0):
        scores[lam] = float(np.mean([
            evaluate(trained("two_phase", s, lambda2=lam, split=SHIFT_SPLIT)[0], dataset("phase_a", s),
                     PHASE_A_TEST).engagement_mape() for s in SEEDS]))
    report(9, scores[0.1] < scores[0.0],
           f"phase-A test MAPE with replay {scores[0.1]:.4f}, without {scores[0.0]:.4f}")


def test_criterion_10_infrastructure(tmp_path):
    small = sg.simulate(sg.default_scenario(n_opinions=2), 5)
    cfg = TrainConfig(epochs=1, seed=5)
    a, b = train(cfg, small), train(cfg, small)
    same_ckpt = ck.save(a, tmp_path / "a.bin").read_bytes() == ck.save(b, tmp_path / "b.bin").read_bytes()
    same_eval = (evaluate(a, small).write_csv(tmp_path / "a.csv").read_bytes()
                 == evaluate(b, small).write_csv(tmp_path / "b.csv").read_bytes())
    round_trip = ck.save(ck.load(tmp_path / "a.bin"), tmp_path / "c.bin").read_bytes() == \
        (tmp_path / "a.bin").read_bytes()

    buf, g = mem.ReplayBuffer(), np.random.default_rng(0)
    bounded = True
    for i in range(25_000):
        mem.replay_push(buf, i, g)
        bounded &= len(buf) <= 10_000
    bounded &= all(len(r.model.replay) <= 10_000 for r, _ in _runs.values())

    counts = np.zeros(1000)
    for seed in range(5000):
        gen, res = np.random.default_rng(seed), mem.ReplayBuffer(capacity=10)
        for i in range(1000):
            mem.replay_push(res, i, gen)
        counts[res.records] += 1
    deciles = (counts / 5000).reshape(10, 100).mean(1)
    uniform = bool(np.all(np.abs(deciles - 0.01) <= 0.003))

    no_leak = True
    for n_bins, split in ((DEFAULT_BINS, [0.7, 0.1, 0.2]), (LONG_BINS, LONG_SPLIT)):
        for H in (336, 1344):
            for part in chronological_split(n_bins, split):
                try:
                    anchors = split_anchors(part, 336, H, 12)
                except Exception:
                    continue
                for anchor in anchors:
                    check_no_leakage(part, int(anchor), 336, H)
    try:
        check_no_leakage(Split("test", 100, 900), 120, 336, 336)
        no_leak = False
    except AssertionError:
        pass

    checks = {"deterministic checkpoint": same_ckpt, "deterministic eval.csv": same_eval,
              "checkpoint round trip": round_trip, "replay bound": bounded, "reservoir uniform": uniform,
              "no leakage": no_leak}
    report(10, all(checks.values()), ", ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in checks.items()))
