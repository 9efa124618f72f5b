import csv

import numpy as np
import pytest
import torch

from exchangecast import adaptation as ad
from exchangecast import numcore as nc
from exchangecast.errors import ContractViolation, UnknownPlatformError
from exchangecast.representation import PlatformIndex

T = nc.tensor
P, D = 3, 5


def film_store():
    store = nc.ParamStore()
    ad.init_film(store, P, D)
    return store


def test_film_identity_and_zero_gain():
    store = film_store()
    b = T(np.random.default_rng(0).standard_normal((4, D)))
    pidx = torch.tensor([0, 2, 1, 2])
    assert torch.equal(ad.film_modulate(b, pidx, 1, store), b)
    with torch.no_grad():
        store["film.gamma"].zero_()
        store["film.beta"].copy_(T(np.arange(P * 4 * D, dtype=float).reshape(P, 4, D)))
    assert torch.equal(ad.film_modulate(b, pidx, 3, store), store["film.beta"][pidx, 3])


def test_film_platforms_differ_in_one_coordinate():
    store = film_store()
    with torch.no_grad():
        store["film.gamma"][1, 2, 3] = 1.75
    b = T(np.random.default_rng(1).standard_normal(D)).expand(2, D)
    out = ad.film_modulate(b, torch.tensor([0, 1]), 2, store)
    diff = out[0] - out[1]
    assert torch.equal(diff.nonzero().ravel(), torch.tensor([3]))
    assert abs(float(diff[3] - (1.0 - 1.75) * b[0, 3])) < 1e-15


def test_film_all_levels_matches_single_level():
    store = film_store()
    with torch.no_grad():
        store["film.gamma"].add_(T(np.random.default_rng(2).standard_normal((P, 4, D))))
    b = T(np.random.default_rng(3).standard_normal((4, D)))
    pidx = torch.tensor([2, 0, 1, 1])
    every = ad.film_all_levels(b, pidx, store)
    for lvl in range(4):
        assert torch.equal(every[:, lvl], ad.film_modulate(b, pidx, lvl, store))


def test_film_errors():
    store = film_store()
    b = torch.zeros(1, D, dtype=nc.DTYPE)
    with pytest.raises(ContractViolation):
        ad.film_modulate(b, torch.tensor([P]), 0, store)
    with pytest.raises(ContractViolation):
        ad.film_modulate(b, torch.tensor([0]), 4, store)
    with pytest.raises(UnknownPlatformError, match="tiktok"):
        ad.platform_rows(PlatformIndex(["x", "tiktok"]), ["friendster"])


def gate_store(n_heads=4, zero_gate=True, seed=0):
    store = nc.ParamStore()
    ad.init_gated_attention(store, D, 3, D, P, nc.Rng(seed), n_heads=n_heads, d_head=4)
    if not zero_gate:
        with torch.no_grad():
            store["gate_attn.head.W"].add_(T(0.3 * np.random.default_rng(seed).standard_normal((n_heads, D + P))))
    return store


def _inputs(seed=0, B=2, n=7):
    g = np.random.default_rng(seed)
    h = T(g.standard_normal((B, D)))
    kv = T(g.standard_normal((B, n, 3)))
    onehot = torch.eye(P, dtype=nc.DTYPE)[torch.tensor([0, 2])[:B]]
    return h, kv, onehot


def test_gated_multihead_zero_gates_half():
    store = gate_store()
    h, kv, oh = _inputs()
    assert torch.equal(ad.head_gates(h, oh, store), torch.full((2, 4), 0.5, dtype=nc.DTYPE))
    want = 0.5 * sum(ad.attention_heads(h, kv, kv, store))
    assert torch.allclose(ad.gated_multihead(h, kv, kv, h, oh, store), want, atol=1e-14)


def test_gated_multihead_closed_gates():
    store = gate_store()
    h, kv, oh = _inputs(1)
    out = ad.gated_multihead(h, kv, kv, h, oh, store, gate_bias=-60.0)
    assert float(out.abs().max()) < 1e-12


def test_gated_multihead_single_head():
    store = gate_store(1, zero_gate=False)
    h, kv, oh = _inputs(2)
    g = ad.head_gates(h, oh, store)
    (head,) = ad.attention_heads(h, kv, kv, store)
    assert torch.allclose(ad.gated_multihead(h, kv, kv, h, oh, store), g * head, atol=1e-15)


def test_gated_multihead_dimension_mismatch():
    store = gate_store()
    h, kv, oh = _inputs()
    with pytest.raises(ContractViolation):
        ad.gated_multihead(h, kv, kv, h, oh[:, :2], store)
    with pytest.raises(ContractViolation):
        ad.init_gated_attention(nc.ParamStore(), D, 3, D, P, nc.Rng(0), n_heads=0)


@pytest.mark.parametrize("draw", range(20))
def test_adaptation_gradients(draw):
    store = gate_store(2, zero_gate=False, seed=draw)
    ad.init_film(store, P, D)
    with torch.no_grad():
        store["film.gamma"].add_(T(0.3 * np.random.default_rng(draw).standard_normal((P, 4, D))))
    h, kv, oh = _inputs(draw, n=4)
    pidx = torch.tensor([0, 2])
    w = T(np.random.default_rng(draw + 1).standard_normal((2, 4, D)))

    def f(s):
        x = h + ad.gated_multihead(h, kv, kv, h, oh, s)
        return (ad.film_all_levels(x, pidx, s) * w).sum()
    err = nc.max_rel_error(nc.analytic_grad(f, store), nc.finite_diff_grad(f, store, 1e-5))
    assert err < 1e-4


def test_fresh_exchange_rates_are_ones(tmp_path):
    store = film_store()
    gamma, beta = ad.extract_exchange_rates(store)
    assert np.array_equal(gamma, np.ones((P, 4))) and np.array_equal(beta, np.zeros((P, 4)))
    path = ad.write_exchange_rates(tmp_path / "rates.csv", ["a", "b", "c"], gamma, beta)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["platform", "level", "gamma_mean", "beta_mean"]
    assert len(rows) == 1 + P * 4 and rows[1] == ["a", "0", "1.000000", "0.000000"]
