import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from exchangecast import numcore as nc
from exchangecast import representation as rep
from exchangecast.errors import ContractViolation, DegenerateInputError, UnknownPlatformError

T = nc.tensor


def make_store(seed=0, **kw):
    cfg = rep.RepresentationConfig(d_content=8, d_platform=7, d_time=5, **kw)
    store = nc.ParamStore()
    rep.init_representation(store, cfg, nc.Rng(seed))
    return store, cfg


def histogram_mi(x, y, bins=12):
    """Plug-in mutual information of a 2-d sample with the Miller-Madow correction."""
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    n = joint.sum()
    pxy = joint / n
    px, py = pxy.sum(1), pxy.sum(0)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz])).sum())
    # Miller-Madow: each entropy is biased low by (occupied cells - 1) / 2n
    k_xy, k_x, k_y = nz.sum(), (px > 0).sum(), (py > 0).sum()
    return mi + (k_x + k_y - k_xy - 1) / (2 * n)


def test_encode_eval_returns_mean():
    store, _ = make_store()
    x = T(np.random.default_rng(0).standard_normal((6, 8)))
    post, z = rep.encode_factor("content", x, store, "eval")
    assert torch.equal(z, post.mu)


def test_encode_train_small_variance_stays_near_mean():
    store, _ = make_store()
    with torch.no_grad():
        store["enc.time.logvar.b"].fill_(-10.0)
    x = T(np.random.default_rng(1).standard_normal((100, 5)))
    post, z = rep.encode_factor("time", x, store, "train", nc.Rng(3))
    dist = torch.linalg.vector_norm(z - post.mu, dim=-1)
    bound = 1e-2 * torch.linalg.vector_norm(post.mu, dim=-1) + 0.05
    assert bool((dist <= bound).all())


def test_encode_train_deterministic_per_seed():
    store, _ = make_store()
    x = T(np.random.default_rng(2).standard_normal((4, 7)))
    _, z1 = rep.encode_factor("platform", x, store, "train", nc.Rng(11))
    _, z2 = rep.encode_factor("platform", x, store, "train", nc.Rng(11))
    assert torch.equal(z1, z2)


def test_encode_rejects_bad_input():
    store, _ = make_store()
    with pytest.raises(ContractViolation):
        rep.encode_factor("content", torch.zeros(2, 3, dtype=nc.DTYPE), store)
    with pytest.raises(ContractViolation):
        rep.encode_factor("mood", torch.zeros(2, 8, dtype=nc.DTYPE), store)
    with pytest.raises(ContractViolation):
        rep.encode_factor("content", torch.zeros(2, 8, dtype=nc.DTYPE), store, "train")


def test_logvar_is_clamped():
    post = rep.VariationalPosterior(torch.zeros(3, dtype=nc.DTYPE), T([-50, 0, 50]))
    assert post.logvar.tolist() == [-10.0, 0.0, 10.0]


def test_platform_index_unknown_lists_known():
    idx = rep.PlatformIndex(["x", "tiktok"])
    assert idx.one_hot(["tiktok"]).tolist() == [[0.0, 1.0]]
    with pytest.raises(UnknownPlatformError, match="tiktok"):
        idx.index("myspace")
    with pytest.raises(ContractViolation):
        rep.PlatformIndex(["x", "x"])


def _triple(seed, B=5, d=16):
    g = np.random.default_rng(seed)
    return rep.LatentTriple(*(T(g.standard_normal((B, d))) for _ in range(3)))


def test_fuse_context_unit_norm_and_gain_invariant():
    store, _ = make_store()
    tr = _triple(0)
    z = rep.fuse_context(tr, store)
    assert torch.allclose(torch.linalg.vector_norm(z, dim=-1), torch.ones(5, dtype=nc.DTYPE), atol=1e-9)
    assert torch.allclose(rep.fuse_context(tr, store, gain=10.0), z, atol=1e-12)


def test_fuse_context_degenerate():
    store, _ = make_store()
    with torch.no_grad():
        for name in ("ctx.out.W", "ctx.out.b"):
            store[name].zero_()
    with pytest.raises(DegenerateInputError):
        rep.fuse_context(_triple(1), store, mode="train")
    z = rep.fuse_context(_triple(1), store, mode="eval")
    assert torch.equal(z[:, 0], torch.ones(5, dtype=nc.DTYPE)) and float(z[:, 1:].abs().sum()) == 0.0


@settings(max_examples=1000)
@given(st.integers(0, 2**32 - 1))
def test_fuse_context_norm_property(seed):
    store, _ = make_store(seed % 7)
    z = rep.fuse_context(_triple(seed, B=2), store)
    assert torch.allclose(torch.linalg.vector_norm(z, dim=-1), torch.ones(2, dtype=nc.DTYPE), atol=1e-9)


def test_kl_closed_forms():
    kl = rep.kl_to_standard_normal
    assert float(kl(rep.VariationalPosterior(T([0.0]), T([0.0])))) == 0.0
    assert abs(float(kl(rep.VariationalPosterior(T([1.0]), T([0.0])))) - 0.5) < 1e-12
    want = 0.5 * (4 - 1 - math.log(4))
    assert abs(float(kl(rep.VariationalPosterior(T([0.0]), T([math.log(4)])))) - want) < 1e-12
    assert abs(want - 0.8069) < 1e-4


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.lists(st.floats(-9, 9), min_size=8, max_size=8))
def test_kl_non_negative(mu, lv):
    post = rep.VariationalPosterior(T(mu), T(lv[:len(mu)]))
    assert float(rep.kl_to_standard_normal(post)) >= -1e-12


def test_total_correlation_precondition():
    with pytest.raises(ContractViolation):
        rep.total_correlation(torch.zeros(1, 2, dtype=nc.DTYPE))


def test_total_correlation_against_histogram_oracle():
    gaps, dup = [], []
    for seed in range(10):
        z = np.random.default_rng(seed).standard_normal((512, 2))
        est = float(rep.total_correlation(T(z)))
        gaps.append(est - histogram_mi(z[:, 0], z[:, 1]))
        zd = np.stack([z[:, 0], z[:, 0]], axis=1)
        dup.append(float(rep.total_correlation(T(zd))))
        assert histogram_mi(zd[:, 0], zd[:, 1]) > 0.5
    assert abs(np.mean(gaps)) <= 0.1
    assert np.mean(dup) > 0.5


def test_total_correlation_with_posteriors_independent_prior():
    g = np.random.default_rng(5)
    z = T(g.standard_normal((512, 2)))
    zeros = torch.zeros(512, 2, dtype=nc.DTYPE)
    assert abs(float(rep.total_correlation(z, zeros, zeros))) < 0.1


def test_disentanglement_loss_cases():
    g = np.random.default_rng(3)
    posts = [rep.VariationalPosterior(torch.zeros(512, 2, dtype=nc.DTYPE), torch.zeros(512, 2, dtype=nc.DTYPE))
             for _ in range(3)]
    samples = [T(g.standard_normal((512, 2))) for _ in range(3)]
    assert float(rep.disentanglement_loss(posts, samples, 0.0, 0.0)) == 0.0
    lam = 0.5
    assert abs(float(rep.disentanglement_loss(posts, samples, 1.0, lam))) < 0.1 * lam
    with pytest.raises(ContractViolation):
        rep.disentanglement_loss(posts, samples, -1.0, 0.1)


@pytest.mark.parametrize("draw", range(20))
def test_representation_gradients(draw):
    store, _ = make_store(draw, d_factor=3, d_hidden=4, d_ctx=4, d_ctx_hidden=5)
    g = np.random.default_rng(draw)
    xc, xp, xt = T(g.standard_normal((6, 8))), T(g.standard_normal((6, 7))), T(g.standard_normal((6, 5)))
    w = T(g.standard_normal((6, 4)))

    def f(s):
        outs = [rep.encode_factor(k, x, s, "train", nc.Rng(draw)) for k, x in
                (("content", xc), ("platform", xp), ("time", xt))]
        posts, zs = zip(*outs)
        z = rep.fuse_context(rep.LatentTriple(*zs), s)
        return (z * w).sum() + rep.disentanglement_loss(posts, zs, 1.0, 0.5)
    err = nc.max_rel_error(nc.analytic_grad(f, store), nc.finite_diff_grad(f, store, 1e-5))
    assert err < 1e-4
