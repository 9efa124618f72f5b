"""Variational content/platform/time encoders, context fusion and the
disentanglement objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import numcore as nc
from .errors import ContractViolation, DegenerateInputError, UnknownPlatformError

log = logging.getLogger(__name__)

FACTORS = ("content", "platform", "time")
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class VariationalPosterior:
    mu: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        self.logvar = self.logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)


@dataclass
class LatentTriple:
    z_c: torch.Tensor
    z_p: torch.Tensor
    z_t: torch.Tensor

    def cat(self) -> torch.Tensor:
        return torch.cat([self.z_c, self.z_p, self.z_t], dim=-1)


class PlatformIndex:
    """Stable platform id -> column mapping used for one-hot inputs."""

    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise ContractViolation("duplicate platform ids")
        self._pos = {p: i for i, p in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def index(self, platform: str) -> int:
        try:
            return self._pos[platform]
        except KeyError:
            raise UnknownPlatformError(platform, self.ids) from None

    def one_hot(self, platforms: Sequence[str]) -> torch.Tensor:
        out = torch.zeros(len(platforms), len(self.ids), dtype=nc.DTYPE)
        for row, p in enumerate(platforms):
            out[row, self.index(p)] = 1.0
        return out


@dataclass
class RepresentationConfig:
    d_content: int
    d_platform: int
    d_time: int
    d_factor: int = 16
    d_hidden: int = 32
    d_ctx: int = 48
    d_ctx_hidden: int = 64

    def input_dim(self, kind: str) -> int:
        return {"content": self.d_content, "platform": self.d_platform, "time": self.d_time}[kind]


def init_representation(store: nc.ParamStore, cfg: RepresentationConfig, rng: nc.Rng):
    for kind in FACTORS:
        nc.init_linear(store, f"enc.{kind}.hidden", cfg.d_hidden, cfg.input_dim(kind), rng)
        nc.init_linear(store, f"enc.{kind}.mu", cfg.d_factor, cfg.d_hidden, rng)
        nc.init_linear(store, f"enc.{kind}.logvar", cfg.d_factor, cfg.d_hidden, None)
    nc.init_linear(store, "ctx.hidden", cfg.d_ctx_hidden, 3 * cfg.d_factor, rng)
    nc.init_linear(store, "ctx.out", cfg.d_ctx, cfg.d_ctx_hidden, rng)


def encode_factor(kind: str, x: torch.Tensor, store: nc.ParamStore, mode: str = "eval",
                  rng: nc.Rng | None = None, stream: str | None = None):
    """Two-layer Gaussian encoder; returns ``(posterior, sample)``.

    In train mode the sample is ``mu + exp(logvar / 2) * xi`` with ``xi`` drawn
    from the named stream (default ``reparam/<kind>``); in eval mode it is ``mu``.
    """
    if kind not in FACTORS:
        raise ContractViolation(f"unknown factor kind {kind!r}")
    W = store[f"enc.{kind}.hidden.W"]
    if x.shape[-1] != W.shape[1]:
        raise ContractViolation(f"{kind} encoder expects input size {W.shape[1]}, got shape {tuple(x.shape)}")
    hid = torch.tanh(nc.apply_linear(store, f"enc.{kind}.hidden", x))
    post = VariationalPosterior(nc.apply_linear(store, f"enc.{kind}.mu", hid),
                                nc.apply_linear(store, f"enc.{kind}.logvar", hid))
    if mode == "eval":
        return post, post.mu
    if mode != "train":
        raise ContractViolation(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ContractViolation("train-mode sampling needs an Rng")
    xi = rng.normal(stream or f"reparam/{kind}", tuple(post.mu.shape))
    return post, post.mu + torch.exp(0.5 * post.logvar) * xi


def fuse_context(triple: LatentTriple, store: nc.ParamStore, gain: float = 1.0, mode: str = "train") -> torch.Tensor:
    """Context MLP over ``[z_c; z_p; z_t]`` projected onto the unit sphere.

    ``gain`` scales the pre-projection output; the result does not depend on it.
    """
    hid = torch.tanh(nc.apply_linear(store, "ctx.hidden", triple.cat()))
    raw = gain * nc.apply_linear(store, "ctx.out", hid)
    try:
        return nc.unit_project(raw)
    except DegenerateInputError:
        if mode == "train":
            raise
    norms = torch.linalg.vector_norm(raw, dim=-1, keepdim=True)
    dead = norms <= nc.EPS
    log.warning("degenerate context vector in %d row(s); substituting the first basis vector", int(dead.sum()))
    e1 = torch.zeros_like(raw)
    e1[..., 0] = 1.0
    return torch.where(dead, e1, raw / torch.where(dead, torch.ones_like(norms), norms))


def kl_to_standard_normal(post: VariationalPosterior) -> torch.Tensor:
    """KL(q || N(0, I)) summed over latent dims, averaged over any batch axis."""
    kl = 0.5 * (post.mu ** 2 + torch.exp(post.logvar) - 1.0 - post.logvar).sum(-1)
    return kl.mean() if kl.dim() else kl


def total_correlation(z: torch.Tensor, mu: torch.Tensor | None = None, logvar: torch.Tensor | None = None,
                      groups: Sequence[Sequence[int]] | None = None) -> torch.Tensor:
    """Minibatch estimate of KL(q(z) || prod_g q(z_g)).

    The aggregate density is the mixture of the batch's Gaussian posteriors
    ``N(mu_k, exp(logvar_k))``. Without posteriors, a leave-one-out Gaussian
    KDE with Silverman bandwidth stands in for them. ``groups`` partitions the
    columns into the blocks whose mutual dependence is measured (default: one
    block per column).
    """
    if z.dim() != 2 or z.shape[0] < 2:
        raise ContractViolation(f"total_correlation needs a (B >= 2, d) batch, got shape {tuple(z.shape)}")
    B, d = z.shape
    if groups is None:
        groups = [[j] for j in range(d)]
    if mu is None:
        std = z.detach().std(0, unbiased=True).clamp_min(1e-6)
        h = 1.06 * std * B ** (-0.2)
        lk = nc.log_normal_density(z[:, None, :], z[None, :, :], torch.log(h ** 2))
        lk = lk.masked_fill(torch.eye(B, dtype=torch.bool)[:, :, None], -math.inf)
        log_n = math.log(B - 1)
    else:
        lk = nc.log_normal_density(z[:, None, :], mu[None, :, :], logvar[None, :, :])
        log_n = math.log(B)
    log_joint = torch.logsumexp(lk.sum(-1), dim=1) - log_n
    log_marg = sum(torch.logsumexp(lk[:, :, list(g)].sum(-1), dim=1) - log_n for g in groups)
    return (log_joint - log_marg).mean()


def disentanglement_loss(posteriors: Sequence[VariationalPosterior], samples: Sequence[torch.Tensor],
                         beta: float, lambda_dis: float) -> torch.Tensor:
    """``beta * sum of factor KLs + lambda_dis * TC`` across the factor blocks."""
    if beta < 0 or lambda_dis < 0:
        raise ContractViolation("beta and lambda_dis must be non-negative")
    kl = sum(kl_to_standard_normal(p) for p in posteriors)
    loss = beta * kl
    if lambda_dis > 0:
        z = torch.cat(list(samples), dim=-1)
        mu = torch.cat([p.mu for p in posteriors], dim=-1)
        lv = torch.cat([p.logvar for p in posteriors], dim=-1)
        sizes = np.cumsum([0] + [s.shape[-1] for s in samples])
        groups = [list(range(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        loss = loss + lambda_dis * total_correlation(z, mu, lv, groups)
    return loss
