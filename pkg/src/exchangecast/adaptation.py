"""Platform conditioning: per-(platform, level) FiLM and gated multi-head attention."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import numcore as nc
from .errors import ContractViolation
from .representation import PlatformIndex

N_LEVELS = 4
N_HEADS = 4


def init_film(store: nc.ParamStore, n_platforms: int, d_s: int, n_levels: int = N_LEVELS):
    store.register("film.gamma", np.ones((n_platforms, n_levels, d_s)))
    store.register("film.beta", np.zeros((n_platforms, n_levels, d_s)))


def _check_platforms(pidx: torch.Tensor, n_platforms: int):
    if pidx.numel() and (int(pidx.min()) < 0 or int(pidx.max()) >= n_platforms):
        raise ContractViolation(f"platform index out of range 0..{n_platforms - 1}")


def film_modulate(b_comp: torch.Tensor, pidx: torch.Tensor, level: int, store: nc.ParamStore) -> torch.Tensor:
    """``gamma[p, level] * b_comp + beta[p, level]`` row by row.

    ``pidx`` holds integer platform columns; map ids through
    :meth:`PlatformIndex.index` first (unknown ids raise there).
    """
    gamma, beta = store["film.gamma"], store["film.beta"]
    if not 0 <= level < gamma.shape[1]:
        raise ContractViolation(f"level must lie in 0..{gamma.shape[1] - 1}, got {level}")
    _check_platforms(pidx, gamma.shape[0])
    return gamma[pidx, level] * b_comp + beta[pidx, level]


def film_all_levels(b_comp: torch.Tensor, pidx: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    """FiLM for every level at once: ``(B, d) -> (B, L, d)``."""
    gamma, beta = store["film.gamma"], store["film.beta"]
    _check_platforms(pidx, gamma.shape[0])
    return gamma[pidx] * b_comp.unsqueeze(-2) + beta[pidx]


def platform_rows(platforms: PlatformIndex, ids: Sequence[str]) -> torch.Tensor:
    return torch.tensor([platforms.index(p) for p in ids], dtype=torch.long)


def init_gated_attention(store: nc.ParamStore, d_q: int, d_kv: int, d_out: int, n_platforms: int,
                         rng: nc.Rng, n_heads: int = N_HEADS, d_head: int = 16, prefix: str = "gate_attn"):
    if n_heads < 1:
        raise ContractViolation("need at least one attention head")
    for i in range(n_heads):
        nc.init_linear(store, f"{prefix}.{i}.q", d_head, d_q, rng, bias=False)
        nc.init_linear(store, f"{prefix}.{i}.k", d_head, d_kv, rng, bias=False)
        nc.init_linear(store, f"{prefix}.{i}.v", d_head, d_kv, rng, bias=False)
        nc.init_linear(store, f"{prefix}.{i}.o", d_out, d_head, rng, bias=False)
    nc.init_linear(store, f"{prefix}.head", n_heads, d_q + n_platforms, rng, zero=True)


def head_gates(h: torch.Tensor, platform_onehot: torch.Tensor, store: nc.ParamStore,
               prefix: str = "gate_attn") -> torch.Tensor:
    return nc.sigmoid(nc.apply_linear(store, f"{prefix}.head", torch.cat([h, platform_onehot], dim=-1)))


def attention_heads(q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, store: nc.ParamStore,
                    prefix: str = "gate_attn") -> list[torch.Tensor]:
    outs = []
    n_heads = store[f"{prefix}.head.W"].shape[0]
    for i in range(n_heads):
        qi = nc.apply_linear(store, f"{prefix}.{i}.q", q)
        Ki = nc.apply_linear(store, f"{prefix}.{i}.k", K)
        Vi = nc.apply_linear(store, f"{prefix}.{i}.v", V)
        out, _ = nc.dot_attention(qi, Ki, Vi, 1.0 / math.sqrt(qi.shape[-1]))
        outs.append(nc.apply_linear(store, f"{prefix}.{i}.o", out))
    return outs


def gated_multihead(q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, h: torch.Tensor,
                    platform_onehot: torch.Tensor, store: nc.ParamStore, prefix: str = "gate_attn",
                    gate_bias: float = 0.0) -> torch.Tensor:
    """Sum of attention heads, each scaled by a platform-conditioned gate.

    ``gate_bias`` is added to every gate logit (a large negative value closes
    all gates).
    """
    if h.shape[-1] + platform_onehot.shape[-1] != store[f"{prefix}.head.W"].shape[1]:
        raise ContractViolation(f"gate input [h; p] of size {h.shape[-1] + platform_onehot.shape[-1]} does not "
                                f"match head gate weights {tuple(store[f'{prefix}.head.W'].shape)}")
    g = head_gates(h, platform_onehot, store, prefix)
    if gate_bias:
        g = nc.sigmoid(torch.logit(g) + gate_bias)
    heads = attention_heads(q, K, V, store, prefix)
    return sum(g[..., i:i + 1] * out for i, out in enumerate(heads))


def extract_exchange_rates(store: nc.ParamStore) -> tuple[np.ndarray, np.ndarray]:
    """Mean FiLM scale and shift per (platform, level)."""
    gamma = store["film.gamma"].detach().numpy()
    beta = store["film.beta"].detach().numpy()
    return gamma.mean(-1), beta.mean(-1)


def write_exchange_rates(path, platforms: Sequence[str], gamma_mean: np.ndarray, beta_mean: np.ndarray):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["platform", "level", "gamma_mean", "beta_mean"])
        for i, p in enumerate(platforms):
            for lvl in range(gamma_mean.shape[1]):
                w.writerow([p, lvl, f"{gamma_mean[i, lvl]:.6f}", f"{beta_mean[i, lvl]:.6f}"])
    return path
