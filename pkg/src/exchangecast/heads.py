"""Dual-head engagement ensemble, post-volume head, masked MAPE and the
combined training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import numcore as nc
from .errors import ContractViolation

HEAD_HIDDEN = 64


@dataclass(frozen=True)
class LossWeights:
    beta: float = 1.0
    lambda_dis: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.1
    mape_eps: float = 1.0

    def __post_init__(self):
        for name in ("beta", "lambda_dis", "lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"loss weight {name} must be non-negative")
        if self.mape_eps <= 0:
            raise ContractViolation("mape_eps must be positive")


def init_heads(store: nc.ParamStore, d_h: int, d_m: int, d_factor: int, rng: nc.Rng):
    d_in = d_h + d_m + d_factor
    for name in ("head.last", "head.avg", "head.vol"):
        nc.init_linear(store, f"{name}.hidden", HEAD_HIDDEN, d_in, rng)
        nc.init_linear(store, f"{name}.out", 1, HEAD_HIDDEN, rng)
    store.register("head.omega", np.zeros(()))


def mlp_head(store: nc.ParamStore, name: str, x: torch.Tensor) -> torch.Tensor:
    hid = torch.tanh(nc.apply_linear(store, f"{name}.hidden", x))
    return nc.softplus(nc.apply_linear(store, f"{name}.out", hid)).squeeze(-1)


def ensemble_weight(store: nc.ParamStore) -> torch.Tensor:
    return nc.sigmoid(store["head.omega"])


def predict_engagement(h: torch.Tensor, m_f: torch.Tensor, m_s: torch.Tensor, z_c: torch.Tensor,
                       store: nc.ParamStore, with_parts: bool = False):
    """Per-level ``w * f_last + (1 - w) * f_avg``.

    ``h`` is ``(B, L, d)``: one FiLM-conditioned vector per level; both heads
    share weights across levels. Returns ``(B, L)``.
    """
    L = h.shape[-2]
    rep = lambda v: v.unsqueeze(-2).expand(v.shape[:-1] + (L, v.shape[-1]))
    f_last = mlp_head(store, "head.last", torch.cat([h, rep(m_f), rep(z_c)], dim=-1))
    f_avg = mlp_head(store, "head.avg", torch.cat([h, rep(m_s), rep(z_c)], dim=-1))
    w = ensemble_weight(store)
    y_hat = w * f_last + (1.0 - w) * f_avg
    return (y_hat, f_last, f_avg) if with_parts else y_hat


def predict_volume(h: torch.Tensor, M: torch.Tensor, z_c: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    return mlp_head(store, "head.vol", torch.cat([h, M, z_c], dim=-1))


def _as_tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def mape_terms(y_hat, y, eps: float = 1.0) -> torch.Tensor:
    if eps <= 0:
        raise ContractViolation("mape eps must be positive")
    y_hat, y = _as_tensor(y_hat), _as_tensor(y)
    return torch.abs(y_hat - y) / torch.clamp(torch.abs(y), min=eps)


def mape(y_hat, y, mask=None, eps: float = 1.0) -> torch.Tensor:
    """Mean of ``|y_hat - y| / max(|y|, eps)`` over the masked-in entries."""
    terms = mape_terms(y_hat, y, eps)
    if mask is None:
        mask = torch.ones_like(terms, dtype=torch.bool)
    mask = torch.as_tensor(np.asarray(mask, dtype=bool)) if not isinstance(mask, torch.Tensor) else mask.bool()
    mask = mask.expand_as(terms)
    n = int(mask.sum())
    if n == 0:
        raise ContractViolation("mape over an all-masked input is undefined")
    return torch.where(mask, terms, torch.zeros_like(terms)).sum() / n


def mape_rows(y_hat, y, mask, eps: float = 1.0) -> torch.Tensor:
    """Per-row masked MAPE for ``(B, L)`` inputs; every row needs one mask bit."""
    terms = mape_terms(y_hat, y, eps)
    mask = _as_tensor(mask).bool().expand_as(terms)
    counts = mask.sum(-1)
    if bool((counts == 0).any()):
        raise ContractViolation("mape over an all-masked row is undefined")
    return torch.where(mask, terms, torch.zeros_like(terms)).sum(-1) / counts


def total_loss(l_pred: torch.Tensor, l_dis, l_rep, weights: LossWeights) -> torch.Tensor:
    """``L_pred + lambda1 * L_dis + lambda2 * L_rep``; ``l_rep=None`` means the
    replay buffer was empty and contributes nothing."""
    loss = l_pred + weights.lambda1 * l_dis
    if l_rep is not None:
        loss = loss + weights.lambda2 * l_rep
    return loss
