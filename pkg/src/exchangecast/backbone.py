"""Sequence backbone, episodic retrieval, belief fusion, coupling flow and
neighbourhood comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import numcore as nc
from .errors import ConfigurationError, ContractViolation
from .memory import EpisodicBank

VARIANTS = ("ssm_lite", "attn_lite")
ATTN_WINDOW = 64
FLOW_LAYERS = 2
FLOW_HIDDEN = 32
FLOW_SCALE_BOUND = 2.0


@dataclass
class BackboneState:
    """Recurrent state for a batch of sequences.

    ``window`` holds past projected inputs (oldest first) for ``attn_lite``.
    """

    s: torch.Tensor
    step: int = 0
    window: torch.Tensor | None = None

    @classmethod
    def zeros(cls, batch: int, d_s: int) -> "BackboneState":
        return cls(torch.zeros(batch, d_s, dtype=nc.DTYPE), 0, torch.zeros(batch, 0, d_s, dtype=nc.DTYPE))


def init_backbone(store: nc.ParamStore, variant: str, d_ctx: int, d_s: int, rng: nc.Rng):
    if variant not in VARIANTS:
        raise ConfigurationError(f"backbone variant must be one of {VARIANTS}, got {variant!r}")
    nc.init_linear(store, "bb.proj", d_s, d_ctx, rng, bias=False)
    if variant == "ssm_lite":
        store.register("bb.a", np.full(d_s, 2.0))  # sigmoid(2) ~ 0.88 retention
        nc.init_linear(store, "bb.in", d_s, d_s, rng, bias=False)
        nc.init_linear(store, "bb.gate", d_s, d_s, rng)
    else:
        for name in ("bb.q", "bb.k", "bb.v"):
            nc.init_linear(store, name, d_s, d_s, rng, bias=False)
        store.register("bb.ln.gain", np.ones(d_s))
        store.register("bb.ln.bias", np.zeros(d_s))


def project_input(z: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    return nc.apply_linear(store, "bb.proj", z)


def causal_window_attention(x: torch.Tensor, past: torch.Tensor, store: nc.ParamStore):
    """Single-head attention of ``x`` over ``[past; x]``; returns (output, weights)."""
    seq = torch.cat([past, x.unsqueeze(-2)], dim=-2)
    q = nc.apply_linear(store, "bb.q", x)
    K = nc.apply_linear(store, "bb.k", seq)
    V = nc.apply_linear(store, "bb.v", seq)
    return nc.dot_attention(q, K, V, 1.0 / math.sqrt(x.shape[-1]))


def step_state(z_proj: torch.Tensor, prev: BackboneState | None, store: nc.ParamStore,
               variant: str = "ssm_lite") -> BackboneState:
    if prev is None or prev.s is None:
        raise ContractViolation("backbone state is uninitialised; start from BackboneState.zeros")
    if z_proj.shape != prev.s.shape:
        raise ContractViolation(f"projected input {tuple(z_proj.shape)} does not match state {tuple(prev.s.shape)}")
    if variant == "ssm_lite":
        A = nc.sigmoid(store["bb.a"])
        g = nc.sigmoid(nc.apply_linear(store, "bb.gate", z_proj))
        s = (1.0 - g) * (A * prev.s) + g * torch.tanh(nc.apply_linear(store, "bb.in", z_proj))
        return BackboneState(s, prev.step + 1, prev.window)
    if variant == "attn_lite":
        past = prev.window if prev.window is not None else z_proj.new_zeros(z_proj.shape[:-1] + (0, z_proj.shape[-1]))
        past = past[..., -(ATTN_WINDOW - 1):, :]
        out, _ = causal_window_attention(z_proj, past, store)
        s = nc.layer_norm(out + z_proj, store["bb.ln.gain"], store["bb.ln.bias"])
        window = torch.cat([past, z_proj.detach().unsqueeze(-2)], dim=-2)
        return BackboneState(s, prev.step + 1, window)
    raise ConfigurationError(f"backbone variant must be one of {VARIANTS}, got {variant!r}")


def episodic_read(s: torch.Tensor, bank: EpisodicBank | None, store: nc.ParamStore,
                  scale: float | None = None) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Attention read of the bank; returns (value-space vector, slot weights).

    An empty or disabled bank reads as the zero vector.
    """
    batch = s.shape[:-1]
    if bank is None or len(bank) == 0:
        d_m = bank.d_m if bank is not None else store["epi.query.W"].shape[0]
        return torch.zeros(batch + (d_m,), dtype=nc.DTYPE), None
    keys, values, occupied = bank.read_tensors()
    q = nc.apply_linear(store, "epi.query", s)
    scale = 1.0 / math.sqrt(bank.d_m) if scale is None else scale
    scores = scale * (q @ keys.T)
    w = nc.softmax(scores, occupied.expand_as(scores))
    return w @ values, w


def fuse_belief(s: torch.Tensor, r: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    if s.shape != r.shape:
        raise ContractViolation(f"state {tuple(s.shape)} and retrieval {tuple(r.shape)} differ in shape")
    return nc.layer_norm(s + r, store["belief.ln.gain"], store["belief.ln.bias"])


def init_belief(store: nc.ParamStore, d_s: int, rng: nc.Rng):
    if d_s % 2:
        raise ConfigurationError(f"flow needs an even state dimension, got {d_s}")
    store.register("belief.ln.gain", np.ones(d_s))
    store.register("belief.ln.bias", np.zeros(d_s))
    half = d_s // 2
    for k in range(FLOW_LAYERS):
        nc.init_linear(store, f"flow.{k}.hidden", FLOW_HIDDEN, half, rng)
        nc.init_linear(store, f"flow.{k}.scale", half, FLOW_HIDDEN, None)
        nc.init_linear(store, f"flow.{k}.shift", half, FLOW_HIDDEN, None)


def _coupling(store, k, cond):
    hid = torch.tanh(nc.apply_linear(store, f"flow.{k}.hidden", cond))
    log_s = FLOW_SCALE_BOUND * torch.tanh(nc.apply_linear(store, f"flow.{k}.scale", hid))
    return log_s, nc.apply_linear(store, f"flow.{k}.shift", hid)


def _halves(x):
    d = x.shape[-1]
    if d % 2:
        raise ConfigurationError(f"flow needs an even dimension, got {d}")
    return x[..., : d // 2], x[..., d // 2:]


def flow_forward(b: torch.Tensor, store: nc.ParamStore, with_logdet: bool = False):
    """Affine coupling stack; layer k rewrites the half not used as condition."""
    x1, x2 = _halves(b)
    logdet = torch.zeros(b.shape[:-1], dtype=nc.DTYPE)
    for k in range(FLOW_LAYERS):
        if k % 2 == 0:
            log_s, t = _coupling(store, k, x1)
            x2 = x2 * torch.exp(log_s) + t
        else:
            log_s, t = _coupling(store, k, x2)
            x1 = x1 * torch.exp(log_s) + t
        logdet = logdet + log_s.sum(-1)
    out = torch.cat([x1, x2], dim=-1)
    return (out, logdet) if with_logdet else out


def flow_inverse(y: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    x1, x2 = _halves(y)
    for k in reversed(range(FLOW_LAYERS)):
        if k % 2 == 0:
            log_s, t = _coupling(store, k, x1)
            x2 = (x2 - t) * torch.exp(-log_s)
        else:
            log_s, t = _coupling(store, k, x2)
            x1 = (x1 - t) * torch.exp(-log_s)
    return torch.cat([x1, x2], dim=-1)


class NeighborhoodBuffer:
    """FIFO ring of recent belief embeddings with a cached mean."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ContractViolation("neighbourhood capacity must be positive")
        self.capacity = capacity
        self.dim = dim
        self._data = np.zeros((capacity, dim))
        self._start = 0
        self._size = 0
        self._sum = np.zeros(dim)
        self._evictions = 0

    def __len__(self):
        return self._size

    def contents(self) -> np.ndarray:
        idx = (self._start + np.arange(self._size)) % self.capacity
        return self._data[idx].copy()

    @property
    def mean(self) -> np.ndarray:
        if self._size == 0:
            return np.zeros(self.dim)
        return self._sum / self._size

    def push(self, v) -> "NeighborhoodBuffer":
        v = np.asarray(v, dtype=np.float64).reshape(self.dim)
        if self._size < self.capacity:
            self._data[(self._start + self._size) % self.capacity] = v
            self._size += 1
            self._sum += v
        else:
            self._sum += v - self._data[self._start]
            self._data[self._start] = v
            self._start = (self._start + 1) % self.capacity
            self._evictions += 1
            if self._evictions % self.capacity == 0:
                # bound float drift of the running sum
                self._sum = self._data.sum(0)
        return self

    def state(self) -> dict:
        # raw ring layout and running sum, so a restored buffer is bit-identical
        return {"capacity": self.capacity, "dim": self.dim, "data": self._data, "sum": self._sum,
                "start": self._start, "size": self._size, "evictions": self._evictions}

    @classmethod
    def from_state(cls, st: dict) -> "NeighborhoodBuffer":
        buf = cls(int(st["capacity"]), int(st["dim"]))
        buf._data = np.array(st["data"], dtype=np.float64).reshape(buf.capacity, buf.dim)
        buf._sum = np.array(st["sum"], dtype=np.float64).reshape(buf.dim)
        buf._start, buf._size, buf._evictions = int(st["start"]), int(st["size"]), int(st["evictions"])
        return buf


def push_neighborhood(nbhd: NeighborhoodBuffer, b_flow) -> NeighborhoodBuffer:
    if isinstance(b_flow, torch.Tensor):
        b_flow = b_flow.detach().numpy()
    return nbhd.push(b_flow)


def compare_to_neighborhood(b_flow: torch.Tensor, nbhd: NeighborhoodBuffer | torch.Tensor) -> torch.Tensor:
    """``b_flow`` minus the neighbourhood mean (zero for an empty buffer)."""
    mean = nbhd if isinstance(nbhd, torch.Tensor) else torch.from_numpy(nbhd.mean)
    return b_flow - mean
