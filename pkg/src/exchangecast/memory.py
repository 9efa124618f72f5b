"""Dual-timescale adapters, gated fusion, episodic bank and replay buffer."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch

from . import numcore as nc
from .errors import ContractViolation

FAST_WINDOW, SLOW_WINDOW = 48, 336
FAST_DECAY, SLOW_DECAY = 0.8, 0.98
WRITE_THRESHOLD = 0.5


@dataclass(frozen=True)
class TimescaleAdapter:
    kind: str
    window: int
    ema_decay: float

    def __post_init__(self):
        if self.kind not in ("fast", "slow"):
            raise ContractViolation(f"adapter kind must be fast or slow, got {self.kind!r}")
        if not 0.0 < self.ema_decay < 1.0:
            raise ContractViolation("ema_decay must lie in (0, 1)")

    @property
    def group(self) -> str:
        return self.kind

    @property
    def prefix(self) -> str:
        return f"mem.{self.kind}"


FAST = TimescaleAdapter("fast", FAST_WINDOW, FAST_DECAY)
SLOW = TimescaleAdapter("slow", SLOW_WINDOW, SLOW_DECAY)


def init_adapters(store: nc.ParamStore, d_feat: int, d_m: int, rng: nc.Rng, adapters=(FAST, SLOW)):
    if not adapters[0].window < adapters[1].window:
        raise ContractViolation("fast window must be shorter than slow window")
    for a in adapters:
        nc.init_linear(store, a.prefix, d_m, d_feat, rng, group=a.group)


def ema_weights(decay: float, n: int) -> np.ndarray:
    """Normalised pooling weights for ``n`` bins, oldest first, newest weighted 1."""
    if n == 0:
        return np.zeros(0)
    w = decay ** np.arange(n - 1, -1, -1, dtype=np.float64)
    return w / w.sum()


def ema_pool(window: torch.Tensor, decay: float) -> torch.Tensor:
    """EMA-pool a ``(..., n, d)`` bin sequence (oldest first) into ``(..., d)``.

    An empty window pools to zeros; a single bin pools to itself.
    """
    n = window.shape[-2]
    if n == 0:
        return torch.zeros(window.shape[:-2] + window.shape[-1:], dtype=nc.DTYPE)
    w = torch.from_numpy(ema_weights(decay, n))
    return (w[:, None] * window).sum(-2)


def adapter_features(adapter: TimescaleAdapter, window: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    """tanh(proj(EMA(window))) using the last ``adapter.window`` bins of ``window``."""
    window = window[..., -adapter.window:, :] if window.shape[-2] > adapter.window else window
    return torch.tanh(nc.apply_linear(store, adapter.prefix, ema_pool(window, adapter.ema_decay)))


def init_fusion(store: nc.ParamStore, d_factor: int, d_m: int, d_ctx: int, d_e: int, rng: nc.Rng):
    nc.init_linear(store, "mem.alpha", 1, 2 * d_factor, rng)
    nc.init_linear(store, "mem.write", 1, d_ctx + d_m + d_e, rng)


def fuse_memory(m_f: torch.Tensor, m_s: torch.Tensor, z_c: torch.Tensor, z_t: torch.Tensor,
                store: nc.ParamStore) -> tuple[torch.Tensor, torch.Tensor]:
    alpha = nc.sigmoid(nc.apply_linear(store, "mem.alpha", torch.cat([z_c, z_t], dim=-1)))
    return alpha * m_f + (1.0 - alpha) * m_s, alpha.squeeze(-1)


def write_gate(z: torch.Tensor, M: torch.Tensor, e: torch.Tensor, store: nc.ParamStore) -> torch.Tensor:
    return nc.sigmoid(nc.apply_linear(store, "mem.write", torch.cat([z, M, e], dim=-1))).squeeze(-1)


# ---------------------------------------------------------------------------
# Episodic bank


class EpisodicBank:
    """Fixed-capacity key/value store; unoccupied slots are invisible to reads."""

    def __init__(self, capacity: int = 128, d_m: int = 32):
        if capacity < 1:
            raise ContractViolation("bank capacity must be positive")
        self.capacity = capacity
        self.d_m = d_m
        self.keys = np.zeros((capacity, d_m))
        self.values = np.zeros((capacity, d_m))
        self.usage = np.zeros(capacity, dtype=np.int64)
        self.occupied = np.zeros(capacity, dtype=bool)
        self.clock = 0

    def __len__(self):
        return int(self.occupied.sum())

    def copy(self) -> "EpisodicBank":
        return copy.deepcopy(self)

    def read_tensors(self):
        return (torch.from_numpy(self.keys), torch.from_numpy(self.values), torch.from_numpy(self.occupied))

    def touch(self, weights: np.ndarray):
        """Mark slots that received attention in the latest read as recently used."""
        self.clock += 1
        self.usage[self.occupied & (weights > 1.0 / max(len(self), 1))] = self.clock

    def target_slot(self) -> int:
        free = np.flatnonzero(~self.occupied)
        if free.size:
            return int(free[0])
        return int(np.argmin(self.usage))

    def state(self) -> dict[str, Any]:
        return {"capacity": self.capacity, "d_m": self.d_m, "keys": self.keys, "values": self.values,
                "usage": self.usage, "occupied": self.occupied, "clock": self.clock}

    @classmethod
    def from_state(cls, st: dict[str, Any]) -> "EpisodicBank":
        bank = cls(int(st["capacity"]), int(st["d_m"]))
        bank.keys = np.array(st["keys"], dtype=np.float64).reshape(bank.capacity, bank.d_m)
        bank.values = np.array(st["values"], dtype=np.float64).reshape(bank.capacity, bank.d_m)
        bank.usage = np.array(st["usage"], dtype=np.int64).reshape(bank.capacity)
        bank.occupied = np.array(st["occupied"], dtype=bool).reshape(bank.capacity)
        bank.clock = int(st["clock"])
        return bank


def init_episodic(store: nc.ParamStore, d_s: int, d_m: int, rng: nc.Rng):
    nc.init_linear(store, "epi.query", d_m, d_s, rng)
    nc.init_linear(store, "epi.key", d_m, d_s, rng)
    nc.init_linear(store, "epi.value", d_m, d_s, rng)
    nc.init_linear(store, "epi.out", d_s, d_m, rng)


def episodic_write(s: torch.Tensor, bank: EpisodicBank, g_write: float, store: nc.ParamStore) -> EpisodicBank:
    """Gated write of one state vector ``s`` into ``bank`` (mutated and returned).

    Above the 0.5 threshold the target slot (first free, else least recently
    read) moves toward the candidate ``(psi_key(s), psi_val(s))`` by ``g``;
    a free slot takes the candidate outright.
    """
    g = float(g_write)
    if g <= WRITE_THRESHOLD:
        return bank
    with torch.no_grad():
        k = nc.apply_linear(store, "epi.key", s).numpy()
        v = nc.apply_linear(store, "epi.value", s).numpy()
    slot = bank.target_slot()
    if bank.occupied[slot]:
        bank.keys[slot] = (1.0 - g) * bank.keys[slot] + g * k
        bank.values[slot] = (1.0 - g) * bank.values[slot] + g * v
    else:
        bank.keys[slot] = k
        bank.values[slot] = v
        bank.occupied[slot] = True
    bank.clock += 1
    bank.usage[slot] = bank.clock
    return bank


# ---------------------------------------------------------------------------
# Replay


@dataclass
class ReplayBuffer:
    """Reservoir-sampled store of past training records."""

    capacity: int = 10_000
    records: list = field(default_factory=list)
    seen: int = 0

    def __len__(self):
        return len(self.records)


def replay_push(buffer: ReplayBuffer, record, rng: np.random.Generator) -> ReplayBuffer:
    if len(buffer.records) < buffer.capacity:
        buffer.records.append(record)
    else:
        j = int(rng.integers(0, buffer.seen + 1))
        if j < buffer.capacity:
            buffer.records[j] = record
    buffer.seen += 1
    return buffer


def replay_sample(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> list:
    n = len(buffer.records)
    if n == 0 or k <= 0:
        return []
    idx = rng.choice(n, size=min(k, n), replace=False)
    return [buffer.records[i] for i in idx]
