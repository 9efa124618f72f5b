"""Differentiable numeric kernel.

Everything is float64 torch tensors; analytic gradients come from torch
autograd and are checked against :func:`finite_diff_grad`, which perturbs the
parameter store one coordinate at a time and never touches autograd.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import torch

from .errors import ContractViolation, DegenerateInputError

DTYPE = torch.float64
EPS = 1e-8
GROUPS = ("default", "fast", "slow")

# keeps sigmoid strictly inside (0, 1) in float64
_SIG_EPS = 1e-15


def tensor(data, shape=None) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE)
    if shape is not None:
        t = t.reshape(shape)
    return t


def _check_last(x: torch.Tensor, d: int, what: str, other: str):
    if x.shape[-1] != d:
        raise ContractViolation(f"{what} shape {tuple(x.shape)} does not conform to {other}")


def linear(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """y = W x + b over the last axis of ``x`` (leading axes are batch)."""
    if W.dim() != 2:
        raise ContractViolation(f"weight must be a matrix, got shape {tuple(W.shape)}")
    _check_last(x, W.shape[1], "input", f"weight shape {tuple(W.shape)}")
    if b is not None and tuple(b.shape) != (W.shape[0],):
        raise ContractViolation(f"bias shape {tuple(b.shape)} does not conform to weight shape {tuple(W.shape)}")
    y = x @ W.T
    return y if b is None else y + b


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    d = x.shape[-1]
    if d < 2:
        raise ContractViolation(f"layer_norm needs at least 2 features, got {d}")
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    _check_last(gain, d, "gain", f"input shape {tuple(x.shape)}")
    _check_last(bias, d, "bias", f"input shape {tuple(x.shape)}")
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return gain * (x - mu) / torch.sqrt(var + eps) + bias


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x).clamp(_SIG_EPS, 1.0 - _SIG_EPS)


def softplus(x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.softplus(x)


def softmax(x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    if x.shape[-1] < 1:
        raise ContractViolation("softmax over an empty axis")
    if mask is not None:
        x = x.masked_fill(~mask, -math.inf)
    return torch.softmax(x, dim=-1)


def dot_attention(q: torch.Tensor, K: torch.Tensor, V: torch.Tensor, scale: float,
                  mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled dot-product attention of one query per batch row.

    ``q`` is ``(..., d)``, ``K`` is ``(..., n, d)``, ``V`` is ``(..., n, d_v)``.
    ``mask`` (``(..., n)`` booleans) excludes slots; at least one must be set.
    """
    if K.shape[-2] < 1:
        raise ContractViolation("dot_attention needs at least one key")
    if K.shape[-1] != q.shape[-1]:
        raise ContractViolation(f"query shape {tuple(q.shape)} does not conform to keys {tuple(K.shape)}")
    if V.shape[-2] != K.shape[-2]:
        raise ContractViolation(f"values shape {tuple(V.shape)} does not conform to keys {tuple(K.shape)}")
    scores = scale * (K @ q.unsqueeze(-1)).squeeze(-1)
    w = softmax(scores, mask)
    return (w.unsqueeze(-2) @ V).squeeze(-2), w


def unit_project(x: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    norm = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if bool((norm <= eps).any()):
        raise DegenerateInputError(f"cannot project a vector of norm {float(norm.detach().min()):.3g} onto the unit sphere")
    return x / norm


def log_normal_density(x: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Elementwise log N(x; mu, exp(logvar))."""
    return -0.5 * (math.log(2 * math.pi) + logvar + (x - mu) ** 2 * torch.exp(-logvar))


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class Param:
    value: torch.Tensor
    group: str

    @property
    def grad(self) -> torch.Tensor:
        g = self.value.grad
        return torch.zeros_like(self.value) if g is None else g


class ParamStore:
    """Named trainable tensors with an optimizer group tag each."""

    def __init__(self):
        self._entries: OrderedDict[str, Param] = OrderedDict()

    def register(self, name: str, value, group: str = "default") -> torch.Tensor:
        if name in self._entries:
            raise ContractViolation(f"parameter {name!r} already registered")
        if group not in GROUPS:
            raise ContractViolation(f"unknown parameter group {group!r}")
        t = torch.as_tensor(value, dtype=DTYPE).detach().clone().requires_grad_(True)
        self._entries[name] = Param(t, group)
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def group(self, name: str) -> str:
        return self._entries[name].group

    def grad(self, name: str) -> torch.Tensor:
        return self._entries[name].grad

    def zero_grad(self):
        for p in self._entries.values():
            p.value.grad = None

    def numel(self) -> int:
        return sum(p.value.numel() for p in self._entries.values())

    def to_numpy(self) -> dict[str, np.ndarray]:
        return {k: p.value.detach().numpy().copy() for k, p in self._entries.items()}

    def load_numpy(self, arrays: dict[str, np.ndarray]):
        missing = set(self._entries) - set(arrays)
        extra = set(arrays) - set(self._entries)
        if missing or extra:
            raise ContractViolation(f"parameter mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        with torch.no_grad():
            for k, p in self._entries.items():
                a = np.asarray(arrays[k], dtype=np.float64)
                if a.shape != tuple(p.value.shape):
                    raise ContractViolation(f"{k}: shape {a.shape} != {tuple(p.value.shape)}")
                p.value.copy_(torch.from_numpy(a))


def finite_diff_grad(f: Callable[[ParamStore], float], store: ParamStore, h: float = 1e-5,
                     names=None) -> dict[str, np.ndarray]:
    """Central-difference gradient of scalar ``f`` w.r.t. every coordinate in ``store``."""
    if h <= 0:
        raise ContractViolation("step h must be positive")
    out = {}
    for name in (names if names is not None else list(store)):
        value = store[name]
        flat = value.data.view(-1)
        g = np.zeros(flat.numel())
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                fp = float(f(store))
                flat[i] = orig - h
                fm = float(f(store))
                flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise ArithmeticError(f"non-finite objective while perturbing {name}[{i}]")
            g[i] = (fp - fm) / (2 * h)
        out[name] = g.reshape(tuple(value.shape))
    return out


def analytic_grad(f: Callable[[ParamStore], torch.Tensor], store: ParamStore, names=None) -> dict[str, np.ndarray]:
    store.zero_grad()
    f(store).backward()
    return {k: store.grad(k).numpy().copy() for k in (names if names is not None else list(store))}


def max_rel_error(a: dict[str, np.ndarray], b: dict[str, np.ndarray], floor: float = 1e-6) -> float:
    """Largest |a - b| / max(|a|, |b|, floor) over all shared coordinates."""
    worst = 0.0
    for k in a:
        x, y = np.asarray(a[k]), np.asarray(b[k])
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


# ---------------------------------------------------------------------------
# Random numbers


def _stream_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Counter-based random streams keyed by ``(seed, stream name)``.

    Each named stream is an independent Philox generator, so adding a new
    consumer never shifts the draws seen by existing ones.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ContractViolation("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        g = self._streams.get(name)
        if g is None:
            g = np.random.Generator(np.random.Philox(key=_stream_key(self.seed, name)))
            self._streams[name] = g
        return g

    def normal(self, name: str, shape) -> torch.Tensor:
        return torch.from_numpy(self.stream(name).standard_normal(shape))

    def get_state(self) -> dict:
        return {"seed": self.seed,
                "streams": {k: _jsonable(g.bit_generator.state) for k, g in self._streams.items()}}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        for name, s in state["streams"].items():
            g = rng.stream(name)
            g.bit_generator.state = _from_jsonable(s)
        return rng


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": [int(v) for v in obj.tolist()], "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def init_linear(store: ParamStore, name: str, d_out: int, d_in: int, rng: Rng | None,
                group: str = "default", bias: bool = True, zero: bool = False):
    """Register ``name.W`` (Glorot-normal, or zeros) and optionally ``name.b`` (zeros)."""
    if zero or rng is None:
        W = np.zeros((d_out, d_in))
    else:
        W = rng.stream(f"init/{name}").standard_normal((d_out, d_in)) * math.sqrt(2.0 / (d_in + d_out))
    store.register(f"{name}.W", W, group)
    if bias:
        store.register(f"{name}.b", np.zeros(d_out), group)


def apply_linear(store: ParamStore, name: str, x: torch.Tensor) -> torch.Tensor:
    b = store[f"{name}.b"] if f"{name}.b" in store else None
    return linear(x, store[f"{name}.W"], b)
