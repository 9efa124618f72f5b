"""Social-exchange engagement simulator with planted, recoverable parameters.

Per (opinion, platform, 30-minute bin) the level-l count is Poisson with rate

    base_rate * exchange_value(effort_l) * reciprocity_drive(history) * emotional_value(t)

where the history is the per-bin utility ``R - kappa * I`` of the same stream.
Everything needed to regenerate a dataset bit-for-bit lives in its manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, ContractViolation, DatasetFormatError, SimulationError

N_LEVELS = 4
BINS_PER_DAY = 48
BINS_PER_WEEK = 7 * BINS_PER_DAY
MIN_HORIZON_BINS = 2 * BINS_PER_WEEK
EMOTION_CATEGORIES = ("positive", "negative", "ambiguous", "neutral")
N_TOPIC_DIMS = 3
D_CONTENT = N_TOPIC_DIMS + len(EMOTION_CATEGORIES) + 1
D_TIME = 5


@dataclass
class PlatformProfile:
    id: str
    kappa: float
    gamma_star: list[float]
    beta_star: float
    phi: float
    mask: list[bool]
    base_rate: float

    def __post_init__(self):
        self.gamma_star = [float(g) for g in self.gamma_star]
        self.mask = [bool(m) for m in self.mask]
        if len(self.gamma_star) != N_LEVELS or len(self.mask) != N_LEVELS:
            raise ConfigurationError(f"platform {self.id}: need {N_LEVELS} levels")
        if self.kappa < 0 or self.phi <= 0 or self.base_rate <= 0:
            raise ConfigurationError(f"platform {self.id}: kappa >= 0, phi > 0, base_rate > 0 required")
        vals = [self.kappa, self.beta_star, self.phi, self.base_rate, *self.gamma_star]
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError(f"platform {self.id}: non-finite parameter")


@dataclass
class ReciprocityKernel:
    fast_weight: float = 0.3
    slow_weight: float = 0.3
    fast_half_life: float = 12.0
    slow_half_life: float = 168.0

    def __post_init__(self):
        if self.fast_weight < 0 or self.slow_weight < 0:
            raise ConfigurationError("reciprocity weights must be non-negative")
        if self.fast_half_life <= 0 or self.slow_half_life <= 0:
            raise ConfigurationError("half-lives must be positive")

    @property
    def fast_decay(self) -> float:
        return 0.5 ** (1.0 / self.fast_half_life)

    @property
    def slow_decay(self) -> float:
        return 0.5 ** (1.0 / self.slow_half_life)


@dataclass
class OpinionSpec:
    id: str
    emotion: float
    context: float
    topic: list[float]
    category: str = "neutral"
    alpha_emotion: float = 0.6
    beta_context: float = 0.5

    def __post_init__(self):
        self.topic = [float(v) for v in self.topic]
        if self.emotion < 0:
            raise ConfigurationError(f"opinion {self.id}: emotion intensity must be >= 0")
        if self.category not in EMOTION_CATEGORIES:
            raise ConfigurationError(f"opinion {self.id}: unknown emotion category {self.category!r}")
        if len(self.topic) != N_TOPIC_DIMS:
            raise ConfigurationError(f"opinion {self.id}: topic needs {N_TOPIC_DIMS} dims")

    def content_features(self) -> np.ndarray:
        onehot = [1.0 if c == self.category else 0.0 for c in EMOTION_CATEGORIES]
        return np.array(self.topic + onehot + [self.emotion], dtype=np.float64)


@dataclass
class RegimeShift:
    """From ``bin`` on, level rates of each platform are scaled by ``gamma_scale``."""

    bin: int
    gamma_scale: dict[str, list[float]]


@dataclass
class Scenario:
    profiles: list[PlatformProfile]
    opinions: list[OpinionSpec]
    kernels: dict[str, ReciprocityKernel]
    horizon_bins: int = 12 * BINS_PER_WEEK
    efforts: list[float] = field(default_factory=lambda: [1.0, 1.15, 1.3, 1.45])
    context_volatility: float = 0.35
    context_half_life: float = 4.0 * BINS_PER_WEEK
    dispersion: float | None = None
    shift: RegimeShift | None = None

    def __post_init__(self):
        if len(self.efforts) != N_LEVELS or any(b <= a for a, b in zip(self.efforts, self.efforts[1:])):
            raise ConfigurationError("efforts must be 4 strictly increasing values")
        if any(e < 0 for e in self.efforts):
            raise ConfigurationError("efforts must be non-negative")
        missing = {p.id for p in self.profiles} - set(self.kernels)
        if missing:
            raise ConfigurationError(f"no reciprocity kernel for platforms {sorted(missing)}")
        if self.dispersion is not None and self.dispersion <= 0:
            raise ConfigurationError("dispersion must be positive when set")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
        d["profiles"] = [PlatformProfile(**p) for p in d["profiles"]]
        d["opinions"] = [OpinionSpec(**o) for o in d["opinions"]]
        d["kernels"] = {k: ReciprocityKernel(**v) for k, v in d["kernels"].items()}
        if d.get("shift") is not None:
            d["shift"] = RegimeShift(**d["shift"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Utility and exchange value


def utility(R: float, I: float, kappa: float) -> float:
    return R - I * kappa


def exchange_value(effort: float, profile: PlatformProfile, level: int) -> float:
    if effort < 0:
        raise ContractViolation(f"effort must be non-negative, got {effort}")
    return profile.gamma_star[level] * math.log1p(effort) + profile.beta_star


def kernel_sums(history: Sequence[float], decay: float) -> float:
    """sum_{tau>=1} (1 - d) d^(tau-1) x_{t-tau} for a time-ordered history."""
    acc = 0.0
    for x in history:
        acc = decay * acc + (1.0 - decay) * x
    return acc


def reciprocity_drive(history: Sequence[float], kernel: ReciprocityKernel) -> float:
    x = kernel.fast_weight * kernel_sums(history, kernel.fast_decay) \
        + kernel.slow_weight * kernel_sums(history, kernel.slow_decay)
    return _softplus(x)


def emotional_value(E: float, phi: float, C: float, alpha: float, beta: float) -> float:
    return alpha * E * phi + beta * C


def _softplus(x):
    return np.logaddexp(0.0, x) if isinstance(x, np.ndarray) else math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def time_features(bins: np.ndarray, n_bins: int) -> np.ndarray:
    """sin/cos hour-of-day, sin/cos day-of-week, bin / n_bins."""
    bins = np.asarray(bins, dtype=np.float64)
    day = 2 * np.pi * (bins % BINS_PER_DAY) / BINS_PER_DAY
    week = 2 * np.pi * (bins % BINS_PER_WEEK) / BINS_PER_WEEK
    return np.stack([np.sin(day), np.cos(day), np.sin(week), np.cos(week), bins / n_bins], axis=-1)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class RawInstance:
    bin: int
    opinion: str
    platform: str
    y: list[int]
    mask: list[bool]
    n: int
    c: list[float]
    t: list[float]

    def to_json(self) -> str:
        return json.dumps({"bin": self.bin, "opinion": self.opinion, "platform": self.platform, "y": self.y,
                           "mask": self.mask, "n": self.n, "c": self.c, "t": self.t}, separators=(",", ":"))


@dataclass
class SynthDataset:
    """Dense view of a simulated corpus.

    ``y`` is ``(O, P, T, 4)`` counts, ``n`` is ``(O, P, T)`` new posts,
    ``mask`` is ``(P, 4)``, ``c`` is ``(O, d_c)`` and ``t`` is ``(T, d_t)``.
    """

    opinions: list[str]
    platforms: list[str]
    y: np.ndarray
    n: np.ndarray
    mask: np.ndarray
    c: np.ndarray
    t: np.ndarray
    manifest: dict
    drive: np.ndarray | None = None
    investment: np.ndarray | None = None

    @property
    def n_bins(self) -> int:
        return self.y.shape[2]

    def instances(self) -> Iterator[RawInstance]:
        """Records ordered by (bin, opinion, platform)."""
        c_rows = [self.c[o].tolist() for o in range(len(self.opinions))]
        masks = [self.mask[p].tolist() for p in range(len(self.platforms))]
        for b in range(self.n_bins):
            t_row = self.t[b].tolist()
            for o, oid in enumerate(self.opinions):
                for p, pid in enumerate(self.platforms):
                    yield RawInstance(b, oid, pid, [int(v) for v in self.y[o, p, b]], masks[p],
                                      int(self.n[o, p, b]), c_rows[o], t_row)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.y, self.n, self.mask, self.c, self.t):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def same_data(self, other: "SynthDataset") -> bool:
        return (self.opinions == other.opinions and self.platforms == other.platforms
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("y", "n", "mask", "c", "t")))


def simulate(scenario: Scenario, seed: int) -> SynthDataset:
    T = scenario.horizon_bins
    if T < MIN_HORIZON_BINS:
        raise ConfigurationError(f"horizon_bins must be >= {MIN_HORIZON_BINS}, got {T}")
    rng = nc.Rng(seed)
    O, P = len(scenario.opinions), len(scenario.profiles)
    eff = np.array(scenario.efforts)
    mask = np.array([p.mask for p in scenario.profiles], dtype=bool)
    gamma = np.array([p.gamma_star for p in scenario.profiles])                 # (P, 4)
    beta = np.array([p.beta_star for p in scenario.profiles])
    kappa = np.array([p.kappa for p in scenario.profiles])
    phi = np.array([p.phi for p in scenario.profiles])
    base = np.array([p.base_rate for p in scenario.profiles])
    kern = [scenario.kernels[p.id] for p in scenario.profiles]
    a_f = np.array([k.fast_weight for k in kern])
    a_s = np.array([k.slow_weight for k in kern])
    d_f = np.array([k.fast_decay for k in kern])
    d_s = np.array([k.slow_decay for k in kern])

    exch = np.clip(gamma * np.log1p(eff) + beta[:, None], 0.0, None) * mask   # (P, 4)
    if scenario.shift is not None:
        scale = np.array([scenario.shift.gamma_scale.get(p.id, [1.0] * N_LEVELS) for p in scenario.profiles])
        exch_b = np.clip(gamma * scale * np.log1p(eff) + beta[:, None], 0.0, None) * mask
    # expected totals at unit drive / value, used to put R and I on a common scale
    unit_total = base * exch.sum(1)
    unit_total = np.where(unit_total > 0, unit_total, 1.0)
    mean_eff = np.array([eff[m].mean() if m.any() else 1.0 for m in mask])

    # slowly drifting context per opinion: C(t) = C0 * exp(x_t), x an AR(1) on the bin grid
    rho = 0.5 ** (1.0 / scenario.context_half_life)
    ctx = np.empty((O, T))
    for o, op in enumerate(scenario.opinions):
        eps = rng.stream(f"sim/context/{op.id}").standard_normal(T)
        x = np.empty(T)
        acc = eps[0] * scenario.context_volatility
        for b in range(T):
            if b:
                acc = rho * acc + math.sqrt(1 - rho * rho) * scenario.context_volatility * eps[b]
            x[b] = acc
        ctx[o] = op.context * np.exp(x - 0.5 * scenario.context_volatility ** 2)

    emo = np.array([[op.alpha_emotion * op.emotion * phi[p] for p in range(P)] for op in scenario.opinions])
    beta_ctx = np.array([op.beta_context for op in scenario.opinions])

    y = np.zeros((O, P, T, N_LEVELS), dtype=np.int64)
    n = np.zeros((O, P, T), dtype=np.int64)
    drive = np.zeros((O, P, T))
    invest = np.zeros((O, P, T))
    k_fast = np.zeros((O, P))
    k_slow = np.zeros((O, P))
    streams = [[rng.stream(f"sim/{op.id}/{pr.id}") for pr in scenario.profiles] for op in scenario.opinions]
    for b in range(T):
        x = a_f * k_fast + a_s * k_slow
        D = np.logaddexp(0.0, x)                                             # (O, P)
        V = np.clip(emo + (beta_ctx * ctx[:, b])[:, None], 0.0, None)
        ex = exch_b if (scenario.shift is not None and b >= scenario.shift.bin) else exch
        rates = base[None, :, None] * ex[None] * (D * V)[:, :, None]         # (O, P, 4)
        post_rate = base[None, :] * D
        if not (np.isfinite(rates).all() and np.isfinite(post_rate).all()):
            bad = np.argwhere(~np.isfinite(rates).all(-1) | ~np.isfinite(post_rate))[0]
            raise SimulationError(f"non-finite rate at opinion={scenario.opinions[bad[0]].id}, "
                                  f"platform={scenario.profiles[bad[1]].id}, bin={b}")
        for o in range(O):
            for p in range(P):
                g = streams[o][p]
                lam = np.append(rates[o, p], post_rate[o, p])
                if scenario.dispersion is not None:
                    lam = g.gamma(scenario.dispersion, lam / scenario.dispersion)
                draw = g.poisson(lam)
                y[o, p, b] = draw[:N_LEVELS] * mask[p]
                n[o, p, b] = draw[N_LEVELS]
        drive[:, :, b] = D
        R = y[:, :, b].sum(-1) / unit_total
        I = (y[:, :, b] * eff).sum(-1) / (unit_total * mean_eff)
        invest[:, :, b] = I
        U = R - kappa * I
        k_fast = d_f * k_fast + (1 - d_f) * U
        k_slow = d_s * k_slow + (1 - d_s) * U

    c = np.stack([op.content_features() for op in scenario.opinions])
    manifest = {
        "format_version": 1,
        "seed": int(seed),
        "scenario": scenario.to_dict(),
        "opinions": [o.id for o in scenario.opinions],
        "platforms": [p.id for p in scenario.profiles],
        "n_bins": T,
    }
    ds = SynthDataset([o.id for o in scenario.opinions], [p.id for p in scenario.profiles], y, n, mask, c,
                      time_features(np.arange(T), T), manifest, drive, invest)
    ds.manifest["digest"] = ds.digest()
    return ds


def planted_rates(scenario: Scenario) -> np.ndarray:
    """Per-(platform, level) exchange value at the planted effort (masked levels NaN)."""
    eff = np.array(scenario.efforts)
    out = np.full((len(scenario.profiles), N_LEVELS), np.nan)
    for i, p in enumerate(scenario.profiles):
        for lvl in range(N_LEVELS):
            if p.mask[lvl]:
                out[i, lvl] = exchange_value(eff[lvl], p, lvl)
    return out


# ---------------------------------------------------------------------------
# Default scenario

# availability per platform, levels view / like / share / comment
TABLE1_MASKS = {
    "facebook": [False, True, True, True],
    "instagram": [False, True, False, True],
    "x": [False, False, True, True],
    "telegram": [True, False, True, False],
    "bilibili": [True, True, True, True],
    "bluesky": [False, False, True, True],
    "tiktok": [True, True, True, False],
}

_DEFAULT_PLATFORMS = [
    # id, kappa, gamma*, beta*, phi, base_rate
    ("facebook", 0.30, [0.78, 1.45, 0.70, 1.10], 0.10, 1.20, 20.0),
    ("instagram", 0.35, [0.90, 1.47, 0.80, 0.75], 0.10, 1.10, 12.0),
    ("x", 0.50, [1.00, 1.10, 1.58, 0.85], 0.10, 0.90, 8.0),
    ("telegram", 0.60, [1.40, 0.90, 0.70, 0.70], 0.10, 0.70, 5.0),
    ("bilibili", 0.55, [1.00, 1.60, 0.55, 1.25], 0.10, 1.00, 4.0),
    ("bluesky", 0.45, [0.90, 1.00, 1.40, 0.75], 0.10, 0.80, 2.0),
    ("tiktok", 0.40, [1.54, 1.00, 0.55, 0.60], 0.10, 1.40, 3.0),
]


def default_profiles() -> list[PlatformProfile]:
    return [PlatformProfile(pid, kappa, gamma, beta, phi, TABLE1_MASKS[pid], base)
            for pid, kappa, gamma, beta, phi, base in _DEFAULT_PLATFORMS]


def default_opinions(n: int = 12, seed: int = 0) -> list[OpinionSpec]:
    g = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(OpinionSpec(
            id=f"op{i:02d}",
            emotion=float(np.round(0.2 + 1.3 * i / max(n - 1, 1), 6)),
            context=1.0,
            topic=[float(v) for v in np.round(g.standard_normal(N_TOPIC_DIMS), 6)],
            category=EMOTION_CATEGORIES[i % len(EMOTION_CATEGORIES)],
        ))
    return out


def default_scenario(horizon_bins: int = 12 * BINS_PER_WEEK, n_opinions: int = 12,
                     kernel: ReciprocityKernel | None = None, **overrides) -> Scenario:
    profiles = default_profiles()
    kernel = kernel or ReciprocityKernel()
    return Scenario(profiles=profiles, opinions=default_opinions(n_opinions),
                    kernels={p.id: dataclasses.replace(kernel) for p in profiles},
                    horizon_bins=horizon_bins, **overrides)


def regime_scenario(kind: str, horizon_bins: int = 12 * BINS_PER_WEEK, **overrides) -> Scenario:
    """Engagement driven by a single reciprocity timescale (``fast`` or ``slow``)."""
    if kind == "fast":
        kernel = ReciprocityKernel(fast_weight=0.9, slow_weight=0.0)
    elif kind == "slow":
        kernel = ReciprocityKernel(fast_weight=0.0, slow_weight=0.9)
    else:
        raise ConfigurationError(f"regime kind must be 'fast' or 'slow', got {kind!r}")
    overrides.setdefault("context_volatility", 0.0)
    return default_scenario(horizon_bins, kernel=kernel, **overrides)


# ---------------------------------------------------------------------------
# Serialization


def emit_dataset(ds: SynthDataset, path) -> Path:
    """Write ``path`` (JSON lines) and ``manifest.json`` beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in ds.instances():
            fh.write(rec.to_json())
            fh.write("\n")
    (path.parent / "manifest.json").write_text(json.dumps(ds.manifest, indent=2, sort_keys=True))
    return path


_FIELDS = {"bin": int, "opinion": str, "platform": str, "y": list, "mask": list, "n": int, "c": list, "t": list}


def _parse_line(path, lineno, line):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict) or set(rec) != set(_FIELDS):
        raise DatasetFormatError(path, lineno, f"expected fields {sorted(_FIELDS)}")
    for k, typ in _FIELDS.items():
        if not isinstance(rec[k], typ) or (typ is int and isinstance(rec[k], bool)):
            raise DatasetFormatError(path, lineno, f"field {k!r} must be {typ.__name__}")
    if len(rec["y"]) != N_LEVELS or len(rec["mask"]) != N_LEVELS:
        raise DatasetFormatError(path, lineno, "y and mask need 4 entries")
    if any((not isinstance(v, int)) or isinstance(v, bool) or v < 0 for v in rec["y"]) or rec["n"] < 0:
        raise DatasetFormatError(path, lineno, "counts must be non-negative integers")
    if any(not isinstance(m, bool) for m in rec["mask"]):
        raise DatasetFormatError(path, lineno, "mask entries must be booleans")
    if any(v and not m for v, m in zip(rec["y"], rec["mask"])):
        raise DatasetFormatError(path, lineno, "masked-out level carries a non-zero count")
    return rec


def load_dataset(path, manifest_path=None) -> SynthDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    manifest_path = Path(manifest_path) if manifest_path else path.parent / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    opinions = manifest.get("opinions")
    platforms = manifest.get("platforms")
    recs = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.endswith("\n"):
                raise DatasetFormatError(path, lineno, "truncated record (missing newline)")
            if not line.strip():
                raise DatasetFormatError(path, lineno, "blank line")
            recs.append(_parse_line(path, lineno, line))
    if not recs:
        raise DatasetFormatError(path, 1, "empty dataset")
    if opinions is None:
        opinions = list(dict.fromkeys(r["opinion"] for r in recs))
        platforms = list(dict.fromkeys(r["platform"] for r in recs))
    O, P = len(opinions), len(platforms)
    if len(recs) % (O * P):
        raise DatasetFormatError(path, len(recs), "record count is not a whole number of bins")
    T = len(recs) // (O * P)
    y = np.zeros((O, P, T, N_LEVELS), dtype=np.int64)
    n = np.zeros((O, P, T), dtype=np.int64)
    mask = np.zeros((P, N_LEVELS), dtype=bool)
    c = np.zeros((O, len(recs[0]["c"])))
    t = np.zeros((T, len(recs[0]["t"])))
    i = 0
    for b in range(T):
        for o, oid in enumerate(opinions):
            for p, pid in enumerate(platforms):
                r = recs[i]
                i += 1
                if (r["bin"], r["opinion"], r["platform"]) != (b, oid, pid):
                    raise DatasetFormatError(path, i, f"expected record (bin={b}, opinion={oid}, platform={pid})")
                y[o, p, b] = r["y"]
                n[o, p, b] = r["n"]
                if b == 0 and o == 0:
                    mask[p] = r["mask"]
                elif list(mask[p]) != r["mask"]:
                    raise DatasetFormatError(path, i, f"mask for platform {pid} changed")
                if b == 0 and p == 0:
                    c[o] = r["c"]
                elif r["c"] != c[o].tolist():
                    raise DatasetFormatError(path, i, f"content features for opinion {oid} changed")
                if o == 0 and p == 0:
                    t[b] = r["t"]
                elif r["t"] != t[b].tolist():
                    raise DatasetFormatError(path, i, f"time features for bin {b} changed")
    if not manifest:
        manifest = {"opinions": opinions, "platforms": platforms, "n_bins": T}
    return SynthDataset(list(opinions), list(platforms), y, n, mask, c, t, manifest)


class ManifestMismatch(ValueError):
    pass


def verify_manifest(ds: SynthDataset) -> None:
    """Regenerate from the manifest's scenario and seed; raise on any difference."""
    m = ds.manifest
    if "scenario" not in m or "seed" not in m:
        raise ManifestMismatch("manifest lacks scenario/seed")
    regen = simulate(Scenario.from_dict(m["scenario"]), int(m["seed"]))
    if not regen.same_data(ds):
        raise ManifestMismatch(f"dataset does not match regeneration from seed {m['seed']}")
    if m.get("digest") not in (None, regen.digest()):
        raise ManifestMismatch("manifest digest does not match the regenerated data")
