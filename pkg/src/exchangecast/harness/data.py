"""Chronological splits and forecast windows over a :class:`SynthDataset`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigurationError
from ..synthgen import SynthDataset

N_FEAT = 5  # log1p of the 4 masked level counts and of new posts


@dataclass(frozen=True)
class Split:
    name: str
    lo: int
    hi: int  # exclusive

    def __contains__(self, b: int) -> bool:
        return self.lo <= b < self.hi


def split_bounds(n_bins: int, fractions) -> tuple[int, int]:
    """Floor boundaries of a three-way chronological split."""
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigurationError(f"split fractions must be three positive values summing to 1, got {fractions}")
    b1 = math.floor(fractions[0] * n_bins + 1e-9)
    b2 = math.floor((fractions[0] + fractions[1]) * n_bins + 1e-9)
    if not 0 < b1 < b2 < n_bins:
        raise ConfigurationError(f"split {fractions} leaves an empty part of {n_bins} bins")
    return b1, b2


def chronological_split(n_bins: int, fractions) -> tuple[Split, Split, Split]:
    b1, b2 = split_bounds(n_bins, fractions)
    return Split("train", 0, b1), Split("val", b1, b2), Split("test", b2, n_bins)


def split_anchors(split: Split, window: int, horizon: int, stride: int) -> np.ndarray:
    """Last-observed bins whose input window and target horizon both fit in ``split``.

    Windows that would straddle a boundary are dropped, never truncated.
    """
    first = split.lo + window - 1
    last = split.hi - 1 - horizon
    if last < first:
        raise ConfigurationError(f"{split.name} split [{split.lo}, {split.hi}) holds no "
                                 f"{window}-bin window plus {horizon}-bin horizon")
    return np.arange(first, last + 1, stride)


def warmup_anchors(first_anchor: int, span: int, stride: int) -> np.ndarray:
    """Anchors on the same stride grid covering the ``span`` bins before ``first_anchor``."""
    start = first_anchor - (span // stride) * stride
    while start < 0:
        start += stride
    return np.arange(start, first_anchor, stride)


def check_no_leakage(split: Split, anchor: int, window: int, horizon: int):
    if not (anchor - window + 1 >= split.lo and anchor + horizon <= split.hi - 1):
        raise AssertionError(f"instance at anchor {anchor} leaks outside the {split.name} split "
                             f"[{split.lo}, {split.hi})")


class ForecastData:
    """Precomputed per-bin features and horizon targets for every stream."""

    def __init__(self, ds: SynthDataset, window: int, horizon: int):
        self.ds = ds
        self.window = window
        self.horizon = horizon
        O, P = len(ds.opinions), len(ds.platforms)
        masked = ds.y * ds.mask[None, :, None, :]
        self.feat = np.concatenate([np.log1p(masked), np.log1p(ds.n)[..., None]], axis=-1)  # (O, P, T, 5)
        self.cum_y = np.concatenate([np.zeros((O, P, 1, 4), dtype=np.int64), np.cumsum(masked, axis=2)], axis=2)
        self.cum_n = np.concatenate([np.zeros((O, P, 1), dtype=np.int64), np.cumsum(ds.n, axis=2)], axis=2)
        self.streams = [(o, p) for o in range(O) for p in range(P)]

    @property
    def n_streams(self) -> int:
        return len(self.streams)

    def targets(self, o, p, anchor):
        a, H = np.asarray(anchor), self.horizon
        y = self.cum_y[o, p, a + 1 + H] - self.cum_y[o, p, a + 1]
        n = self.cum_n[o, p, a + 1 + H] - self.cum_n[o, p, a + 1]
        return y, n

    def volume_scale(self, o, p, anchors) -> np.ndarray:
        """Input-window mean post rate times the horizon, floored at one."""
        a, W, H = np.asarray(anchors), self.window, self.horizon
        win_n = self.cum_n[o, p, a + 1] - self.cum_n[o, p, a + 1 - W]
        return np.maximum(win_n / W * H, 1.0).astype(np.float64)

    def context(self, rows: np.ndarray, anchor: int) -> dict:
        """Inputs of the belief path alone (no counts), for state warm-up."""
        o = np.array([self.streams[r][0] for r in rows])
        p = np.array([self.streams[r][1] for r in rows])
        return {"rows": np.asarray(rows), "o": o, "p": p,
                "c": torch.from_numpy(self.ds.c[o]),
                "t": torch.from_numpy(np.repeat(self.ds.t[anchor][None], len(rows), axis=0))}

    def batch(self, rows: np.ndarray, anchors: np.ndarray) -> dict:
        """Gather a batch; ``rows`` index :attr:`streams`, ``anchors`` per row."""
        o = np.array([self.streams[r][0] for r in rows])
        p = np.array([self.streams[r][1] for r in rows])
        anchors = np.asarray(anchors)
        W = self.window
        idx = anchors[:, None] + np.arange(-W + 1, 1)[None, :]
        window = self.feat[o[:, None], p[:, None], idx]                          # (B, W, 5)
        y, n = self.targets(o, p, anchors)
        return {
            "rows": np.asarray(rows),
            "o": o,
            "p": p,
            "anchor": anchors,
            "c": torch.from_numpy(self.ds.c[o]),
            "t": torch.from_numpy(self.ds.t[anchors]),
            "window": torch.from_numpy(np.ascontiguousarray(window)),
            "e": torch.from_numpy(self.feat[o, p, anchors, :4]),
            "y": torch.from_numpy(y.astype(np.float64)),
            "n": torch.from_numpy(n.astype(np.float64)),
            "mask": torch.from_numpy(self.ds.mask[p]),
            "volume_scale": torch.from_numpy(self.volume_scale(o, p, anchors)),
        }
