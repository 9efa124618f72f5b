"""Small hand-built corpora for harness tests."""

import numpy as np

from exchangecast import synthgen as sg


def constant_dataset(n_bins=4032, y_value=3, n_value=2, platforms=("facebook", "x")):
    """Every stream emits the same counts in every bin."""
    P = len(platforms)
    masks = np.array([sg.TABLE1_MASKS[p] for p in platforms], dtype=bool)
    y = np.full((1, P, n_bins, 4), y_value, dtype=np.int64) * masks[None, :, None, :]
    n = np.full((1, P, n_bins), n_value, dtype=np.int64)
    c = np.zeros((1, sg.D_CONTENT))
    t = sg.time_features(np.arange(n_bins), n_bins)
    return sg.SynthDataset(["op"], list(platforms), y, n, masks, c, t, {"n_bins": n_bins})


def renamed(ds, old, new):
    """Copy of ``ds`` with one platform id replaced."""
    out = sg.SynthDataset(list(ds.opinions), [new if p == old else p for p in ds.platforms], ds.y, ds.n,
                          ds.mask, ds.c, ds.t, dict(ds.manifest))
    return out


# (criterion number, passed, detail) lines gathered by the acceptance suite
ACCEPTANCE: list = []
