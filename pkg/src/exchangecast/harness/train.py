"""Training loop: per-anchor mixed-platform batches, replay, gated memory writes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import heads as hd
from .. import memory as mem
from .. import representation as rep
from ..errors import ConfigurationError, TrainingDivergence
from ..synthgen import SynthDataset, load_dataset
from .config import TrainConfig
from .data import ForecastData, chronological_split, split_anchors, warmup_anchors
from .model import Forecaster

log = logging.getLogger(__name__)


class GroupedSGD:
    """SGD with momentum and one step size per parameter group."""

    def __init__(self, store, rates: dict[str, float], momentum: float, clip: float | None):
        self.store = store
        self.rates = dict(rates)
        self.momentum = momentum
        self.clip = clip
        self.velocity = {n: torch.zeros_like(store[n]) for n in store}
        self.step_scale = {g: [] for g in rates}

    def step(self):
        grads = {n: self.store.grad(n) for n in self.store}
        scale = 1.0
        if self.clip is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / norm
        moved = {g: [0.0, 0.0] for g in self.rates}
        with torch.no_grad():
            for n, g in grads.items():
                v = self.velocity[n]
                v.mul_(self.momentum).add_(g, alpha=scale)
                lr = self.rates[self.store.group(n)]
                self.store[n].sub_(lr * v)
                acc = moved[self.store.group(n)]
                acc[0] += lr * float(v.abs().sum())
                acc[1] += float(v.abs().sum())
        for g, (step, vel) in moved.items():
            if vel > 0:
                self.step_scale[g].append(step / vel)

    def check_group_rates(self):
        """Realised step per unit velocity must order fast > default > slow."""
        means = {g: float(np.mean(v)) for g, v in self.step_scale.items() if v}
        order = [g for g in ("fast", "default", "slow") if g in means]
        for a, b in zip(order, order[1:]):
            if not means[a] > means[b]:
                raise AssertionError(f"parameter group step scales out of order: {means}")
        self.step_scale = {g: [] for g in self.rates}
        return means


@dataclass
class TrainResult:
    model: Forecaster
    optimizer: GroupedSGD
    epoch: int
    epoch_log: list[dict] = field(default_factory=list)
    batch_mape: list[float] = field(default_factory=list)


def engagement_per_post(data: ForecastData, anchors: np.ndarray) -> torch.Tensor:
    """Per-platform training ratio of level-averaged engagement to new posts.

    Averaging over available levels keeps it free of any level ranking.
    """
    pairs = [data.targets(slice(None), slice(None), int(a)) for a in anchors]
    y = np.stack([p[0] for p in pairs])          # (A, O, P, 4)
    n = np.stack([p[1] for p in pairs])          # (A, O, P)
    mask = data.ds.mask
    per_level = (y * mask).sum((0, 1, 3)) / mask.sum(1)
    posts = n.sum((0, 1))
    ratio = np.where(posts > 0, per_level / np.maximum(posts, 1), 1.0)
    return torch.from_numpy(np.where(ratio > 0, ratio, 1.0).astype(np.float64))


def build(cfg: TrainConfig, ds: SynthDataset):
    data = ForecastData(ds, cfg.input_window, cfg.horizon_bins)
    train_split = chronological_split(ds.n_bins, cfg.split)[0]
    anchors = split_anchors(train_split, cfg.input_window, cfg.horizon_bins, cfg.anchor_stride)
    return data, anchors


def make_optimizer(cfg: TrainConfig, store) -> GroupedSGD:
    return GroupedSGD(store, {"default": cfg.lr, "fast": cfg.lr_fast, "slow": cfg.lr_slow}, cfg.momentum, cfg.grad_clip)


def new_model(cfg: TrainConfig, ds: SynthDataset) -> tuple[Forecaster, GroupedSGD]:
    data, anchors = build(cfg, ds)
    model = Forecaster(cfg, ds.platforms)
    model.per_post = engagement_per_post(data, anchors)
    return model, make_optimizer(cfg, model.store)


def _replay_loss(model: Forecaster, data: ForecastData, nbhd_means, k: int):
    records = mem.replay_sample(model.replay, k, model.rng.stream("replay/sample"))
    if not records:
        return None
    rows = np.array([r[0] for r in records])
    anchors = np.array([r[1] for r in records])
    batch = data.batch(rows, anchors)
    state = torch.from_numpy(np.stack([r[2] for r in records]))
    out = model.forward(batch, None, nbhd_means, "train", stored_state=state, stream_prefix="replay/")
    eng, vol = model.prediction_loss(out, batch)
    return eng + vol


def warm_up(model: Forecaster, data: ForecastData, states, nbhd, anchors: np.ndarray,
            platform_map: np.ndarray | None = None):
    """Advance stream states and neighbourhoods over ``anchors`` without any loss.

    Only the belief path runs, so no counts are read. ``platform_map`` takes
    dataset platform positions to model positions.
    """
    rows = np.arange(data.n_streams)
    with torch.no_grad():
        for a in anchors:
            pending: dict = {}
            ctx = data.context(rows, int(a))
            if platform_map is not None:
                ctx["p"] = platform_map[ctx["p"]]
            state, b_flow = model.belief(ctx, states.gather(rows), None)
            states.advance(rows, state, pending)
            if b_flow is not None:
                nbhd.push(ctx["p"], b_flow)
            states.commit(pending)


def fresh_epoch_state(model: Forecaster, data: ForecastData, first_anchor: int):
    states, nbhd = model.fresh_states(data.n_streams, len(data.ds.opinions))
    cfg = model.cfg
    warm_up(model, data, states, nbhd, warmup_anchors(first_anchor, cfg.neighborhood_bins, cfg.anchor_stride))
    return states, nbhd


def train_epoch(model: Forecaster, opt: GroupedSGD, data: ForecastData, anchors: np.ndarray,
                epoch: int, batch_mape: list | None = None) -> dict:
    cfg = model.cfg
    weights = cfg.loss_weights()
    states, nbhd = fresh_epoch_state(model, data, int(anchors[0]))
    all_rows = np.arange(data.n_streams)
    totals = {"loss": 0.0, "pred": 0.0, "dis": 0.0, "rep": 0.0, "engagement_mape": 0.0, "volume_mape": 0.0}
    n_batches = 0
    for a in anchors:
        pending: dict = {}
        for lo in range(0, data.n_streams, cfg.batch_size):
            rows = all_rows[lo:lo + cfg.batch_size]
            batch = data.batch(rows, np.full(len(rows), a))
            model.store.zero_grad()
            means = nbhd.means()
            out = model.forward(batch, states.gather(rows), means, "train")
            eng, vol = model.prediction_loss(out, batch)
            l_pred = eng + vol
            l_dis = torch.zeros((), dtype=l_pred.dtype)
            if weights.lambda1 > 0 and len(rows) > 1:
                l_dis = rep.disentanglement_loss(out.posteriors, out.samples, weights.beta, weights.lambda_dis)
            l_rep = _replay_loss(model, data, means, len(rows)) if weights.lambda2 > 0 else None
            loss = hd.total_loss(l_pred, l_dis, l_rep, weights)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, batch {n_batches} (anchor {a})")
            loss.backward()
            opt.step()

            states.advance(rows, out.state, pending)
            model.write_memories(out, batch)
            if out.b_flow is not None:
                nbhd.push(batch["p"], out.b_flow)
            push_gen = model.rng.stream("replay/push")
            for r, s_row in zip(rows, out.state.s.detach().numpy()):
                mem.replay_push(model.replay, (int(r), int(a), s_row.copy()), push_gen)

            for key, v in (("loss", loss), ("pred", l_pred), ("dis", l_dis), ("rep", l_rep),
                           ("engagement_mape", eng), ("volume_mape", vol)):
                totals[key] += 0.0 if v is None else float(v.detach())
            if batch_mape is not None:
                batch_mape.append(float(eng.detach()))
            n_batches += 1
        states.commit(pending)
    rates = opt.check_group_rates()
    entry = {"epoch": epoch, **{k: v / max(n_batches, 1) for k, v in totals.items()}}
    entry.update({f"step_{g}": v for g, v in rates.items()})
    log.info("epoch %d: loss %.4f engagement MAPE %.4f volume MAPE %.4f", epoch, entry["loss"],
             entry["engagement_mape"], entry["volume_mape"])
    return entry


def train(cfg: TrainConfig, ds: SynthDataset | None = None, resume: TrainResult | None = None,
          stop_after: int | None = None) -> TrainResult:
    """Run epochs ``resume.epoch .. cfg.epochs`` (or up to ``stop_after``)."""
    torch.set_num_threads(1)
    if ds is None:
        if not cfg.dataset:
            raise ConfigurationError("no dataset given")
        ds = load_dataset(cfg.dataset)
    data, anchors = build(cfg, ds)
    if resume is None:
        model, opt = new_model(cfg, ds)
        result = TrainResult(model, opt, 0)
    else:
        result = resume
        if list(result.model.platforms.ids) != list(ds.platforms):
            raise ConfigurationError("checkpoint platforms do not match the dataset")
    end = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    while result.epoch < end:
        entry = train_epoch(result.model, result.optimizer, data, anchors, result.epoch, result.batch_mape)
        result.epoch_log.append(entry)
        result.epoch += 1
    return result


def write_epoch_log(path, epoch_log: list[dict]) -> Path:
    path = Path(path)
    if not epoch_log:
        path.write_text("epoch\n")
        return path
    keys = list(epoch_log[0])
    lines = [",".join(keys)]
    for e in epoch_log:
        lines.append(",".join(str(e[k]) if k == "epoch" else f"{e[k]:.6f}" for k in keys))
    path.write_text("\n".join(lines) + "\n")
    return path
