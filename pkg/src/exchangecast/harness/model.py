"""The assembled forecaster: parameters, persistent memories and one forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .. import adaptation as ad
from .. import backbone as bb
from .. import heads as hd
from .. import memory as mem
from .. import numcore as nc
from .. import representation as rep
from ..synthgen import D_CONTENT, D_TIME
from .config import TrainConfig
from .data import N_FEAT

MEMORY_PREFIXES = ("mem.", "epi.")


@dataclass
class StreamStates:
    """Backbone state of every stream, carried (detached) across anchors."""

    s: torch.Tensor                      # (N, d_s)
    window: torch.Tensor                 # (N, k, d_s), attn_lite history
    step: int = 0

    @classmethod
    def zeros(cls, n: int, d_s: int) -> "StreamStates":
        return cls(torch.zeros(n, d_s, dtype=nc.DTYPE), torch.zeros(n, 0, d_s, dtype=nc.DTYPE))

    def gather(self, rows) -> bb.BackboneState:
        rows = torch.as_tensor(rows, dtype=torch.long)
        return bb.BackboneState(self.s[rows], self.step, self.window[rows])

    def advance(self, rows, new: bb.BackboneState, pending: dict):
        """Stage ``new`` for ``rows``; :meth:`commit` applies all staged rows at once."""
        idx = torch.as_tensor(rows, dtype=torch.long)
        if not pending:
            pending["s"] = self.s.clone()
            k = new.window.shape[-2] if new.window is not None else 0
            pending["window"] = torch.zeros(self.s.shape[0], k, self.s.shape[1], dtype=nc.DTYPE)
        pending["s"][idx] = new.s.detach()
        if new.window is not None:
            pending["window"][idx] = new.window.detach()

    def commit(self, pending: dict):
        if "s" in pending:
            self.s = pending["s"]
            self.window = pending["window"]
            self.step += 1
        pending.clear()

    def copy(self) -> "StreamStates":
        return StreamStates(self.s.clone(), self.window.clone(), self.step)


@dataclass
class Neighborhoods:
    """One belief-embedding ring per platform."""

    buffers: list

    @classmethod
    def fresh(cls, n_platforms: int, capacity: int, d_s: int) -> "Neighborhoods":
        return cls([bb.NeighborhoodBuffer(capacity, d_s) for _ in range(n_platforms)])

    def means(self) -> torch.Tensor:
        return torch.from_numpy(np.stack([b.mean for b in self.buffers]))

    def push(self, platforms, b_flow: torch.Tensor):
        for p, v in zip(platforms, b_flow.detach()):
            bb.push_neighborhood(self.buffers[int(p)], v)


@dataclass
class Outputs:
    y_hat: torch.Tensor          # (B, 4)
    n_hat: torch.Tensor          # (B,)
    alpha: torch.Tensor | None   # (B,)
    state: bb.BackboneState
    z: torch.Tensor
    M: torch.Tensor
    b_flow: torch.Tensor | None
    posteriors: list
    samples: list


class Forecaster:
    """Parameter store plus the long-lived episodic bank and replay buffer."""

    def __init__(self, cfg: TrainConfig, platforms, seed: int | None = None):
        self.cfg = cfg
        self.platforms = rep.PlatformIndex(platforms)
        self.rng = nc.Rng(cfg.seed if seed is None else seed)
        self.store = nc.ParamStore()
        self.rep_cfg = rep.RepresentationConfig(D_CONTENT, len(self.platforms), D_TIME, cfg.d_factor,
                                                cfg.d_hidden, cfg.d_ctx, cfg.d_ctx_hidden)
        # per-platform mean engagement per new post (level-averaged, training targets)
        self.per_post = torch.ones(len(self.platforms), dtype=nc.DTYPE)
        self._init_params()
        self.bank = None if cfg.no_memory else mem.EpisodicBank(cfg.bank_size, cfg.d_m)
        self.replay = mem.ReplayBuffer(cfg.replay_capacity)

    def _init_params(self):
        cfg, store, rng = self.cfg, self.store, self.rng
        P = len(self.platforms)
        rep.init_representation(store, self.rep_cfg, rng)
        if not cfg.no_memory:
            mem.init_adapters(store, N_FEAT, cfg.d_m, rng)
            mem.init_fusion(store, cfg.d_factor, cfg.d_m, cfg.d_ctx, 4, rng)
            mem.init_episodic(store, cfg.d_s, cfg.d_m, rng)
        bb.init_backbone(store, cfg.variant, cfg.d_ctx, cfg.d_s, rng)
        if not cfg.no_belief:
            bb.init_belief(store, cfg.d_s, rng)
        if not cfg.no_film:
            ad.init_film(store, P, cfg.d_s)
        ad.init_gated_attention(store, cfg.d_s, N_FEAT, cfg.d_s, P, rng, cfg.n_heads)
        hd.init_heads(store, cfg.d_s, cfg.d_m, cfg.d_factor, rng)

    # ------------------------------------------------------------------

    def fresh_states(self, n_streams: int, n_opinions: int) -> tuple[StreamStates, Neighborhoods]:
        """Per-epoch stream state; each platform ring spans ``neighborhood_bins`` of anchors."""
        cap = max(1, self.cfg.neighborhood_bins // self.cfg.anchor_stride) * n_opinions
        return StreamStates.zeros(n_streams, self.cfg.d_s), Neighborhoods.fresh(len(self.platforms), cap, self.cfg.d_s)

    def encode(self, batch: dict, mode: str, stream_prefix: str = ""):
        deterministic = mode == "eval" or self.cfg.no_dis
        enc_mode = "eval" if deterministic else "train"
        onehot = torch.zeros(len(batch["p"]), len(self.platforms), dtype=nc.DTYPE)
        onehot[torch.arange(len(batch["p"])), torch.as_tensor(batch["p"])] = 1.0
        posts, samples = [], []
        for kind, x in (("content", batch["c"]), ("platform", onehot), ("time", batch["t"])):
            post, z = rep.encode_factor(kind, x, self.store, enc_mode, self.rng, f"{stream_prefix}reparam/{kind}")
            posts.append(post)
            samples.append(z)
        triple = rep.LatentTriple(*samples)
        z = rep.fuse_context(triple, self.store, mode=mode)
        return triple, z, posts, samples, onehot

    def belief(self, batch: dict, prev: bb.BackboneState, nbhd_means: torch.Tensor, mode: str = "eval"):
        """Backbone step and belief embedding only; needs just ``c``, ``p`` and ``t``.

        Returns ``(state, b_flow)``; used to warm stream state and neighbourhoods.
        """
        cfg, store = self.cfg, self.store
        _, z, _, _, _ = self.encode(batch, mode)
        state = bb.step_state(bb.project_input(z, store), prev, store, cfg.variant)
        if cfg.no_belief:
            return state, None
        r = torch.zeros_like(state.s)
        if not cfg.no_memory:
            r_val, _ = bb.episodic_read(state.s, self.bank, store)
            r = nc.apply_linear(store, "epi.out", r_val)
        return state, bb.flow_forward(bb.fuse_belief(state.s, r, store), store)

    def forward(self, batch: dict, prev: bb.BackboneState | None, nbhd_means: torch.Tensor,
                mode: str = "train", stored_state: torch.Tensor | None = None,
                stream_prefix: str = "") -> Outputs:
        """One pass over a batch.

        ``stored_state`` replaces the backbone step (replayed records keep the
        state they were trained with).
        """
        cfg, store = self.cfg, self.store
        triple, z, posts, samples, onehot = self.encode(batch, mode, stream_prefix)
        B = z.shape[0]
        window = batch["window"]

        if cfg.no_memory:
            m_f = m_s = M = torch.zeros(B, cfg.d_m, dtype=nc.DTYPE)
            alpha = None
        else:
            m_f = mem.adapter_features(mem.FAST, window, store)
            m_s = mem.adapter_features(mem.SLOW, window, store)
            M, alpha = mem.fuse_memory(m_f, m_s, triple.z_c, triple.z_t, store)

        if stored_state is None:
            state = bb.step_state(bb.project_input(z, store), prev, store, cfg.variant)
        else:
            state = bb.BackboneState(stored_state, 0, None)
        s = state.s

        if cfg.no_belief:
            b_comp, b_flow = s, None
        else:
            if cfg.no_memory:
                r = torch.zeros_like(s)
            else:
                r_val, w = bb.episodic_read(s, self.bank, store)
                r = nc.apply_linear(store, "epi.out", r_val)
                if w is not None and mode == "train" and stored_state is None:
                    self.bank.touch(w.detach().max(0).values.numpy())
            b = bb.fuse_belief(s, r, store)
            b_flow = bb.flow_forward(b, store)
            b_comp = bb.compare_to_neighborhood(b_flow, nbhd_means[torch.as_tensor(batch["p"])])

        # platform-gated attention over the engagement window joins the belief
        # before FiLM, so the level-wise scales act on history-aware features
        x = b_comp + ad.gated_multihead(b_comp, window, window, b_comp, onehot, store)
        pidx = torch.as_tensor(batch["p"], dtype=torch.long)
        if cfg.no_film:
            h = x.unsqueeze(-2).expand(B, ad.N_LEVELS, cfg.d_s)
        else:
            h = ad.film_all_levels(x, pidx, store)

        # heads predict multiples of the input window's post volume over the horizon
        vol = batch["volume_scale"]
        y_hat = (vol * self.per_post[pidx])[:, None] * hd.predict_engagement(h, m_f, m_s, triple.z_c, store)
        n_hat = vol * hd.predict_volume(h.mean(-2), M, triple.z_c, store)
        return Outputs(y_hat, n_hat, alpha, state, z, M, b_flow, posts, samples)

    def prediction_loss(self, out: Outputs, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        """(engagement MAPE, volume MAPE), each the mean of per-instance values."""
        eps = self.cfg.mape_eps
        eng = hd.mape_rows(out.y_hat, batch["y"], batch["mask"], eps).mean()
        vol = hd.mape_terms(out.n_hat, batch["n"], eps).mean()
        return eng, vol

    def write_memories(self, out: Outputs, batch: dict):
        """Gated episodic writes, one per instance, in batch order."""
        if self.bank is None:
            return
        with torch.no_grad():
            g = mem.write_gate(out.z, out.M, batch["e"], self.store)
        for s_row, g_row in zip(out.state.s.detach(), g):
            mem.episodic_write(s_row, self.bank, float(g_row), self.store)

    def param_names(self) -> list[str]:
        return list(self.store)

    def memory_param_names(self) -> list[str]:
        return [n for n in self.store if n.startswith(MEMORY_PREFIXES)]
