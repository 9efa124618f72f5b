"""Single-file checkpoints: one JSON header line, then little-endian float64 blocks."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .. import memory as mem
from .. import numcore as nc
from ..errors import ConfigurationError
from .config import TrainConfig
from .model import Forecaster
from .train import TrainResult, make_optimizer

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _blocks(result: TrainResult) -> list[tuple[str, np.ndarray]]:
    model, opt = result.model, result.optimizer
    out = [(f"param/{n}", a) for n, a in model.store.to_numpy().items()]
    out += [(f"momentum/{n}", opt.velocity[n].numpy()) for n in model.store]
    out.append(("scale/per_post", model.per_post.numpy()))
    if model.bank is not None:
        b = model.bank
        out += [("bank/keys", b.keys), ("bank/values", b.values),
                ("bank/usage", b.usage.astype(np.float64)), ("bank/occupied", b.occupied.astype(np.float64))]
    recs = model.replay.records
    if recs:
        out.append(("replay/index", np.array([[r[0], r[1]] for r in recs], dtype=np.float64)))
        out.append(("replay/state", np.stack([r[2] for r in recs])))
    return out


def save(result: TrainResult, path) -> Path:
    model = result.model
    blocks = _blocks(result)
    offset, index = 0, []
    for name, arr in blocks:
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(np.prod(arr.shape, dtype=np.int64)) * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "platforms": list(model.platforms.ids),
        "epoch": result.epoch,
        "epoch_log": result.epoch_log,
        "batch_mape": result.batch_mape,
        "rng": model.rng.get_state(),
        "bank": None if model.bank is None else {"capacity": model.bank.capacity, "d_m": model.bank.d_m,
                                                 "clock": model.bank.clock},
        "replay": {"capacity": model.replay.capacity, "seen": model.replay.seen, "size": len(model.replay)},
        "blocks": index,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    return path


def read_header(path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise ConfigurationError(f"{path}: not a checkpoint (no header line)")
    try:
        header = json.loads(raw[:cut])
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: corrupt checkpoint header ({exc.msg})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    return header, raw[cut + 1:]


def load(path) -> TrainResult:
    header, payload = read_header(path)
    arrays = {}
    for b in header["blocks"]:
        count = int(np.prod(b["shape"], dtype=np.int64))
        start = b["offset"]
        if start + 8 * count > len(payload):
            raise ConfigurationError(f"{path}: payload truncated in block {b['name']}")
        arrays[b["name"]] = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=start).reshape(b["shape"]).copy()

    cfg = TrainConfig.from_dict(header["config"])
    model = Forecaster(cfg, header["platforms"])
    model.store.load_numpy({n[len("param/"):]: a for n, a in arrays.items() if n.startswith("param/")})
    model.per_post = torch.from_numpy(arrays["scale/per_post"])
    model.rng = nc.Rng.from_state(header["rng"])
    if header["bank"] is not None:
        bank = mem.EpisodicBank(header["bank"]["capacity"], header["bank"]["d_m"])
        bank.keys, bank.values = arrays["bank/keys"], arrays["bank/values"]
        bank.usage = arrays["bank/usage"].astype(np.int64)
        bank.occupied = arrays["bank/occupied"].astype(bool)
        bank.clock = int(header["bank"]["clock"])
        model.bank = bank
    rp = header["replay"]
    model.replay = mem.ReplayBuffer(rp["capacity"], [], rp["seen"])
    if rp["size"]:
        idx, states = arrays["replay/index"], arrays["replay/state"]
        model.replay.records = [(int(i[0]), int(i[1]), s.copy()) for i, s in zip(idx, states)]

    opt = make_optimizer(cfg, model.store)
    for n in model.store:
        opt.velocity[n] = torch.from_numpy(arrays[f"momentum/{n}"].copy())
    return TrainResult(model, opt, header["epoch"], header["epoch_log"], header["batch_mape"])
