"""Command-line entry point: ``exchangecast {generate,train,evaluate,ablate,analyze}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import synthgen as sg
from ..errors import ConfigurationError, DatasetFormatError, TrainingDivergence, UnknownPlatformError
from . import checkpoint as ck
from .ablate import run_ablations, write_ablation
from .analysis import memory_weight_rows, write_exchange_rates, write_memory_weights
from .baselines import BASELINES
from .config import TrainConfig
from .evaluate import evaluate, evaluate_baseline
from .train import train, write_epoch_log

log = logging.getLogger("exchangecast")

DATASET_FILE = "dataset.jsonl"
CHECKPOINT_FILE = "checkpoint.bin"
SCENARIOS = ("default", "fast", "slow")
_GENERATE_KEYS = {"scenario", "n_bins", "n_opinions", "context_volatility", "dispersion", "full"}


class UsageError(Exception):
    def __init__(self, usage: str, message: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(self.format_usage(), message)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=_u64, help="seed overriding the config")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exchangecast", description="Synthetic engagement forecasting with platform exchange rates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a synthetic dataset",
                       description="Simulate a dataset; the config holds scenario, n_bins, n_opinions, "
                                   "context_volatility, dispersion or a full scenario under 'full'.")
    _common(g)

    t = sub.add_parser("train", help="train a model", description="Train on --dataset (or the config's dataset).")
    _common(t)
    t.add_argument("--dataset", type=Path, help="dataset JSONL file")
    t.add_argument("--resume", type=Path, help="checkpoint to resume from")

    e = sub.add_parser("evaluate", help="evaluate a checkpoint or a baseline",
                       description="Write eval.csv for a checkpoint (or a classical baseline) on a split.")
    _common(e)
    e.add_argument("--checkpoint", type=Path, help="trained checkpoint")
    e.add_argument("--dataset", type=Path, help="dataset JSONL file")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--horizon", type=int, help="horizon in bins (must match training)")
    e.add_argument("--baseline", choices=BASELINES, help="evaluate a baseline instead of a checkpoint")

    a = sub.add_parser("ablate", help="train the full model and every ablation",
                       description="Write ablation.csv with per-platform test MAPE of each variant.")
    _common(a)
    a.add_argument("--dataset", type=Path, help="dataset JSONL file")

    z = sub.add_parser("analyze", help="extract exchange rates and memory weights",
                       description="Write exchange_rates.csv and memory_weights.csv for a checkpoint.")
    _common(z)
    z.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    z.add_argument("--dataset", type=Path, help="dataset JSONL file")
    z.add_argument("--threshold", type=float, default=0.10, help="per-instance MAPE cut-off (default 0.10)")
    return parser


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return data


def scenario_from_config(doc: dict) -> sg.Scenario:
    unknown = set(doc) - _GENERATE_KEYS
    if unknown:
        raise ConfigurationError(f"unknown generate keys: {sorted(unknown)}")
    if "full" in doc:
        return sg.Scenario.from_dict(doc["full"])
    kind = doc.get("scenario", "default")
    if kind not in SCENARIOS:
        raise ConfigurationError(f"scenario must be one of {SCENARIOS}, got {kind!r}")
    kw = {k: doc[k] for k in ("context_volatility", "dispersion") if k in doc}
    n_bins = doc.get("n_bins", 12 * sg.BINS_PER_WEEK)
    if kind == "default":
        return sg.default_scenario(n_bins, doc.get("n_opinions", 12), **kw)
    if "n_opinions" in doc:
        kw["opinions"] = sg.default_opinions(doc["n_opinions"])
    return sg.regime_scenario(kind, n_bins, **kw)


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "dataset", None) is not None:
        cfg = cfg.replace(dataset=str(args.dataset))
    cfg.validate()
    return cfg


def _dataset(path) -> sg.SynthDataset:
    if not path:
        raise ConfigurationError("no dataset given (use --dataset or the config's 'dataset')")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return sg.load_dataset(path)


def cmd_generate(args) -> None:
    doc = _read_json(args.config) if args.config else {}
    ds = sg.simulate(scenario_from_config(doc), 0 if args.seed is None else args.seed)
    path = sg.emit_dataset(ds, args.out / DATASET_FILE)
    print(f"wrote {path} and {path.parent / 'manifest.json'}")


def cmd_train(args) -> None:
    cfg = _train_config(args)
    ds = _dataset(cfg.dataset)
    resume = ck.load(args.resume) if args.resume else None
    result = train(cfg, ds, resume=resume)
    args.out.mkdir(parents=True, exist_ok=True)
    path = ck.save(result, args.out / CHECKPOINT_FILE)
    write_epoch_log(args.out / "epoch_log.csv", result.epoch_log)
    print(f"wrote {path}")


def cmd_evaluate(args) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    if args.baseline:
        cfg = _train_config(args)
        if args.horizon is not None:
            cfg = cfg.replace(horizon_bins=args.horizon)
        report = evaluate_baseline(args.baseline, cfg, _dataset(cfg.dataset), args.split)
    else:
        if args.checkpoint is None:
            raise ConfigurationError("evaluate needs --checkpoint or --baseline")
        result = ck.load(args.checkpoint)
        ds = _dataset(args.dataset or result.model.cfg.dataset)
        report = evaluate(result, ds, args.split, args.horizon)
    path = report.write_csv(args.out / "eval.csv")
    print(f"wrote {path}")


def cmd_ablate(args) -> None:
    cfg = _train_config(args)
    reports = run_ablations(cfg, _dataset(cfg.dataset))
    args.out.mkdir(parents=True, exist_ok=True)
    print(f"wrote {write_ablation(args.out / 'ablation.csv', reports)}")


def cmd_analyze(args) -> None:
    result = ck.load(args.checkpoint)
    ds = _dataset(args.dataset or result.model.cfg.dataset)
    args.out.mkdir(parents=True, exist_ok=True)
    report = evaluate(result, ds, "test")
    rows = memory_weight_rows(report, args.threshold)
    print(f"wrote {write_memory_weights(args.out / 'memory_weights.csv', rows)}")
    if not result.model.cfg.no_film:
        print(f"wrote {write_exchange_rates(args.out / 'exchange_rates.csv', result.model)}")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "analyze": cmd_analyze}
RUNTIME_ERRORS = (ConfigurationError, DatasetFormatError, TrainingDivergence, UnknownPlatformError,
                  FileNotFoundError, sg.ManifestMismatch, OSError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SystemExit as exc:          # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except RUNTIME_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 0


def entry() -> None:
    sys.exit(main())
