"""Command-line entry point: ``link-avvp {gen,train,eval,gradcheck}``.

Exit codes: 0 success, 2 config/input error, 3 numeric failure, 4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import __version__, numerics
from .dataset import (ConfigError, DatasetFormatError, GenConfig, MissingVideoError, generate,
                      load, misaligned_event_count, read_manifest, save, split)
from .gradcheck import DEFAULT_DIMS, PARAM_WARN_LIMIT, full_model_gradcheck
from .metrics import evaluate
from .numerics import ShapeError
from .predictor import CheckpointError, load_checkpoint, predict, save_checkpoint
from .semantics import CaptionTableError, build_fixture_table, load_table, save_table
from .trainer import NonFiniteLossError, TrainConfig, final_metrics, train

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    config: dict
    data: str
    checkpoint: str
    metrics: str
    version: str
    seed: int

    def to_dict(self) -> dict:
        return {"kind": "run_manifest", **self.__dict__}


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{p}: top level must be a JSON object")
    return raw


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_gen(args) -> int:
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = GenConfig.from_dict(raw)
    if args.print_config:
        _emit(cfg.to_dict())
        return EXIT_OK
    if args.out is None:
        raise UsageError("gen needs --out DIR")
    samples = generate(cfg)
    save(samples, args.out, gen_config=cfg)
    save_table(build_fixture_table(cfg.resolved_class_names(), cfg.d, cfg.seed), args.out)
    n_events = sum(len(s.events) for s in samples)
    _emit({
        "videos": len(samples),
        "T": cfg.T, "d": cfg.d, "C": cfg.C,
        "events": n_events,
        "misaligned_events": misaligned_event_count(samples),
        "out": str(args.out),
    })
    return EXIT_OK


def _load_dataset(path):
    if path is None:
        raise UsageError("--data DIR is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"dataset directory not found: {p}")
    return load(p), load_table(p), read_manifest(p)


def cmd_train(args) -> int:
    raw = _read_json(args.config)
    data_path = args.data
    if raw.get("kind") == "run_manifest":
        data_path = data_path or raw["data"]
        raw = dict(raw["config"])
    eval_fraction = raw.pop("eval_fraction", 0.0)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = TrainConfig.from_dict(raw)
    if not isinstance(eval_fraction, (int, float)) or not 0.0 <= eval_fraction < 1.0:
        raise ConfigError("eval_fraction", f"must lie in [0, 1), got {eval_fraction!r}")
    resolved = {**cfg.to_dict(), "eval_fraction": eval_fraction}
    if args.print_config:
        _emit(resolved)
        return EXIT_OK
    if args.out is None:
        raise UsageError("train needs --out DIR")
    samples, table, _ = _load_dataset(data_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(resolved, str(Path(data_path).resolve()), str(out / "checkpoint.lnkp"),
                           str(out / "metrics.json"), __version__, cfg.seed)
    (out / "run_manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2))

    if eval_fraction > 0:
        train_set, eval_set = split(samples, 1.0 - eval_fraction, cfg.seed)
    else:
        train_set, eval_set = samples, None
    params, history = train(train_set, eval_set, table, cfg)
    save_checkpoint(params, manifest.checkpoint)
    history.write_jsonl(out / "history.jsonl")
    report = final_metrics(history)
    Path(manifest.metrics).write_text(report.to_json())
    _emit({"checkpoint": manifest.checkpoint, "metrics": report.to_dict()})
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint is None:
        raise UsageError("eval needs --checkpoint PATH")
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    raw = _read_json(args.config)
    softmax_scale = bool(raw.get("softmax_scale", False))
    samples, table, manifest = _load_dataset(args.data)
    params = load_checkpoint(ckpt)
    dims = params.dims
    data_dims = {"T": manifest["T"], "d": manifest["d"], "C": manifest["C"], "d_text": table.d_text}
    if dims != data_dims:
        raise UsageError(f"checkpoint dims {dims} do not match dataset dims {data_dims}")
    report = evaluate(zip(predict(samples, params, table, softmax_scale), samples))
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    print(report.to_json())
    return EXIT_OK


def _parse_dims(text: str | None) -> dict:
    dims = dict(DEFAULT_DIMS)
    if not text:
        return dims
    for part in text.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in dims:
            raise ConfigError("dims", f"unknown dimension {key!r}")
        try:
            dims[key] = int(val)
        except ValueError:
            raise ConfigError("dims", f"{key} must be an integer, got {val!r}") from None
        if dims[key] < 1:
            raise ConfigError("dims", f"{key} must be positive")
    return dims


def cmd_gradcheck(args) -> int:
    dims = _parse_dims(args.dims)
    seed = args.seed or 0
    if args.print_config:
        _emit({"dims": dims, "seed": seed, "tolerance": GRADCHECK_TOL})
        return EXIT_OK
    if args.inject_fault:
        with numerics.corrupt_backward(args.inject_fault):
            report, params = full_model_gradcheck(dims, seed)
    else:
        report, params = full_model_gradcheck(dims, seed)
    if params.count() > PARAM_WARN_LIMIT:
        warnings.warn(f"gradient check covered {params.count()} parameters; expect a slow run")
    passed = report.passed(GRADCHECK_TOL)
    _emit({
        "dims": dims, "seed": seed,
        "max_rel_error": report.max_rel_error,
        "tolerance": GRADCHECK_TOL,
        "passed": passed,
        "worst_param": report.worst_param,
        "worst_index": list(report.worst_index) if report.worst_index is not None else None,
        "coordinates": report.n_coords,
        "per_param": report.per_param,
    })
    return EXIT_OK if passed else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="link-avvp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration (with defaults) and exit")
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--data", metavar="PATH")
        p.add_argument("--checkpoint", metavar="PATH")
        return p

    common(sub.add_parser("gen", help="generate a synthetic dataset")).set_defaults(func=cmd_gen)
    common(sub.add_parser("train", help="train a model")).set_defaults(func=cmd_train)
    common(sub.add_parser("eval", help="score a checkpoint")).set_defaults(func=cmd_eval)
    gc = common(sub.add_parser("gradcheck", help="finite-difference check of the full model"))
    gc.add_argument("--dims", metavar="T=4,d=8,C=3,d_text=8")
    gc.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, MissingVideoError, DatasetFormatError, CaptionTableError, CheckpointError,
            ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonFiniteLossError, numerics.NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
