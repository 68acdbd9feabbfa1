"""Command-line entry point: ``hano gen-data | train | rollout | experiment``.

Every command prints one JSON summary object on stdout; logs go to stderr.
Exit codes: 0 ok, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np
import torch

from . import pipelines
from .dataio import DatasetManifest, read_dataset, write_dataset
from .errors import ConfigurationError, GradientError, HanoError, IngestionError, ModelDefinitionError
from .nopcore import load_checkpoint, save_checkpoint
from .rollout import TorchPredictor, rollout, seed_window_from_sequence, write_trajectory_csv
from .trainer import write_history_csv

log = logging.getLogger("hano")

SCHEMA_VERSION = 1

_num = {"type": "number"}
_int = {"type": "integer"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hano run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _int,
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["elastoplastic", "hashin"]},
                "count": {"type": "integer", "minimum": 1},
                "n_train": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "path": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mode": {"enum": ["cyclic-1d", "random-walk-6d"]},
                        "increments_per_cycle": _int, "cycle_count": _int,
                        "e_load": _pair, "e_unload": _pair,
                        "eps_max": _num, "d_eps_max": _num, "d_eps_min": _num, "theta": _num,
                        "substeps": _int, "max_increments": _int,
                    },
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["fno", "ufno", "hano1", "hano2", "hano3", "rnn1", "rnn2"]},
                "fourier_layers": _int, "aeuf_layers": _int, "modes": _int, "width": _int, "heads": _int,
                "window": _int, "activation": {"type": "string"}, "projection_hidden": _int,
                "rnn_hidden": _int, "readout": {"enum": ["last", "mean"]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr0": _num, "weight_decay": _num, "lr_gamma": _num, "lr_step": _int, "patience": _int,
                "max_epochs": _int, "batch_size": _int, "ss_epochs": _int, "noise_start": _num,
                "noise_end": _num, "noise_step": _int, "noise_cap_epoch": _int, "val_fraction": _num,
                "val_mode": {"enum": ["rollout", "one-step"]}, "rnn_batch_sequences": _int,
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variants": {"type": "array", "items": {"type": "string"}},
                "variant": {"type": "string"},
                "rnn_seed": {"enum": ["zero", "warm"]},
                "truncate_bounds": _pair,
                "resolutions": {"type": "array", "items": _int},
                "cycles": {"type": "array", "items": _int},
                "count": _int,
                "ratios": {"type": "array", "items": _num},
                "windows": {"type": "array", "items": _int},
            },
        },
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(path) -> dict:
    """Read and schema-check a run configuration (``None`` -> empty)."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None


def _sections(cfg: dict) -> dict:
    return {k: cfg[k] for k in ("data", "model", "train", "experiment") if k in cfg}


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_gen_data(args) -> dict:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    data = dict(cfg.get("data", {}))
    if args.model is not None:
        data["model"] = args.model
    data.setdefault("model", "elastoplastic")
    if data["model"] not in ("elastoplastic", "hashin"):
        raise ConfigurationError(f"unknown material model {data['model']!r}")
    if args.count is not None:
        data["count"] = args.count
    if args.steps is not None:
        data["steps"] = args.steps
    count = int(data.get("count", 1000))
    data["count"] = count
    data.setdefault("n_train", max(1, int(0.8 * count)) if count > 1 else 0)
    pcfg = pipelines.path_config(data)
    from .constitutive import generate_sequences
    from .dataio import split_dataset

    try:
        seqs = generate_sequences(data["model"], count, pcfg, pipelines.seed_stream(seed, "data"))
    except ConfigurationError:
        raise
    except HanoError as exc:
        raise RuntimeError(f"generation failed: {exc}") from exc
    n_train = int(data["n_train"]) if count > 1 else 0
    if not 0 <= n_train <= count:
        raise ConfigurationError(f"n_train={n_train} outside [0, {count}]")
    train, test = split_dataset(seqs, n_train, np.random.default_rng(pipelines.seed_stream(seed, "split")))
    manifest = DatasetManifest(
        model_id=data["model"], global_seed=seed, path_config=pcfg.to_dict(),
        split={"train": [s.seq_id for s in train], "test": [s.seq_id for s in test]},
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(seqs, manifest, out)
    lengths = [s.length for s in seqs]
    return {
        "command": "gen-data",
        "out": str(out),
        "model": data["model"],
        "count": count,
        "lengths": {"min": min(lengths), "max": max(lengths), "mean": float(np.mean(lengths))},
        "strain_extrema": [float(min(s.strain.min() for s in seqs)), float(max(s.strain.max() for s in seqs))],
        "stress_extrema": [float(min(s.stress.min() for s in seqs)), float(max(s.stress.max() for s in seqs))],
        "seeds": {"global": seed, "data": pipelines.seed_stream(seed, "data"), "split": pipelines.seed_stream(seed, "split")},
        "sha256": _file_digest(out),
    }


def _read_data(path):
    if not Path(path).exists():
        raise ConfigurationError(f"dataset {path} not found")
    return read_dataset(path)


def cmd_train(args) -> dict:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    seqs, manifest = _read_data(args.data)
    ids = set(manifest.split.get("train", [])) or {s.seq_id for s in seqs}
    train = [s for s in seqs if s.seq_id in ids]
    if len(train) < 2:
        raise ConfigurationError("need at least two training sequences")
    model_cfg = dict(cfg.get("model", {}))
    if args.variant is not None:
        model_cfg["variant"] = args.variant
    train_cfg = dict(cfg.get("train", {}))
    if args.epochs is not None:
        train_cfg["max_epochs"] = args.epochs
        train_cfg["patience"] = min(train_cfg.get("patience", 200), args.epochs)
    spec = pipelines.model_spec(model_cfg, train[0].dim)
    tcfg = pipelines.train_config(train_cfg, seed)
    from .evalx import train_model

    t0 = time.time()
    try:
        model, nz, res = train_model(spec, train, tcfg, pipelines.seed_stream(seed, "init"))
    except GradientError as exc:
        raise RuntimeError(f"training diverged: {exc}") from exc
    out = Path(args.out_checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    seeds = {"global": seed, "init": pipelines.seed_stream(seed, "init"), "train": tcfg.seed}
    save_checkpoint(out, model, nz, epoch=res.best_epoch, history=res.history,
                    extra={"seeds": seeds, "train_config": tcfg.to_dict()})
    metrics = out.with_suffix(out.suffix + ".metrics.csv")
    write_history_csv(metrics, res.history)
    return {
        "command": "train",
        "checkpoint": str(out),
        "metrics_csv": str(metrics),
        "variant": spec.variant,
        "epochs_run": len(res.history),
        "best_epoch": res.best_epoch,
        "final_val_loss": res.best_val,
        "stopped_early": res.stopped_early,
        "seeds": seeds,
        "wall_time": time.time() - t0,
    }


def cmd_rollout(args) -> dict:
    if not Path(args.checkpoint).exists():
        raise ConfigurationError(f"checkpoint {args.checkpoint} not found")
    model, header = load_checkpoint(args.checkpoint)
    seqs, _ = _read_data(args.data)
    by_id = {s.seq_id: s for s in seqs}
    if args.sequence_id not in by_id:
        raise ConfigurationError(f"sequence id {args.sequence_id} not in dataset")
    seq = by_id[args.sequence_id]
    k = model.spec.window
    start = k if args.start_index is None else args.start_index
    if start < k or start > seq.length:
        raise ConfigurationError(f"start index {start} must lie in [{k}, {seq.length}]")
    req = seed_window_from_sequence(seq, start, k)
    pred = rollout(TorchPredictor(model, header["normalizer"]), req)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ref = seq.stress[start:]
    write_trajectory_csv(out, seq.strain[start:], pred, ref)
    from .evalx import nrmse

    score = nrmse(pred, ref) if len(ref) and np.sum(ref**2) > 0 else None
    return {"command": "rollout", "out": str(out), "sequence_id": args.sequence_id, "start_index": start,
            "steps": int(len(pred)), "nrmse": score}


def cmd_experiment(args) -> dict:
    if args.name not in pipelines.EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {args.name!r}; expected one of {pipelines.EXPERIMENTS}")
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    cache = Path(args.cache_dir) if args.cache_dir else pipelines.cache_dir()
    try:
        report, _ = pipelines.run_experiment(args.name, _sections(cfg), seed, cache)
    except ConfigurationError:
        raise
    except Exception as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise RuntimeError(f"experiment {args.name} failed: {exc}") from exc
    path = report.write(out)
    return {"command": "experiment", "name": args.name, "report": str(path), "table": report.table,
            "seeds": report.seeds, "wall_time": report.wall_time}


def _threads(n):
    n = n if n is not None else os.environ.get("HANO_THREADS")
    if n is None:
        return
    n = int(n)
    if n < 1:
        raise ConfigurationError("--threads must be >= 1")
    torch.set_num_threads(n)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hano", description="History-aware neural operator surrogates for path-dependent materials.")
    p.add_argument("--threads", type=int, default=None, help="cap on intra-op threads (env HANO_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="simulate a strain-stress dataset")
    g.add_argument("--config")
    g.add_argument("--model")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--steps", type=int, help="increments per history (elastoplastic) or sub-steps per increment (hashin)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model on a dataset's train split")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--variant")
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="autoregressive prediction along one stored strain path")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--sequence-id", type=int, default=0)
    r.add_argument("--start-index", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("experiment", help="run a named experiment end to end")
    e.add_argument("--name", required=True)
    e.add_argument("--config")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--cache-dir", help="reuse trained models across runs (env HANO_CACHE)")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(json.dumps({"status": "error", "exit_code": 2, "error": str(exc)}))
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _threads(args.threads)
        summary = args.func(args)
    except (ConfigurationError, ModelDefinitionError, IngestionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"status": "error", "exit_code": 2, "error": str(exc)}))
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        log.exception("command failed")
        print(json.dumps({"status": "error", "exit_code": 3, "error": str(exc)}))
        return 3
    summary["status"] = "ok"
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
