"""End-to-end desk-scale runs: data, cached training, and the named experiments.

Settings are plain dicts so they can come straight from a run configuration.
Trained models are cached on disk keyed by a digest of everything that
determines them (spec, training config, seed and the exact training data).
"""

from __future__ import annotations

import hashlib
import logging
import os
import zlib
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import evalx
from .constitutive import PathConfig, generate_sequences
from .dataio import split_dataset
from .errors import ConfigurationError
from .nopcore import ModelSpec, load_checkpoint, save_checkpoint
from .rollout import TorchPredictor
from .trainer import TrainConfig

log = logging.getLogger(__name__)

EXPERIMENTS = ("initial-state", "resolution", "multicycle", "noise", "attention", "window-length")

DESK_DEFAULTS = {
    "elastoplastic": {
        "data": {"model": "elastoplastic", "count": 250, "n_train": 200, "steps": 100},
        "model": {"width": 32, "modes": 5, "window": 10},
        "train": {"max_epochs": 100, "ss_epochs": 60, "lr_step": 40, "noise_step": 20, "noise_cap_epoch": 80,
                  "patience": 100, "rnn_batch_sequences": 16},
    },
    "hashin": {
        "data": {"model": "hashin", "count": 250, "n_train": 200},
        "model": {"width": 32, "modes": 5, "window": 10},
        "train": {"max_epochs": 100, "ss_epochs": 60, "lr_step": 40, "noise_step": 20, "noise_cap_epoch": 80,
                  "patience": 100, "rnn_batch_sequences": 16},
    },
}


def seed_stream(seed: int, name: str) -> int:
    """Named, independent sub-seed (data / init / train / noise) derived from one seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def cache_dir() -> Path | None:
    d = os.environ.get("HANO_CACHE")
    return Path(d) if d else None


def _known(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return dict(d)


def path_config(data: dict) -> PathConfig:
    model = data.get("model", "elastoplastic")
    kw = _known(PathConfig, data.get("path", {}))
    if model == "elastoplastic":
        kw.setdefault("mode", "cyclic-1d")
        if "steps" in data:
            cycles = kw.get("cycle_count", PathConfig.cycle_count)
            if data["steps"] % cycles:
                raise ConfigurationError(f"steps={data['steps']} not divisible by cycle_count={cycles}")
            kw["increments_per_cycle"] = data["steps"] // cycles
    elif model == "hashin":
        kw.setdefault("mode", "random-walk-6d")
        if "steps" in data:
            kw["substeps"] = data["steps"]
    else:
        raise ConfigurationError(f"unknown material model {model!r}")
    return PathConfig(**kw)


def make_dataset(data: dict, seed: int):
    """Generate sequences and a train/test split; returns (seqs, train, test, PathConfig)."""
    cfg = path_config(data)
    count = int(data.get("count", 250))
    n_train = int(data.get("n_train", int(0.8 * count)))
    if count < 2 or not 1 <= n_train < count:
        raise ConfigurationError(f"need 1 <= n_train < count, got n_train={n_train}, count={count}")
    seqs = generate_sequences(data.get("model", "elastoplastic"), count, cfg, seed_stream(seed, "data"))
    train, test = split_dataset(seqs, n_train, np.random.default_rng(seed_stream(seed, "split")))
    return seqs, train, test, cfg


def model_spec(model: dict, dim: int, variant: str | None = None) -> ModelSpec:
    kw = _known(ModelSpec, model)
    kw["dim"] = dim
    if variant is not None:
        kw["variant"] = variant
    return ModelSpec(**kw)


def train_config(train: dict, seed: int) -> TrainConfig:
    kw = _known(TrainConfig, train)
    kw["seed"] = seed_stream(seed, "train")
    return TrainConfig(**kw)


def _data_digest(seqs) -> str:
    h = hashlib.sha256()
    for s in seqs:
        h.update(s.strain.tobytes())
        h.update(s.stress.tobytes())
    return h.hexdigest()[:16]


def trained_model(spec: ModelSpec, train_seqs, cfg: TrainConfig, seed: int, cache: Path | None = None):
    """Fit (or load from ``cache``) one model; returns (model, normalizer, info)."""
    init_seed = seed_stream(seed, "init")
    key = evalx.config_digest([spec.to_dict(), cfg.to_dict(), init_seed, _data_digest(train_seqs)])
    path = None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        path = cache / f"{spec.variant}_k{spec.window}_{key}.ckpt"
        if path.exists():
            model, header = load_checkpoint(path)
            log.info("loaded cached %s", path.name)
            return model, header["normalizer"], {"cached": True, "key": key, **header["extra"]}
    model, nz, res = evalx.train_model(spec, train_seqs, cfg, init_seed)
    info = {"best_epoch": res.best_epoch, "best_val": res.best_val, "epochs": len(res.history)}
    if path is not None:
        save_checkpoint(path, model, nz, epoch=res.best_epoch, history=res.history, extra=info)
        # reload so cached and fresh runs use bit-identical float32 weights
        model, header = load_checkpoint(path)
        nz = header["normalizer"]
    return model, nz, {"cached": False, "key": key, **info}


def settings(kind: str, overrides: dict | None = None) -> dict:
    """Desk defaults for ``kind`` with section-wise overrides applied."""
    base = DESK_DEFAULTS[kind]
    out = {sec: dict(base.get(sec, {})) for sec in ("data", "model", "train", "experiment")}
    for sec, vals in (overrides or {}).items():
        if sec not in out:
            raise ConfigurationError(f"unknown config section {sec!r}")
        if sec == "data" and "path" in vals:
            out[sec]["path"] = dict(vals["path"])
        out[sec].update({k: v for k, v in vals.items() if k != "path"})
    return out


def run_experiment(name: str, config: dict | None = None, seed: int = 0, cache: Path | None = None):
    """Run one named experiment end to end; returns (report, trained models)."""
    if name not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    kind = "hashin" if name in ("attention", "window-length") else "elastoplastic"
    if config and config.get("data", {}).get("model") not in (None, kind):
        raise ConfigurationError(f"experiment {name} runs on {kind} data")
    st = settings(kind, config)
    exp = st["experiment"]
    seqs, train, test, pcfg = make_dataset(st["data"], seed)
    dim = seqs[0].dim
    tcfg = train_config(st["train"], seed)
    seeds = {n: seed_stream(seed, n) for n in ("data", "split", "init", "train", "noise")}

    def fitted(variant, window=None):
        spec = model_spec(st["model"], dim, variant)
        if window is not None:
            spec = spec.with_window(window)
        model, nz, info = trained_model(spec, train, tcfg, seed, cache)
        return model, nz, info

    models = {}
    if name == "initial-state":
        preds = {}
        for v in exp.get("variants", ["rnn1", "rnn2", "hano3"]):
            m, nz, _ = fitted(v)
            models[v] = (m, nz)
            preds[v] = TorchPredictor(m, nz, rnn_seed=exp.get("rnn_seed", "zero"))
        rng = np.random.default_rng(seed_stream(seed, "truncate"))
        test_ii = evalx.make_testset_ii(test, rng, tuple(exp.get("truncate_bounds", (0.3, 0.5))))
        report = evalx.exp_initial_state(preds, test, test_ii)
    elif name == "resolution":
        preds = {}
        for v in exp.get("variants", ["rnn2", "hano3"]):
            m, nz, _ = fitted(v)
            models[v] = (m, nz)
            preds[v] = TorchPredictor(m, nz)
        amps = [s.meta["amplitudes"] for s in test]
        report = evalx.exp_resolution(preds, amps, tuple(exp.get("resolutions", (50, 60, 100, 150))))
    elif name == "multicycle":
        m, nz, _ = fitted(exp.get("variant", "hano3"))
        models["hano3"] = (m, nz)
        report = evalx.exp_multicycle(TorchPredictor(m, nz), pcfg, tuple(exp.get("cycles", (2, 3, 4, 5))),
                                      count=int(exp.get("count", len(test))), seed=seed_stream(seed, "multicycle"))
    elif name == "noise":
        m, nz, _ = fitted(exp.get("variant", "hano3"))
        models["hano3"] = (m, nz)
        report = evalx.exp_noise(TorchPredictor(m, nz), test, tuple(exp.get("ratios", (0.0, 0.10))),
                                 seed=seeds["noise"])
    elif name == "attention":
        variants = tuple(exp.get("variants", ("hano1", "hano2", "hano3", "fno", "ufno")))
        trained = {}
        for v in variants:
            m, nz, info = fitted(v)
            trained[v] = (m, nz, info.get("best_val"))
        template = model_spec(st["model"], dim)
        report = evalx.exp_ablation_attention(template, train, test, tcfg, seeds["init"], variants, trained)
        models = {v: t[:2] for v, t in trained.items()}
    else:
        windows = tuple(exp.get("windows", (2, 3, 4, 6, 8, 10, 14, 20)))
        variant = exp.get("variant", "hano3")
        trained = {}
        for k in windows:
            m, nz, _ = fitted(variant, window=k)
            trained[k] = (m, nz)
        template = model_spec(st["model"], dim, variant)
        report = evalx.exp_window_length(template, train, test, tcfg, windows, seeds["init"], trained)
        models = {f"k_{k}": v for k, v in trained.items()}
    report.seeds = seeds
    report.config_digest = evalx.config_digest(st)
    report.extra = dict(report.extra, settings=st)
    return report, models
