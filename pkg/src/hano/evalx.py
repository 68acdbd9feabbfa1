"""Metrics and experiment drivers.

Drivers take already-trained predictors where possible; the ablation and
window-length drivers train their own models through :func:`train_model`.
Every driver returns an :class:`ExperimentReport`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .constitutive import PathConfig, cyclic_path_from_amplitudes, draw_cyclic_amplitudes, simulate_sequence
from .dataio import ChannelNormalizer, truncate_prefix
from .errors import ConfigurationError, DegenerateReferenceError
from .nopcore import ModelSpec, build_model, count_parameters
from .rollout import TorchPredictor, rollout_sequences
from .trainer import TrainConfig, fit

FULL_SCALE_REFERENCE = {
    "initial_state": {"rnn1": {"I": 0.030, "II": 0.359}, "rnn2": {"I": 0.023, "II": 0.106},
                      "hano3": {"I": 0.006, "II": 0.004}},
    "resolution": {"hano3": {"50": 0.011, "60": 0.012, "100": 0.006, "150": 0.007},
                   "rnn2": {"60": 0.09, "150": 0.04}},
    "multicycle": {"hano3": {"2": 0.006, "3": 0.006, "4": 0.008, "5": 0.008}},
    "noise": {"hano3": {"0.1": 0.015}},
    "attention": {"hano1": 0.2653, "hano2": 0.2332, "hano3": 0.2109, "fno": 0.3523, "ufno": 0.2467},
}


def nrmse(pred, ref) -> float:
    """Mean over sequences of sqrt(sum of squared error / sum of squared reference).

    Accepts a single array or a list of per-sequence arrays.
    """
    if isinstance(pred, np.ndarray) and isinstance(ref, np.ndarray) and pred.ndim <= 2:
        pred, ref = [pred], [ref]
    if len(pred) != len(ref):
        raise ValueError(f"{len(pred)} predictions for {len(ref)} references")
    vals = []
    for i, (p, r) in enumerate(zip(pred, ref)):
        p, r = np.asarray(p, dtype=float), np.asarray(r, dtype=float)
        if p.shape != r.shape:
            raise ValueError(f"sequence {i}: shape {p.shape} vs {r.shape}")
        den = np.sum(r**2)
        if not den > 0:
            raise DegenerateReferenceError(f"sequence {i} has zero-RMS reference")
        vals.append(np.sqrt(np.sum((p - r) ** 2) / den))
    if not vals:
        raise ValueError("no sequences to score")
    return float(np.mean(vals))


@dataclass
class ExperimentReport:
    experiment_id: str
    table: dict = field(default_factory=dict)
    trajectories: dict = field(default_factory=dict)
    config_digest: str = ""
    seeds: dict = field(default_factory=dict)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for cond, row in self.table.items():
            for key, v in (row.items() if isinstance(row, dict) else [("value", row)]):
                if isinstance(v, float) and key.startswith("nrmse") and v < 0:
                    raise ValueError(f"negative NRMSE for {cond}/{key}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls(**json.loads(text))

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        for case, tr in self.trajectories.items():
            _write_case_csv(out / f"{case}.csv", tr)
        return out / "report.json"


def _write_case_csv(path, tr):
    strain = np.asarray(tr["strain"])
    pred = np.asarray(tr["pred"])
    ref = np.asarray(tr["ref"])
    d = strain.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"strain_{i}" for i in range(d)] + [f"pred_stress_{i}" for i in range(d)]
                   + [f"ref_stress_{i}" for i in range(d)])
        for t in range(len(pred)):
            w.writerow([t] + [repr(float(x)) for x in (*strain[t], *pred[t], *ref[t])])


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- evaluation helpers ---------------------------------------------------------


def evaluate(predictor, seqs, start=None, noise=None, score_from=None):
    """Roll every sequence out and return (nrmse, predicted tails).

    Scoring covers steps ``score_from`` (default: the rollout start) onwards.
    """
    k = predictor.window
    start = k if start is None else start
    preds = rollout_sequences(predictor, seqs, start=start, noise=noise)
    score_from = start if score_from is None else score_from
    if score_from < start:
        raise ValueError("cannot score steps inside the seed window")
    cut = score_from - start
    value = nrmse([p[cut:] for p in preds], [s.stress[score_from:] for s in seqs])
    return value, preds


def _trajectory(seq, pred, start):
    return {"strain": seq.strain[start:].tolist(), "pred": np.asarray(pred).tolist(), "ref": seq.stress[start:].tolist()}


def make_testset_ii(seqs, rng, bounds=(0.3, 0.5)):
    """Prefix-truncated copies; the rollout then starts from a deformed state."""
    return [truncate_prefix(s, rng=rng, bounds=bounds) for s in seqs]


def train_model(spec: ModelSpec, train_seqs, cfg: TrainConfig, seed: int = 0, normalizer=None):
    """Build, normalise and fit one model; returns (model, normalizer, FitResult)."""
    n_val = max(1, int(round(cfg.val_fraction * len(train_seqs))))
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(len(train_seqs))
    val = [train_seqs[i] for i in sorted(perm[:n_val])]
    tr = [train_seqs[i] for i in sorted(perm[n_val:])]
    nz = normalizer or ChannelNormalizer().fit(tr)
    model = build_model(spec, seed=seed)
    result = fit(model, tr, val, replace(cfg, seed=seed), nz)
    return model, nz, result


# -- drivers --------------------------------------------------------------------


def exp_initial_state(predictors: dict, testset_i, testset_ii, keep_cases: int = 2) -> ExperimentReport:
    """NRMSE on full-history (I) and mid-path (II) rollouts for each model."""
    if not predictors:
        raise ConfigurationError("no models supplied")
    t0 = time.time()
    table, traj = {}, {}
    for name, pred in predictors.items():
        e1, p1 = evaluate(pred, testset_i)
        e2, p2 = evaluate(pred, testset_ii)
        table[name] = {"nrmse_I": e1, "nrmse_II": e2}
        for c in range(min(keep_cases, len(testset_ii))):
            traj[f"{name}_II_{c}"] = _trajectory(testset_ii[c], p2[c], pred.window)
    return ExperimentReport("initial_state", table, traj, wall_time=time.time() - t0,
                            extra={"full_scale_reference": FULL_SCALE_REFERENCE["initial_state"]})


def resolution_sequences(amplitudes, total_increments: int, params=None):
    """Cyclic sequences from stored amplitudes at ``total_increments`` per history."""
    out = []
    for i, amps in enumerate(amplitudes):
        amps = np.asarray(amps, dtype=float)
        per_cycle, rem = divmod(total_increments, len(amps))
        if rem:
            raise ConfigurationError(f"{total_increments} increments do not split over {len(amps)} cycles")
        path = cyclic_path_from_amplitudes(amps, per_cycle)
        out.append(simulate_sequence("elastoplastic", params, path, seq_id=i,
                                     meta={"amplitudes": amps.tolist(), "increments_per_cycle": per_cycle}))
    return out


def exp_resolution(predictors: dict, amplitudes, resolutions=(50, 60, 100, 150), params=None) -> ExperimentReport:
    t0 = time.time()
    table = {name: {} for name in predictors}
    for n in resolutions:
        seqs = resolution_sequences(amplitudes, n, params)
        for name, pred in predictors.items():
            table[name][f"nrmse_{n}"] = evaluate(pred, seqs)[0]
    return ExperimentReport("resolution", table, wall_time=time.time() - t0,
                            extra={"resolutions": list(resolutions), "full_scale_reference": FULL_SCALE_REFERENCE["resolution"]})


def exp_multicycle(predictor, cfg: PathConfig, cycle_counts=(2, 3, 4, 5), count: int = 50, seed: int = 0,
                   params=None) -> ExperimentReport:
    """Roll out on paths with more load/unload cycles than seen in training."""
    t0 = time.time()
    table = {}
    for c in cycle_counts:
        seqs = []
        for i in range(count):
            rng = np.random.default_rng([seed, c, i])
            amps = draw_cyclic_amplitudes(cfg, rng, cycles=c)
            path = cyclic_path_from_amplitudes(amps, cfg.increments_per_cycle)
            seqs.append(simulate_sequence("elastoplastic", params, path, seq_id=i, meta={"amplitudes": amps.tolist()}))
        table[f"cycles_{c}"] = {"nrmse": evaluate(predictor, seqs)[0]}
    return ExperimentReport("multicycle", table, seeds={"paths": seed}, wall_time=time.time() - t0,
                            extra={"full_scale_reference": FULL_SCALE_REFERENCE["multicycle"]})


def seed_window_noise(seqs, k: int, ratio: float, rng, start: int | None = None):
    """N(0, (ratio * sigma_std)^2) per component for each seed window."""
    start = k if start is None else start
    sigma_std = np.concatenate([s.stress for s in seqs]).std(0)
    return [rng.normal(0.0, 1.0, size=(k, s.dim)) * ratio * sigma_std for s in seqs]


def exp_noise(predictor, seqs, ratios=(0.0, 0.10), seed: int = 0) -> ExperimentReport:
    t0 = time.time()
    table = {}
    for r in ratios:
        rng = np.random.default_rng([seed, int(round(r * 1e6))])
        noise = seed_window_noise(seqs, predictor.window, r, rng)
        table[f"ratio_{r:g}"] = {"nrmse": evaluate(predictor, seqs, noise=noise)[0]}
    return ExperimentReport("noise", table, seeds={"noise": seed}, wall_time=time.time() - t0,
                            extra={"full_scale_reference": FULL_SCALE_REFERENCE["noise"]})


def exp_ablation_attention(template: ModelSpec, train_seqs, test_seqs, cfg: TrainConfig, seed: int = 0,
                           variants=("hano1", "hano2", "hano3", "fno", "ufno"), trained=None) -> ExperimentReport:
    """Train each variant with the same seed and schedule; report NRMSE and size.

    ``trained`` may map variant names to already-fitted (model, normalizer)
    pairs, optionally extended with the best validation loss.
    """
    t0 = time.time()
    table, models = {}, {}
    for v in variants:
        spec = replace(template, variant=v)
        if trained and v in trained:
            model, nz, *rest = trained[v]
            best = rest[0] if rest else None
        else:
            model, nz, res = train_model(spec, train_seqs, cfg, seed)
            best = res.best_val
        err, _ = evaluate(TorchPredictor(model, nz), test_seqs)
        table[v] = {"nrmse": err, "parameters": count_parameters(model), "best_val": best}
        models[v] = (model, nz)
    rep = ExperimentReport("attention", table, seeds={"init": seed, "train": seed}, wall_time=time.time() - t0,
                           config_digest=config_digest([template.to_dict(), cfg.to_dict()]),
                           extra={"full_scale_reference": FULL_SCALE_REFERENCE["attention"]})
    rep.models = models
    return rep


def exp_window_length(template: ModelSpec, train_seqs, test_seqs, cfg: TrainConfig,
                      windows=(2, 3, 4, 6, 8, 10, 14, 20), seed: int = 0, trained=None) -> ExperimentReport:
    """Retrain per window length; all models are scored on the same tail."""
    t0 = time.time()
    score_from = max(windows)
    short = [s.seq_id for s in test_seqs if s.length <= score_from]
    if short:
        raise ConfigurationError(f"test sequences {short[:5]} are not longer than k_max={score_from}")
    table, models = {}, {}
    for k in windows:
        spec = template.with_window(k)
        if trained and k in trained:
            model, nz = trained[k]
        else:
            model, nz, _ = train_model(spec, train_seqs, cfg, seed)
        err, _ = evaluate(TorchPredictor(model, nz), test_seqs, score_from=score_from)
        table[f"k_{k}"] = {"nrmse": err, "modes": spec.modes}
        models[k] = (model, nz)
    rep = ExperimentReport("window_length", table, seeds={"init": seed}, wall_time=time.time() - t0,
                           config_digest=config_digest([template.to_dict(), cfg.to_dict()]),
                           extra={"score_from": score_from})
    rep.models = models
    return rep
