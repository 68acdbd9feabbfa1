"""Autoregressive inference over a prescribed strain path.

A *predictor* maps a history window plus the next strain increment to the
next stress. Stateless predictors (neural operators, the ground-truth
oracle) see only the window; recurrent ones also carry a hidden state that
is created from the seed window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .constitutive import ElastoplasticParams, ep1d_update, ep_state_from_pair
from .errors import RolloutError


class TorchPredictor:
    """Wrap a trained network (+ optional normaliser) as a raw-unit predictor."""

    def __init__(self, model, normalizer=None, rnn_seed: str = "zero"):
        self.model = model
        self.normalizer = normalizer
        self.window = model.spec.window
        self.recurrent = getattr(model, "recurrent", False)
        if rnn_seed not in ("zero", "warm"):
            raise ValueError(f"unknown rnn seeding mode {rnn_seed!r}")
        self.rnn_seed = rnn_seed

    def _t(self, a):
        dtype = next(self.model.parameters()).dtype
        return torch.as_tensor(np.asarray(a), dtype=dtype)

    def _norm(self, strain, stress, d_eps):
        nz = self.normalizer
        if nz is None:
            return strain, stress, d_eps
        return nz.strain(strain), nz.stress(stress), nz.increment(d_eps)

    def _denorm(self, s):
        return s if self.normalizer is None else self.normalizer.inverse_stress(s)

    def start(self, strain, stress):
        if not self.recurrent:
            return None
        incs = np.diff(strain, axis=1)
        strain, stress, incs = self._norm(strain, stress, incs)
        st, sg = self._t(strain), self._t(stress)
        with torch.no_grad():
            h = self.model.init_hidden(st.shape[0], st)
            if self.rnn_seed == "warm":
                # hold the first observed pair for k steps so h settles before the window
                for _ in range(self.window):
                    h, _ = self.model.step(h, st[:, 0], sg[:, 0], torch.zeros_like(st[:, 0]))
            if st.shape[1] > 1:
                _, h = self.model.run(st[:, :-1], sg[:, :-1], self._t(incs), h)
        return h

    def predict(self, state, strain, stress, d_eps):
        strain, stress, d_eps = self._norm(strain, stress, d_eps)
        with torch.no_grad():
            if self.recurrent:
                state, y = self.model.step(state, self._t(strain[:, -1]), self._t(stress[:, -1]), self._t(d_eps))
            else:
                y = self.model(self._t(strain), self._t(stress), self._t(d_eps))
        return state, self._denorm(y.double().numpy())


class ElastoplasticOracle:
    """The exact return map posing as a predictor.

    The internal state is recovered from the newest pair in the window, which
    is exact for paths that start from the virgin state.
    """

    recurrent = False

    def __init__(self, params: ElastoplasticParams | None = None, window: int = 10):
        self.params = params or ElastoplasticParams()
        self.window = window

    def start(self, strain, stress):
        return None

    def predict(self, state, strain, stress, d_eps):
        out = np.empty((strain.shape[0], 1))
        for b in range(strain.shape[0]):
            st = ep_state_from_pair(self.params, float(strain[b, -1, 0]), float(stress[b, -1, 0]))
            _, out[b, 0] = ep1d_update(self.params, st, float(d_eps[b, 0]))
        return state, out


@dataclass
class RolloutRequest:
    window_strain: np.ndarray
    window_stress: np.ndarray
    increments: np.ndarray
    record_windows: bool = False

    def __post_init__(self):
        self.window_strain = np.atleast_2d(np.asarray(self.window_strain, dtype=float))
        self.window_stress = np.atleast_2d(np.asarray(self.window_stress, dtype=float))
        inc = np.asarray(self.increments, dtype=float)
        self.increments = inc.reshape(len(inc), self.window_strain.shape[1]) if inc.size else np.zeros((0, self.window_strain.shape[1]))
        if self.window_strain.shape != self.window_stress.shape:
            raise RolloutError("window strain and stress shapes differ")
        if not np.all(np.isfinite(self.increments)):
            raise RolloutError("non-finite strain increments")


def rollout_batch(predictor, window_strain, window_stress, increments, record_windows=False, lengths=None):
    """Roll B windows forward over (B, T_f, d) increments; returns (B, T_f, d) stresses.

    ``lengths`` marks how many increments of each row are real; past that a
    row holds its last stress and is not checked for finiteness.
    """
    ws = np.array(window_strain, dtype=float)
    wg = np.array(window_stress, dtype=float)
    inc = np.asarray(increments, dtype=float)
    if ws.ndim != 3 or ws.shape != wg.shape:
        raise RolloutError(f"bad window shapes {ws.shape} / {wg.shape}")
    B, k, d = ws.shape
    if k != predictor.window:
        raise RolloutError(f"window length {k} does not match the model's k={predictor.window}")
    T_f = inc.shape[1]
    lengths = np.full(B, T_f) if lengths is None else np.asarray(lengths)
    out = np.empty((B, T_f, d))
    windows = [] if record_windows else None
    state = predictor.start(ws, wg)
    for t in range(T_f):
        state, pred = predictor.predict(state, ws, wg, inc[:, t])
        done = t >= lengths
        if done.any():
            pred = np.where(done[:, None], wg[:, -1], pred)
        if not np.all(np.isfinite(pred)):
            raise RolloutError("non-finite prediction", step=t)
        out[:, t] = pred
        new_strain = ws[:, -1] + inc[:, t]
        ws = np.concatenate([ws[:, 1:], new_strain[:, None]], axis=1)
        wg = np.concatenate([wg[:, 1:], pred[:, None]], axis=1)
        if record_windows:
            windows.append((ws.copy(), wg.copy()))
    return (out, windows) if record_windows else out


def rollout(predictor, req: RolloutRequest):
    """Single-trajectory rollout; returns (T_f, d) predicted stresses."""
    res = rollout_batch(
        predictor, req.window_strain[None], req.window_stress[None], req.increments[None],
        record_windows=req.record_windows,
    )
    if req.record_windows:
        out, windows = res
        return out[0], [(a[0], b[0]) for a, b in windows]
    return res[0]


def seed_window_from_sequence(seq, start_index: int, k: int) -> RolloutRequest:
    """Window = steps [start - k, start); increments = the rest of the path."""
    if start_index < k:
        raise RolloutError(f"start_index={start_index} < k={k}")
    if start_index > seq.length:
        raise RolloutError(f"start_index={start_index} beyond sequence length {seq.length}")
    incs = seq.strain[start_index:] - seq.strain[start_index - 1 : -1] if start_index < seq.length else np.zeros((0, seq.dim))
    return RolloutRequest(seq.strain[start_index - k : start_index], seq.stress[start_index - k : start_index], incs)


def rollout_sequences(predictor, seqs, start=None, noise=None):
    """Roll every sequence out from ``start`` (default k); returns predicted tails.

    Sequences of unequal length are padded with zero increments; predictions
    past each sequence's end are dropped. ``noise`` is an optional list of
    per-sequence arrays added to the seed-window stresses.
    """
    k = predictor.window
    start = k if start is None else start
    starts = [start] * len(seqs) if np.isscalar(start) else list(start)
    reqs = [seed_window_from_sequence(s, st, k) for s, st in zip(seqs, starts)]
    if not reqs:
        return []
    d = reqs[0].window_strain.shape[1]
    T_max = max(len(r.increments) for r in reqs)
    inc = np.zeros((len(reqs), T_max, d))
    for i, r in enumerate(reqs):
        inc[i, : len(r.increments)] = r.increments
    ws = np.stack([r.window_strain for r in reqs])
    wg = np.stack([r.window_stress for r in reqs])
    if noise is not None:
        wg = wg + np.stack(noise)
    out = rollout_batch(predictor, ws, wg, inc, lengths=[len(r.increments) for r in reqs])
    return [out[i, : len(r.increments)] for i, r in enumerate(reqs)]


def write_trajectory_csv(path, strain, predicted, reference=None):
    strain = np.atleast_2d(np.asarray(strain))
    predicted = np.atleast_2d(np.asarray(predicted))
    d = strain.shape[1]
    header = ["step"] + [f"strain_{i}" for i in range(d)] + [f"pred_stress_{i}" for i in range(d)]
    if reference is not None:
        reference = np.atleast_2d(np.asarray(reference))
        header += [f"ref_stress_{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(predicted)):
            row = [t] + [repr(float(x)) for x in strain[t]] + [repr(float(x)) for x in predicted[t]]
            if reference is not None:
                row += [repr(float(x)) for x in reference[t]]
            w.writerow(row)
