"""Training loop: Adam with decoupled weight decay, step LR decay, early
stopping, scheduled sampling and epoch-ramped stress-noise injection."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .dataio import ChannelNormalizer
from .errors import GradientError, RolloutError
from .rollout import TorchPredictor, rollout_sequences

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    lr_gamma: float = 0.5
    lr_step: int = 100
    patience: int = 200
    max_epochs: int = 1000
    batch_size: int = 256
    ss_epochs: int = 500
    noise_start: float = 0.001
    noise_end: float = 0.020
    noise_step: int = 50
    noise_cap_epoch: int = 200
    seed: int = 0
    val_fraction: float = 0.1
    # "rollout": autoregressive MSE on validation paths; "one-step": teacher-forced MSE
    val_mode: str = "rollout"
    rnn_batch_sequences: int = 16

    def __post_init__(self):
        positive = ("lr_gamma", "lr_step", "max_epochs", "batch_size", "ss_epochs", "noise_step",
                    "noise_cap_epoch", "rnn_batch_sequences")
        bad = [k for k in positive if getattr(self, k) <= 0]
        if self.lr0 < 0 or self.weight_decay < 0 or self.noise_start < 0 or self.noise_end < 0:
            bad.append("non-negative rates")
        if self.patience < 0 or self.patience > self.max_epochs:
            bad.append("patience")
        if self.val_mode not in ("rollout", "one-step"):
            bad.append("val_mode")
        if bad:
            from .errors import ConfigurationError

            raise ConfigurationError(f"invalid TrainConfig fields: {bad}")

    def to_dict(self):
        return asdict(self)


# -- schedules ---------------------------------------------------------------


def teacher_forcing_ratio(epoch: int, ss_epochs: int = 500) -> float:
    return max(0.0, 1.0 - epoch / ss_epochs)


def noise_sigma(epoch: int, start: float = 0.001, end: float = 0.020, step: int = 50, cap_epoch: int = 200) -> float:
    """Staircase from ``start`` to ``end`` in uniform jumps every ``step`` epochs."""
    n_jumps = cap_epoch // step
    return start + (end - start) / n_jumps * min(epoch // step, n_jumps)


def learning_rate(epoch: int, lr0: float = 1e-3, gamma: float = 0.5, step: int = 100) -> float:
    return lr0 * gamma ** (epoch // step)


def schedules(cfg: TrainConfig, epoch: int) -> tuple[float, float, float]:
    return (
        learning_rate(epoch, cfg.lr0, cfg.lr_gamma, cfg.lr_step),
        teacher_forcing_ratio(epoch, cfg.ss_epochs),
        noise_sigma(epoch, cfg.noise_start, cfg.noise_end, cfg.noise_step, cfg.noise_cap_epoch),
    )


# -- loss and optimiser --------------------------------------------------------


def mse_loss(pred, target, groups=None):
    """Mean over sequences of the per-sequence mean squared error.

    ``groups`` labels the sequence each row belongs to; without it every row
    is weighted equally.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    err = (pred - target) ** 2
    per_row = err.reshape(err.shape[0], -1).mean(dim=1) if isinstance(err, torch.Tensor) else err.reshape(len(err), -1).mean(1)
    if groups is None:
        return per_row.mean()
    if isinstance(per_row, torch.Tensor):
        g = torch.as_tensor(np.asarray(groups))
        uniq, inv = torch.unique(g, return_inverse=True)
        sums = torch.zeros(len(uniq), dtype=per_row.dtype).index_add_(0, inv, per_row)
        counts = torch.zeros(len(uniq), dtype=per_row.dtype).index_add_(0, inv, torch.ones_like(per_row))
        return (sums / counts).mean()
    groups = np.asarray(groups)
    return float(np.mean([per_row[groups == u].mean() for u in np.unique(groups)]))


@dataclass
class TrainState:
    """Optimiser moments plus early-stopping bookkeeping."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    epoch: int = 0
    best_val: float = math.inf
    since_improvement: int = 0
    history: list = field(default_factory=list)


def adam_step(params: dict, grads: dict, state: TrainState, lr: float, weight_decay: float = 0.0,
              betas=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """Adam with decoupled weight decay, updating ``params`` tensors in place."""
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise GradientError(f"non-finite gradient for {name}; step rejected")
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if weight_decay:
                p.mul_(1 - lr * weight_decay)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params


# -- data preparation ----------------------------------------------------------


class _Prepared:
    """Padded, normalised train sequences plus precomputed window indices."""

    def __init__(self, seqs, normalizer: ChannelNormalizer, k: int):
        self.n = len(seqs)
        self.k = k
        self.lengths = np.array([s.length for s in seqs])
        d = seqs[0].dim
        T = int(self.lengths.max())
        self.strain = np.zeros((self.n, T, d))
        self.stress = np.zeros((self.n, T, d))
        for i, s in enumerate(seqs):
            self.strain[i, : s.length] = normalizer.strain(s.strain)
            self.stress[i, : s.length] = normalizer.stress(s.stress)
        # increments in normalised strain units: strain scale only, no shift
        raw_inc = np.zeros((self.n, T, d))
        for i, s in enumerate(seqs):
            raw_inc[i, 1 : s.length] = normalizer.increment(np.diff(s.strain, axis=0))
        self.inc_into = raw_inc  # inc_into[t] = eps[t] - eps[t-1]
        seq_idx, t_idx = [], []
        for i, L in enumerate(self.lengths):
            t = np.arange(k, L)
            seq_idx.append(np.full(len(t), i))
            t_idx.append(t)
        self.seq_idx = np.concatenate(seq_idx) if seq_idx else np.zeros(0, int)
        self.t_idx = np.concatenate(t_idx) if t_idx else np.zeros(0, int)
        self.hist = self.t_idx[:, None] + np.arange(-k, 0)[None, :]
        self.win_strain = self.strain[self.seq_idx[:, None], self.hist]
        self.win_inc = self.inc_into[self.seq_idx, self.t_idx]
        self.win_target = self.stress[self.seq_idx, self.t_idx]


def _shadow_stress(model, prep: _Prepared, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Scheduled-sampling stress buffer for one epoch.

    Ground-truth entries carry N(0, sigma^2) noise; each entry from step k on
    is replaced by the model's own prediction with probability 1 - alpha.
    """
    shadow = prep.stress + rng.normal(0.0, sigma, size=prep.stress.shape) if sigma > 0 else prep.stress.copy()
    take_pred = rng.uniform(size=prep.stress.shape[:2]) >= alpha
    if alpha >= 1.0:
        return shadow
    dtype = next(model.parameters()).dtype
    k, T = prep.k, prep.stress.shape[1]
    with torch.no_grad():
        if model.recurrent:
            st = torch.as_tensor(prep.strain, dtype=dtype)
            inc = torch.as_tensor(prep.inc_into, dtype=dtype)
            h = model.init_hidden(prep.n, st)
            for t in range(T - 1):
                sg = torch.as_tensor(shadow[:, t], dtype=dtype)
                h, y = model.step(h, st[:, t], sg, inc[:, t + 1])
                if t + 1 >= k:
                    sel = take_pred[:, t + 1] & (prep.lengths > t + 1)
                    shadow[sel, t + 1] = y.double().numpy()[sel]
        else:
            for t in range(k, T):
                active = np.nonzero(prep.lengths > t)[0]
                rows = active[take_pred[active, t]]
                if len(rows) == 0:
                    continue
                ws = torch.as_tensor(prep.strain[rows, t - k : t], dtype=dtype)
                wg = torch.as_tensor(shadow[rows, t - k : t], dtype=dtype)
                de = torch.as_tensor(prep.inc_into[rows, t], dtype=dtype)
                shadow[rows, t] = model(ws, wg, de).double().numpy()
    return shadow


def _param_dict(model):
    return dict(model.named_parameters())


def train_epoch(model, prep: _Prepared, cfg: TrainConfig, epoch: int, rng: np.random.Generator,
                adam: TrainState, lr: float | None = None) -> float:
    """One pass over the training windows (or sequences, for recurrent models)."""
    lr_e, alpha, sigma = schedules(cfg, epoch)
    lr = lr_e if lr is None else lr
    shadow = _shadow_stress(model, prep, alpha, sigma, rng)
    dtype = next(model.parameters()).dtype
    params = _param_dict(model)
    model.train()
    losses, weights = [], []
    if model.recurrent:
        order = rng.permutation(prep.n)
        T = prep.stress.shape[1]
        for start in range(0, prep.n, cfg.rnn_batch_sequences):
            rows = np.sort(order[start : start + cfg.rnn_batch_sequences])
            st = torch.as_tensor(prep.strain[rows, : T - 1], dtype=dtype)
            sg = torch.as_tensor(shadow[rows, : T - 1], dtype=dtype)
            inc = torch.as_tensor(prep.inc_into[rows, 1:], dtype=dtype)
            tgt = torch.as_tensor(prep.stress[rows, 1:], dtype=dtype)
            mask = torch.as_tensor(np.arange(1, T)[None, :] < prep.lengths[rows, None], dtype=dtype)
            y, _ = model.run(st, sg, inc)
            per_step = ((y - tgt) ** 2).mean(dim=-1) * mask
            loss = (per_step.sum(1) / mask.sum(1)).mean()
            losses.append(_step(model, params, loss, adam, lr, cfg.weight_decay))
            weights.append(len(rows))
    else:
        win_stress = shadow[prep.seq_idx[:, None], prep.hist]
        order = rng.permutation(len(prep.seq_idx))
        for start in range(0, len(order), cfg.batch_size):
            rows = np.sort(order[start : start + cfg.batch_size])
            pred = model(
                torch.as_tensor(prep.win_strain[rows], dtype=dtype),
                torch.as_tensor(win_stress[rows], dtype=dtype),
                torch.as_tensor(prep.win_inc[rows], dtype=dtype),
            )
            tgt = torch.as_tensor(prep.win_target[rows], dtype=dtype)
            loss = mse_loss(pred, tgt, groups=prep.seq_idx[rows])
            losses.append(_step(model, params, loss, adam, lr, cfg.weight_decay))
            weights.append(len(rows))
    model.eval()
    return float(np.average(losses, weights=weights))


def _step(model, params, loss, adam, lr, wd) -> float:
    if not torch.isfinite(loss):
        raise GradientError(f"non-finite training loss {loss.item()!r}")
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    adam_step(params, dict(zip(params.keys(), grads)), adam, lr, wd)
    return float(loss.item())


def validation_loss(model, seqs, normalizer: ChannelNormalizer, mode: str = "rollout") -> float:
    """MSE in normalised stress units on held-out sequences."""
    model.eval()
    k = model.spec.window
    if mode == "rollout":
        try:
            preds = rollout_sequences(TorchPredictor(model, normalizer), seqs)
        except RolloutError as exc:
            # a diverged rollout is the worst possible validation score, not a crash
            log.info("validation rollout diverged at step %s", exc.step)
            return math.inf
        errs = [
            float(np.mean(((p - s.stress[k:]) / normalizer.stress_scale) ** 2)) for p, s in zip(preds, seqs)
        ]
        return float(np.mean(errs))
    prep = _Prepared(seqs, normalizer, k)
    dtype = next(model.parameters()).dtype
    if model.recurrent:
        T = prep.stress.shape[1]
        with torch.no_grad():
            y, _ = model.run(
                torch.as_tensor(prep.strain[:, : T - 1], dtype=dtype),
                torch.as_tensor(prep.stress[:, : T - 1], dtype=dtype),
                torch.as_tensor(prep.inc_into[:, 1:], dtype=dtype),
            )
        y = y.double().numpy()
        errs = [np.mean((y[i, k - 1 : L - 1] - prep.stress[i, k:L]) ** 2) for i, L in enumerate(prep.lengths)]
        return float(np.mean(errs))
    with torch.no_grad():
        pred = model(
            torch.as_tensor(prep.win_strain, dtype=dtype),
            torch.as_tensor(prep.stress[prep.seq_idx[:, None], prep.hist], dtype=dtype),
            torch.as_tensor(prep.win_inc, dtype=dtype),
        )
    return float(mse_loss(pred.double().numpy(), prep.win_target, groups=prep.seq_idx))


@dataclass
class FitResult:
    state_dict: dict
    history: list
    best_epoch: int
    best_val: float
    stopped_early: bool = False


def fit(model, train_seqs, val_seqs, cfg: TrainConfig, normalizer: ChannelNormalizer | None = None,
        callback=None) -> FitResult:
    """Train until max_epochs or until ``patience`` epochs pass without a new best
    validation loss; the model is left holding the best weights."""
    if not val_seqs:
        raise ValueError("validation split is empty")
    nz = normalizer or ChannelNormalizer.identity(train_seqs[0].dim)
    prep = _Prepared(train_seqs, nz, model.spec.window)
    adam = TrainState()
    best_epoch = -1
    best_state = copy.deepcopy(model.state_dict())
    history = adam.history
    stopped = False
    for epoch in range(cfg.max_epochs):
        lr, alpha, sigma = schedules(cfg, epoch)
        rng = np.random.default_rng([cfg.seed, epoch])
        train_loss = train_epoch(model, prep, cfg, epoch, rng, adam)
        val = validation_loss(model, val_seqs, nz, cfg.val_mode)
        if math.isnan(val):
            raise GradientError(f"NaN validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "lr": lr, "alpha": alpha, "sigma": sigma,
                        "train_loss": train_loss, "val_loss": val})
        adam.epoch = epoch
        if val < adam.best_val:
            adam.best_val, adam.since_improvement, best_epoch = val, 0, epoch
            best_state = copy.deepcopy(model.state_dict())
        else:
            adam.since_improvement += 1
        log.debug("epoch %d lr=%.2e alpha=%.3f sigma=%.4f train=%.3e val=%.3e", epoch, lr, alpha, sigma, train_loss, val)
        if callback is not None:
            callback(history[-1])
        if adam.since_improvement > cfg.patience:
            stopped = True
            break
    model.load_state_dict(best_state)
    return FitResult(best_state, history, best_epoch, adam.best_val, stopped)


def write_history_csv(path, history) -> None:
    cols = ["epoch", "lr", "alpha", "sigma", "train_loss", "val_loss"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in cols[1:]])
