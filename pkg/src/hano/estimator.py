"""scikit-learn style wrapper around model construction, training and rollout."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataio import ChannelNormalizer, StrainStressSequence
from .errors import ConfigurationError
from .nopcore import ModelSpec
from .rollout import TorchPredictor, rollout_sequences
from .trainer import TrainConfig


def check_sequences(X, y=None, min_length: int = 2) -> list[StrainStressSequence]:
    """Coerce X (sequences, or strain arrays paired with stress arrays in y) to a list of sequences."""
    if isinstance(X, StrainStressSequence):
        X = [X]
    if y is None:
        seqs = list(X)
        if not all(isinstance(s, StrainStressSequence) for s in seqs):
            raise ConfigurationError("without y, X must hold StrainStressSequence objects")
    else:
        X, y = list(X), list(y)
        if len(X) != len(y):
            raise ConfigurationError(f"{len(X)} strain paths for {len(y)} stress paths")
        seqs = [StrainStressSequence(np.asarray(a, float), np.asarray(b, float), model_id="external", seq_id=i)
                for i, (a, b) in enumerate(zip(X, y))]
    if not seqs:
        raise ConfigurationError("no sequences given")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise ConfigurationError(f"mixed strain dimensions {sorted(dims)}")
    short = [s.seq_id for s in seqs if s.length < min_length]
    if short:
        raise ConfigurationError(f"sequences {short[:5]} shorter than {min_length} steps")
    return seqs


class HistoryOperatorRegressor(RegressorMixin, BaseEstimator):
    """Learn a path-dependent stress response from strain-stress sequences.

    ``predict`` rolls each strain path out autoregressively from its first
    ``window`` observed pairs and returns the predicted stress tail.
    ``score`` returns the negative NRMSE of that rollout.
    """

    def __init__(self, variant="hano3", width=32, modes=5, window=10, fourier_layers=3, aeuf_layers=3,
                 heads=4, max_epochs=300, batch_size=256, lr0=1e-3, weight_decay=1e-4, lr_step=100,
                 ss_epochs=500, patience=200, noise_cap_epoch=200, val_fraction=0.1, seed=0):
        self.variant = variant
        self.width = width
        self.modes = modes
        self.window = window
        self.fourier_layers = fourier_layers
        self.aeuf_layers = aeuf_layers
        self.heads = heads
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.lr_step = lr_step
        self.ss_epochs = ss_epochs
        self.patience = patience
        self.noise_cap_epoch = noise_cap_epoch
        self.val_fraction = val_fraction
        self.seed = seed

    def model_spec(self, dim: int = 1) -> ModelSpec:
        return ModelSpec(variant=self.variant, fourier_layers=self.fourier_layers, aeuf_layers=self.aeuf_layers,
                         modes=self.modes, width=self.width, heads=self.heads, window=self.window, dim=dim)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, weight_decay=self.weight_decay, lr_step=self.lr_step,
                           patience=min(self.patience, self.max_epochs), max_epochs=self.max_epochs,
                           batch_size=self.batch_size, ss_epochs=self.ss_epochs,
                           noise_cap_epoch=self.noise_cap_epoch, seed=self.seed, val_fraction=self.val_fraction)

    def fit(self, X, y=None):
        from .evalx import train_model

        seqs = check_sequences(X, y, min_length=self.window + 1)
        if len(seqs) < 2:
            raise ConfigurationError("need at least two sequences (one held out for validation)")
        spec = self.model_spec(seqs[0].dim)
        self.model_, self.normalizer_, result = train_model(spec, seqs, self.train_config(), self.seed)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = seqs[0].dim
        return self

    @classmethod
    def from_trained(cls, model, normalizer: ChannelNormalizer | None = None, **params):
        s = model.spec
        est = cls(variant=s.variant, width=s.width, modes=s.modes, window=s.window, fourier_layers=s.fourier_layers,
                  aeuf_layers=s.aeuf_layers, heads=s.heads, **params)
        est.model_, est.normalizer_ = model, normalizer
        est.history_, est.best_epoch_, est.n_features_in_ = [], -1, s.dim
        return est

    def predictor(self) -> TorchPredictor:
        check_is_fitted(self, "model_")
        return TorchPredictor(self.model_, self.normalizer_)

    def predict(self, X, y=None, start=None):
        """Predicted stress tails; ``y`` (or the sequences themselves) supplies the seed windows."""
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, y, min_length=self.window)
        if seqs[0].dim != self.n_features_in_:
            raise ConfigurationError(f"fitted on dim {self.n_features_in_}, got {seqs[0].dim}")
        return rollout_sequences(self.predictor(), seqs, start=start)

    def score(self, X, y=None, sample_weight=None):
        from .evalx import nrmse

        seqs = check_sequences(X, y, min_length=self.window + 1)
        preds = self.predict(seqs)
        return -nrmse(preds, [s.stress[self.window :] for s in seqs])
