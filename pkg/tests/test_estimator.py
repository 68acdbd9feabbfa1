import numpy as np
import pytest
from sklearn.base import clone

from hano.constitutive import PathConfig, generate_sequences
from hano.errors import ConfigurationError
from hano.estimator import HistoryOperatorRegressor, check_sequences


@pytest.fixture(scope="module")
def seqs():
    return generate_sequences("elastoplastic", 6, PathConfig(increments_per_cycle=12), seed=1)


def _small(**kw):
    base = dict(variant="fno", width=8, modes=3, window=4, fourier_layers=1, aeuf_layers=1, heads=2,
                max_epochs=2, patience=2)
    base.update(kw)
    return HistoryOperatorRegressor(**base)


def test_params_round_trip():
    est = _small()
    params = est.get_params()
    assert params["width"] == 8 and params["variant"] == "fno"
    twin = clone(est).set_params(width=16)
    assert twin.width == 16 and est.width == 8


def test_fit_predict_score(seqs):
    est = _small().fit(seqs)
    preds = est.predict(seqs[:2])
    assert preds[0].shape == (seqs[0].length - 4, 1)
    score = est.score(seqs[:2])
    assert np.isfinite(score) and score <= 0
    assert len(est.history_) == 2


def test_array_inputs(seqs):
    X = [s.strain for s in seqs]
    y = [s.stress for s in seqs]
    est = _small(max_epochs=1, patience=1).fit(X, y)
    assert est.n_features_in_ == 1


def test_unfitted_predict_raises(seqs):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        _small().predict(seqs)


def test_validation_helpers(seqs):
    with pytest.raises(ConfigurationError):
        check_sequences([])
    with pytest.raises(ConfigurationError):
        check_sequences([np.zeros(3)])
    with pytest.raises(ConfigurationError):
        check_sequences([np.zeros(3)], [np.zeros(3), np.zeros(3)])
    with pytest.raises(ConfigurationError):
        check_sequences(seqs, min_length=1000)
