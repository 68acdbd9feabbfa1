import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hano.constitutive import PathConfig, generate_sequences
from hano.errors import ConfigurationError, DegenerateReferenceError
from hano.evalx import (
    ExperimentReport,
    evaluate,
    exp_initial_state,
    exp_multicycle,
    exp_noise,
    exp_resolution,
    make_testset_ii,
    nrmse,
    resolution_sequences,
    seed_window_noise,
)
from hano.rollout import ElastoplasticOracle

from oracles import nrmse_reference


def test_nrmse_identities():
    ref = np.linspace(1, 2, 20)[:, None]
    assert nrmse(ref, ref) == 0.0
    assert nrmse(1.1 * ref, ref) == pytest.approx(0.1, abs=1e-14)
    a = np.ones((5, 1))
    assert nrmse([1.1 * a, 1.3 * a], [a, a]) == pytest.approx(0.2, abs=1e-14)
    with pytest.raises(DegenerateReferenceError):
        nrmse(np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        nrmse(np.zeros((3, 1)), np.ones((4, 1)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (12, 2), elements=st.floats(0.1, 10)), st.floats(-3, 3))
def test_nrmse_residual_scale_covariance(ref, c):
    assert nrmse(ref + c * ref, ref) == pytest.approx(abs(c), rel=1e-9, abs=1e-12)
    noisy = ref + c * np.roll(ref, 1)
    assert nrmse(noisy, ref) == pytest.approx(nrmse_reference([noisy], [ref]), rel=1e-12)


def test_report_round_trip(tmp_path):
    rep = ExperimentReport("x", {"a": {"nrmse": 0.1}}, {"case": {"strain": [[0.0]], "pred": [[1.0]], "ref": [[1.0]]}},
                           "abc", {"data": 1}, 1.5)
    back = ExperimentReport.from_json(rep.to_json())
    assert back == rep
    rep.write(tmp_path)
    assert (tmp_path / "report.json").exists() and (tmp_path / "case.csv").exists()
    with pytest.raises(ValueError):
        ExperimentReport("bad", {"a": {"nrmse": -0.1}})


@pytest.fixture(scope="module")
def data():
    return generate_sequences("elastoplastic", 4, PathConfig(), seed=5)


def test_oracle_experiments_are_near_zero(data):
    oracle = ElastoplasticOracle(window=10)
    rng = np.random.default_rng(0)
    rep = exp_initial_state({"oracle": oracle}, data, make_testset_ii(data, rng))
    assert rep.table["oracle"]["nrmse_I"] < 1e-10 and rep.table["oracle"]["nrmse_II"] < 1e-10
    amps = [s.meta["amplitudes"] for s in data]
    res = exp_resolution({"oracle": oracle}, amps, (50, 60, 100, 150))
    assert set(res.table["oracle"]) == {"nrmse_50", "nrmse_60", "nrmse_100", "nrmse_150"}
    assert max(res.table["oracle"].values()) < 1e-10
    mc = exp_multicycle(oracle, PathConfig(), (2, 5), count=3)
    assert mc.table["cycles_5"]["nrmse"] < 1e-10


def test_resolution_sequences_lengths(data):
    amps = [s.meta["amplitudes"] for s in data]
    assert resolution_sequences(amps[:1], 60)[0].length == 61
    with pytest.raises(ConfigurationError):
        resolution_sequences(amps[:1], 61)


def test_noise_experiment(data):
    oracle = ElastoplasticOracle(window=10)
    rep = exp_noise(oracle, data, (0.0, 0.1), seed=3)
    again = exp_noise(oracle, data, (0.0, 0.1), seed=3)
    assert rep.table == again.table
    assert rep.table["ratio_0"]["nrmse"] < 1e-10
    assert rep.table["ratio_0.1"]["nrmse"] > 0
    noise = seed_window_noise(data, 10, 0.1, np.random.default_rng(0))
    assert noise[0].shape == (10, 1)


def test_evaluate_score_from(data):
    oracle = ElastoplasticOracle(window=10)
    val, preds = evaluate(oracle, data, score_from=20)
    assert val < 1e-10 and len(preds[0]) == data[0].length - 10
    with pytest.raises(ValueError):
        evaluate(oracle, data, score_from=5)


def test_missing_models_rejected(data):
    with pytest.raises(ConfigurationError):
        exp_initial_state({}, data, data)


def test_full_scale_reference_values_are_quoted_verbatim():
    from pathlib import Path

    from hano.evalx import FULL_SCALE_REFERENCE as R

    source = Path(__file__).resolve().parents[1] / "paper.md"
    if not source.exists():
        pytest.skip("source document not present")
    text = source.read_text()
    pct = lambda v: f"{100 * v:g}\\%"  # noqa: E731
    literals = {
        R["initial_state"]["rnn1"]["I"]: "0.030", R["initial_state"]["rnn1"]["II"]: "0.359",
        R["initial_state"]["rnn2"]["I"]: "0.023", R["initial_state"]["rnn2"]["II"]: "0.106",
        R["initial_state"]["hano3"]["I"]: "0.006", R["initial_state"]["hano3"]["II"]: "0.004",
        R["noise"]["hano3"]["0.1"]: "0.015", R["multicycle"]["hano3"]["5"]: "0.008",
    }
    for value, lit in literals.items():
        assert float(lit) == value and lit in text
    for v in R["resolution"]["hano3"].values():
        assert pct(v) in text
    assert pct(R["resolution"]["rnn2"]["60"]) in text and pct(R["resolution"]["rnn2"]["150"]) in text
    for v in R["attention"].values():
        assert f"{100 * v:.2f}" in text
