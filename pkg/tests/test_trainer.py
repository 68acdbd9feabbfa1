import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hano.constitutive import PathConfig, generate_sequences
from hano.dataio import ChannelNormalizer
from hano.errors import ConfigurationError, GradientError
from hano.nopcore import ModelSpec, build_model
from hano.trainer import (
    TrainConfig,
    TrainState,
    _Prepared,
    adam_step,
    fit,
    learning_rate,
    mse_loss,
    noise_sigma,
    teacher_forcing_ratio,
    train_epoch,
    write_history_csv,
)


def test_schedule_examples():
    assert teacher_forcing_ratio(0) == 1.0
    assert teacher_forcing_ratio(250) == 0.5
    assert teacher_forcing_ratio(600) == 0.0
    assert noise_sigma(0) == pytest.approx(0.001)
    assert noise_sigma(100) == pytest.approx(0.0105)
    assert noise_sigma(300) == pytest.approx(0.020)
    assert learning_rate(0) == 1e-3
    assert learning_rate(100) == 5e-4
    assert learning_rate(250) == 2.5e-4


def test_schedules_closed_forms_all_epochs():
    for e in range(1001):
        assert teacher_forcing_ratio(e) == max(0.0, 1.0 - e / 500)
        assert noise_sigma(e) == pytest.approx(0.001 + min(e // 50, 4) * 0.00475, abs=1e-15)
        assert learning_rate(e) == pytest.approx(1e-3 * 0.5 ** (e // 100), rel=1e-15)


def test_mse_loss_forms():
    t = torch.zeros(4, 1)
    assert mse_loss(t, t).item() == 0.0
    assert mse_loss(t + 0.1, t).item() == pytest.approx(0.01)
    # one sequence of 10 rows with error 1, one of 90 rows with error 0: weighted equally
    pred = torch.cat([torch.ones(10, 1), torch.zeros(90, 1)])
    groups = np.array([0] * 10 + [1] * 90)
    assert mse_loss(pred, torch.zeros(100, 1), groups).item() == pytest.approx(0.5)
    assert mse_loss(pred.numpy(), np.zeros((100, 1)), groups) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mse_loss(torch.zeros(2, 1), torch.zeros(3, 1))


def test_adam_first_step_and_decay():
    p = {"w": torch.tensor([2.0], dtype=torch.float64)}
    st_ = TrainState()
    adam_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, st_, lr=1e-3)
    assert p["w"].item() == pytest.approx(2.0 - 1e-3, rel=1e-9)
    q = {"w": torch.tensor([3.0], dtype=torch.float64)}
    adam_step(q, {"w": torch.zeros(1, dtype=torch.float64)}, TrainState(), lr=1e-3)
    assert q["w"].item() == 3.0
    adam_step(q, {"w": torch.zeros(1, dtype=torch.float64)}, TrainState(), lr=1e-2, weight_decay=0.1)
    assert q["w"].item() == pytest.approx(3.0 * (1 - 1e-3))


def test_adam_rejects_nonfinite():
    p = {"w": torch.ones(2)}
    with pytest.raises(GradientError):
        adam_step(p, {"w": torch.tensor([1.0, float("inf")])}, TrainState(), lr=1e-3)
    assert torch.all(p["w"] == 1.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.lists(st.floats(-1, 1), min_size=1, max_size=5),
       st.integers(1, 20))
def test_adam_matches_reference_loop(theta, grads, steps):
    n = min(len(theta), len(grads))
    th = np.array(theta[:n])
    g = np.array(grads[:n])
    p = {"w": torch.tensor(th, dtype=torch.float64)}
    state = TrainState()
    m = v = np.zeros(n)
    ref = th.copy()
    for t in range(1, steps + 1):
        adam_step(p, {"w": torch.tensor(g, dtype=torch.float64)}, state, lr=1e-2, weight_decay=1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref * (1 - 1e-2 * 1e-3) - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"].numpy(), ref, rtol=1e-10, atol=1e-12)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(max_epochs=10, patience=20)
    with pytest.raises(ConfigurationError):
        TrainConfig(val_mode="oracle")


@pytest.fixture(scope="module")
def tiny():
    seqs = generate_sequences("elastoplastic", 6, PathConfig(increments_per_cycle=10), seed=0)
    spec = ModelSpec(variant="fno", width=8, modes=3, window=4, heads=2, fourier_layers=1, aeuf_layers=1)
    return seqs, spec


def test_teacher_forced_epoch_equals_supervised_loss(tiny):
    seqs, spec = tiny
    nz = ChannelNormalizer().fit(seqs)
    prep = _Prepared(seqs, nz, spec.window)
    model = build_model(spec, seed=1)
    # alpha = 1 at epoch 0 and sigma = 0: plain teacher forcing; lr = 0 keeps params fixed
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        pred = model(torch.as_tensor(prep.win_strain, dtype=dtype),
                     torch.as_tensor(prep.stress[prep.seq_idx[:, None], prep.hist], dtype=dtype),
                     torch.as_tensor(prep.win_inc, dtype=dtype))
    one_batch = TrainConfig(lr0=0.0, weight_decay=0.0, noise_start=0.0, noise_end=0.0, batch_size=10_000,
                            max_epochs=10, patience=5)
    loss_full = train_epoch(model, prep, one_batch, 0, np.random.default_rng(0), TrainState())
    assert loss_full == pytest.approx(mse_loss(pred.double().numpy(), prep.win_target, prep.seq_idx), rel=1e-6)


def test_epoch_determinism(tiny):
    seqs, spec = tiny
    nz = ChannelNormalizer().fit(seqs)
    prep = _Prepared(seqs, nz, spec.window)
    losses = []
    for _ in range(2):
        model = build_model(spec, seed=3)
        losses.append(train_epoch(model, prep, TrainConfig(ss_epochs=1), 1, np.random.default_rng(7), TrainState()))
    assert losses[0] == losses[1]


def test_fully_autoregressive_shadow_uses_predictions(tiny):
    from hano.trainer import _shadow_stress

    seqs, spec = tiny
    nz = ChannelNormalizer().fit(seqs)
    prep = _Prepared(seqs, nz, spec.window)
    model = build_model(spec, seed=0)
    shadow = _shadow_stress(model, prep, alpha=0.0, sigma=0.0, rng=np.random.default_rng(0))
    k = spec.window
    np.testing.assert_array_equal(shadow[:, :k], prep.stress[:, :k])
    with torch.no_grad():
        t = k
        y = model(torch.as_tensor(prep.strain[:, :t], dtype=torch.float32),
                  torch.as_tensor(shadow[:, :t], dtype=torch.float32),
                  torch.as_tensor(prep.inc_into[:, t], dtype=torch.float32))
    np.testing.assert_allclose(shadow[:, k], y.double().numpy(), rtol=1e-6)


@pytest.mark.parametrize("variant", ["fno", "rnn2"])
def test_fit_history_and_best_checkpoint(tiny, variant, tmp_path):
    seqs, spec = tiny
    from dataclasses import replace

    spec = replace(spec, variant=variant, rnn_hidden=8)
    model = build_model(spec, seed=0)
    nz = ChannelNormalizer().fit(seqs[:4])
    res = fit(model, seqs[:4], seqs[4:], TrainConfig(max_epochs=6, patience=6, ss_epochs=3), nz)
    assert len(res.history) == 6
    assert res.best_val == min(h["val_loss"] for h in res.history)
    assert {"lr", "alpha", "sigma", "train_loss", "val_loss"} <= set(res.history[0])
    write_history_csv(tmp_path / "h.csv", res.history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,alpha,sigma,train_loss,val_loss" and len(lines) == 7


def test_patience_zero_stops_at_first_non_improvement(tiny):
    seqs, spec = tiny
    model = build_model(spec, seed=0)
    res = fit(model, seqs[:4], seqs[4:], TrainConfig(max_epochs=50, patience=0, lr0=0.0, weight_decay=0.0,
                                                    noise_start=0.0, noise_end=0.0),
              ChannelNormalizer().fit(seqs[:4]))
    # lr = 0: validation never improves after epoch 0
    assert res.stopped_early and len(res.history) == 2 and res.best_epoch == 0


def test_fit_requires_validation(tiny):
    seqs, spec = tiny
    with pytest.raises(ValueError):
        fit(build_model(spec), seqs, [], TrainConfig(max_epochs=1, patience=1))


def test_noise_sigma_staircase_is_piecewise_constant():
    vals = [noise_sigma(e) for e in range(0, 250)]
    assert len(set(vals)) == 5 and all(math.isfinite(v) for v in vals)


def test_diverged_validation_rollout_counts_as_no_improvement(tiny, monkeypatch):
    import hano.trainer as tr
    from hano.errors import RolloutError

    seqs, spec = tiny
    nz = ChannelNormalizer().fit(seqs)
    train, val = seqs[:4], seqs[4:]
    model = build_model(spec, seed=0)

    def boom(*a, **k):
        raise RolloutError("non-finite prediction", step=4)

    monkeypatch.setattr(tr, "rollout_sequences", boom)
    assert tr.validation_loss(model, val, nz) == math.inf
    res = fit(model, train, val, TrainConfig(max_epochs=2, patience=2), nz)
    assert res.best_epoch == -1 and all(h["val_loss"] == math.inf for h in res.history)
