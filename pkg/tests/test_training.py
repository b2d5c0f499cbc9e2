import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_dataset, random_complex
from fdsic.frontend import NoiseSpec, PaParams, SiChannel, fir_convolve, gen_hammerstein, make_channel
from fdsic.neuralnet import default_arch, forward, init_params
from fdsic.signal import OfdmConfig, generate_ofdm
from fdsic.training import (
    AdamConfig,
    AdamState,
    NonFiniteGradientError,
    adam_step,
    fit_linear_ls,
    linear_predict,
    mse_loss,
    predict,
    train,
    two_stage,
)


def test_adam_first_step_matches_closed_form():
    cfg = AdamConfig(lr=0.1)
    g = np.array([0.5, -2.0, 0.0])
    new, state = adam_step(np.zeros(3), g, AdamState.zeros(3), cfg, 1)
    # bias-corrected first step is -lr * sign(g) (up to eps)
    np.testing.assert_allclose(new, -0.1 * np.sign(g) * np.abs(g) / (np.abs(g) + 1e-8), atol=1e-12)
    np.testing.assert_allclose(state.m, 0.1 * g)
    np.testing.assert_allclose(state.v, 0.001 * g**2)


def test_adam_minimizes_quadratic():
    cfg = AdamConfig(lr=0.05)
    x, state = np.array([3.0, -4.0]), AdamState.zeros(2)
    for t in range(1, 2001):
        x, state = adam_step(x, 2 * x, state, cfg, t)
    assert np.max(np.abs(x)) < 1e-2


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(NonFiniteGradientError):
        adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), AdamConfig(), 1)
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(2), AdamState.zeros(2), AdamConfig(), 0)


@pytest.mark.parametrize("bad", [dict(lr=-1), dict(beta1=1.0), dict(eps=0), dict(epochs=0), dict(batch_len=0)])
def test_adam_config_validation(bad):
    with pytest.raises(ValueError):
        AdamConfig(**bad)


def test_lr_schedule_endpoints():
    cfg = AdamConfig(lr=1e-2, lr_final=1e-4, epochs=101)
    assert cfg.lr_at(0) == pytest.approx(1e-2)
    assert cfg.lr_at(50) == pytest.approx(1e-3)
    assert cfg.lr_at(100) == pytest.approx(1e-4)
    assert AdamConfig(lr=0.3).lr_at(7) == 0.3


def test_mse_loss():
    assert mse_loss([1 + 1j, 0], [0, 0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mse_loss([1, 2], [1])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 13))
def test_fit_linear_ls_recovers_noiseless_fir(seed, n_taps):
    rng = np.random.default_rng(seed)
    x = random_complex(rng, 2000)
    h = random_complex(rng, n_taps)
    ds = make_dataset(x, fir_convolve(x, h))
    lin = fit_linear_ls(ds, 13)
    est = lin.segment("fir.taps")
    err = np.sum(np.abs(est[:n_taps] - h) ** 2) + np.sum(np.abs(est[n_taps:]) ** 2)
    assert 10 * np.log10(err / np.sum(np.abs(h) ** 2)) < -80
    np.testing.assert_allclose(linear_predict(lin, x), fir_convolve(x, h), atol=1e-9)


def test_fit_linear_ls_needs_enough_data(rng):
    ds = make_dataset(random_complex(rng, 12), random_complex(rng, 12), test_fraction=0.2)
    with pytest.raises(ValueError):
        fit_linear_ls(ds, 13)


def _small_hammerstein(n_symbols=40, c_f=1.0):
    s = generate_ofdm(OfdmConfig(n_symbols=n_symbols, seed=4))
    return gen_hammerstein(s, PaParams(1.0, c_f), make_channel(seed=5), NoiseSpec(0.0))


def test_train_linear_approaches_ls_solution():
    ds = _small_hammerstein(c_f=0.2)
    cfg = AdamConfig(lr=3e-2, lr_final=1e-4, epochs=1500)
    params, report = train(default_arch("linear"), ds, cfg)
    lin = fit_linear_ls(ds)
    te = ds.split_test
    ls_mse = mse_loss(linear_predict(lin, ds.input.samples)[te.start:], ds.target.samples[te.start:])
    assert report.final_test_mse < 1.5 * ls_mse + 1e-12
    assert report.epochs_run == 1500 and len(report.loss_curve) == 1500
    assert report.loss_curve[-1][1] < report.loss_curve[0][1]


def test_train_is_deterministic():
    ds = _small_hammerstein(n_symbols=20)
    cfg = AdamConfig(lr=1e-2, epochs=20, batch_len=300, seed=11)
    a, _ = train(default_arch("hammerstein"), ds, cfg)
    b, _ = train(default_arch("hammerstein"), ds, cfg)
    assert np.array_equal(a.values, b.values)


def test_train_best_checkpoint_never_worse_than_init():
    ds = _small_hammerstein(n_symbols=20)
    arch = default_arch("wiener")
    init = init_params(arch, 0)
    te = ds.split_test
    init_mse = mse_loss(forward(arch, init, ds.input.samples)[te.start:], ds.target.samples[te.start:])
    _, report = train(arch, ds, AdamConfig(lr=10.0, epochs=5), init=init)
    assert report.final_test_mse <= init_mse


def test_restarts_pick_best():
    ds = _small_hammerstein(n_symbols=20)
    _, report = train(default_arch("hammerstein"), ds, AdamConfig(lr=1e-2, epochs=10, restarts=3))
    assert len(report.restart_test_mse) == 3
    assert report.final_test_mse == min(report.restart_test_mse)


def test_two_stage_starts_from_premodel():
    ds = _small_hammerstein(n_symbols=30, c_f=2.0)
    arch = default_arch("hammerstein")
    lin, params, _ = two_stage(arch, ds, AdamConfig(lr=1e-2, epochs=30))
    te = ds.split_test
    t = ds.target.samples[te.start:]
    lin_only = mse_loss(linear_predict(lin, ds.input.samples)[te.start:], t)
    combined = mse_loss(predict(arch, params, ds.input.samples, lin)[te.start:], t)
    assert combined <= lin_only * (1 + 1e-12)


def test_train_rejects_tiny_dataset(rng):
    ds = make_dataset(random_complex(rng, 12), random_complex(rng, 12), test_fraction=0.2)
    with pytest.raises(ValueError):
        train(default_arch("linear"), ds, AdamConfig(epochs=1))


def test_identity_channel_linear_fit():
    s = generate_ofdm(OfdmConfig(n_symbols=10))
    ds = make_dataset(s.samples, fir_convolve(s.samples, SiChannel.impulse(1)))
    taps = fit_linear_ls(ds).segment("fir.taps")
    np.testing.assert_allclose(taps, np.eye(13)[0], atol=1e-8)
