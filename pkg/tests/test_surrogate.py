import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose, assert_array_equal

from raman_model import PumpConfig, pump_power_bounds
from surrogate import (
    MODEL_MANIFEST,
    MODEL_WEIGHTS,
    InverseSurrogate,
    NetworkSpec,
    Normalizer,
    TrainConfig,
    build_network,
    e_max,
    e_max_histogram,
    flatten_length,
    forward,
    gradient_check,
    gradients,
    load_model,
    predict_pumps,
    r_squared,
    run_model,
    save_model,
    train,
    train_size_sweep,
)
from utils import InvalidArgumentError, NotFoundError, TrainingDivergedError

SMALL_SPEC = NetworkSpec(input_shape=(4, 9), conv_filters=[4, 8], dense_units=32)


def _synthetic(n, seed=0, spec=SMALL_SPEC):
    rng = np.random.default_rng(seed)
    lower, upper = pump_power_bounds()
    pumps = rng.uniform(lower, upper, size=(n, 8)).astype(np.float32)
    # profiles depend on the pumps so the inverse map is learnable
    base = rng.normal(0.0, 1.0, size=(8,) + tuple(spec.input_shape))
    weights = (pumps - lower) / (upper - lower)
    profiles = np.einsum('nk,khw->nhw', weights, base).astype(np.float32)
    return pumps, profiles


# ========================================================================
# ARCHITECTURE
# ========================================================================

def test_flatten_length_default():
    assert flatten_length(NetworkSpec()) == 3 * 11 * 32
    assert flatten_length(SMALL_SPEC) == 1 * 3 * 8


def test_default_network_output_range():
    model = build_network(NetworkSpec(), seed=0)
    out = model(torch.zeros(2, 1, 40, 161))
    assert out.shape == (2, 8)
    assert torch.all((out > 0) & (out < 1))


def test_initialization_is_seeded_and_fan_in_scaled():
    a = build_network(SMALL_SPEC, seed=3)
    b = build_network(SMALL_SPEC, seed=3)
    c = build_network(SMALL_SPEC, seed=4)
    for (name, pa), pb, pc in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(pa, pb), name
    assert not torch.equal(next(a.parameters()), next(c.parameters()))
    first_conv = a[0]
    assert first_conv.weight.abs().max() <= 1.0 / 3.0


# ========================================================================
# GRADIENTS
# ========================================================================

def test_gradients_cover_every_parameter():
    model = build_network(SMALL_SPEC, seed=0)
    pumps, profiles = _synthetic(5)
    grads = gradients(model, profiles, pumps / pumps.max())
    assert set(grads) == {name for name, _ in model.named_parameters()}
    assert all(torch.isfinite(g).all() for g in grads.values())
    with pytest.raises(InvalidArgumentError):
        gradients(model, profiles[:0], pumps[:0])


def test_zero_error_batch_has_zero_head_gradient():
    model = build_network(SMALL_SPEC, seed=0)
    _, profiles = _synthetic(4)
    targets = run_model(model, profiles)
    grads = gradients(model, profiles, targets)
    head = len(model) - 2
    assert torch.count_nonzero(grads[f"{head}.weight"]) == 0
    assert torch.count_nonzero(grads[f"{head}.bias"]) == 0


def test_duplicated_batch_gradient_matches_single_batch():
    model = build_network(SMALL_SPEC, seed=0)
    pumps, profiles = _synthetic(4)
    targets = pumps / pumps.max()
    single = gradients(model, profiles, targets)
    doubled = gradients(model, np.concatenate([profiles, profiles]),
                        np.concatenate([targets, targets]))
    for name, grad in single.items():
        assert torch.allclose(doubled[name], grad, rtol=1e-5, atol=1e-7), name


def test_zero_weight_network_predicts_box_center():
    model = build_network(SMALL_SPEC, seed=0)
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    _, profiles = _synthetic(3)
    assert_array_equal(run_model(model, profiles), 0.5)
    surrogate = InverseSurrogate(SMALL_SPEC, model, Normalizer.fit(profiles))
    predicted = predict_pumps(surrogate, profiles[0]).powers_mw
    lower, upper = pump_power_bounds()
    assert predicted[0] == pytest.approx(700.0)
    assert_allclose(predicted, lower + 0.5 * (upper - lower))


def test_gradient_check_default_network():
    model = build_network(NetworkSpec(), seed=1)
    rng = np.random.default_rng(2)
    inputs = rng.normal(0.0, 1.0, size=(3, 40, 161))
    targets = rng.uniform(0.0, 1.0, size=(3, 8))
    errors = gradient_check(model, inputs, targets, n_probes=100, eps=1e-5, seed=0)
    assert errors.size == 100
    assert np.max(errors) < 1e-4
    # the check runs on a float64 copy
    assert next(model.parameters()).dtype == torch.float32


# ========================================================================
# NORMALIZATION + INFERENCE
# ========================================================================

def test_normalizer_scaling():
    pumps, profiles = _synthetic(20)
    norm = Normalizer.fit(profiles)
    x = norm.normalize_input(profiles)
    assert x.mean() == pytest.approx(0.0, abs=1e-6)
    assert x.std() == pytest.approx(1.0, rel=1e-6)
    lower, upper = pump_power_bounds()
    assert_allclose(norm.normalize_output(lower), 0.0)
    assert_allclose(norm.normalize_output(upper), 1.0)
    assert_allclose(norm.denormalize_output(norm.normalize_output(pumps)), pumps, rtol=1e-6)
    assert Normalizer.from_dict(norm.to_dict()).input_std == norm.input_std


def test_forward_and_predict():
    pumps, profiles = _synthetic(6)
    surrogate = InverseSurrogate(SMALL_SPEC, build_network(SMALL_SPEC), Normalizer.fit(profiles))
    y = forward(surrogate, profiles[0])
    assert y.shape == (8,)
    assert np.all((y > 0) & (y < 1))
    predicted = predict_pumps(surrogate, profiles[0])
    assert isinstance(predicted, PumpConfig)
    assert predicted.within(*pump_power_bounds())
    assert surrogate.predict_pumps_mw(profiles).shape == (6, 8)
    with pytest.raises(InvalidArgumentError):
        surrogate.forward(np.zeros((5, 9)))


# ========================================================================
# TRAINING
# ========================================================================

def test_training_is_deterministic_and_keeps_best():
    train_data, val_data = _synthetic(24, seed=0), _synthetic(8, seed=1)
    cfg = TrainConfig(batch_size=8, max_epochs=6, patience=10, seed=5)
    a = train(train_data, val_data, SMALL_SPEC, cfg, show_progress=False)
    b = train(train_data, val_data, SMALL_SPEC, cfg, show_progress=False)
    assert list(a.curve.columns) == ['epoch', 'train_mse', 'val_mse', 'best_val_mse']
    assert len(a.curve) == 6
    assert_array_equal(a.curve['val_mse'].to_numpy(), b.curve['val_mse'].to_numpy())
    assert a.best_val_mse == a.curve['val_mse'].min()
    assert a.curve['best_val_mse'].is_monotonic_decreasing
    # the returned weights are the best-epoch weights
    _, val_profiles = val_data
    norm = a.surrogate.normalizer
    predicted = a.surrogate.forward(val_profiles)
    mse = np.mean((predicted - norm.normalize_output(val_data[0])) ** 2)
    assert mse == pytest.approx(a.best_val_mse, rel=1e-4)


def test_training_stops_early():
    train_data = _synthetic(16)
    cfg = TrainConfig(batch_size=16, max_epochs=200, patience=1, learning_rate=0.5, seed=0)
    result = train(train_data, _synthetic(8, seed=1), SMALL_SPEC, cfg, show_progress=False)
    assert len(result.curve) < 200
    assert len(result.curve) - result.best_epoch <= 1


def test_empty_validation_falls_back_to_training(caplog):
    pumps, profiles = _synthetic(8)
    cfg = TrainConfig(batch_size=4, max_epochs=2, seed=0)
    result = train((pumps, profiles), (pumps[:0], profiles[:0]), SMALL_SPEC, cfg,
                   show_progress=False)
    assert "validation split is empty" in caplog.text
    assert_allclose(result.curve['train_mse'], result.curve['val_mse'], rtol=1e-6)


def test_nan_inputs_diverge():
    pumps, profiles = _synthetic(8)
    profiles[0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError):
        train((pumps, profiles), (pumps, profiles), SMALL_SPEC,
              TrainConfig(max_epochs=2), show_progress=False)


def test_train_size_sweep():
    train_data, val_data = _synthetic(12), _synthetic(4, seed=1)
    cfg = TrainConfig(batch_size=4, max_epochs=2, seed=0)
    sweep = train_size_sweep(train_data, val_data, [8, 4, 100], SMALL_SPEC, cfg)
    assert list(sweep['train_size']) == [4, 8]
    assert np.all(np.isfinite(sweep['best_val_mse']))


@pytest.mark.slow
def test_overfits_ten_samples():
    data = _synthetic(10)
    cfg = TrainConfig(batch_size=10, max_epochs=4000, patience=4000, learning_rate=3e-3, seed=0)
    result = train(data, data, SMALL_SPEC, cfg, show_progress=False)
    assert result.best_val_mse < 1e-4
    predicted = result.surrogate.predict_pumps_mw(data[1])
    assert np.all(r_squared(predicted, data[0]) > 0.99)


# ========================================================================
# PERSISTENCE
# ========================================================================

def test_save_and_load_model(tmp_path):
    pumps, profiles = _synthetic(6)
    surrogate = InverseSurrogate(SMALL_SPEC, build_network(SMALL_SPEC, seed=9),
                                 Normalizer.fit(profiles), seed=9)
    save_model(surrogate, tmp_path / "model", config_hash="abc123")
    n_params = sum(p.numel() for p in surrogate.model.parameters())
    assert (tmp_path / "model" / MODEL_WEIGHTS).stat().st_size == 8 * n_params
    assert (tmp_path / "model" / MODEL_MANIFEST).exists()

    loaded = load_model(tmp_path / "model")
    assert loaded.spec == SMALL_SPEC
    assert_array_equal(loaded.forward(profiles), surrogate.forward(profiles))


def test_load_model_missing(tmp_path):
    with pytest.raises(NotFoundError):
        load_model(tmp_path / "none")


# ========================================================================
# METRICS
# ========================================================================

def test_r_squared():
    truth = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    perfect = r_squared(truth, truth)
    assert perfect[0] == 1.0
    assert np.isnan(perfect[1])
    shifted = r_squared(truth + 1.0, truth)
    assert shifted[0] == pytest.approx(1.0 - 3.0 / 2.0)
    with pytest.raises(InvalidArgumentError):
        r_squared(truth[:1], truth[:1])
    with pytest.raises(InvalidArgumentError):
        r_squared(truth, truth[:, :1])


def test_e_max_and_histogram(small_profile):
    shifted = small_profile.with_values(small_profile.values_dbm + 0.25)
    assert e_max(small_profile, shifted) == pytest.approx(0.25)
    with pytest.raises(InvalidArgumentError):
        e_max(small_profile.values_dbm, np.zeros((2, 2)))

    hist = e_max_histogram([0.05, 0.15, 0.12, 0.61])
    assert hist['bin_width_db'] == 0.1
    assert sum(hist['counts']) == 4
    assert hist['counts'][:2] == [1, 2]
    assert hist['mean_db'] == pytest.approx(0.2325)
