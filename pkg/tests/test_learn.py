from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import make_rows, separable_rows

from specsense.errors import ConfigError, DataError, DivergenceError
from specsense.learn import (
    Batch,
    CoefVector,
    ModelKind,
    ModelShape,
    TrainConfig,
    accuracy,
    classify,
    flatten,
    gradient,
    init_model,
    load_model,
    loss,
    predict,
    predict_proba,
    save_model,
    train_batch,
    unflatten,
)

LOGISTIC = ModelShape(ModelKind.LOGISTIC, n_inputs=3)
MLP = ModelShape(ModelKind.MLP, n_inputs=3, n_hidden=4)


def logistic(*values: float) -> CoefVector:
    return CoefVector(LOGISTIC, np.array(values, dtype=float))


def random_batch(rng: np.random.Generator, n: int = 20) -> Batch:
    return Batch(
        features=rng.standard_normal((n, 3)),
        labels=rng.integers(0, 2, n).astype(float),
    )


def test_coefficient_counts():
    assert LOGISTIC.n_coefficients == 4
    assert MLP.n_coefficients == 21
    assert ModelShape(ModelKind.MLP, n_inputs=3, n_hidden=8).n_coefficients == 41
    assert ModelShape(ModelKind.MLP, n_inputs=4, n_hidden=4).n_coefficients == 25


def test_init_models():
    assert init_model(LOGISTIC).values.tolist() == [0.0, 0.0, 0.0, 0.0]
    config = TrainConfig(init_seed=3, init_scale=0.5)
    first = init_model(MLP, config)
    second = init_model(MLP, config)
    assert len(first) == 21
    assert np.array_equal(first.values, second.values)
    hidden = first.values[:12]
    assert np.all(np.abs(hidden) <= 0.5)
    assert np.all(first.values[12:16] == 0.0)
    assert first.values[-1] == 0.0


def test_predict_values():
    assert predict(init_model(LOGISTIC), [3.0, -1.0, 2.0]) == 0.5
    assert predict(logistic(1, 0, 0, 0), [1, 0, 0]) == pytest.approx(0.731059, abs=1e-6)
    with pytest.raises(DataError):
        predict(init_model(LOGISTIC), [1.0, 2.0])


def test_predictions_stay_strictly_inside_unit_interval():
    model = logistic(1, 1, 1, 0)
    extreme = np.array([[500.0, 0, 0], [-500.0, 0, 0], [1e3, 1e3, 1e3], [-1e3, -1e3, -1e3]])
    probs = predict_proba(model, extreme)
    assert np.all((probs > 0.0) & (probs < 1.0))
    mlp = init_model(MLP, TrainConfig(init_seed=1))
    assert np.isfinite(predict_proba(mlp, extreme)).all()


def test_classify_convention():
    zero = init_model(LOGISTIC)
    assert classify(zero, [1, 2, 3]) == 1
    assert classify(logistic(0, 0, 0, -5), [1, 2, 3]) == 0
    with pytest.raises(ConfigError):
        classify(zero, [1, 2, 3], cutoff=1.0 + 1e-9)


def test_gradient_by_hand():
    rows = make_rows([[1, 0, 0]], [1], gain_db=0.0)
    grad = gradient(init_model(LOGISTIC), rows).values
    assert grad.tolist() == [-0.5, 0.0, 0.0, -0.5]


def test_zero_residual_gives_zero_output_bias_gradient():
    rows = make_rows([[1, 0, 0], [1, 0, 0]], [0, 1], gain_db=0.0)
    assert gradient(init_model(LOGISTIC), rows).values[-1] == 0.0


@pytest.mark.parametrize("shape", [LOGISTIC, MLP], ids=["logistic", "mlp"])
def test_gradient_matches_central_differences(shape):
    rng = np.random.default_rng(42)
    h = 1e-5
    for _ in range(100):
        model = CoefVector(shape, rng.standard_normal(shape.n_coefficients))
        batch = random_batch(rng)
        analytic = gradient(model, batch).values
        numeric = np.empty_like(analytic)
        for i in range(shape.n_coefficients):
            step = np.zeros(shape.n_coefficients)
            step[i] = h
            upper = loss(unflatten(shape, model.values + step), batch)
            lower = loss(unflatten(shape, model.values - step), batch)
            numeric[i] = (upper - lower) / (2 * h)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
        assert np.all(np.abs(analytic - numeric) <= 1e-5 * scale)


def test_training_a_single_positive_row():
    rows = make_rows([[0.5, -0.3, 1.0]], [1], gain_db=0.0)
    model = train_batch(init_model(LOGISTIC), rows, TrainConfig(epochs_per_batch=200))
    assert predict(model, rows[0].features) > 0.9


@pytest.mark.parametrize("shape", [LOGISTIC, MLP], ids=["logistic", "mlp"])
def test_training_never_increases_batch_loss(shape):
    rng = np.random.default_rng(7)
    config = TrainConfig(learning_rate=50.0, epochs_per_batch=10, init_seed=2)
    for _ in range(10):
        batch = random_batch(rng, 30)
        model = init_model(shape, config)
        trained = train_batch(model, batch, config)
        assert loss(trained, batch) <= loss(model, batch)


def test_training_is_invariant_to_duplication_and_order():
    rows = separable_rows(40, seed=3)
    config = TrainConfig(epochs_per_batch=15)
    for shape in (LOGISTIC, MLP):
        base = train_batch(init_model(shape, config), rows, config)
        doubled = train_batch(init_model(shape, config), [r for r in rows for _ in (0, 1)], config)
        shuffled = train_batch(init_model(shape, config), rows[::-1], config)
        assert np.allclose(base.values, doubled.values, rtol=1e-9, atol=1e-12)
        assert np.allclose(base.values, shuffled.values, rtol=1e-9, atol=1e-12)


def test_training_preconditions():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DataError, match="empty batch"):
        train_batch(init_model(LOGISTIC), [], TrainConfig())
    poisoned = Batch(features=np.array([[math.inf, 0.0, 0.0]]), labels=np.array([1.0]))
    with pytest.raises(DivergenceError, match="diverged"):
        train_batch(init_model(LOGISTIC), poisoned, TrainConfig())


def test_codec_round_trip_and_order():
    model = init_model(MLP, TrainConfig(init_seed=9))
    values = flatten(model)
    assert np.array_equal(unflatten(MLP, values).values, model.values)
    lr = logistic(1, 2, 3, 4)
    assert flatten(lr).tolist() == [1, 2, 3, 4]
    assert predict(lr, [0, 0, 0]) == pytest.approx(1 / (1 + math.exp(-4)))
    with pytest.raises(DataError):
        unflatten(LOGISTIC, [1.0, 2.0, 3.0])


def test_accuracy():
    always_zero = logistic(0, 0, 0, -10)
    rows = make_rows([[0, 0, 0]] * 100, [0] * 60 + [1] * 40, gain_db=0.0)
    assert accuracy(always_zero, rows) == pytest.approx(0.6)
    with pytest.raises(DataError):
        accuracy(always_zero, [])


@pytest.mark.parametrize("shape", [LOGISTIC, MLP], ids=["logistic", "mlp"])
def test_separable_data_is_learned_perfectly(shape):
    rows = separable_rows(200)
    config = TrainConfig(learning_rate=2.0, epochs_per_batch=300, init_seed=1)
    model = train_batch(init_model(shape, config), rows, config)
    assert accuracy(model, rows) == 1.0


def test_model_file_round_trip(tmp_path):
    model = init_model(MLP, TrainConfig(init_seed=4))
    path = save_model(model, tmp_path / "m.json", init_seed=4)
    loaded, seed = load_model(path)
    assert seed == 4
    assert loaded.shape == MLP
    assert np.array_equal(loaded.values, model.values)

    lr_path = save_model(logistic(1, 2, 3, 4), tmp_path / "lr.json")
    loaded_lr, lr_seed = load_model(lr_path)
    assert loaded_lr.shape == LOGISTIC
    assert lr_seed is None


def test_malformed_model_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "forest", "n_inputs": 3, "values": []}')
    with pytest.raises(DataError, match="bad.json"):
        load_model(path)


def test_non_numeric_coefficients_are_a_malformed_model_file(tmp_path):
    path = tmp_path / "text.json"
    path.write_text('{"kind": "logistic", "n_inputs": 3, "values": ["a", "b", "c", "d"]}')
    with pytest.raises(DataError, match="malformed model file"):
        load_model(path)
