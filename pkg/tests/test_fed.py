from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from conftest import make_rows, separable_rows

from specsense.errors import ConfigError, DataError
from specsense.fed import (
    DEFAULT_SCENARIOS,
    FedConfig,
    Scenario,
    SensorState,
    coefficient_distances,
    corrupt_labels,
    detect_outliers,
    fedavg,
    make_batches,
    partition_sensors,
    run_experiment,
    run_round,
    stratified_kfold,
)
from specsense.learn import (
    Batch,
    CoefVector,
    ModelKind,
    ModelShape,
    TrainConfig,
    init_model,
    train_batch,
)

LOGISTIC = ModelShape(ModelKind.LOGISTIC)


def logistic(*values: float) -> CoefVector:
    return CoefVector(LOGISTIC, np.array(values, dtype=float))


def balanced_rows(n: int) -> list:
    features = [[float(i), float(i % 7), float(i % 11)] for i in range(n)]
    return make_rows(features, [i % 2 for i in range(n)], gain_db=-15.0)


def sensor_with(n_train: int) -> SensorState:
    model = init_model(LOGISTIC)
    return SensorState(
        sensor_id=0,
        train_rows=tuple(balanced_rows(n_train)),
        test_rows=(),
        fed_model=model,
        shadow_model=model,
    )


def ready_states(config: FedConfig, n_rows: int = 200) -> list[SensorState]:
    states = partition_sensors(separable_rows(n_rows), config)
    return [replace(s, batches=tuple(make_batches(s, config.n_rounds))) for s in states]


def test_partition_shapes_and_disjointness():
    rows = balanced_rows(4000)
    config = FedConfig(n_sensors=5, n_rounds=20)
    states = partition_sensors(rows, config)
    assert [s.sensor_id for s in states] == [0, 1, 2, 3, 4]
    seen: set = set()
    for state in states:
        assert len(state.train_rows) == 640
        assert len(state.test_rows) == 160
        shard = set(state.train_rows) | set(state.test_rows)
        assert len(shard) == 800
        assert not shard & seen
        seen |= shard
    assert not states[0].faulty


def test_partition_is_deterministic_per_seed():
    rows = balanced_rows(500)
    first = partition_sensors(rows, FedConfig(shuffle_seed=3))
    second = partition_sensors(rows, FedConfig(shuffle_seed=3))
    other = partition_sensors(rows, FedConfig(shuffle_seed=4))
    assert [s.train_rows for s in first] == [s.train_rows for s in second]
    assert [s.train_rows for s in first] != [s.train_rows for s in other]


def test_partition_rejects_small_or_single_label_data():
    with pytest.raises(DataError, match="too small"):
        partition_sensors(balanced_rows(49), FedConfig(n_sensors=5))
    with pytest.raises(DataError):
        partition_sensors(make_rows([[1, 0, 0]] * 100, [0] * 100), FedConfig())


def test_make_batches_equal_split():
    batches = make_batches(sensor_with(640), 20)
    assert len(batches) == 20
    assert all(len(b) == 32 for b in batches)
    assert sum(batches, ()) == sensor_with(640).train_rows


def test_make_batches_remainder_goes_last():
    batches = make_batches(sensor_with(641), 20)
    assert [len(b) for b in batches[:-1]] == [32] * 19
    assert len(batches[-1]) == 33


def test_make_batches_needs_a_row_per_round():
    with pytest.raises(DataError):
        make_batches(sensor_with(5), 20)


def test_corrupt_labels_are_fair_and_reproducible():
    rows = make_rows([[1, 0, 0]] * 10_000, [1] * 10_000, gain_db=0.0)
    corrupted = corrupt_labels(rows, seed=12)
    share = np.mean([row.label for row in corrupted])
    assert 0.45 <= share <= 0.55
    assert corrupted == corrupt_labels(rows, seed=12)
    assert [row.power for row in corrupted] == [row.power for row in rows]
    assert corrupt_labels([], seed=1) == ()


def test_fedavg_is_elementwise_mean():
    avg = fedavg([logistic(1, 2, 3, 4), logistic(3, 4, 5, 6)])
    assert avg.values.tolist() == [2.0, 3.0, 4.0, 5.0]
    single = logistic(0.5, -1, 2, 3)
    assert np.array_equal(fedavg([single]).values, single.values)


def test_fedavg_of_identical_models_is_exact():
    model = logistic(0.1, 0.2, 0.3, 1e-17)
    assert np.array_equal(fedavg([model] * 5).values, model.values)


def test_fedavg_rejects_empty_and_mixed_shapes():
    with pytest.raises(DataError):
        fedavg([])
    mlp = init_model(ModelShape(ModelKind.MLP))
    with pytest.raises(DataError):
        fedavg([logistic(1, 2, 3, 4), mlp])


def test_outlier_far_from_the_pack_is_flagged():
    pack = [logistic(i * 0.01, 0, 0, 0) for i in range(4)]
    coefs = pack + [logistic(100, 0, 0, 0)]
    assert detect_outliers(coefs, 8.0) == {4}
    distances = coefficient_distances(coefs)
    assert distances[4] == pytest.approx(99.98)


def test_identical_models_are_never_flagged():
    assert detect_outliers([logistic(1, 1, 1, 1)] * 4, 8.0) == set()


def test_outlier_detection_needs_three_vectors():
    with pytest.raises(DataError, match="insufficient population"):
        detect_outliers([logistic(0, 0, 0, 0), logistic(1, 1, 1, 1)], 8.0)


def test_round_shares_one_federated_model():
    config = FedConfig(n_sensors=4, n_rounds=2, train=TrainConfig(epochs_per_batch=3))
    states = ready_states(config)
    updated, report = run_round(states, 0, config, separable_rows(100, seed=1))
    fed = [s.fed_model.values for s in updated]
    assert all(np.array_equal(fed[0], values) for values in fed[1:])
    shadows = [s.shadow_model.values for s in updated]
    assert not np.array_equal(shadows[0], shadows[1])
    assert all(s.batch_cursor == 1 for s in updated)
    assert report.round == 0
    assert len(report.per_sensor) == 4
    assert 0.0 <= report.mean_shadow_accuracy <= 1.0


def test_round_index_must_be_in_range():
    config = FedConfig(n_sensors=4, n_rounds=2)
    with pytest.raises(ConfigError):
        run_round(ready_states(config), 2, config, separable_rows(20))


def test_replaced_sensor_restarts_its_shadow_model():
    train = TrainConfig(epochs_per_batch=3)
    config = FedConfig(n_sensors=4, n_rounds=2, replace_at={1: 1}, train=train)
    states = ready_states(config)
    evaluation = separable_rows(50, seed=2)
    states, _ = run_round(states, 0, config, evaluation)
    updated, _ = run_round(states, 1, config, evaluation)
    expected = train_batch(init_model(LOGISTIC, train), Batch.from_rows(states[1].batches[1]), train)
    assert np.array_equal(updated[1].shadow_model.values, expected.values)


def test_config_validation():
    with pytest.raises(ConfigError):
        FedConfig(n_sensors=3, faulty_ids={3})
    with pytest.raises(ConfigError):
        FedConfig(n_sensors=2, faulty_ids={0, 1})
    with pytest.raises(ConfigError):
        FedConfig(n_rounds=4, replace_at={0: 4})
    with pytest.raises(ConfigError):
        FedConfig(train_fraction=1.0)


def test_default_scenarios_cover_both_models():
    names = [scenario.name for scenario in DEFAULT_SCENARIOS]
    assert names == [
        "logistic-clean",
        "logistic-faulty1",
        "logistic-faulty2",
        "mlp-clean",
        "mlp-faulty1",
        "mlp-faulty2",
    ]
    applied = Scenario("x", model="mlp", faulty=(1, 0, 1)).apply(FedConfig())
    assert applied.shape.kind is ModelKind.MLP
    assert applied.faulty_ids == frozenset({0, 1})


def small_experiment(**overrides: object) -> FedConfig:
    base = FedConfig(n_sensors=4, n_rounds=5, train=TrainConfig(epochs_per_batch=5), pfa=0.05)
    return replace(base, **overrides)


def test_experiment_is_reproducible():
    rows = separable_rows(400, seed=5)
    config = small_experiment(shuffle_seed=9)
    first = run_experiment(rows, config).to_dict()
    second = run_experiment(rows, replace(config, workers=3)).to_dict()
    first["config"].pop("workers", None)
    second["config"].pop("workers", None)
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)


def test_experiment_report_contents():
    report = run_experiment(separable_rows(400, seed=5), small_experiment())
    assert len(report.rounds) == 5
    assert report.final["mean_fed"] > 0.9
    assert set(report.centralized_accuracy) == {"logistic", "mlp"}
    assert report.communication == {
        "coefficients_per_update": 4,
        "coefficients_uploaded": 4 * 4 * 5,
        "raw_values_centralized": 320 * 4,
    }
    assert set(report.flag_rates) == {"0", "1", "2", "3"}
    assert report.last_round["mean_fed"] == report.rounds[-1].mean_fed_accuracy
    assert report.final_model.shape == LOGISTIC


def test_faulty_sensor_drags_down_its_shadow_only():
    report = run_experiment(separable_rows(400, seed=5), small_experiment(faulty_ids={0}))
    assert report.gap > 0.0
    assert report.final["mean_fed"] > 0.9


def test_stratified_kfold_partitions_rows():
    rows = separable_rows(100)
    folds = stratified_kfold(rows, 5, seed=0)
    assert len(folds) == 5
    held_out = [row for _, validation in folds for row in validation]
    assert sorted(held_out, key=lambda r: r.power) == sorted(rows, key=lambda r: r.power)
    for train, validation in folds:
        assert len(validation) == 20
        assert sum(row.label for row in validation) == 10
        assert len(train) == 80


def test_stratified_kfold_preconditions():
    with pytest.raises(ConfigError):
        stratified_kfold(separable_rows(20), 1, seed=0)
    with pytest.raises(DataError):
        stratified_kfold(make_rows([[1, 0, 0]] * 10, [0] * 8 + [1] * 2, gain_db=0.0), 3, seed=0)


def test_shadow_model_ignores_other_sensors_rows():
    config = small_experiment(shuffle_seed=3)
    rows = separable_rows(400, seed=5)
    order = np.random.default_rng(config.shuffle_seed).permutation(len(rows))
    shifted = list(rows)
    for i in order[len(rows) // config.n_sensors :]:
        shifted[i] = replace(rows[i], power=rows[i].power + (1.5 if rows[i].label else -1.5))

    before = run_experiment(rows, config)
    after = run_experiment(shifted, config)
    assert np.array_equal(before.shadow_models[0].values, after.shadow_models[0].values)
    assert not np.array_equal(before.shadow_models[1].values, after.shadow_models[1].values)
    assert not np.array_equal(before.final_model.values, after.final_model.values)
