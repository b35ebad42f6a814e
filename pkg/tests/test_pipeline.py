"""End-to-end behaviour on the default desk-scale synthetic dataset."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from sklearn.model_selection import train_test_split

from specsense.detect import calibrate_threshold, energy_accuracy, noise_powers
from specsense.featex import label_vector, normalize_apply, normalize_fit
from specsense.fed import FedConfig, run_experiment
from specsense.learn import (
    Batch,
    ModelKind,
    ModelShape,
    TrainConfig,
    accuracy,
    init_model,
    train_epochs,
)

pytestmark = pytest.mark.slow

SEEDS = range(5)
POINT = 0.01


@pytest.fixture(scope="module")
def experiment(desk_dataset):
    cache: dict = {}

    def run(faulty: tuple[int, ...], seed: int, kind: ModelKind = ModelKind.LOGISTIC):
        key = (faulty, seed, kind)
        if key not in cache:
            config = FedConfig(
                faulty_ids=frozenset(faulty),
                shuffle_seed=seed,
                train=TrainConfig(init_seed=seed),
                shape=ModelShape(kind),
            )
            cache[key] = run_experiment(desk_dataset.rows, config)
        return cache[key]

    return run


def test_desk_dataset_is_balanced(desk_dataset):
    labels = label_vector(desk_dataset.rows)
    assert labels.size == 4000
    assert int(labels.sum()) == 2000


def test_learned_detectors_beat_energy_detection(desk_dataset):
    rows = list(desk_dataset.rows)
    train, _ = train_test_split(rows, train_size=0.8, stratify=label_vector(rows), random_state=0)
    threshold = calibrate_threshold(noise_powers(train), 0.01)
    energy = energy_accuracy(rows, threshold)

    stats = normalize_fit(train)
    fit = Batch.from_rows(normalize_apply(train, stats))
    evaluation = Batch.from_rows(normalize_apply(rows, stats))
    config = TrainConfig()
    scores = {}
    for kind in ModelKind:
        model = train_epochs(init_model(ModelShape(kind), config), fit, config, 5000)
        scores[kind] = accuracy(model, evaluation)

    assert scores[ModelKind.LOGISTIC] - energy >= 2 * POINT
    assert scores[ModelKind.MLP] >= scores[ModelKind.LOGISTIC] - 0.5 * POINT


def test_clean_federation_matches_local_and_centralized(experiment):
    report = experiment((), 0)
    assert abs(report.gap) <= 3 * POINT
    assert report.centralized_accuracy["logistic"] - report.final["mean_fed"] <= 6 * POINT


def test_one_faulty_sensor_hurts_shadow_models_only(experiment):
    for seed in SEEDS:
        assert experiment((0,), seed).gap >= 5 * POINT


def test_second_faulty_sensor_widens_the_gap(experiment):
    for seed in SEEDS:
        one = experiment((0,), seed)
        two = experiment((0, 1), seed)
        assert two.gap > one.gap
        assert abs(two.final["mean_fed"] - one.final["mean_fed"]) <= 2 * POINT


def test_shadow_accuracy_falls_with_each_faulty_sensor(experiment):
    for seed in SEEDS:
        shadow = [experiment(faulty, seed).final["mean_shadow"] for faulty in ((), (0,), (0, 1))]
        assert shadow[2] <= shadow[1] <= shadow[0]


def test_faulty_sensor_is_flagged(experiment):
    report = experiment((0,), 0)
    assert report.flag_rates["0"]["last_half"] >= 0.8


def test_clean_rounds_are_rarely_flagged(experiment):
    report = experiment((), 0)
    quiet = np.mean([not r.flagged for r in report.rounds])
    assert quiet >= 0.9


def test_exchanged_coefficient_counts(experiment):
    report = experiment((), 0)
    assert report.communication["coefficients_per_update"] == 4
    assert report.communication["coefficients_uploaded"] == 4 * 5 * 20
    assert ModelShape(ModelKind.MLP, n_hidden=8).n_coefficients == 41


def test_mlp_federation_tracks_its_shadows(experiment):
    report = experiment((), 0, ModelKind.MLP)
    assert report.communication["coefficients_per_update"] == 21
    assert abs(report.gap) <= 3 * POINT


def test_experiment_is_deterministic(desk_dataset, experiment):
    config = FedConfig(faulty_ids=frozenset({0}), train=TrainConfig(init_seed=0), workers=4)
    again = run_experiment(desk_dataset.rows, replace(config, shuffle_seed=0))
    assert again.to_dict() == experiment((0,), 0).to_dict()
