"""Federated experiment engine.

Each sensor trains on one batch per round. The federated copy of its model
is replaced by the average of all sensors' federated models after every
round; the shadow copy never leaves the sensor.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray
from sklearn.model_selection import StratifiedKFold, train_test_split

from .detect import EnergyThreshold, calibrate_threshold, energy_accuracy, noise_powers
from .errors import ConfigError, DataError
from .featex import (
    FEATURE_NAMES,
    FeatureRow,
    NormalizationStats,
    feature_matrix,
    label_vector,
    normalize_apply,
    normalize_fit,
)
from .learn import (
    Batch,
    CoefVector,
    ModelKind,
    ModelShape,
    TrainConfig,
    accuracy,
    init_model,
    train_batch,
    train_epochs,
)

logger = logging.getLogger(__name__)

Rows = tuple[FeatureRow, ...]

MIN_ROWS_PER_SENSOR = 10


@dataclass(frozen=True)
class FedConfig:
    n_sensors: int = 5
    n_rounds: int = 20
    faulty_ids: frozenset[int] = frozenset()
    shuffle_seed: int = 0
    train_fraction: float = 0.8
    outlier_z: float = 8.0
    exclude_outliers: bool = False
    replace_at: Mapping[int, int] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    shape: ModelShape = field(default_factory=ModelShape)
    pfa: float = 0.01
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "faulty_ids", frozenset(self.faulty_ids))
        object.__setattr__(
            self, "replace_at", {int(k): int(v) for k, v in dict(self.replace_at).items()}
        )
        if self.n_sensors < 1:
            raise ConfigError("n_sensors must be at least 1")
        if self.n_rounds < 1:
            raise ConfigError("n_rounds must be at least 1")
        for sensor_id in sorted(self.faulty_ids | set(self.replace_at)):
            if not 0 <= sensor_id < self.n_sensors:
                raise ConfigError(
                    f"sensor id {sensor_id} outside 0..{self.n_sensors - 1}"
                )
        if len(self.faulty_ids) >= self.n_sensors:
            raise ConfigError("at least one sensor must be healthy")
        for sensor_id, round_index in self.replace_at.items():
            if not 0 <= round_index < self.n_rounds:
                raise ConfigError(
                    f"replacement round {round_index} for sensor {sensor_id} "
                    f"outside 0..{self.n_rounds - 1}"
                )
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not self.outlier_z > 0:
            raise ConfigError("outlier_z must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict[str, object]:
        return {
            "n_sensors": self.n_sensors,
            "n_rounds": self.n_rounds,
            "faulty_ids": sorted(self.faulty_ids),
            "shuffle_seed": self.shuffle_seed,
            "train_fraction": self.train_fraction,
            "outlier_z": self.outlier_z,
            "exclude_outliers": self.exclude_outliers,
            "replace_at": {str(k): v for k, v in sorted(self.replace_at.items())},
            "train": asdict(self.train),
            "shape": self.shape.to_dict(),
            "pfa": self.pfa,
        }


@dataclass(frozen=True)
class Scenario:
    """One entry of the ``fedsim`` grid."""

    name: str
    model: ModelKind = ModelKind.LOGISTIC
    faulty: tuple[int, ...] = ()
    replace_at: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", ModelKind(self.model))
        object.__setattr__(self, "faulty", tuple(sorted(set(self.faulty))))

    def apply(self, base: FedConfig) -> FedConfig:
        return replace(
            base,
            faulty_ids=frozenset(self.faulty),
            replace_at=dict(self.replace_at) or base.replace_at,
            shape=replace(base.shape, kind=self.model),
        )


DEFAULT_SCENARIOS: tuple[Scenario, ...] = tuple(
    Scenario(name=f"{kind.value}-{label}", model=kind, faulty=faulty)
    for kind in ModelKind
    for label, faulty in (("clean", ()), ("faulty1", (0,)), ("faulty2", (0, 1)))
)


@dataclass(frozen=True)
class SensorState:
    sensor_id: int
    train_rows: Rows
    test_rows: Rows
    fed_model: CoefVector
    shadow_model: CoefVector
    faulty: bool = False
    batches: tuple[Rows, ...] = ()
    batch_cursor: int = 0
    # The shadow copy sees only this sensor's rows, scaled with its own stats.
    # Empty or None falls back to ``batches`` and the round's evaluation set.
    shadow_batches: tuple[Rows, ...] = ()
    shadow_evaluation: Batch | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class SensorRoundStats:
    sensor_id: int
    fed_accuracy: float
    shadow_accuracy: float
    coef_distance: float
    flagged: bool


@dataclass(frozen=True)
class RoundReport:
    round: int
    per_sensor: tuple[SensorRoundStats, ...]
    mean_fed_accuracy: float
    mean_shadow_accuracy: float

    @property
    def flagged(self) -> list[int]:
        return [s.sensor_id for s in self.per_sensor if s.flagged]

    def to_dict(self) -> dict[str, object]:
        return {
            "round": self.round,
            "per_sensor": [asdict(stats) for stats in self.per_sensor],
            "mean_fed_accuracy": self.mean_fed_accuracy,
            "mean_shadow_accuracy": self.mean_shadow_accuracy,
        }


@dataclass(frozen=True)
class EnergyBaseline:
    threshold: EnergyThreshold | None
    accuracy: float | None
    per_sensor: tuple[dict[str, object], ...]
    mean_sensor_accuracy: float | None

    def to_dict(self) -> dict[str, object]:
        return {
            "threshold": None if self.threshold is None else self.threshold.to_dict(),
            "accuracy": self.accuracy,
            "per_sensor": [dict(entry) for entry in self.per_sensor],
            "mean_sensor_accuracy": self.mean_sensor_accuracy,
        }


@dataclass(frozen=True)
class ExperimentReport:
    config: dict[str, object]
    energy_baseline: EnergyBaseline
    centralized_accuracy: dict[str, float]
    rounds: tuple[RoundReport, ...]
    final: dict[str, float]
    last_round: dict[str, float]
    communication: dict[str, int]
    flag_rates: dict[str, dict[str, float]]
    normalization: NormalizationStats
    final_model: CoefVector = field(repr=False, compare=False)
    shadow_models: tuple[CoefVector, ...] = field(default=(), repr=False, compare=False)

    @property
    def gap(self) -> float:
        return self.final["mean_fed"] - self.final["mean_shadow"]

    def to_dict(self) -> dict[str, object]:
        return {
            "config": self.config,
            "energy_baseline": self.energy_baseline.to_dict(),
            "energy_threshold": (
                None
                if self.energy_baseline.threshold is None
                else self.energy_baseline.threshold.threshold
            ),
            "centralized_accuracy": dict(self.centralized_accuracy),
            "rounds": [report.to_dict() for report in self.rounds],
            "final": dict(self.final),
            "last_round": dict(self.last_round),
            "communication": dict(self.communication),
            "flag_rates": {k: dict(v) for k, v in self.flag_rates.items()},
            "normalization": self.normalization.to_dict(),
        }


def _stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


def partition_sensors(
    rows: Sequence[FeatureRow], config: FedConfig
) -> list[SensorState]:
    """Shuffle, cut into equal shards, split each shard stratified by label."""

    rows = tuple(rows)
    if len(rows) < config.n_sensors * MIN_ROWS_PER_SENSOR:
        raise DataError(
            f"dataset too small: {len(rows)} rows for {config.n_sensors} sensors"
        )
    if len({row.label for row in rows}) < 2:
        raise DataError("partitioning needs both labels present")

    order = np.random.default_rng(config.shuffle_seed).permutation(len(rows))
    size = len(rows) // config.n_sensors
    model = init_model(config.shape, config.train)

    states: list[SensorState] = []
    for sensor_id in range(config.n_sensors):
        shard = [rows[i] for i in order[sensor_id * size : (sensor_id + 1) * size]]
        try:
            train, test = train_test_split(
                shard,
                train_size=config.train_fraction,
                stratify=label_vector(shard),
                random_state=config.shuffle_seed,
            )
        except ValueError as exc:
            raise DataError(f"cannot split data of sensor {sensor_id}: {exc}") from exc
        states.append(
            SensorState(
                sensor_id=sensor_id,
                train_rows=tuple(train),
                test_rows=tuple(test),
                fed_model=model,
                shadow_model=model,
                faulty=sensor_id in config.faulty_ids,
            )
        )
    return states


def normalize_sensors(
    states: Sequence[SensorState], stats: NormalizationStats
) -> list[SensorState]:
    return [
        replace(
            state,
            train_rows=tuple(normalize_apply(state.train_rows, stats)),
            test_rows=tuple(normalize_apply(state.test_rows, stats)),
        )
        for state in states
    ]


def make_batches(sensor: SensorState, n_rounds: int) -> list[Rows]:
    """Contiguous equal batches, remainder appended to the last one."""

    rows = sensor.train_rows
    if len(rows) < n_rounds:
        raise DataError(
            f"sensor {sensor.sensor_id} has {len(rows)} training rows for {n_rounds} rounds"
        )
    size = len(rows) // n_rounds
    batches = [rows[r * size : (r + 1) * size] for r in range(n_rounds - 1)]
    batches.append(rows[(n_rounds - 1) * size :])
    return batches


def corrupt_labels(
    batch: Sequence[FeatureRow], seed: int | np.random.SeedSequence
) -> Rows:
    """Replace every label with a fair coin flip."""

    flips = np.random.default_rng(seed).integers(0, 2, size=len(batch))
    return tuple(replace(row, label=int(flip)) for row, flip in zip(batch, flips))


def _check_population(coefs: Sequence[CoefVector]) -> NDArray[np.float64]:
    if not coefs:
        raise DataError("no coefficient vectors to aggregate")
    shape = coefs[0].shape
    for coef in coefs[1:]:
        if coef.shape != shape:
            raise DataError(f"shape mismatch: {coef.shape} != {shape}")
    return np.stack([coef.values for coef in coefs])


def fedavg(coefs: Sequence[CoefVector]) -> CoefVector:
    """Element-wise mean, equal weight per sensor."""

    stack = _check_population(coefs)
    anchor = stack[0]
    return CoefVector(coefs[0].shape, anchor + np.mean(stack - anchor, axis=0))


def coefficient_distances(coefs: Sequence[CoefVector]) -> NDArray[np.float64]:
    """Euclidean distance of each vector to the coordinate-wise median."""

    stack = _check_population(coefs)
    return np.linalg.norm(stack - np.median(stack, axis=0), axis=1)


def detect_outliers(coefs: Sequence[CoefVector], outlier_z: float) -> set[int]:
    if len(coefs) < 3:
        raise DataError("insufficient population")
    distances = coefficient_distances(coefs)
    centre = float(np.median(distances))
    mad = float(np.median(np.abs(distances - centre)))
    if mad == 0.0:
        cutoff = centre * 10.0
    else:
        cutoff = centre + outlier_z * mad
    return {i for i, d in enumerate(distances) if d > cutoff}


def _local_step(
    state: SensorState, round_index: int, config: FedConfig
) -> tuple[CoefVector, CoefVector]:
    shadow = state.shadow_model
    if config.replace_at.get(state.sensor_id) == round_index:
        logger.info("sensor %d replaced at round %d", state.sensor_id, round_index)
        shadow = init_model(config.shape, config.train)

    def local_batch(batches: tuple[Rows, ...]) -> Batch:
        rows = batches[round_index]
        if state.faulty:
            stream = _stream(config.shuffle_seed, state.sensor_id, round_index)
            rows = corrupt_labels(rows, stream)
        return Batch.from_rows(rows)

    batch = local_batch(state.batches)
    shadow_batch = local_batch(state.shadow_batches) if state.shadow_batches else batch
    return (
        train_batch(state.fed_model, batch, config.train),
        train_batch(shadow, shadow_batch, config.train),
    )


def run_round(
    states: Sequence[SensorState],
    round_index: int,
    config: FedConfig,
    evaluation: Batch | Sequence[FeatureRow],
) -> tuple[list[SensorState], RoundReport]:
    """One round: local training, aggregation, evaluation on ``evaluation``."""

    if not 0 <= round_index < config.n_rounds:
        raise ConfigError(f"round {round_index} outside 0..{config.n_rounds - 1}")
    evaluation = evaluation if isinstance(evaluation, Batch) else Batch.from_rows(evaluation)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            trained = list(pool.map(lambda s: _local_step(s, round_index, config), states))
    else:
        trained = [_local_step(state, round_index, config) for state in states]

    local = [fed for fed, _ in trained]
    distances = coefficient_distances(local)
    flags = detect_outliers(local, config.outlier_z) if len(local) >= 3 else set()
    if flags:
        logger.warning("round %d: sensors %s flagged as outliers", round_index, sorted(flags))

    contributors = local
    if config.exclude_outliers and len(flags) < len(local):
        contributors = [coef for i, coef in enumerate(local) if i not in flags]
    aggregate = fedavg(contributors)

    fed_accuracy = accuracy(aggregate, evaluation)
    updated: list[SensorState] = []
    per_sensor: list[SensorRoundStats] = []
    for i, (state, (_, shadow)) in enumerate(zip(states, trained)):
        updated.append(
            replace(state, fed_model=aggregate, shadow_model=shadow, batch_cursor=round_index + 1)
        )
        per_sensor.append(
            SensorRoundStats(
                sensor_id=state.sensor_id,
                fed_accuracy=fed_accuracy,
                shadow_accuracy=accuracy(
                    shadow,
                    evaluation if state.shadow_evaluation is None else state.shadow_evaluation,
                ),
                coef_distance=float(distances[i]),
                flagged=i in flags,
            )
        )

    report = RoundReport(
        round=round_index,
        per_sensor=tuple(per_sensor),
        mean_fed_accuracy=float(np.mean([s.fed_accuracy for s in per_sensor])),
        mean_shadow_accuracy=float(np.mean([s.shadow_accuracy for s in per_sensor])),
    )
    logger.info(
        "round %d: mean fed %.4f, mean shadow %.4f",
        round_index,
        report.mean_fed_accuracy,
        report.mean_shadow_accuracy,
    )
    return updated, report


def _energy_baseline(
    raw_states: Sequence[SensorState], rows: Sequence[FeatureRow], pfa: float
) -> EnergyBaseline:
    def calibrate(noise: Sequence[float], who: str) -> EnergyThreshold | None:
        try:
            return calibrate_threshold(noise, pfa)
        except DataError as exc:
            logger.warning("energy baseline for %s skipped: %s", who, exc)
            return None

    pooled_noise = [p for state in raw_states for p in noise_powers(state.train_rows)]
    pooled = calibrate(pooled_noise, "pooled data")
    per_sensor: list[dict[str, object]] = []
    for state in raw_states:
        th = calibrate(noise_powers(state.train_rows), f"sensor {state.sensor_id}")
        per_sensor.append(
            {
                "sensor_id": state.sensor_id,
                "threshold": None if th is None else th.threshold,
                "accuracy": None if th is None else energy_accuracy(rows, th),
            }
        )
    scored = [entry["accuracy"] for entry in per_sensor if entry["accuracy"] is not None]
    return EnergyBaseline(
        threshold=pooled,
        accuracy=None if pooled is None else energy_accuracy(rows, pooled),
        per_sensor=tuple(per_sensor),
        mean_sensor_accuracy=float(np.mean(scored)) if scored else None,
    )


def _centralized(
    train: Batch, evaluation: Batch, config: FedConfig
) -> tuple[dict[str, float], dict[str, CoefVector]]:
    epochs = config.n_rounds * config.train.epochs_per_batch
    accuracies: dict[str, float] = {}
    models: dict[str, CoefVector] = {}
    for kind in ModelKind:
        shape = replace(config.shape, kind=kind)
        model = train_epochs(init_model(shape, config.train), train, config.train, epochs)
        accuracies[kind.value] = accuracy(model, evaluation)
        models[kind.value] = model
    return accuracies, models


def _flag_rate(rounds: Sequence[RoundReport], sensor_id: int) -> float:
    return float(np.mean([sensor_id in r.flagged for r in rounds]))


def _flag_rates(rounds: Sequence[RoundReport], n_sensors: int) -> dict[str, dict[str, float]]:
    tail = rounds[len(rounds) // 2 :] or rounds
    return {
        str(sensor_id): {
            "all": _flag_rate(rounds, sensor_id),
            "last_half": _flag_rate(tail, sensor_id),
        }
        for sensor_id in range(n_sensors)
    }


def _with_shadow_view(
    state: SensorState, raw: SensorState, rows: Rows, n_rounds: int
) -> SensorState:
    """Shadow batches and evaluation set in the sensor's own feature scale."""

    own = normalize_fit(raw.train_rows)
    local = replace(raw, train_rows=tuple(normalize_apply(raw.train_rows, own)))
    return replace(
        state,
        shadow_batches=tuple(make_batches(local, n_rounds)),
        shadow_evaluation=Batch.from_rows(normalize_apply(rows, own)),
    )


def run_experiment(rows: Sequence[FeatureRow], config: FedConfig) -> ExperimentReport:
    """Partition, run every round, and collect baselines and summaries."""

    rows = tuple(rows)
    raw_states = partition_sensors(rows, config)

    pooled_train = [row for state in raw_states for row in state.train_rows]
    stats = normalize_fit(pooled_train)
    evaluation = Batch.from_rows(normalize_apply(rows, stats))
    states = [
        _with_shadow_view(
            replace(state, batches=tuple(make_batches(state, config.n_rounds))),
            raw,
            rows,
            config.n_rounds,
        )
        for state, raw in zip(normalize_sensors(raw_states, stats), raw_states)
    ]

    energy = _energy_baseline(raw_states, rows, config.pfa)
    centralized, _ = _centralized(
        Batch.from_rows(normalize_apply(pooled_train, stats)), evaluation, config
    )

    rounds: list[RoundReport] = []
    for round_index in range(config.n_rounds):
        states, report = run_round(states, round_index, config, evaluation)
        rounds.append(report)

    n_coef = config.shape.n_coefficients
    communication = {
        "coefficients_per_update": n_coef,
        "coefficients_uploaded": n_coef * config.n_sensors * config.n_rounds,
        "raw_values_centralized": len(pooled_train) * (len(FEATURE_NAMES) + 1),
    }
    report = ExperimentReport(
        config=config.to_dict(),
        energy_baseline=energy,
        centralized_accuracy=centralized,
        rounds=tuple(rounds),
        final={
            "mean_fed": float(np.mean([r.mean_fed_accuracy for r in rounds])),
            "mean_shadow": float(np.mean([r.mean_shadow_accuracy for r in rounds])),
        },
        last_round={
            "mean_fed": rounds[-1].mean_fed_accuracy,
            "mean_shadow": rounds[-1].mean_shadow_accuracy,
        },
        communication=communication,
        flag_rates=_flag_rates(rounds, config.n_sensors),
        normalization=stats,
        final_model=states[0].fed_model,
        shadow_models=tuple(state.shadow_model for state in states),
    )
    logger.info(
        "experiment done: fed %.4f, shadow %.4f",
        report.final["mean_fed"],
        report.final["mean_shadow"],
    )
    return report


def stratified_kfold(
    rows: Sequence[FeatureRow], k: int, seed: int
) -> list[tuple[Rows, Rows]]:
    """Label-proportional ``(train, validation)`` splits."""

    if k < 2:
        raise ConfigError("k must be at least 2")
    rows = tuple(rows)
    labels = label_vector(rows)
    for label in (0, 1):
        count = int(np.sum(labels == label))
        if count < k:
            raise DataError(f"label {label} has {count} rows, fewer than k={k}")
    folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return [
        (tuple(rows[i] for i in train), tuple(rows[i] for i in held_out))
        for train, held_out in folds.split(feature_matrix(rows), labels)
    ]


__all__ = [
    "DEFAULT_SCENARIOS",
    "EnergyBaseline",
    "ExperimentReport",
    "FedConfig",
    "RoundReport",
    "Scenario",
    "SensorRoundStats",
    "SensorState",
    "coefficient_distances",
    "corrupt_labels",
    "detect_outliers",
    "fedavg",
    "make_batches",
    "normalize_sensors",
    "partition_sensors",
    "run_experiment",
    "run_round",
    "stratified_kfold",
]
