"""Logistic regression and a one-hidden-layer perceptron with analytic gradients.

Models are flat coefficient vectors so that federated averaging can treat
them uniformly. Codec order:

* logistic: ``[w_1 .. w_n, b]``
* mlp: ``[W1 (hidden x inputs, row-major), b1, w2, b2]``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, log_expit

from .errors import ConfigError, DataError, DivergenceError
from .featex import FeatureRow, feature_matrix, label_vector

MAX_STEP_HALVINGS = 8
_P_MIN = float(np.nextafter(0.0, 1.0))
_P_MAX = float(np.nextafter(1.0, 0.0))


class ModelKind(str, Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelShape:
    kind: ModelKind = ModelKind.LOGISTIC
    n_inputs: int = 3
    n_hidden: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.n_inputs < 1:
            raise ConfigError("n_inputs must be at least 1")
        if self.n_hidden < 1:
            raise ConfigError("n_hidden must be at least 1")

    @property
    def n_coefficients(self) -> int:
        if self.kind is ModelKind.LOGISTIC:
            return self.n_inputs + 1
        return (self.n_inputs + 1) * self.n_hidden + (self.n_hidden + 1)

    def to_dict(self) -> dict[str, object]:
        return {
            "kind": self.kind.value,
            "n_inputs": self.n_inputs,
            "n_hidden": self.n_hidden if self.kind is ModelKind.MLP else None,
        }


@dataclass(frozen=True, eq=False)
class CoefVector:
    shape: ModelShape
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.shape.n_coefficients:
            raise DataError(
                f"{self.shape.kind.value} model needs {self.shape.n_coefficients} "
                f"coefficients, got {values.size}"
            )
        if not np.isfinite(values).all():
            raise DataError("model coefficients must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs_per_batch: int = 20
    init_seed: int = 0
    init_scale: float = 0.5

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs_per_batch < 1:
            raise ConfigError("epochs_per_batch must be at least 1")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")


@dataclass(frozen=True, eq=False)
class Batch:
    """Feature matrix and 0/1 labels as float arrays."""

    features: NDArray[np.float64]
    labels: NDArray[np.float64]

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow]) -> "Batch":
        return cls(
            features=feature_matrix(rows),
            labels=label_vector(rows).astype(np.float64),
        )

    def __len__(self) -> int:
        return int(self.labels.size)


BatchLike = Union[Batch, Sequence[FeatureRow]]


def _as_batch(data: BatchLike) -> Batch:
    return data if isinstance(data, Batch) else Batch.from_rows(data)


def _nonempty(data: BatchLike) -> Batch:
    batch = _as_batch(data)
    if len(batch) == 0:
        raise DataError("empty batch")
    return batch


def init_model(shape: ModelShape, config: TrainConfig | None = None) -> CoefVector:
    config = config or TrainConfig()
    if shape.kind is ModelKind.LOGISTIC:
        return CoefVector(shape, np.zeros(shape.n_coefficients))

    rng = np.random.default_rng(config.init_seed)
    n, h, scale = shape.n_inputs, shape.n_hidden, config.init_scale
    hidden = rng.uniform(-scale, scale, size=(h, n))
    output = rng.uniform(-scale, scale, size=h)
    values = np.concatenate([hidden.ravel(), np.zeros(h), output, [0.0]])
    return CoefVector(shape, values)


def flatten(model: CoefVector) -> NDArray[np.float64]:
    return model.values.copy()


def unflatten(shape: ModelShape, values: ArrayLike) -> CoefVector:
    return CoefVector(shape, np.asarray(values, dtype=np.float64))


def _unpack_mlp(shape: ModelShape, values: NDArray[np.float64]):
    n, h = shape.n_inputs, shape.n_hidden
    hidden = values[: n * h].reshape(h, n)
    hidden_bias = values[n * h : n * h + h]
    output = values[n * h + h : n * h + 2 * h]
    return hidden, hidden_bias, output, values[-1]


def _check_inputs(shape: ModelShape, features: NDArray[np.float64]) -> None:
    if features.ndim != 2 or features.shape[1] != shape.n_inputs:
        width = features.shape[-1] if features.ndim else 0
        raise DataError(f"model expects {shape.n_inputs} features, got {width}")


def _forward(
    shape: ModelShape, values: NDArray[np.float64], features: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64] | None]:
    """Output logits and, for the MLP, the hidden activations."""

    _check_inputs(shape, features)
    if shape.kind is ModelKind.LOGISTIC:
        return features @ values[:-1] + values[-1], None
    hidden, hidden_bias, output, output_bias = _unpack_mlp(shape, values)
    activations = expit(features @ hidden.T + hidden_bias)
    return activations @ output + output_bias, activations


def predict_proba(model: CoefVector, features: ArrayLike) -> NDArray[np.float64]:
    matrix = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logits, _ = _forward(model.shape, model.values, matrix)
    return np.clip(expit(logits), _P_MIN, _P_MAX)


def predict(model: CoefVector, features: ArrayLike) -> float:
    vector = np.asarray(features, dtype=np.float64)
    if vector.ndim != 1:
        raise DataError("predict takes a single feature vector")
    return float(predict_proba(model, vector[np.newaxis, :])[0])


def classify(model: CoefVector, features: ArrayLike, cutoff: float = 0.5) -> int:
    if not 0.0 < cutoff < 1.0:
        raise ConfigError(f"cutoff must lie in (0, 1), got {cutoff}")
    return int(predict(model, features) >= cutoff)


def _loss(shape: ModelShape, values: NDArray[np.float64], batch: Batch) -> float:
    logits, _ = _forward(shape, values, batch.features)
    y = batch.labels
    return float(-np.mean(y * log_expit(logits) + (1.0 - y) * log_expit(-logits)))


def loss(model: CoefVector, data: BatchLike) -> float:
    """Mean binary cross-entropy."""

    return _loss(model.shape, model.values, _nonempty(data))


def _gradient(
    shape: ModelShape, values: NDArray[np.float64], batch: Batch
) -> NDArray[np.float64]:
    logits, activations = _forward(shape, values, batch.features)
    residual = (expit(logits) - batch.labels) / len(batch)
    if shape.kind is ModelKind.LOGISTIC:
        return np.append(batch.features.T @ residual, residual.sum())

    _, _, output, _ = _unpack_mlp(shape, values)
    delta = np.outer(residual, output) * activations * (1.0 - activations)
    return np.concatenate(
        [
            (delta.T @ batch.features).ravel(),
            delta.sum(axis=0),
            activations.T @ residual,
            [residual.sum()],
        ]
    )


def gradient(model: CoefVector, data: BatchLike) -> CoefVector:
    """Analytic gradient of :func:`loss`, in codec order."""

    grad = _gradient(model.shape, model.values, _nonempty(data))
    if not np.isfinite(grad).all():
        raise DivergenceError("diverged: non-finite gradient")
    return CoefVector(model.shape, grad)


def train_batch(
    model: CoefVector, data: BatchLike, config: TrainConfig | None = None
) -> CoefVector:
    """Full-batch gradient descent for ``epochs_per_batch`` epochs.

    Each epoch halves the step up to ``MAX_STEP_HALVINGS`` times until the
    loss does not increase; when no step qualifies the epoch is skipped.
    """

    config = config or TrainConfig()
    batch = _nonempty(data)
    shape = model.shape
    values = model.values.copy()

    current = _loss(shape, values, batch)
    if not math.isfinite(current):
        raise DivergenceError("diverged: non-finite loss")

    for _ in range(config.epochs_per_batch):
        grad = _gradient(shape, values, batch)
        if not np.isfinite(grad).all():
            raise DivergenceError("diverged: non-finite gradient")
        step = config.learning_rate
        for _ in range(MAX_STEP_HALVINGS + 1):
            candidate = values - step * grad
            candidate_loss = _loss(shape, candidate, batch)
            if math.isfinite(candidate_loss) and candidate_loss <= current:
                values, current = candidate, candidate_loss
                break
            step /= 2.0

    return CoefVector(shape, values)


def train_epochs(
    model: CoefVector, data: BatchLike, config: TrainConfig, epochs: int
) -> CoefVector:
    return train_batch(model, data, replace(config, epochs_per_batch=epochs))


def accuracy(model: CoefVector, data: BatchLike) -> float:
    batch = _as_batch(data)
    if len(batch) == 0:
        raise DataError("empty rows")
    decisions = predict_proba(model, batch.features) >= 0.5
    return float(np.mean(decisions == (batch.labels == 1.0)))


def save_model(model: CoefVector, path: Path, init_seed: int | None = None) -> Path:
    payload = {**model.shape.to_dict(), "values": model.values.tolist(), "init_seed": init_seed}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def load_model(path: Path) -> tuple[CoefVector, int | None]:
    """Read a model file; returns the model and the seed it was initialised from."""

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        kind = ModelKind(data["kind"])
        shape = ModelShape(kind=kind, n_inputs=int(data["n_inputs"]))
        if kind is ModelKind.MLP:
            shape = replace(shape, n_hidden=int(data["n_hidden"]))
        model = unflatten(shape, data["values"])
        init_seed = data.get("init_seed")
        if init_seed is not None:
            init_seed = int(init_seed)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc
    return model, init_seed


__all__ = [
    "Batch",
    "CoefVector",
    "MAX_STEP_HALVINGS",
    "ModelKind",
    "ModelShape",
    "TrainConfig",
    "accuracy",
    "classify",
    "flatten",
    "gradient",
    "init_model",
    "load_model",
    "loss",
    "predict",
    "predict_proba",
    "save_model",
    "train_batch",
    "train_epochs",
    "unflatten",
]
