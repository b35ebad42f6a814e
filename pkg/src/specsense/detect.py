"""Energy detection calibrated to a false-alarm target on measured noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from .errors import ConfigError, DataError
from .featex import FeatureRow, feature_matrix, label_vector


@dataclass(frozen=True)
class EnergyThreshold:
    threshold: float
    pfa_target: float
    n_calibration: int

    def to_dict(self) -> dict[str, float | int]:
        return asdict(self)


def calibrate_threshold(noise_powers: ArrayLike, pfa: float) -> EnergyThreshold:
    """Empirical quantile: the ``ceil(N * (1 - pfa))``-th smallest noise power.

    At most ``floor(N * pfa)`` calibration values exceed the threshold.
    """

    if not 0.0 < pfa < 1.0:
        raise ConfigError(f"pfa must lie in (0, 1), got {pfa}")
    powers = np.sort(np.asarray(noise_powers, dtype=np.float64).ravel())
    n = powers.size
    if n < math.ceil(1.0 / pfa - 1e-9):
        raise DataError(
            f"insufficient calibration data: {n} noise values for pfa={pfa}"
        )
    allowed = math.floor(n * pfa + 1e-9)
    threshold = float(powers[n - allowed - 1])
    if not threshold > 0.0:
        raise DataError("calibration threshold is not positive")
    return EnergyThreshold(threshold=threshold, pfa_target=pfa, n_calibration=n)


def energy_decide(power: float, th: EnergyThreshold) -> int:
    return int(power > th.threshold)


def energy_accuracy(rows: Sequence[FeatureRow], th: EnergyThreshold) -> float:
    if not rows:
        raise DataError("empty dataset")
    decisions = feature_matrix(rows)[:, 0] > th.threshold
    return float(np.mean(decisions.astype(np.int64) == label_vector(rows)))


def false_alarm_rate(noise_powers: ArrayLike, th: EnergyThreshold) -> float:
    powers = np.asarray(noise_powers, dtype=np.float64)
    if powers.size == 0:
        raise DataError("empty dataset")
    return float(np.mean(powers > th.threshold))


def missed_detection_rate(signal_powers: ArrayLike, th: EnergyThreshold) -> float:
    powers = np.asarray(signal_powers, dtype=np.float64)
    if powers.size == 0:
        raise DataError("empty dataset")
    return float(np.mean(powers <= th.threshold))


def noise_powers(rows: Sequence[FeatureRow]) -> list[float]:
    return [row.power for row in rows if row.label == 0]


__all__ = [
    "EnergyThreshold",
    "calibrate_threshold",
    "energy_accuracy",
    "energy_decide",
    "false_alarm_rate",
    "missed_detection_rate",
    "noise_powers",
]
