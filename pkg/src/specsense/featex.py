"""Feature extraction: windows, FFT channels and autocorrelation statistics."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import correlate
from scipy.stats import kurtosis, skew

from .errors import ConfigError, DataError
from .iqgen import WINDOW_LENGTH, Capture

logger = logging.getLogger(__name__)

FEATURE_NAMES: tuple[str, ...] = ("power", "acf_kurtosis", "acf_skewness")
CSV_COLUMNS: tuple[str, ...] = (*FEATURE_NAMES, "label", "gain_db", "channel_index")


@dataclass(frozen=True, eq=False)
class IqWindow:
    """One block of ``WINDOW_LENGTH`` samples and where it came from."""

    samples: NDArray[np.complex64]
    gain_db: float | None
    truth_occupied: bool
    capture: int | None = None
    index: int = 0


@dataclass(frozen=True)
class FeatureRow:
    power: float
    acf_kurtosis: float
    acf_skewness: float
    label: int
    gain_db: float | None = None
    channel_index: int = 0

    @property
    def features(self) -> tuple[float, float, float]:
        return (self.power, self.acf_kurtosis, self.acf_skewness)


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def to_dict(self) -> dict[str, object]:
        return {
            "feature_names": list(self.feature_names),
            "mean": list(self.mean),
            "std": list(self.std),
        }


@dataclass(frozen=True)
class Dataset:
    """Labelled rows for a single channel, plus optional normalization."""

    rows: tuple[FeatureRow, ...]
    feature_names: tuple[str, ...] = FEATURE_NAMES
    normalization: NormalizationStats | None = None

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class FeatureConfig:
    n_channels: int = 10
    channel_index: int | None = None
    max_lag: int = 100
    balance: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        _check_channels(self.n_channels)
        if not 0 <= self.channel < self.n_channels:
            raise ConfigError(
                f"channel_index {self.channel_index} outside 0..{self.n_channels - 1}"
            )
        if not 1 <= self.max_lag < WINDOW_LENGTH:
            raise ConfigError(f"max_lag must lie in 1..{WINDOW_LENGTH - 1}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def channel(self) -> int:
        if self.channel_index is None:
            return self.n_channels // 2
        return self.channel_index


def _check_channels(n_channels: int, length: int = WINDOW_LENGTH) -> None:
    if n_channels < 1:
        raise ConfigError("n_channels must be at least 1")
    if length % n_channels:
        raise ConfigError(f"n_channels={n_channels} does not divide the FFT length {length}")


def window_split(capture: Capture) -> list[IqWindow]:
    n_windows = len(capture.samples) // WINDOW_LENGTH
    if n_windows == 0:
        raise DataError(
            f"capture of {len(capture.samples)} samples is shorter than one window"
        )
    stream = capture.metadata.stream
    return [
        IqWindow(
            samples=capture.samples[i * WINDOW_LENGTH : (i + 1) * WINDOW_LENGTH],
            gain_db=capture.gain_db,
            truth_occupied=capture.truth_occupied,
            capture=stream,
            index=i,
        )
        for i in range(n_windows)
    ]


def _spectrum(window: IqWindow, n_channels: int) -> NDArray[np.complex128]:
    samples = np.asarray(window.samples, dtype=np.complex128)
    _check_channels(n_channels, samples.size)
    return np.fft.fftshift(np.fft.fft(samples))


def channelize(window: IqWindow, n_channels: int) -> NDArray[np.complex128]:
    """Split a window into ``n_channels`` band-limited series.

    Row ``c`` of the result holds channel ``c``; channel 0 is the lowest
    frequency band of the shifted spectrum.
    """

    spectrum = _spectrum(window, n_channels)
    width = spectrum.size // n_channels
    masked = np.zeros((n_channels, spectrum.size), dtype=np.complex128)
    for channel in range(n_channels):
        band = slice(channel * width, (channel + 1) * width)
        masked[channel, band] = spectrum[band]
    return np.fft.ifft(np.fft.ifftshift(masked, axes=1), axis=1)


def channel_series(
    window: IqWindow, channel_index: int, n_channels: int
) -> NDArray[np.complex128]:
    """The single row ``channelize`` would return for ``channel_index``."""

    spectrum = _spectrum(window, n_channels)
    if not 0 <= channel_index < n_channels:
        raise ConfigError(f"channel_index {channel_index} outside 0..{n_channels - 1}")
    width = spectrum.size // n_channels
    band = slice(channel_index * width, (channel_index + 1) * width)
    masked = np.zeros_like(spectrum)
    masked[band] = spectrum[band]
    return np.fft.ifft(np.fft.ifftshift(masked))


def channel_power(window: IqWindow, channel_index: int, n_channels: int) -> float:
    """Mean power of one channel, summed directly over its FFT bins."""

    spectrum = _spectrum(window, n_channels)
    if not 0 <= channel_index < n_channels:
        raise ConfigError(f"channel_index {channel_index} outside 0..{n_channels - 1}")
    width = spectrum.size // n_channels
    bins = spectrum[channel_index * width : (channel_index + 1) * width]
    return float(np.sum(np.abs(bins) ** 2) / spectrum.size**2)


def autocorrelation(series: ArrayLike, max_lag: int) -> NDArray[np.float64]:
    """Magnitude of the biased autocorrelation for lags ``1..max_lag``.

    Normalised by the lag-0 energy, so every value lies in ``[0, 1]``.
    """

    s = np.asarray(series, dtype=np.complex128)
    if not 1 <= max_lag < s.size:
        raise DataError(f"max_lag must lie in 1..{s.size - 1}, got {max_lag}")
    energy = float(np.vdot(s, s).real)
    if energy == 0.0:
        raise DataError("zero-power window")
    full = correlate(s, s, mode="full", method="fft")
    return np.abs(full[s.size : s.size + max_lag]) / energy


def _moment_input(values: ArrayLike, minimum: int) -> NDArray[np.float64]:
    x = np.asarray(values, dtype=np.float64)
    if x.size < minimum:
        raise DataError(f"need at least {minimum} values, got {x.size}")
    if np.ptp(x) == 0:
        raise DataError("degenerate distribution")
    return x


def sample_skewness(values: ArrayLike) -> float:
    """Population-moment skewness ``m3 / m2**1.5``."""

    result = float(skew(_moment_input(values, 3), bias=True))
    if not math.isfinite(result):
        raise DataError("degenerate distribution")
    return result


def sample_excess_kurtosis(values: ArrayLike) -> float:
    """Population-moment excess kurtosis ``m4 / m2**2 - 3``."""

    result = float(kurtosis(_moment_input(values, 4), fisher=True, bias=True))
    if not math.isfinite(result):
        raise DataError("degenerate distribution")
    return result


def extract_features(
    window: IqWindow, channel_index: int, n_channels: int, max_lag: int
) -> FeatureRow:
    series = channel_series(window, channel_index, n_channels)
    acf = autocorrelation(series, max_lag)
    return FeatureRow(
        power=float(np.mean(np.abs(series) ** 2)),
        acf_kurtosis=sample_excess_kurtosis(acf),
        acf_skewness=sample_skewness(acf),
        label=int(window.truth_occupied),
        gain_db=window.gain_db,
        channel_index=channel_index,
    )


def extract_capture(capture: Capture, config: FeatureConfig | None = None) -> list[FeatureRow]:
    """Feature rows of every window of one capture, in window order."""

    config = config or FeatureConfig()
    windows = window_split(capture)

    def extract(window: IqWindow) -> FeatureRow:
        return extract_features(window, config.channel, config.n_channels, config.max_lag)

    if config.workers == 1:
        rows = [extract(window) for window in windows]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(extract, windows))
    logger.info("extracted %d windows from %s capture", len(rows), capture.describe())
    return rows


def extract_dataset(
    captures: Iterable[Capture], config: FeatureConfig | None = None
) -> Dataset:
    """Rows of all captures in the given order, balanced when configured."""

    config = config or FeatureConfig()
    rows: list[FeatureRow] = []
    for capture in captures:
        rows.extend(extract_capture(capture, config))
    if not rows:
        raise DataError("no captures to extract")
    if config.balance:
        rows = balance_labels(rows)
    return Dataset(rows=tuple(rows))


def balance_labels(rows: Sequence[FeatureRow]) -> list[FeatureRow]:
    """Equalise label counts, keeping the weakest signal rows.

    Surplus signal rows are dropped from the highest gain levels down;
    surplus noise rows are dropped from the end. Input order is preserved.
    """

    noise = [i for i, row in enumerate(rows) if row.label == 0]
    occupied = [i for i, row in enumerate(rows) if row.label == 1]
    if not noise or not occupied:
        raise DataError("balancing needs both labels present")

    if len(occupied) > len(noise):
        by_gain = sorted(occupied, key=lambda i: _gain_key(rows[i]))
        keep = set(noise) | set(by_gain[: len(noise)])
    else:
        keep = set(occupied) | set(noise[: len(occupied)])

    dropped = len(rows) - len(keep)
    if dropped:
        logger.info("balancing dropped %d of %d rows", dropped, len(rows))
    return [row for i, row in enumerate(rows) if i in keep]


def _gain_key(row: FeatureRow) -> tuple[bool, float]:
    return (row.gain_db is None, row.gain_db if row.gain_db is not None else 0.0)


def feature_matrix(rows: Sequence[FeatureRow]) -> NDArray[np.float64]:
    return np.array([row.features for row in rows], dtype=np.float64).reshape(-1, 3)


def label_vector(rows: Sequence[FeatureRow]) -> NDArray[np.int64]:
    return np.array([row.label for row in rows], dtype=np.int64)


def normalize_fit(rows: Sequence[FeatureRow]) -> NormalizationStats:
    if len(rows) < 2:
        raise DataError("normalization needs at least 2 rows")
    matrix = feature_matrix(rows)
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    for name, column, value in zip(FEATURE_NAMES, matrix.T, std):
        if value == 0.0 or np.ptp(column) == 0:
            raise DataError(f"feature '{name}' has zero variance")
    return NormalizationStats(
        mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std)
    )


def normalize_apply(
    rows: Sequence[FeatureRow], stats: NormalizationStats
) -> list[FeatureRow]:
    mean = np.asarray(stats.mean)
    std = np.asarray(stats.std)
    scaled = (feature_matrix(rows) - mean) / std
    return [
        replace(row, power=float(z[0]), acf_kurtosis=float(z[1]), acf_skewness=float(z[2]))
        for row, z in zip(rows, scaled)
    ]


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def write_dataset_csv(rows: Iterable[FeatureRow], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "power": _fmt(row.power),
                    "acf_kurtosis": _fmt(row.acf_kurtosis),
                    "acf_skewness": _fmt(row.acf_skewness),
                    "label": row.label,
                    "gain_db": "" if row.gain_db is None else _fmt(row.gain_db),
                    "channel_index": row.channel_index,
                }
            )
    return path


def read_dataset_csv(path: Path) -> Dataset:
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc

    rows: list[FeatureRow] = []
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in CSV_COLUMNS:
            if column not in header:
                raise DataError(f"{path}: missing column '{column}'")
        for line, record in enumerate(reader, start=2):
            try:
                row = FeatureRow(
                    power=float(record["power"]),
                    acf_kurtosis=float(record["acf_kurtosis"]),
                    acf_skewness=float(record["acf_skewness"]),
                    label=int(record["label"]),
                    gain_db=float(record["gain_db"]) if record["gain_db"] else None,
                    channel_index=int(record["channel_index"]),
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from exc
            if row.label not in (0, 1):
                raise DataError(f"{path}:{line}: label must be 0 or 1")
            if not all(math.isfinite(v) for v in row.features):
                raise DataError(f"{path}:{line}: non-finite feature value")
            rows.append(row)

    if not rows:
        raise DataError(f"{path}: dataset has no rows")
    return Dataset(rows=tuple(rows))


def dataset_stats(rows: Sequence[FeatureRow]) -> dict[str, object]:
    """Row counts per label and per gain level."""

    labels = Counter(row.label for row in rows)
    gains = Counter("noise" if row.gain_db is None else f"{row.gain_db:g}" for row in rows)
    return {
        "rows": len(rows),
        "labels": {str(label): labels.get(label, 0) for label in (0, 1)},
        "gains": dict(sorted(gains.items(), key=lambda item: _gain_sort(item[0]))),
        "channels": sorted({row.channel_index for row in rows}),
    }


def _gain_sort(key: str) -> float:
    return -math.inf if key == "noise" else float(key)


__all__ = [
    "CSV_COLUMNS",
    "Dataset",
    "FEATURE_NAMES",
    "FeatureConfig",
    "FeatureRow",
    "IqWindow",
    "NormalizationStats",
    "autocorrelation",
    "balance_labels",
    "channel_power",
    "channel_series",
    "channelize",
    "dataset_stats",
    "extract_capture",
    "extract_dataset",
    "extract_features",
    "feature_matrix",
    "label_vector",
    "normalize_apply",
    "normalize_fit",
    "read_dataset_csv",
    "sample_excess_kurtosis",
    "sample_skewness",
    "window_split",
    "write_dataset_csv",
]
