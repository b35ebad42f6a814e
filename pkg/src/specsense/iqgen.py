"""Synthetic IQ captures and raw IQ file input/output.

A capture set is one noise-only recording plus one recording per transmit
gain level. Signal recordings carry a GMSK burst placed in the centre of one
FFT channel over unit-power complex white noise, so ``gain_db`` doubles as
the wideband SNR.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import windows

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

WINDOW_LENGTH = 10_000
IQ_DTYPE = np.dtype("<c8")  # interleaved float32 re/im, little endian

DEFAULT_GAINS_DB: tuple[float, ...] = tuple(float(g) for g in range(-23, -12))
DEFAULT_SAMPLE_RATE_HZ = 40e6
DEFAULT_CENTER_FREQ_HZ = 2.1e9

SeedLike = int | np.random.SeedSequence


@dataclass(frozen=True)
class GmskParams:
    """Modem parameters of the synthetic transmitter."""

    samples_per_symbol: int = 8
    bt: float = 0.3
    modulation_index: float = 0.5
    pulse_span_symbols: int = 4

    def __post_init__(self) -> None:
        if self.samples_per_symbol < 2:
            raise ConfigError("samples_per_symbol must be at least 2")
        if not 0.0 < self.bt <= 1.0:
            raise ConfigError("bt must lie in (0, 1]")
        if self.modulation_index != 0.5:
            raise ConfigError("GMSK requires modulation_index = 0.5")
        if self.pulse_span_symbols < 1:
            raise ConfigError("pulse_span_symbols must be positive")


@dataclass(frozen=True)
class SynthesisConfig:
    """What :func:`synth_capture_set` produces."""

    noise_windows: int = 2000
    windows_per_gain: int = 200
    gains_db: tuple[float, ...] = DEFAULT_GAINS_DB
    noise_power: float = 1.0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    center_freq_hz: float = DEFAULT_CENTER_FREQ_HZ
    n_channels: int = 10
    signal_channel: int | None = None
    gmsk: GmskParams = field(default_factory=GmskParams)
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.gains_db:
            raise ConfigError("gains_db must list at least one gain level")
        for gain in self.gains_db:
            if not math.isfinite(gain):
                raise ConfigError(f"gain level {gain} dB is not finite")
        if self.noise_windows < 1 or self.windows_per_gain < 1:
            raise ConfigError("window counts must be at least 1")
        if self.noise_power < 0:
            raise ConfigError("noise_power must be non-negative")
        if self.n_channels < 1 or WINDOW_LENGTH % self.n_channels:
            raise ConfigError(
                f"n_channels must divide the window length {WINDOW_LENGTH}"
            )
        if not 0 <= self.channel < self.n_channels:
            raise ConfigError(
                f"signal_channel {self.signal_channel} outside 0..{self.n_channels - 1}"
            )
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def channel(self) -> int:
        if self.signal_channel is None:
            return self.n_channels // 2
        return self.signal_channel

    @property
    def channel_center(self) -> float:
        """Centre of the signal channel in cycles/sample (FFT-shifted order)."""

        return (self.channel + 0.5) / self.n_channels - 0.5

    @property
    def symbol_rate_hz(self) -> float:
        return self.sample_rate_hz / self.gmsk.samples_per_symbol


@dataclass(frozen=True)
class CaptureMetadata:
    """Sidecar contents of one recording."""

    gain_db: float | None
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    center_freq_hz: float = DEFAULT_CENTER_FREQ_HZ
    seed: int | None = None
    stream: int | None = None

    @property
    def truth_occupied(self) -> bool:
        return self.gain_db is not None


@dataclass(frozen=True, eq=False)
class Capture:
    samples: NDArray[np.complex64]
    metadata: CaptureMetadata

    @property
    def gain_db(self) -> float | None:
        return self.metadata.gain_db

    @property
    def truth_occupied(self) -> bool:
        return self.metadata.truth_occupied

    @property
    def n_windows(self) -> int:
        return len(self.samples) // WINDOW_LENGTH

    def describe(self) -> str:
        if self.gain_db is None:
            return "noise"
        return f"gain {self.gain_db:+g} dB"


def gaussian_pulse(params: GmskParams) -> NDArray[np.float64]:
    """Truncated Gaussian frequency pulse, normalised to unit sum."""

    sps = params.samples_per_symbol
    n_taps = params.pulse_span_symbols * sps + 1
    std = sps * math.sqrt(math.log(2.0)) / (2.0 * math.pi * params.bt)
    taps = windows.gaussian(n_taps, std, sym=True)
    return taps / taps.sum()


def gmsk_modulate(
    bits: ArrayLike, params: GmskParams | None = None
) -> NDArray[np.complex128]:
    """Constant-envelope GMSK baseband for a 0/1 bit sequence.

    The filter is causal: the first ``pulse_span_symbols`` symbols are the
    settling transient, after which a run of equal bits advances the phase by
    exactly ``pi * modulation_index`` per symbol.
    """

    params = params or GmskParams()
    bits = np.asarray(bits)
    if bits.size == 0:
        raise DataError("empty input")
    if not np.isin(bits, (0, 1)).all():
        raise DataError("bits must be 0 or 1")

    sps = params.samples_per_symbol
    nrz = np.repeat(2.0 * bits.astype(np.float64) - 1.0, sps)
    shaped = np.convolve(nrz, gaussian_pulse(params))[: nrz.size]
    phase = np.cumsum(shaped) * (math.pi * params.modulation_index / sps)
    return np.exp(1j * phase)


def add_awgn(
    samples: ArrayLike, noise_power: float, seed: SeedLike
) -> NDArray[np.complex128]:
    """Add circular complex Gaussian noise of total variance ``noise_power``."""

    if noise_power < 0:
        raise DataError("noise_power must be non-negative")
    signal = np.asarray(samples, dtype=np.complex128)
    if noise_power == 0:
        return signal.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, signal.size))
    scale = math.sqrt(noise_power / 2.0)
    return signal + scale * (noise[0] + 1j * noise[1])


def _capture_plan(config: SynthesisConfig) -> list[float | None]:
    return [None, *config.gains_db]


def _synthesise(config: SynthesisConfig, index: int, gain_db: float | None) -> Capture:
    n_windows = config.noise_windows if gain_db is None else config.windows_per_gain
    total = n_windows * WINDOW_LENGTH

    signal: NDArray[np.complex128] | None = None
    if gain_db is not None:
        sps = config.gmsk.samples_per_symbol
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(index,))
        )
        bits = rng.integers(0, 2, size=-(-total // sps), dtype=np.int8)
        carrier = np.exp(2j * math.pi * config.channel_center * np.arange(total))
        amplitude = math.sqrt(10.0 ** (gain_db / 10.0))
        signal = amplitude * carrier * gmsk_modulate(bits, config.gmsk)[:total]

    samples = np.empty(total, dtype=np.complex64)
    silence = np.zeros(WINDOW_LENGTH, dtype=np.complex128)
    for window in range(n_windows):
        span = slice(window * WINDOW_LENGTH, (window + 1) * WINDOW_LENGTH)
        clean = silence if signal is None else signal[span]
        stream = np.random.SeedSequence(config.seed, spawn_key=(index, window))
        samples[span] = add_awgn(clean, config.noise_power, stream)

    metadata = CaptureMetadata(
        gain_db=gain_db,
        sample_rate_hz=config.sample_rate_hz,
        center_freq_hz=config.center_freq_hz,
        seed=config.seed,
        stream=index,
    )
    capture = Capture(samples=samples, metadata=metadata)
    logger.info(
        "synthesised capture %d (%s, %d windows)", index, capture.describe(), n_windows
    )
    return capture


def iter_captures(config: SynthesisConfig) -> Iterator[Capture]:
    """Yield the capture set one recording at a time."""

    for index, gain_db in enumerate(_capture_plan(config)):
        yield _synthesise(config, index, gain_db)


def synth_capture_set(config: SynthesisConfig) -> list[Capture]:
    """Noise capture first, then one capture per gain level, in config order."""

    plan = list(enumerate(_capture_plan(config)))
    if config.workers == 1:
        return [_synthesise(config, index, gain) for index, gain in plan]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda item: _synthesise(config, *item), plan))


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_iq(capture: Capture, path: Path) -> Path:
    """Write raw interleaved float32 samples, no header."""

    samples = np.asarray(capture.samples)
    if not np.isfinite(samples).all():
        raise DataError("capture contains non-finite samples")
    path.parent.mkdir(parents=True, exist_ok=True)
    samples.astype(IQ_DTYPE, copy=False).tofile(path)
    return path


def read_iq(path: Path, metadata: CaptureMetadata) -> Capture:
    size = path.stat().st_size
    if size % IQ_DTYPE.itemsize:
        raise DataError(f"malformed IQ file: {path} ({size} bytes)")
    samples = np.fromfile(path, dtype=IQ_DTYPE).astype(np.complex64)
    if not np.isfinite(samples).all():
        raise DataError(f"malformed IQ file: {path} contains non-finite samples")
    return Capture(samples=samples, metadata=metadata)


def write_sidecar(capture: Capture, path: Path) -> Path:
    """Write the JSON sidecar that belongs to the IQ file at ``path``."""

    meta = capture.metadata
    payload = {
        "gain_db": "noise" if meta.gain_db is None else meta.gain_db,
        "sample_rate_hz": meta.sample_rate_hz,
        "center_freq_hz": meta.center_freq_hz,
        "truth_occupied": meta.truth_occupied,
        "seed": meta.seed,
        "stream": meta.stream,
    }
    target = sidecar_path(path)
    target.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return target


def read_sidecar(path: Path) -> CaptureMetadata:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt sidecar {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"corrupt sidecar {path}: expected a JSON object")

    for key in ("gain_db", "truth_occupied"):
        if key not in data:
            raise DataError(f"corrupt sidecar {path}: missing key '{key}'")

    raw_gain = data["gain_db"]
    try:
        gain_db = None if raw_gain in ("noise", None) else float(raw_gain)
        metadata = CaptureMetadata(
            gain_db=gain_db,
            sample_rate_hz=float(data.get("sample_rate_hz", DEFAULT_SAMPLE_RATE_HZ)),
            center_freq_hz=float(data.get("center_freq_hz", DEFAULT_CENTER_FREQ_HZ)),
            seed=None if data.get("seed") is None else int(data["seed"]),
            stream=None if data.get("stream") is None else int(data["stream"]),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"corrupt sidecar {path}: {exc}") from exc

    if bool(data["truth_occupied"]) != metadata.truth_occupied:
        raise DataError(
            f"corrupt sidecar {path}: truth_occupied must be false exactly for noise captures"
        )
    return metadata


def load_capture(path: Path) -> Capture:
    return read_iq(path, read_sidecar(sidecar_path(path)))


def save_capture(capture: Capture, path: Path) -> tuple[Path, Path]:
    return write_iq(capture, path), write_sidecar(capture, path)


def capture_files(directory: Path) -> list[Path]:
    """IQ files with a sidecar in ``directory``, sorted by name."""

    return sorted(
        path
        for path in directory.glob("*.iq")
        if path.is_file() and sidecar_path(path).exists()
    )


__all__: Sequence[str] = [
    "Capture",
    "CaptureMetadata",
    "GmskParams",
    "SynthesisConfig",
    "WINDOW_LENGTH",
    "add_awgn",
    "capture_files",
    "gaussian_pulse",
    "gmsk_modulate",
    "iter_captures",
    "load_capture",
    "read_iq",
    "read_sidecar",
    "save_capture",
    "sidecar_path",
    "synth_capture_set",
    "write_iq",
    "write_sidecar",
]
