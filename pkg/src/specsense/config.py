"""Configuration utilities for specsense."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, TypeVar

try:  # pragma: no cover - Python 3.10 compatibility shim
    import tomllib  # type: ignore[attr-defined]
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib  # type: ignore[no-redef]

from .errors import ConfigError
from .featex import FeatureConfig
from .fed import DEFAULT_SCENARIOS, FedConfig, Scenario
from .iqgen import GmskParams, SynthesisConfig
from .learn import ModelKind

T = TypeVar("T")

ENV_PREFIX = "SPECSENSE_"

FULL_SCALE_NOISE_WINDOWS = 10_000
FULL_SCALE_WINDOWS_PER_GAIN = 1_000


@dataclass(frozen=True)
class BaselineConfig:
    """Centralized reference models and the energy detector."""

    epochs: int = 5000
    k_folds: int = 5
    train_fraction: float = 0.8
    pfa: float = 0.01

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("baseline epochs must be at least 1")
        if self.k_folds < 2:
            raise ConfigError("k-folds must be at least 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train-fraction must lie in (0, 1)")
        if not 0.0 < self.pfa < 1.0:
            raise ConfigError("pfa must lie in (0, 1)")


@dataclass(frozen=True)
class SpecsenseConfig:
    """Top-level configuration consumed by :class:`SpecsenseRunner`."""

    root: Path = field(default_factory=Path.cwd)
    seed: int = 0
    workers: int = 1
    output_dir: Path = Path("specsense-out")
    full_scale: bool = False
    generate: SynthesisConfig = field(default_factory=SynthesisConfig)
    extract: FeatureConfig = field(default_factory=FeatureConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    fedsim: FedConfig = field(default_factory=FedConfig)
    scenarios: tuple[Scenario, ...] = DEFAULT_SCENARIOS
    source: Path | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.scenarios:
            raise ConfigError("fedsim needs at least one scenario")

    def with_overrides(self, **updates: object) -> "SpecsenseConfig":
        return replace(self, **updates)

    @property
    def output_path(self) -> Path:
        if self.output_dir.is_absolute():
            return self.output_dir
        return self.root / self.output_dir

    def synthesis(self) -> SynthesisConfig:
        """Synthesis settings with the master seed and scale applied."""

        config = replace(self.generate, seed=self.seed, workers=self.workers)
        if self.full_scale:
            config = replace(
                config,
                noise_windows=FULL_SCALE_NOISE_WINDOWS,
                windows_per_gain=FULL_SCALE_WINDOWS_PER_GAIN,
            )
        return config

    def features(self) -> FeatureConfig:
        return replace(self.extract, workers=self.workers)

    def fed_config(self, scenario: Scenario | None = None) -> FedConfig:
        config = replace(
            self.fedsim,
            shuffle_seed=self.seed,
            train=replace(self.fedsim.train, init_seed=self.seed),
            workers=self.workers,
        )
        return scenario.apply(config) if scenario is not None else config

    def to_dict(self) -> dict[str, object]:
        """Settings that determine artifacts, for embedding in reports."""

        synthesis = self.synthesis()
        return {
            "seed": self.seed,
            "full_scale": self.full_scale,
            "generate": {
                "noise_windows": synthesis.noise_windows,
                "windows_per_gain": synthesis.windows_per_gain,
                "gains_db": list(synthesis.gains_db),
                "noise_power": synthesis.noise_power,
                "n_channels": synthesis.n_channels,
                "signal_channel": synthesis.channel,
                "gmsk": {
                    "samples_per_symbol": synthesis.gmsk.samples_per_symbol,
                    "bt": synthesis.gmsk.bt,
                    "pulse_span_symbols": synthesis.gmsk.pulse_span_symbols,
                },
            },
            "extract": {
                "n_channels": self.extract.n_channels,
                "channel_index": self.extract.channel,
                "max_lag": self.extract.max_lag,
                "balance": self.extract.balance,
            },
            "baseline": {
                "epochs": self.baseline.epochs,
                "k_folds": self.baseline.k_folds,
                "train_fraction": self.baseline.train_fraction,
                "pfa": self.baseline.pfa,
            },
        }


class _Section:
    """Typed, kebab-case access to one TOML table that rejects unknown keys."""

    def __init__(self, name: str, data: object) -> None:
        if not isinstance(data, Mapping):
            raise ConfigError(f"configuration key '{name}' must be a table")
        self.name = name
        self.data: Mapping[str, Any] = data
        self.seen: set[str] = set()

    def _qualified(self, key: str) -> str:
        return f"{self.name}.{key}"

    def get(self, key: str, convert: Callable[[Any], T], default: T) -> T:
        self.seen.add(key)
        if key not in self.data:
            return default
        try:
            return convert(self.data[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"configuration key '{self._qualified(key)}': {exc}") from exc

    def require(self, key: str) -> Any:
        self.seen.add(key)
        if key not in self.data:
            raise ConfigError(f"missing configuration key '{self._qualified(key)}'")
        return self.data[key]

    def table(self, key: str) -> "_Section | None":
        self.seen.add(key)
        if key not in self.data:
            return None
        return _Section(self._qualified(key), self.data[key])

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"unknown configuration key '{self._qualified(unknown[0])}'")


def _as_bool(value: object) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError(f"expected true or false, got {value!r}")


def _as_int(value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _as_float(value: object) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _as_ints(value: object) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"expected a list of integers, got {value!r}")
    return tuple(_as_int(item) for item in value)


def _as_floats(value: object) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"expected a list of numbers, got {value!r}")
    return tuple(_as_float(item) for item in value)


def _as_optional_int(value: object) -> int | None:
    return None if value == "auto" else _as_int(value)


def _as_replace_at(value: object) -> dict[int, int]:
    if not isinstance(value, Mapping):
        raise ValueError("expected a table of sensor id = round")
    return {int(sensor): _as_int(round_index) for sensor, round_index in value.items()}


def _load_generate(section: _Section, base: SynthesisConfig) -> SynthesisConfig:
    gmsk = GmskParams(
        samples_per_symbol=section.get(
            "samples-per-symbol", _as_int, base.gmsk.samples_per_symbol
        ),
        bt=section.get("bt", _as_float, base.gmsk.bt),
        pulse_span_symbols=section.get(
            "pulse-span-symbols", _as_int, base.gmsk.pulse_span_symbols
        ),
    )
    config = replace(
        base,
        noise_windows=section.get("noise-windows", _as_int, base.noise_windows),
        windows_per_gain=section.get("windows-per-gain", _as_int, base.windows_per_gain),
        gains_db=section.get("gains-db", _as_floats, base.gains_db),
        noise_power=section.get("noise-power", _as_float, base.noise_power),
        sample_rate_hz=section.get("sample-rate-hz", _as_float, base.sample_rate_hz),
        center_freq_hz=section.get("center-freq-hz", _as_float, base.center_freq_hz),
        n_channels=section.get("n-channels", _as_int, base.n_channels),
        signal_channel=section.get("signal-channel", _as_optional_int, base.signal_channel),
        gmsk=gmsk,
    )
    section.finish()
    return config


def _load_extract(section: _Section, base: FeatureConfig) -> FeatureConfig:
    config = replace(
        base,
        n_channels=section.get("n-channels", _as_int, base.n_channels),
        channel_index=section.get("channel-index", _as_optional_int, base.channel_index),
        max_lag=section.get("max-lag", _as_int, base.max_lag),
        balance=section.get("balance", _as_bool, base.balance),
    )
    section.finish()
    return config


def _load_baseline(section: _Section, base: BaselineConfig) -> BaselineConfig:
    config = replace(
        base,
        epochs=section.get("epochs", _as_int, base.epochs),
        k_folds=section.get("k-folds", _as_int, base.k_folds),
        train_fraction=section.get("train-fraction", _as_float, base.train_fraction),
        pfa=section.get("pfa", _as_float, base.pfa),
    )
    section.finish()
    return config


def _load_scenario(section: _Section) -> Scenario:
    name = section.require("name")
    model = section.require("model")
    try:
        kind = ModelKind(model)
    except ValueError as exc:
        choices = ", ".join(k.value for k in ModelKind)
        raise ConfigError(
            f"configuration key '{section.name}.model' must be one of {choices}"
        ) from exc
    scenario = Scenario(
        name=str(name),
        model=kind,
        faulty=section.get("faulty", _as_ints, ()),
        replace_at=section.get("replace-at", _as_replace_at, {}),
    )
    section.finish()
    return scenario


def _load_fedsim(
    section: _Section, base: FedConfig, scenarios: tuple[Scenario, ...]
) -> tuple[FedConfig, tuple[Scenario, ...]]:
    train = replace(
        base.train,
        learning_rate=section.get("learning-rate", _as_float, base.train.learning_rate),
        epochs_per_batch=section.get(
            "epochs-per-batch", _as_int, base.train.epochs_per_batch
        ),
        init_scale=section.get("init-scale", _as_float, base.train.init_scale),
    )
    shape = replace(
        base.shape,
        n_hidden=section.get("n-hidden", _as_int, base.shape.n_hidden),
    )
    config = replace(
        base,
        n_sensors=section.get("n-sensors", _as_int, base.n_sensors),
        n_rounds=section.get("n-rounds", _as_int, base.n_rounds),
        train_fraction=section.get("train-fraction", _as_float, base.train_fraction),
        outlier_z=section.get("outlier-z", _as_float, base.outlier_z),
        exclude_outliers=section.get("exclude-outliers", _as_bool, base.exclude_outliers),
        pfa=section.get("pfa", _as_float, base.pfa),
        train=train,
        shape=shape,
    )

    section.seen.add("scenarios")
    if "scenarios" in section.data:
        entries = section.data["scenarios"]
        if not isinstance(entries, list) or not entries:
            raise ConfigError(
                f"configuration key '{section.name}.scenarios' must be a non-empty array of tables"
            )
        scenarios = tuple(
            _load_scenario(_Section(f"{section.name}.scenarios[{i}]", entry))
            for i, entry in enumerate(entries)
        )
    section.finish()

    for scenario in scenarios:
        scenario.apply(config)  # validates faulty ids against n_sensors
    return config, scenarios


def load_config_from_mapping(
    root: Path,
    data: Mapping[str, object],
    base: SpecsenseConfig | None = None,
) -> SpecsenseConfig:
    """Create a :class:`SpecsenseConfig` from a raw mapping (e.g. parsed TOML)."""

    base = base or SpecsenseConfig(root=root)
    top = _Section("specsense", data)

    overrides: dict[str, object] = {
        "seed": top.get("seed", _as_int, base.seed),
        "workers": top.get("workers", _as_int, base.workers),
        "output_dir": top.get("output-dir", lambda v: Path(str(v)), base.output_dir),
    }

    generate = top.table("generate")
    if generate is not None:
        overrides["generate"] = _load_generate(generate, base.generate)
    extract = top.table("extract")
    if extract is not None:
        overrides["extract"] = _load_extract(extract, base.extract)
    baseline = top.table("baseline")
    if baseline is not None:
        overrides["baseline"] = _load_baseline(baseline, base.baseline)
    fedsim = top.table("fedsim")
    if fedsim is not None:
        overrides["fedsim"], overrides["scenarios"] = _load_fedsim(
            fedsim, base.fedsim, base.scenarios
        )

    top.finish()
    return replace(base, **overrides)


def _load_toml(path: Path) -> Mapping[str, object]:
    try:
        with path.open("rb") as handle:
            return tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _find_section(path: Path) -> Mapping[str, object] | None:
    data = _load_toml(path)
    if path.name == "pyproject.toml":
        tool = data.get("tool")
        return tool.get("specsense") if isinstance(tool, Mapping) else None
    section = data.get("specsense")
    if section is None:
        raise ConfigError(f"{path}: missing table 'specsense'")
    return section  # type: ignore[return-value]


def load_config(
    root: Path | None = None,
    config_path: Path | None = None,
    env_prefix: str = ENV_PREFIX,
) -> SpecsenseConfig:
    """Load configuration from defaults, optional TOML, and environment variables."""

    root = (root or Path.cwd()).resolve()
    config = SpecsenseConfig(root=root)

    if config_path is not None:
        if not config_path.exists():
            raise ConfigError(f"configuration file {config_path} does not exist")
        candidates = [config_path]
    else:
        candidates = [
            path
            for path in (root / "specsense.toml", root / "pyproject.toml")
            if path.exists()
        ]

    for path in candidates:
        section = _find_section(path)
        if section is not None:
            config = load_config_from_mapping(root, section, base=config)
            config = config.with_overrides(source=path)
            break

    env_map: dict[str, str] = {
        key[len(env_prefix) :].lower().replace("_", "-"): value
        for key, value in os.environ.items()
        if key.startswith(env_prefix)
    }

    try:
        if "seed" in env_map:
            config = config.with_overrides(seed=int(env_map["seed"]))
        if "workers" in env_map:
            config = config.with_overrides(workers=int(env_map["workers"]))
    except ValueError as exc:
        raise ConfigError(f"environment override: {exc}") from exc
    if "output-dir" in env_map:
        config = config.with_overrides(output_dir=Path(env_map["output-dir"]))

    return config


__all__ = [
    "BaselineConfig",
    "ENV_PREFIX",
    "SpecsenseConfig",
    "load_config",
    "load_config_from_mapping",
]
