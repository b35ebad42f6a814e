from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pytest

from specsense.config import SpecsenseConfig, load_config
from specsense.featex import Dataset, FeatureConfig, FeatureRow, extract_dataset
from specsense.iqgen import SynthesisConfig, iter_captures


def make_rows(
    features: Iterable[Sequence[float]],
    labels: Iterable[int],
    gain_db: float | None = None,
) -> list[FeatureRow]:
    return [
        FeatureRow(
            power=float(f[0]),
            acf_kurtosis=float(f[1]),
            acf_skewness=float(f[2]),
            label=int(y),
            gain_db=None if y == 0 else gain_db,
            channel_index=5,
        )
        for f, y in zip(features, labels)
    ]


def separable_rows(n: int = 200, seed: int = 0) -> list[FeatureRow]:
    """Two well separated Gaussian blobs, label 1 on the positive side."""

    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centres = np.where(labels[:, None] == 1, 2.0, -2.0)
    features = centres + 0.5 * rng.standard_normal((n, 3))
    return make_rows(features, labels, gain_db=0.0)


@dataclass
class Workspace:
    root: Path

    def write(self, relative: str, content: str) -> Path:
        path = self.root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        return path

    def config(self, **overrides: object) -> SpecsenseConfig:
        config = load_config(root=self.root)
        if overrides:
            config = config.with_overrides(**overrides)
        return config


@pytest.fixture
def workspace(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Workspace:
    for name in ("SPECSENSE_SEED", "SPECSENSE_WORKERS", "SPECSENSE_OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)
    root = tmp_path / "work"
    root.mkdir()
    root = root.resolve()
    monkeypatch.chdir(root)
    return Workspace(root)


TINY_TOML = """
[specsense]
seed = 7

[specsense.generate]
noise-windows = 30
windows-per-gain = 5
gains-db = [-16, -12, -8, -4, 0, 4]

[specsense.baseline]
epochs = 200
k-folds = 3
pfa = 0.05

[specsense.fedsim]
n-sensors = 3
n-rounds = 4
epochs-per-batch = 5

[[specsense.fedsim.scenarios]]
name = "lr-clean"
model = "logistic"

[[specsense.fedsim.scenarios]]
name = "mlp-faulty"
model = "mlp"
faulty = [0]
"""


@pytest.fixture
def tiny_project(workspace: Workspace) -> Workspace:
    workspace.write("specsense.toml", TINY_TOML)
    return workspace


@pytest.fixture(scope="session")
def desk_dataset() -> Dataset:
    """The default synthetic dataset, built through synthesis and extraction."""

    return extract_dataset(iter_captures(SynthesisConfig()), FeatureConfig())
