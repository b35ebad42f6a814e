"""Public runner orchestration for specsense."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from sklearn.model_selection import train_test_split

from .config import SpecsenseConfig
from .detect import calibrate_threshold, energy_accuracy, noise_powers
from .errors import DataError
from .featex import (
    FeatureRow,
    dataset_stats,
    extract_dataset,
    label_vector,
    normalize_apply,
    normalize_fit,
    read_dataset_csv,
    write_dataset_csv,
)
from .fed import run_experiment, stratified_kfold
from .iqgen import Capture, capture_files, iter_captures, load_capture, save_capture
from .learn import (
    Batch,
    ModelKind,
    accuracy,
    init_model,
    save_model,
    train_epochs,
)
from .reports import (
    CURVE_COLUMNS,
    SUMMARY_COLUMNS,
    curve_rows,
    format_table,
    read_report,
    summary_row,
    write_csv,
    write_experiment,
    write_json,
)

logger = logging.getLogger(__name__)

CAPTURE_DIR = "captures"
DATASET_FILE = "dataset.csv"
FEDSIM_DIR = "fedsim"
REPORT_DIR = "report"


class Command(str, Enum):
    GENERATE = "generate"
    EXTRACT = "extract"
    BASELINE = "baseline"
    FEDSIM = "fedsim"
    REPORT = "report"


@dataclass(frozen=True)
class RunManifest:
    command: Command
    config_path: Path | None
    output_dir: Path
    master_seed: int

    def to_dict(self) -> dict[str, object]:
        return {
            "command": self.command.value,
            "config_path": None if self.config_path is None else str(self.config_path),
            "output_dir": str(self.output_dir),
            "master_seed": self.master_seed,
        }


def capture_name(capture: Capture, index: int) -> str:
    if capture.gain_db is None:
        return f"capture_{index:02d}_noise.iq"
    return f"capture_{index:02d}_gain{capture.gain_db:+g}dB.iq"


class SpecsenseRunner:
    """High-level interface: one method per CLI command."""

    def __init__(self, config: SpecsenseConfig, quiet: bool = False):
        self.config = config
        self.quiet = quiet

    @property
    def output_dir(self) -> Path:
        return self.config.output_path

    def _say(self, message: str) -> None:
        if not self.quiet:
            print(message)

    def manifest(self, command: Command) -> RunManifest:
        return RunManifest(
            command=command,
            config_path=self.config.source,
            output_dir=self.output_dir,
            master_seed=self.config.seed,
        )

    def _header(self) -> dict[str, object]:
        return {"seed": self.config.seed, "settings": self.config.to_dict()}

    def generate(self) -> list[Path]:
        synthesis = self.config.synthesis()
        target = self.output_dir / CAPTURE_DIR
        target.mkdir(parents=True, exist_ok=True)

        written: list[Path] = []
        files: list[dict[str, object]] = []
        for index, capture in enumerate(iter_captures(synthesis)):
            path = target / capture_name(capture, index)
            save_capture(capture, path)
            written.append(path)
            files.append(
                {
                    "file": path.name,
                    "gain_db": capture.gain_db,
                    "windows": capture.n_windows,
                    "seed": synthesis.seed,
                    "stream": index,
                }
            )
            self._say(f"wrote {path}")

        write_json(
            {**self._header(), "manifest": self.manifest(Command.GENERATE).to_dict(), "files": files},
            target / "manifest.json",
        )
        return written

    def _captures(self, directory: Path) -> Iterator[Capture]:
        for path in capture_files(directory):
            logger.debug("loading %s", path)
            yield load_capture(path)

    def extract(self, iq_dir: Path | None = None) -> Path:
        directory = iq_dir or self.output_dir / CAPTURE_DIR
        if not directory.is_dir() or not capture_files(directory):
            raise DataError(f"no captures with sidecars in {directory}")

        dataset = extract_dataset(self._captures(directory), self.config.features())
        path = write_dataset_csv(dataset.rows, self.output_dir / DATASET_FILE)
        stats = dataset_stats(dataset.rows)
        write_json(
            {**self._header(), "manifest": self.manifest(Command.EXTRACT).to_dict(), **stats},
            path.with_name(path.name + ".stats.json"),
        )
        self._say(f"wrote {path} ({stats['rows']} rows)")
        return path

    def _dataset(self, dataset_path: Path | None) -> tuple[FeatureRow, ...]:
        return read_dataset_csv(dataset_path or self.output_dir / DATASET_FILE).rows

    def _fit_and_score(
        self, kind: ModelKind, train: Sequence[FeatureRow], test: Sequence[FeatureRow]
    ) -> float:
        fed = self.config.fed_config()
        shape = replace(fed.shape, kind=kind)
        stats = normalize_fit(train)
        model = train_epochs(
            init_model(shape, fed.train),
            Batch.from_rows(normalize_apply(train, stats)),
            fed.train,
            self.config.baseline.epochs,
        )
        return accuracy(model, Batch.from_rows(normalize_apply(test, stats)))

    def baseline(self, dataset_path: Path | None = None) -> dict[str, object]:
        rows = self._dataset(dataset_path)
        settings = self.config.baseline
        try:
            train, _ = train_test_split(
                list(rows),
                train_size=settings.train_fraction,
                stratify=label_vector(rows),
                random_state=self.config.seed,
            )
        except ValueError as exc:
            raise DataError(f"cannot split dataset: {exc}") from exc

        threshold = calibrate_threshold(noise_powers(train), settings.pfa)
        centralized = {
            kind.value: self._fit_and_score(kind, train, rows) for kind in ModelKind
        }

        kfold: dict[str, dict[str, object]] = {}
        folds = stratified_kfold(rows, settings.k_folds, self.config.seed)
        for kind in ModelKind:
            scores = [self._fit_and_score(kind, fit, held_out) for fit, held_out in folds]
            kfold[kind.value] = {
                "folds": scores,
                "mean": float(np.mean(scores)),
                "std": float(np.std(scores)),
            }

        mlp_shape = replace(self.config.fedsim.shape, kind=ModelKind.MLP)
        report = {
            **self._header(),
            "energy": {
                **threshold.to_dict(),
                "accuracy": energy_accuracy(rows, threshold),
            },
            "centralized_accuracy": centralized,
            "kfold": kfold,
            "coefficients": {
                "logistic": replace(mlp_shape, kind=ModelKind.LOGISTIC).n_coefficients,
                "mlp": mlp_shape.n_coefficients,
            },
        }
        path = write_json(report, self.output_dir / "baseline.json")
        table = [
            {
                "model": "energy",
                "accuracy": report["energy"]["accuracy"],  # type: ignore[index]
                "kfold_mean": None,
                "kfold_std": None,
            },
            *(
                {
                    "model": name,
                    "accuracy": centralized[name],
                    "kfold_mean": kfold[name]["mean"],
                    "kfold_std": kfold[name]["std"],
                }
                for name in centralized
            ),
        ]
        self._say(format_table(table, ("model", "accuracy", "kfold_mean", "kfold_std")))
        self._say(f"wrote {path}")
        return report

    def fedsim(self, dataset_path: Path | None = None) -> list[dict[str, object]]:
        rows = self._dataset(dataset_path)
        target = self.output_dir / FEDSIM_DIR
        summary: list[dict[str, object]] = []
        reports: list[dict[str, object]] = []

        for scenario in self.config.scenarios:
            fed = self.config.fed_config(scenario)
            logger.info("scenario %s: model %s, faulty %s", scenario.name, scenario.model.value, list(scenario.faulty))
            result = run_experiment(rows, fed)
            payload = {
                **self._header(),
                "scenario": {
                    "name": scenario.name,
                    "model": scenario.model.value,
                    "faulty": list(scenario.faulty),
                    "replace_at": {str(k): v for k, v in sorted(scenario.replace_at.items())},
                },
                **result.to_dict(),
            }
            json_path, _ = write_experiment(payload, target / scenario.name)
            save_model(result.final_model, target / f"{scenario.name}.model.json", fed.train.init_seed)
            self._say(f"wrote {json_path}")
            reports.append(payload)
            summary.append(summary_row(scenario.name, payload))

        write_csv(summary, SUMMARY_COLUMNS, target / "summary.csv")
        write_json(self.manifest(Command.FEDSIM).to_dict(), target / "manifest.json")
        self._say(format_table(summary, SUMMARY_COLUMNS))
        return reports

    def default_reports(self) -> list[Path]:
        directory = self.output_dir / FEDSIM_DIR
        if not directory.is_dir():
            return []
        return sorted(
            path
            for path in directory.glob("*.json")
            if not path.name.endswith(".model.json") and path.name != "manifest.json"
        )

    def report(self, report_paths: Sequence[Path] | None = None) -> str:
        paths = list(report_paths) if report_paths else self.default_reports()
        if not paths:
            raise DataError("no report files given")

        target = self.output_dir / REPORT_DIR
        summary: list[dict[str, object]] = []
        for path in paths:
            report = read_report(path)
            name = path.name.removesuffix(".json")
            write_csv(curve_rows(report), CURVE_COLUMNS, target / f"{name}.curve.csv")
            summary.append(summary_row(name, report))

        table = format_table(summary, SUMMARY_COLUMNS)
        (target / "summary.txt").write_text(table + "\n", encoding="utf-8")
        write_csv(summary, SUMMARY_COLUMNS, target / "summary.csv")
        self._say(table)
        return table

    def run(self, command: Command, paths: Sequence[Path] = ()) -> object:
        if command is Command.GENERATE:
            return self.generate()
        if command is Command.EXTRACT:
            return self.extract(paths[0] if paths else None)
        if command is Command.BASELINE:
            return self.baseline(paths[0] if paths else None)
        if command is Command.FEDSIM:
            return self.fedsim(paths[0] if paths else None)
        return self.report(paths)


__all__ = ["Command", "RunManifest", "SpecsenseRunner", "capture_name"]
