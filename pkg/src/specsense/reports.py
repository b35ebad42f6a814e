"""Report files, summary tables and accuracy-vs-round curves."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError

ROUND_COLUMNS = (
    "round",
    "sensor_id",
    "fed_accuracy",
    "shadow_accuracy",
    "coef_distance",
    "flagged",
)
CURVE_COLUMNS = ("round", "mean_fed", "mean_shadow")
SUMMARY_COLUMNS = (
    "scenario",
    "model",
    "faulty",
    "mean_fed",
    "mean_shadow",
    "gap",
    "last_fed",
    "last_shadow",
    "centralized",
    "energy",
    "coefficients",
    "faulty_flag_rate",
)


def write_json(payload: Mapping[str, object], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def write_csv(
    rows: Iterable[Mapping[str, object]], columns: Sequence[str], path: Path
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({column: row[column] for column in columns})
    return path


def round_rows(report: Mapping[str, object]) -> list[dict[str, object]]:
    """Flatten ``rounds[].per_sensor[]`` into one row per (round, sensor)."""

    rows: list[dict[str, object]] = []
    for entry in report["rounds"]:  # type: ignore[union-attr]
        for sensor in entry["per_sensor"]:
            rows.append(
                {
                    "round": entry["round"],
                    "sensor_id": sensor["sensor_id"],
                    "fed_accuracy": sensor["fed_accuracy"],
                    "shadow_accuracy": sensor["shadow_accuracy"],
                    "coef_distance": sensor["coef_distance"],
                    "flagged": int(sensor["flagged"]),
                }
            )
    return rows


def write_experiment(report: Mapping[str, object], stem: Path) -> tuple[Path, Path]:
    """Write ``<stem>.json`` and the per-round ``<stem>.rounds.csv``."""

    json_path = write_json(report, stem.with_name(stem.name + ".json"))
    csv_path = write_csv(
        round_rows(report), ROUND_COLUMNS, stem.with_name(stem.name + ".rounds.csv")
    )
    return json_path, csv_path


def read_report(path: Path) -> dict[str, object]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed report {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"malformed report {path}: expected a JSON object")
    for key in ("config", "rounds", "final"):
        if key not in data:
            raise DataError(f"malformed report {path}: missing field '{key}'")
    rounds = data["rounds"]
    if not isinstance(rounds, list) or not rounds:
        raise DataError(f"malformed report {path}: 'rounds' must be a non-empty list")
    for entry in rounds:
        if not isinstance(entry, dict) or not {
            "round",
            "mean_fed_accuracy",
            "mean_shadow_accuracy",
        } <= set(entry):
            raise DataError(f"malformed report {path}: incomplete round entry")
    return data


def curve_rows(report: Mapping[str, object]) -> list[dict[str, object]]:
    return [
        {
            "round": entry["round"],
            "mean_fed": entry["mean_fed_accuracy"],
            "mean_shadow": entry["mean_shadow_accuracy"],
        }
        for entry in report["rounds"]  # type: ignore[union-attr]
    ]


def summary_row(name: str, report: Mapping[str, object]) -> dict[str, object]:
    config = report["config"]
    final = report["final"]
    last = report.get("last_round") or {}
    faulty = list(config.get("faulty_ids", []))  # type: ignore[union-attr]
    flag_rates = report.get("flag_rates") or {}
    faulty_rates = [
        flag_rates[str(sensor)]["last_half"] for sensor in faulty if str(sensor) in flag_rates
    ]
    shape = config.get("shape", {})  # type: ignore[union-attr]
    model = shape.get("kind", "")
    centralized = report.get("centralized_accuracy") or {}
    energy = report.get("energy_baseline") or {}
    return {
        "scenario": name,
        "model": model,
        "faulty": " ".join(str(sensor) for sensor in faulty) or "-",
        "mean_fed": final["mean_fed"],
        "mean_shadow": final["mean_shadow"],
        "gap": final["mean_fed"] - final["mean_shadow"],
        "last_fed": last.get("mean_fed"),
        "last_shadow": last.get("mean_shadow"),
        "centralized": centralized.get(model),
        "energy": energy.get("accuracy"),
        "coefficients": (report.get("communication") or {}).get("coefficients_per_update"),
        "faulty_flag_rate": min(faulty_rates) if faulty_rates else None,
    }


def _cell(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_table(rows: Sequence[Mapping[str, object]], columns: Sequence[str]) -> str:
    """Left-aligned text table with a dashed rule under the header."""

    cells = [[_cell(row.get(column)) for column in columns] for row in rows]
    widths = [
        max(len(column), *(len(line[i]) for line in cells)) if cells else len(column)
        for i, column in enumerate(columns)
    ]
    header = "  ".join(column.ljust(width) for column, width in zip(columns, widths))
    rule = "  ".join("-" * width for width in widths)
    body = [
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in cells
    ]
    return "\n".join([header.rstrip(), rule, *body])


__all__ = [
    "CURVE_COLUMNS",
    "ROUND_COLUMNS",
    "SUMMARY_COLUMNS",
    "curve_rows",
    "format_table",
    "read_report",
    "round_rows",
    "summary_row",
    "write_csv",
    "write_experiment",
    "write_json",
]
