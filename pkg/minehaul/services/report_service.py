"""Report and trajectory artifacts.

Machine-readable JSON for whole benchmark reports, CSV tables for external
plotting, and per-episode trajectory CSVs with JSON-Lines event logs.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd

from minehaul.schemas.benchmark import REPORT_SCHEMA_VERSION, BenchmarkReport, EventRecord
from minehaul.services.benchmark_service import AGGREGATE_COLUMNS, EPISODE_COLUMNS, episode_row
from minehaul.services.executor_service import TRAJECTORY_COLUMNS

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
EPISODES_FILE = "episodes.csv"
INTERSECTIONS_FILE = "intersections.csv"
SUMMARY_FILE = "summary.csv"

INTERSECTION_COLUMNS = ["task", "mode", "intersection", "command", "sharp", "attempts", "passes", "rate"]
SUMMARY_COLUMNS = ["task", "mode", "config_hash", "episodes", *AGGREGATE_COLUMNS]

# Episode tables round-trip exactly; trajectories only need plotting precision.
EXACT_FLOAT = "%.17g"
TRAJECTORY_FLOAT = "%.10g"


def _write_csv(frame: pd.DataFrame, path: Path, float_format: str = EXACT_FLOAT) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format)
    return path


def emit_report(reports: Sequence[BenchmarkReport], out_dir: Path) -> Dict[str, Path]:
    """Write reports as JSON plus episode, intersection and summary tables.

    Args:
        reports: Reports to emit (may be empty)
        out_dir: Target directory, created if missing

    Returns:
        Written file paths by kind

    Raises:
        OSError: If ``out_dir`` is not writable
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "reports": [r.model_dump(mode="json") for r in reports],
    }
    report_path = out_dir / REPORT_FILE
    report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    episodes: List[Dict] = []
    intersections: List[Dict] = []
    summary: List[Dict] = []
    for report in reports:
        episodes.extend(episode_row(e) for e in report.episodes)
        for item in report.intersections:
            intersections.append(
                {
                    "task": report.task.value,
                    "mode": report.mode.value,
                    "intersection": item.intersection,
                    "command": item.command.value,
                    "sharp": int(item.sharp),
                    "attempts": item.attempts,
                    "passes": item.passes,
                    "rate": item.rate,
                }
            )
        row = {"task": report.task.value, "mode": report.mode.value, "config_hash": report.config_hash}
        row.update({k: report.aggregates.get(k) for k in ["episodes", *AGGREGATE_COLUMNS]})
        summary.append(row)

    paths = {
        "report": report_path,
        "episodes": _write_csv(pd.DataFrame(episodes, columns=EPISODE_COLUMNS), out_dir / EPISODES_FILE),
        "intersections": _write_csv(
            pd.DataFrame(intersections, columns=INTERSECTION_COLUMNS), out_dir / INTERSECTIONS_FILE
        ),
        "summary": _write_csv(pd.DataFrame(summary, columns=SUMMARY_COLUMNS), out_dir / SUMMARY_FILE),
    }
    logger.info(f"Wrote {len(reports)} benchmark reports to {out_dir}", extra={"episodes": len(episodes)})
    return paths


def read_reports(path: Path) -> List[BenchmarkReport]:
    """Load reports written by ``emit_report`` (file or directory)."""
    if path.is_dir():
        path = path / REPORT_FILE
    payload = json.loads(path.read_text())
    return [BenchmarkReport.model_validate(r) for r in payload["reports"]]


def write_trajectory(path: Path, rows: Sequence[Dict]) -> Path:
    """Per-step trajectory CSV (t, pose, speed, applied command, errors, events)."""
    return _write_csv(pd.DataFrame(list(rows), columns=TRAJECTORY_COLUMNS), path, TRAJECTORY_FLOAT)


def write_events(path: Path, events: Sequence[EventRecord]) -> Path:
    """Event log, one JSON object per line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for event in events:
            fh.write(event.model_dump_json() + "\n")
    return path
