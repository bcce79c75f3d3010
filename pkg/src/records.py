"""RunRecord persistence (CSV + JSON sidecar) and sweep aggregation.

Floats are written with repr(), so identical records give identical bytes.
"""

import csv
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import scipy
from loguru import logger

from src.errors import ConfigurationError
from src.flow import CSV_COLUMNS, METRIC_COLUMNS, RunRecord, RunRow, support_growth_check

PathLike = Union[str, Path]
STUDY_COLUMNS = ["integrator", "m", "n", "runs", "l2_mean", "l2_var", "rayleigh_mean", "rayleigh_var"]


def _fmt(value: Any) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def _json_safe(value: Any) -> Any:
    """NaN/inf become null; numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def environment_info() -> Dict[str, str]:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

def write_record_csv(record: RunRecord, path: PathLike) -> Path:
    """One row per evaluation, header exactly CSV_COLUMNS."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in record.rows:
            writer.writerow([_fmt(v) for v in row.values()])
    logger.debug(f"Wrote {len(record.rows)} rows to {path}")
    return path


def read_record_csv(path: PathLike) -> List[RunRow]:
    """Rows of a run CSV; the header must match CSV_COLUMNS."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ConfigurationError(f"{path} is not a run CSV (header {header})")
        rows = []
        for raw in reader:
            rows.append(RunRow(int(raw[0]), *(float(v) for v in raw[1:])))
    return rows


def write_sidecar(record: RunRecord, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    """JSON metadata next to the CSV: config, environment, diagnostics, events."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    final = record.final_row
    payload = {
        "config": record.config.to_dict(),
        "environment": environment_info(),
        "complete": record.complete,
        "abort_reason": record.abort_reason,
        "state_history": record.state_history,
        "rows": len(record.rows),
        "final": dict(zip(CSV_COLUMNS, final.values())) if final else None,
        "stationarity_gap": record.stationarity_gap,
        "converged": record.converged(),
        "stationarity_residual": record.stationarity_residual,
        "coverage_initial": record.coverage_initial.to_dict() if record.coverage_initial else None,
        "coverage_final": record.coverage_final.to_dict() if record.coverage_final else None,
        "support_growth": support_growth_check(record).to_dict() if record.rows else None,
        "events": record.events,
        "checkpoint": record.checkpoint_path,
        "wall_time_s": record.wall_time_s,
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepSummary:
    """Per-step mean and variance of every metric column across runs."""
    steps: np.ndarray
    means: Dict[str, np.ndarray]
    variances: Dict[str, np.ndarray]
    runs: int
    config_hash: str = ""
    metrics: List[str] = field(default_factory=lambda: list(METRIC_COLUMNS))

    @classmethod
    def from_rows(cls, runs: Sequence[Sequence[RunRow]], config_hash: str = "") -> "SweepSummary":
        """
        Aggregate runs on the steps they share (a shorter, aborted run
        truncates the summary).
        """
        if not runs:
            raise ConfigurationError("cannot summarize zero runs")
        length = min(len(r) for r in runs)
        if any(len(r) != length for r in runs):
            logger.warning(f"Runs have different lengths; summarizing the first {length} rows")
        steps = np.array([row.step for row in runs[0][:length]], dtype=int)
        for r in runs[1:]:
            if not np.array_equal(steps, [row.step for row in r[:length]]):
                raise ConfigurationError("runs were evaluated at different steps")
        means, variances = {}, {}
        for name in METRIC_COLUMNS:
            stack = np.array([[getattr(row, name) for row in r[:length]] for r in runs], dtype=float)
            means[name] = stack.mean(axis=0)
            variances[name] = stack.var(axis=0)
        return cls(steps=steps, means=means, variances=variances, runs=len(runs), config_hash=config_hash)

    @classmethod
    def from_records(cls, records: Sequence[RunRecord], config_hash: str = "") -> "SweepSummary":
        return cls.from_rows([rec.rows for rec in records], config_hash)

    def header(self) -> List[str]:
        cols = ["step"]
        for name in self.metrics:
            cols += [f"{name}_mean", f"{name}_var"]
        return cols


def write_summary_csv(summary: SweepSummary, path: PathLike) -> Path:
    """Comment line with runs and config hash, then step,<metric>_mean,<metric>_var,..."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# runs={summary.runs} config_hash={summary.config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(summary.header())
        for i, step in enumerate(summary.steps):
            line = [str(int(step))]
            for name in summary.metrics:
                line += [_fmt(summary.means[name][i]), _fmt(summary.variances[name][i])]
            writer.writerow(line)
    logger.info(f"Wrote sweep summary over {summary.runs} runs: {path}")
    return path


def read_summary_csv(path: PathLike) -> SweepSummary:
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise ConfigurationError(f"{path} is not a sweep summary")
        meta = dict(part.split("=", 1) for part in first.lstrip("# ").split() if "=" in part)
        reader = csv.reader(fh)
        header = next(reader)
        table = np.array([[float(v) for v in raw] for raw in reader], dtype=float).reshape(-1, len(header))
    metrics = [col[: -len("_mean")] for col in header[1::2]]
    means = {name: table[:, 1 + 2 * i] for i, name in enumerate(metrics)}
    variances = {name: table[:, 2 + 2 * i] for i, name in enumerate(metrics)}
    return SweepSummary(steps=table[:, 0].astype(int), means=means, variances=variances,
                        runs=int(meta.get("runs", 0)), config_hash=meta.get("config_hash", ""),
                        metrics=metrics)


def is_summary_csv(path: PathLike) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().startswith("#")


# ---------------------------------------------------------------------------
# width / batch study
# ---------------------------------------------------------------------------

@dataclass
class StudyRow:
    integrator: str
    m: int
    n: int
    runs: int
    l2_mean: float
    l2_var: float
    rayleigh_mean: float
    rayleigh_var: float

    @classmethod
    def from_records(cls, integrator: str, m: int, n: int, records: Sequence[RunRecord]) -> "StudyRow":
        finals = [rec.final_row for rec in records if rec.final_row is not None]
        l2 = np.array([row.l2_error for row in finals], dtype=float)
        rq = np.array([row.rayleigh for row in finals], dtype=float)
        return cls(integrator, m, n, len(records),
                   float(l2.mean()), float(l2.var()), float(rq.mean()), float(rq.var()))


def write_study_csv(rows: Sequence[StudyRow], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STUDY_COLUMNS)
        for row in rows:
            writer.writerow([row.integrator, row.m, row.n, row.runs, _fmt(row.l2_mean),
                             _fmt(row.l2_var), _fmt(row.rayleigh_mean), _fmt(row.rayleigh_var)])
    return path
