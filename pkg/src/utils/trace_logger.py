"""
Trace Logger
Per-seed trace CSVs and run summaries, written atomically
"""

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from constants import TRACE_COLUMNS, TRACE_SCHEMA_VERSION
from diagnostics import Trace

TRACE_HEADER = f"# pdmm-trace v{TRACE_SCHEMA_VERSION}"


@dataclass
class SeedOutcome:
    """Result of one seed of a run"""
    seed: int
    iterations: int
    final_objective: float
    final_residual: float
    wall_time: float  # seconds
    stop_reason: str
    trace_path: Optional[str] = None
    error: Optional[str] = None


def _cell(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_trace(trace: Trace, record_time: bool = False) -> str:
    """CSV text: version comment, header, one row per record; time_s blank unless record_time"""
    buffer = io.StringIO()
    buffer.write(TRACE_HEADER + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in trace.records:
        writer.writerow([r.t, _cell(r.wall_time) if record_time else "", _cell(r.objective),
                         _cell(r.primal_residual), _cell(r.R_value), _cell(r.h_value)])
    return buffer.getvalue()


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    with open(path, "r") as f:
        header = f.readline().strip()
    if header != TRACE_HEADER:
        raise ValueError(f"{path}: expected '{TRACE_HEADER}', found '{header}'")
    return pd.read_csv(path, comment="#")


class TraceLogger:
    """Writes traces and summaries under one output directory"""

    def __init__(self, output_dir: Union[str, Path] = "results", record_time: bool = False):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.record_time = record_time
        self.logger = logging.getLogger(__name__)

    def trace_path(self, label: str, seed: int) -> Path:
        return self.output_dir / f"{label}_seed{seed:04d}.csv"

    def write_trace(self, trace: Trace, label: str, seed: int) -> Path:
        path = atomic_write_text(self.trace_path(label, seed), format_trace(trace, self.record_time))
        self.logger.debug(f"Trace for {label} seed {seed} saved to {path}")
        return path

    @staticmethod
    def calculate_statistics(outcomes: List[SeedOutcome]) -> Dict[str, Any]:
        """Mean and standard deviation over seeds plus stop-reason counts"""
        if not outcomes:
            return {"seeds": 0}
        stats: Dict[str, Any] = {"seeds": len(outcomes)}
        for name in ("iterations", "final_objective", "final_residual", "wall_time"):
            values = np.array([getattr(o, name) for o in outcomes], dtype=float)
            stats[name] = {"mean": float(np.mean(values)), "std": float(np.std(values)),
                           "min": float(np.min(values)), "max": float(np.max(values))}
        reasons: Dict[str, int] = {}
        for o in outcomes:
            reasons[o.stop_reason] = reasons.get(o.stop_reason, 0) + 1
        stats["stop_reasons"] = reasons
        converged = [o.iterations for o in outcomes if o.stop_reason == "tolerance"]
        stats["iterations_to_tolerance"] = (
            {"mean": float(np.mean(converged)), "std": float(np.std(converged))} if converged else None)
        stats["all_converged"] = len(converged) == len(outcomes)
        return stats

    def write_summary(self, label: str, config: Dict[str, Any], outcomes: List[SeedOutcome]) -> Path:
        summary = {
            "label": label,
            "trace_schema": TRACE_SCHEMA_VERSION,
            "config": config,
            "statistics": self.calculate_statistics(outcomes),
            "seeds": [asdict(o) for o in outcomes],
        }
        if not self.record_time:
            for entry in summary["seeds"]:
                entry["wall_time"] = None
            summary["statistics"].pop("wall_time", None)
        path = atomic_write_text(self.output_dir / f"{label}_summary.json", json.dumps(summary, indent=2) + "\n")
        self.logger.info(f"Summary for {label} saved to {path}")
        return path
