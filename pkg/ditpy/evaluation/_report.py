"""Evaluation reports: JSON-lines records, a text table and CSV loss curves."""
import dataclasses
import json
import math
from pathlib import Path
from typing import Dict, List

import pandas as pd

__all__ = ["ROW_FIELDS", "TABLE_COLUMNS", "EvalReport", "read_report", "summarize_report"]

# every row carries these keys; missing values are None
ROW_FIELDS = (
    "name",
    "suite",
    "variant",
    "tokenizer",
    "width_multiplier",
    "objective",
    "steps",
    "n_rollouts",
    "success",
    "stderr",
    "ci_low",
    "ci_high",
    "mode_left",
    "mode_right",
    "decision_x",
    "loss_at_init",
    "loss_at_init_stderr",
    "loss_at_init_ok",
    "final_loss",
    "n_params",
    "nfe",
    "latency_ms",
    "seed",
    "status",
    "error",
)

TABLE_COLUMNS = ("suite", "variant", "tokenizer", "width_multiplier", "objective", "steps", "success", "stderr",
                 "mode_left", "mode_right", "loss_at_init", "n_params", "latency_ms", "status")

REPORT_FILE = "report.jsonl"
TABLE_FILE = "report.txt"
CURVES_FILE = "curves.csv"


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclasses.dataclass
class EvalReport:
    rows: List[dict] = dataclasses.field(default_factory=list)
    curves: Dict[str, List[float]] = dataclasses.field(default_factory=dict)
    meta: dict = dataclasses.field(default_factory=dict)

    def add_row(self, **values) -> dict:
        unknown = set(values) - set(ROW_FIELDS)
        if unknown:
            raise KeyError(f"unknown report fields {sorted(unknown)}")
        row = {k: _clean(values.get(k)) for k in ROW_FIELDS}
        for key in ("success", "mode_left", "mode_right"):
            if row[key] is not None and not 0.0 <= row[key] <= 1.0:
                raise ValueError(f"{key} should be a rate in [0, 1] but is {row[key]}")
        self.rows.append(row)
        return row

    def add_curve(self, name: str, losses):
        self.curves[name] = [float(v) for v in losses]

    def __len__(self):
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(ROW_FIELDS))

    def curves_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({name: pd.Series(v) for name, v in self.curves.items()})
        frame.index = frame.index + 1
        frame.index.name = "iteration"
        return frame

    def table(self) -> str:
        frame = self.to_frame()
        if frame.empty:
            return "(empty report)"
        return frame.loc[:, list(TABLE_COLUMNS)].to_string(index=False, na_rep="-", float_format=lambda v: f"{v:.3f}")

    def write(self, out_dir) -> Path:
        """Write ``report.jsonl``, ``report.txt`` and ``curves.csv`` under ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / REPORT_FILE, "w") as f:
            f.write(json.dumps({"meta": self.meta}, sort_keys=True) + "\n")
            for row in self.rows:
                f.write(json.dumps(row) + "\n")
        with open(out_dir / TABLE_FILE, "w") as f:
            f.write(self.table() + "\n")
        if self.curves:
            self.curves_frame().to_csv(out_dir / CURVES_FILE)
        return out_dir / REPORT_FILE


def read_report(path) -> EvalReport:
    """Read a report from its ``report.jsonl`` file or the directory holding it."""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    report = EvalReport()
    with open(path, "r") as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or "meta" not in lines[0]:
        raise ValueError(f"{path} is not a ditpy report")
    report.meta = lines[0]["meta"]
    for row in lines[1:]:
        report.rows.append({k: row.get(k) for k in ROW_FIELDS})
    curves = path.parent / CURVES_FILE
    if curves.exists():
        frame = pd.read_csv(curves, index_col="iteration")
        report.curves = {name: frame[name].dropna().tolist() for name in frame.columns}
    return report


def summarize_report(path) -> str:
    report = read_report(path)
    lines = [f"report {path} ({len(report)} rows)"]
    lines += [f"  {k}: {v}" for k, v in sorted(report.meta.items())]
    lines.append(report.table())
    return "\n".join(lines)
