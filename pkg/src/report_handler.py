"""Writes evaluation reports as JSON and as an aligned text table."""
from pathlib import Path
from typing import Dict, List
import json
import logging
import os

import pandas as pd

from evaluation import BaselineCategory, EvalReport

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
CATEGORY_COLUMNS = [BaselineCategory.NARROW.value, BaselineCategory.WIDE.value, BaselineCategory.VERY_WIDE.value]


def report_frame(reports: List[EvalReport]) -> pd.DataFrame:
    """One row per task, per-category columns and the overall mean, plus a mean row over tasks."""
    rows = []
    for report in reports:
        row = {"task": report.task}
        for name in CATEGORY_COLUMNS:
            row[name] = report.per_category.get(name)
        if BaselineCategory.OUT_OF_RANGE.value in report.per_category:
            row[BaselineCategory.OUT_OF_RANGE.value] = report.per_category[BaselineCategory.OUT_OF_RANGE.value]
        row["mAP"] = report.mean_ap
        rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        return pd.DataFrame(columns=["task", *CATEGORY_COLUMNS, "mAP"])
    if len(frame) > 1:
        mean_row = frame.drop(columns="task").mean(numeric_only=True).to_dict()
        mean_row["task"] = "mean"
        frame = pd.concat([frame, pd.DataFrame([mean_row])], ignore_index=True)
    return frame


def pair_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(report.details)


def format_report(reports: List[EvalReport]) -> str:
    lines = [report_frame(reports).to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")]
    for report in reports:
        if report.details:
            lines.append("")
            lines.append(f"{report.task} pairs:")
            lines.append(pair_frame(report).to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-"))
    return "\n".join(lines) + "\n"


class ReportHandler:
    def __init__(self, out_dir=None):
        self.out_dir = Path(out_dir or os.getenv('PSFORGE_OUT_DIR', 'dataset'))
        self.logger = logging.getLogger(__name__)

    def write(self, reports: List[EvalReport], extra: Dict = None) -> List[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"reports": [r.to_dict() for r in reports]}
        if extra:
            payload.update(extra)
        json_path = self.out_dir / REPORT_JSON
        json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        text_path = self.out_dir / REPORT_TEXT
        text_path.write_text(format_report(reports), encoding="utf-8")
        for report in reports:
            self.logger.info(f"{report.task}: mAP {report.mean_ap:.4f}")
        self.logger.info(f"Wrote report to {json_path} and {text_path}")
        return [json_path, text_path]
