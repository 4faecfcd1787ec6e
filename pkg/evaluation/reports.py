# evaluation/reports.py

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from genreg.storage import write_csv, write_json

logger = logging.getLogger(__name__)


@dataclass
class MetricRecord:
    image_id: str
    metric: str
    value: float


@dataclass
class MetricReport:
    """Per-image metric values plus where they came from; aggregates are always recomputed from the records."""

    provenance: Dict[str, Any] = field(default_factory=dict)
    records: List[MetricRecord] = field(default_factory=list)

    def add(self, image_id: str, metric: str, value: float):
        self.records.append(MetricRecord(str(image_id), metric, float(value)))

    def metrics(self) -> List[str]:
        return list(OrderedDict.fromkeys(r.metric for r in self.records))

    def values(self, metric: str) -> np.ndarray:
        return np.array([r.value for r in self.records if r.metric == metric])

    def aggregates(self, metric: str) -> Dict[str, float]:
        values = self.values(metric)
        if values.size == 0:
            raise ValueError(f"no records for metric {metric!r}")
        q1, median, q3 = np.percentile(values, [25, 50, 75])
        return {
            "count": int(values.size),
            "mean": float(values.mean()),
            "std": float(values.std()),
            "median": float(median),
            "q1": float(q1),
            "q3": float(q3),
            "min": float(values.min()),
            "max": float(values.max()),
        }

    def write(self, directory, name: str) -> Tuple[Path, Path]:
        """<name>.csv with one row per record, <name>.json with provenance and aggregates."""
        directory = Path(directory)
        csv_path = write_csv(
            directory / f"{name}.csv",
            ["image", "metric", "value"],
            ((r.image_id, r.metric, r.value) for r in self.records),
        )
        manifest = {
            "provenance": self.provenance,
            "aggregates": {metric: self.aggregates(metric) for metric in self.metrics()},
        }
        json_path = write_json(directory / f"{name}.json", manifest)
        logger.info(f"[Reports] wrote {len(self.records)} records to {csv_path}")
        return csv_path, json_path


def nrmse_summary(reports: Dict[str, MetricReport], metric: str = "nrmse") -> List[Dict[str, Any]]:
    """Distribution summary per model, for side-by-side comparison of reconstruction errors."""
    rows = []
    for model, report in reports.items():
        stats = report.aggregates(metric)
        rows.append({"model": model, **stats})
    return rows


def method_summary(rows: Iterable[Dict[str, Any]], metric: str = "psnr") -> List[Dict[str, Any]]:
    """Mean and std of a metric for every (method, lam, mu), in first-seen order."""
    groups: "OrderedDict[Tuple[str, float, float], List[float]]" = OrderedDict()
    for row in rows:
        groups.setdefault((row["method"], row["lam"], row["mu"]), []).append(float(row[metric]))

    summary = []
    for (method, lam, mu), values in groups.items():
        values = np.array(values)
        summary.append(
            {
                "method": method,
                "lam": lam,
                "mu": mu,
                "count": int(values.size),
                f"{metric}_mean": float(values.mean()),
                f"{metric}_std": float(values.std()),
            }
        )
    return summary


def write_rows(path, rows: Sequence[Dict[str, Any]]) -> Path:
    if not rows:
        raise ValueError(f"nothing to write to {path}")
    header = list(rows[0].keys())
    return write_csv(path, header, ([row[key] for key in header] for row in rows))
