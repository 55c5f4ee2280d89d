"""Experiment reports: per-stage metrics, similarity snapshots, CSV/JSON output.

Reports are built from plain Python values so that a JSON round-trip
reproduces them exactly; CSV floats are written with `repr` for the same
reason. Accuracies are percentages. `forget` at stage k is the drop in
accuracy on all previously learned devices relative to the end of stage k-1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class StageMetrics:
    stage: int
    strategy: str
    acc_new: float | None
    acc_old: float | None
    acc_avg: float
    doc_all: float
    doc_new: float | None
    forget: float | None
    per_device: list[list[int]] = field(default_factory=list)  # [device, correct, total]
    epochs: list[dict] = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: dict
    strategies: dict[str, list[StageMetrics]] = field(default_factory=dict)
    similarity: dict[str, dict[str, list[list[float]]]] = field(default_factory=dict)

    def add_similarity(self, strategy: str, stage: int, matrix: np.ndarray) -> None:
        self.similarity.setdefault(strategy, {})[str(stage)] = [
            [float(v) for v in row] for row in np.asarray(matrix)]

    def final_metrics(self, strategy: str) -> StageMetrics:
        return self.strategies[strategy][-1]

    def forgetting_per_stage(self, strategy: str) -> float:
        """Mean accuracy drop on previously learned devices, over IL stages."""
        drops = [m.forget for m in self.strategies[strategy] if m.forget is not None]
        if not drops:
            return 0.0
        return float(np.mean(drops))

    def to_json_dict(self) -> dict:
        return {"config": self.config,
                "strategies": {name: [asdict(m) for m in ms]
                               for name, ms in self.strategies.items()},
                "similarity": self.similarity}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentReport":
        report = cls(config=d["config"], similarity=d["similarity"])
        for name, ms in d["strategies"].items():
            report.strategies[name] = [StageMetrics(**m) for m in ms]
        return report

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)

    @classmethod
    def load_json(cls, path) -> "ExperimentReport":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))

    def write_metrics_csv(self, path) -> None:
        def cell(v):
            return "" if v is None else repr(float(v))

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "strategy", "acc_new", "acc_old", "acc_avg",
                             "doc_all", "doc_new", "forget"])
            for name in self.strategies:
                for m in self.strategies[name]:
                    writer.writerow([m.stage, name, cell(m.acc_new), cell(m.acc_old),
                                     cell(m.acc_avg), cell(m.doc_all), cell(m.doc_new),
                                     cell(m.forget)])

    def write_similarity_csvs(self, outdir) -> list[Path]:
        from .conflict import save_similarity_csv

        outdir = Path(outdir)
        written = []
        for strategy, stages in self.similarity.items():
            for stage, matrix in stages.items():
                path = outdir / f"similarity_{strategy}_stage{stage}.csv"
                save_similarity_csv(np.asarray(matrix), path)
                written.append(path)
        return written


def emit_report(report: ExperimentReport, fmt: str, outdir) -> list[Path]:
    """Write a report to disk as json or csv (plus similarity heatmap CSVs)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = outdir / "report.json"
        report.save_json(path)
        return [path]
    if fmt == "csv":
        path = outdir / "metrics.csv"
        report.write_metrics_csv(path)
        return [path] + report.write_similarity_csvs(outdir)
    raise ValueError(f"unknown report format {fmt!r} (use csv or json)")
