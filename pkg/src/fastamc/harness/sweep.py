"""Experiment grids: input-reduction sweeps and training-SNR selection sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..dataset import Dataset
from .config import ExperimentConfig, PreprocessSpec, SnrPolicy
from .evaluate import EvalReport, evaluate
from .train import load_splits, train_model


def epoch_time(times) -> float:
    """Typical epoch time: the median, which shrugs off a slow warm-up epoch."""
    if len(times) == 0:
        return float("nan")
    return float(np.median(times))


@dataclass
class ReductionCell:
    method: str
    factor: int
    report: EvalReport

    @property
    def epoch_time(self) -> float:
        return epoch_time(self.report.epoch_times)


@dataclass
class ReductionSweep:
    baseline: ReductionCell
    cells: list[ReductionCell] = field(default_factory=list)

    def timing_ratios(self) -> dict[tuple[str, int], float]:
        """Epoch time at factor f divided by the unreduced baseline's epoch time."""
        base = self.baseline.epoch_time
        return {(c.method, c.factor): c.epoch_time / base for c in self.cells}

    def table(self) -> list[dict]:
        ratios = self.timing_ratios()
        rows = [{"method": "none", "factor": 1, "overall_accuracy": self.baseline.report.overall_accuracy,
                 "epoch_time": self.baseline.epoch_time, "time_ratio": 1.0}]
        for c in self.cells:
            rows.append({"method": c.method, "factor": c.factor, "overall_accuracy": c.report.overall_accuracy,
                         "epoch_time": c.epoch_time, "time_ratio": ratios[(c.method, c.factor)]})
        return rows

    def to_csv(self) -> str:
        return _rows_csv(self.table(), ["method", "factor", "overall_accuracy", "epoch_time", "time_ratio"])


def _rows_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _data(base_cfg, train, test):
    if train is None or test is None:
        tr, te = load_splits(base_cfg)
        train = tr if train is None else train
        test = te if test is None else test
    return train, test


def run_cell(cfg: ExperimentConfig, train: Dataset, test: Dataset, log=None) -> EvalReport:
    model = train_model(cfg, train, log=log)
    return evaluate(model, test)


def sweep_reduction(base_cfg: ExperimentConfig, methods=("uniform",), factors=(1, 2, 4, 8),
                    train: Dataset | None = None, test: Dataset | None = None, log=None) -> ReductionSweep:
    """One cell per (method, factor) plus a shared unreduced baseline; factor 1 of any
    method is the baseline itself and is not rerun."""
    train, test = _data(base_cfg, train, test)
    say = log or (lambda _m: None)
    say("cell none:1")
    base = ReductionCell("none", 1, run_cell(base_cfg.with_overrides(preprocess="none"), train, test, log))
    sweep = ReductionSweep(base)
    for method in methods:
        for f in factors:
            if f == 1:
                continue
            spec = PreprocessSpec.parse(f"{method}:{f}")
            say(f"cell {spec}")
            rep = run_cell(base_cfg.with_overrides(preprocess=spec), train, test, log)
            sweep.cells.append(ReductionCell(method, f, rep))
    return sweep


@dataclass
class SnrSweep:
    reports: dict[str, EvalReport] = field(default_factory=dict)

    def curves(self) -> dict[str, list[tuple[int, float]]]:
        return {p: r.curve() for p, r in self.reports.items()}

    def table(self) -> list[dict]:
        rows = []
        for p, r in self.reports.items():
            row = {"policy": p, "overall_accuracy": r.overall_accuracy}
            row.update({str(s): a for s, a in r.curve()})
            rows.append(row)
        return rows

    def to_csv(self) -> str:
        """Long format: one row per (policy, test SNR)."""
        rows = [{"policy": p, "snr_db": s, "accuracy": a} for p, c in self.curves().items() for s, a in c]
        return _rows_csv(rows, ["policy", "snr_db", "accuracy"])


def sweep_snr_selection(base_cfg: ExperimentConfig, policies, train: Dataset | None = None,
                        test: Dataset | None = None, log=None) -> SnrSweep:
    """Train once per training-SNR policy and evaluate each on every test SNR."""
    train, test = _data(base_cfg, train, test)
    out = SnrSweep()
    for p in policies:
        policy = p if isinstance(p, SnrPolicy) else SnrPolicy.parse(p)
        if log:
            log(f"policy {policy}")
        out.reports[str(policy)] = run_cell(base_cfg.with_overrides(snr_policy=policy), train, test, log)
    return out
