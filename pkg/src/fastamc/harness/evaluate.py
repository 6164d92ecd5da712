"""Per-SNR evaluation and the versioned report format.

Report JSON (schema 1), keys in this order::

    schema_version     1
    config_digest      SHA-256 of the experiment config ("" if unknown)
    labels             modulation names, index = class id
    overall_accuracy   mean of the per-SNR accuracies (every SNR weighs the same)
    per_snr_accuracy   {"<snr_db>": accuracy}, ascending SNR
    per_snr_count      {"<snr_db>": test examples}
    confusion          {"<snr_db>": 10x10 counts, rows = true class, cols = predicted}
    confusion_pooled   10x10 counts over all SNRs
    epoch_times        seconds per training epoch (left out in replay mode)

Curve CSV: header ``snr_db,accuracy``, one row per test SNR, ascending.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..dataset import Dataset, atomic_write_bytes
from ..models import N_CLASSES
from ..nn.network import Network
from ..preprocess import PreprocessError
from ..sigsynth import ModType

SCHEMA_VERSION = 1


class ReportError(ValueError):
    pass


@dataclass
class EvalReport:
    per_snr_accuracy: dict[int, float]
    per_snr_count: dict[int, int]
    confusion: dict[int, np.ndarray]
    epoch_times: list[float] = field(default_factory=list)
    config_digest: str = ""

    @property
    def overall_accuracy(self) -> float:
        if not self.per_snr_accuracy:
            return 0.0
        return float(np.mean([self.per_snr_accuracy[s] for s in sorted(self.per_snr_accuracy)]))

    @property
    def confusion_pooled(self) -> np.ndarray:
        total = np.zeros((N_CLASSES, N_CLASSES), np.int64)
        for m in self.confusion.values():
            total += m
        return total

    def curve(self) -> list[tuple[int, float]]:
        return [(s, self.per_snr_accuracy[s]) for s in sorted(self.per_snr_accuracy)]

    def to_dict(self, include_timing: bool = True) -> dict:
        snrs = sorted(self.per_snr_accuracy)
        d = {
            "schema_version": SCHEMA_VERSION,
            "config_digest": self.config_digest,
            "labels": [m.name for m in ModType],
            "overall_accuracy": self.overall_accuracy,
            "per_snr_accuracy": {str(s): self.per_snr_accuracy[s] for s in snrs},
            "per_snr_count": {str(s): self.per_snr_count[s] for s in snrs},
            "confusion": {str(s): self.confusion[s].tolist() for s in snrs},
            "confusion_pooled": self.confusion_pooled.tolist(),
        }
        if include_timing:
            d["epoch_times"] = list(self.epoch_times)
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"unsupported report schema {d.get('schema_version')!r}")
        try:
            acc = {int(k): float(v) for k, v in d["per_snr_accuracy"].items()}
            count = {int(k): int(v) for k, v in d["per_snr_count"].items()}
            conf = {int(k): np.asarray(v, dtype=np.int64) for k, v in d["confusion"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed report: {exc}") from exc
        return cls(acc, count, conf, list(d.get("epoch_times", [])), d.get("config_digest", ""))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ReportError(f"report is not valid JSON: {exc}") from exc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr_db", "accuracy"])
        for s, a in self.curve():
            w.writerow([s, repr(a)])
        return buf.getvalue()


def report_from_predictions(y_true, y_pred, snrs, epoch_times=(), config_digest: str = "") -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    snrs = np.asarray(snrs, dtype=np.int64)
    acc, count, conf = {}, {}, {}
    for s in np.unique(snrs):
        sel = snrs == s
        m = np.zeros((N_CLASSES, N_CLASSES), np.int64)
        np.add.at(m, (y_true[sel], y_pred[sel]), 1)
        n = int(sel.sum())
        conf[int(s)] = m
        count[int(s)] = n
        acc[int(s)] = float(np.trace(m) / n)
    return EvalReport(acc, count, conf, list(epoch_times), config_digest)


def evaluate(model, test_set: Dataset, preprocessor=None, batch_size: int = 1024,
             epoch_times=None, config_digest: str | None = None) -> EvalReport:
    """Evaluate a TrainedModel (or a bare Network plus its preprocessor) on every test SNR."""
    net: Network = getattr(model, "network", model)
    pre = preprocessor if preprocessor is not None else getattr(model, "preprocessor", None)
    if len(test_set) == 0:
        raise ReportError("empty test set")
    x = pre.transform(test_set.frames) if pre is not None else test_set.frames[:, None]
    want = tuple(net.spec.input_shape)
    if x.shape[1:] != want:
        raise PreprocessError(f"preprocessed test input has shape {x.shape[1:]}, but the network expects {want}")
    pred = net.predict(x, batch_size)
    if epoch_times is None:
        epoch_times = getattr(model, "epoch_times", [])
    if config_digest is None:
        cfg = getattr(model, "config", None)
        config_digest = cfg.digest if cfg is not None else ""
    return report_from_predictions(test_set.mods, pred, test_set.snrs, epoch_times, config_digest)


def write_report(report: EvalReport, path, include_timing: bool = True) -> None:
    atomic_write_bytes(path, report.to_json(include_timing).encode())


def write_csv(report: EvalReport, path) -> None:
    atomic_write_bytes(path, report.to_csv().encode())


def read_report(path) -> EvalReport:
    try:
        with open(path) as fh:
            return EvalReport.from_json(fh.read())
    except OSError as exc:
        raise ReportError(f"cannot read report {path}: {exc}") from exc
