"""Accuracy reports. The only module that reads target-domain labels."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .gradcore import UsageError
from .model import ModelParams, predict


@dataclass
class Sidecar:
    """Ground-truth labels for an evaluation image set, kept apart from training data."""

    labels: np.ndarray
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


def dataset_checksum(images: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(images, dtype=np.float32).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    return h.hexdigest()


@dataclass
class EvalReport:
    accuracy: float
    per_class: list  # accuracy per class, NaN for classes absent from the test set
    confusion: list  # rows = true class, cols = predicted
    total: int
    checksum: str

    def write(self, stem) -> None:
        """Writes ``<stem>.json`` (summary) and ``<stem>.csv`` (per-class rows)."""
        stem = Path(stem)
        stem.with_suffix(".json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True))
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["class", "count", "accuracy", *[f"pred_{j}" for j in range(len(self.confusion))]])
            for c, row in enumerate(self.confusion):
                wr.writerow([c, sum(row), repr(self.per_class[c]), *row])

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def report_from_predictions(pred: np.ndarray, labels: np.ndarray, num_classes: int, checksum: str = "") -> EvalReport:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(confusion) / np.maximum(counts, 1), np.nan)
    total = int(confusion.sum())
    acc = float(np.trace(confusion) / total) if total else float("nan")
    return EvalReport(acc, [float(x) for x in per_class], confusion.tolist(), total, checksum)


def accuracy(params: ModelParams, images: np.ndarray, sidecar: Sidecar | None,
             batch_size: int = 500) -> EvalReport:
    if sidecar is None:
        raise UsageError("accuracy needs the label sidecar of the test set")
    if len(sidecar.labels) != len(images):
        raise UsageError(f"{len(images)} images but {len(sidecar.labels)} sidecar labels")
    pred = predict(params, images, batch_size)
    return report_from_predictions(pred, sidecar.labels, sidecar.num_classes,
                                   dataset_checksum(images, sidecar.labels))


@dataclass
class DeltaReport:
    overall: float
    per_class: list
    improved: int  # classes with positive delta
    worsened: int
    unchanged: int
    checksum: str

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


def compare(baseline: EvalReport, adapted: EvalReport) -> DeltaReport:
    """Adapted minus baseline, overall and per class; both must come from the same test set."""
    if baseline.checksum != adapted.checksum:
        raise UsageError("reports were computed on different test sets")
    deltas = [a - b for a, b in zip(adapted.per_class, baseline.per_class)]
    signs = np.sign(np.nan_to_num(deltas))
    return DeltaReport(adapted.accuracy - baseline.accuracy, deltas, int((signs > 0).sum()),
                       int((signs < 0).sum()), int((signs == 0).sum()), baseline.checksum)
