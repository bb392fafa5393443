"""Evaluation metrics and curve export."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .labels import label_array


@dataclass(frozen=True)
class MetricsRecord:
    name: str
    value: float
    split: str = ""
    seed: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.value) and 0.0 <= self.value <= 1.0):
            raise ValueError(f"metric {self.name} = {self.value} is outside [0, 1]")


def _rows(mask, n: int) -> np.ndarray:
    if mask is None:
        rows = np.arange(n)
    else:
        mask = np.asarray(mask)
        rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise DataError("metric mask selects no rows")
    return rows


def accuracy(pred, y, mask=None, split: str = "", seed: int | None = None) -> MetricsRecord:
    """Argmax agreement; ``np.argmax`` breaks ties toward the lowest index."""
    y = label_array(y)
    pred = np.asarray(pred)
    rows = _rows(mask, pred.shape[0])
    hit = np.argmax(pred[rows], axis=1) == np.argmax(y[rows], axis=1)
    return MetricsRecord("accuracy", float(hit.mean()), split, seed)


def _auc_column(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels > 0.5
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)  # average ranks, so ties count 0.5
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc(scores, y, mask=None, split: str = "", seed: int | None = None) -> MetricsRecord:
    """Mean per-label ROC-AUC; labels without both classes in the mask are skipped."""
    y = label_array(y)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores, y = scores[:, None], y.reshape(-1, 1)
    rows = _rows(mask, scores.shape[0])
    s, t = scores[rows], y[rows]
    values, skipped = [], []
    for j in range(t.shape[1]):
        n_pos = int((t[:, j] > 0.5).sum())
        if n_pos == 0 or n_pos == t.shape[0]:
            skipped.append(j)
            continue
        values.append(_auc_column(s[:, j], t[:, j]))
    if not values:
        raise DataError("every label is all-positive or all-negative on this mask")
    if skipped:
        warnings.warn(f"roc_auc skipped degenerate labels {skipped}", RuntimeWarning, stacklevel=2)
    return MetricsRecord("roc_auc", float(np.mean(values)), split, seed)


def emit_curves(report, path: str | Path) -> list[Path]:
    """Write one CSV per curve (``epoch,value...``); the gamma curve has one column per hop."""
    curves = report["curves"] if isinstance(report, dict) else report.curves
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, series in curves.items():
        if not len(series):
            continue
        first = series[0]
        width = len(first) if isinstance(first, (list, tuple, np.ndarray)) else 0
        if width:
            header = ["epoch"] + [f"{name}_{i}" for i in range(width)]
        else:
            header = ["epoch", name]
        fpath = out_dir / f"{name}.csv"
        with open(fpath, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for epoch, value in enumerate(series, 1):
                vals = list(value) if width else [value]
                writer.writerow([epoch] + [repr(float(v)) for v in vals])
        written.append(fpath)
    return written
