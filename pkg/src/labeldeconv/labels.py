"""Hop labels, the softmax-parameterized deconvolution weights, and target mixing.

The inverse label of a node is a convex combination of its propagated labels,
``sum_i gamma_i (Â^i Y)[node]``, with ``gamma = softmax(raw)``. Hop labels are
computed once over the whole graph so that training touches only batch rows.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .graph import NormalizedAdjacency, spmm


class TaskKind(str, Enum):
    MULTI_CLASS = "multiclass"
    MULTI_LABEL = "multilabel"
    # continuous targets, used by the recovery experiments with squared loss
    REGRESSION = "regression"


@dataclass
class LabelMatrix:
    data: np.ndarray
    task: TaskKind = TaskKind.MULTI_CLASS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.task = TaskKind(self.task)
        if self.data.ndim != 2:
            raise ShapeError("label matrix must be 2-D")

    @property
    def num_nodes(self) -> int:
        return self.data.shape[0]

    @property
    def num_classes(self) -> int:
        return self.data.shape[1]

    def validate(self, rows: np.ndarray | None = None, atol: float = 1e-9) -> None:
        y = self.data if rows is None else self.data[rows]
        if not np.all(np.isfinite(y)):
            raise DataError("labels contain non-finite entries")
        if self.task is TaskKind.MULTI_CLASS:
            if np.any(y < -atol) or np.any(np.abs(y.sum(axis=1) - 1.0) > atol):
                raise DataError("multi-class label rows must be non-negative and sum to 1")
        elif self.task is TaskKind.MULTI_LABEL:
            if np.any(y < -atol) or np.any(y > 1 + atol):
                raise DataError("multi-label entries must lie in [0, 1]")

    def copy(self) -> "LabelMatrix":
        return LabelMatrix(self.data.copy(), self.task)

    @classmethod
    def from_classes(cls, classes, num_classes: int) -> "LabelMatrix":
        classes = np.asarray(classes, dtype=np.int64)
        return cls(np.eye(num_classes)[classes], TaskKind.MULTI_CLASS)


_STACK_MAGIC = b"LDHOPLBL"
_STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<8sIIQQI")


@dataclass
class HopLabelStack:
    """``hops[i] = Â^i Y``; shape ``(N+1, num_nodes, d)``."""

    hops: np.ndarray

    @property
    def n_hops(self) -> int:
        return self.hops.shape[0] - 1

    @property
    def num_nodes(self) -> int:
        return self.hops.shape[1]

    @property
    def num_classes(self) -> int:
        return self.hops.shape[2]

    def rows(self, batch: np.ndarray) -> np.ndarray:
        """Gather ``(N+1, |batch|, d)`` without touching other nodes."""
        batch = np.asarray(batch, dtype=np.int64)
        if batch.size and (batch.min() < 0 or batch.max() >= self.num_nodes):
            raise IndexError(f"batch index outside [0, {self.num_nodes})")
        return self.hops[:, batch, :]

    def save(self, path: str | Path) -> None:
        n1, n, d = self.hops.shape
        with open(path, "wb") as fh:
            fh.write(_STACK_HEADER.pack(_STACK_MAGIC, _STACK_VERSION, n1 - 1, n, d, 8))
            fh.write(np.ascontiguousarray(self.hops, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "HopLabelStack":
        raw = Path(path).read_bytes()
        if len(raw) < _STACK_HEADER.size:
            raise DataError(f"{path}: truncated hop-label header")
        magic, version, n_hops, n, d, width = _STACK_HEADER.unpack_from(raw)
        if magic != _STACK_MAGIC:
            raise DataError(f"{path}: not a hop-label file")
        if version != _STACK_VERSION:
            raise DataError(f"{path}: hop-label version {version}, expected {_STACK_VERSION}")
        dtype = {4: "<f4", 8: "<f8"}.get(width)
        if dtype is None:
            raise DataError(f"{path}: unsupported element width {width}")
        body = raw[_STACK_HEADER.size:]
        expected = (n_hops + 1) * n * d * width
        if len(body) != expected:
            raise DataError(f"{path}: payload has {len(body)} bytes, header implies {expected}")
        hops = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(n_hops + 1, n, d)
        return cls(hops)


def label_array(y) -> np.ndarray:
    """The float64 array behind a :class:`LabelMatrix` or array-like."""
    return np.asarray(y.data if isinstance(y, LabelMatrix) else y, dtype=np.float64)


def precompute_hop_labels(adj: NormalizedAdjacency, y: LabelMatrix | np.ndarray, n_hops: int) -> HopLabelStack:
    data = label_array(y)
    if n_hops < 0:
        raise ValueError("n_hops must be >= 0")
    if data.shape[0] != adj.num_nodes:
        raise ShapeError(f"labels have {data.shape[0]} rows, adjacency has {adj.num_nodes} nodes")
    hops = np.empty((n_hops + 1,) + data.shape)
    hops[0] = data
    for i in range(n_hops):
        hops[i + 1] = spmm(adj, hops[i])
    return HopLabelStack(hops)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class DeconvWeights:
    """Raw logits; ``gamma = softmax(raw)`` are the per-hop coefficients."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).ravel()

    @property
    def gamma(self) -> np.ndarray:
        return softmax(self.raw)

    def copy(self) -> "DeconvWeights":
        return DeconvWeights(self.raw.copy())


def deconv_init(n_hops: int) -> DeconvWeights:
    if n_hops < 0:
        raise ValueError("n_hops must be >= 0")
    return DeconvWeights(np.zeros(n_hops + 1))


def inverse_labels(stack: HopLabelStack, batch: np.ndarray, w: DeconvWeights) -> np.ndarray:
    return weighted_hops(stack.rows(batch), w)


def weighted_hops(rows: np.ndarray, w: DeconvWeights) -> np.ndarray:
    if rows.shape[0] != w.raw.size:
        raise ShapeError(f"{rows.shape[0]} hop blocks but {w.raw.size} weights")
    g = w.gamma
    out = g[0] * rows[0]
    for i in range(1, g.size):
        out = out + g[i] * rows[i]
    return out


def inverse_labels_grad(rows: np.ndarray, w: DeconvWeights, upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``w.raw`` of ``<weighted_hops(rows, w), upstream>``."""
    g = w.gamma
    dgamma = np.array([np.sum(rows[i] * upstream) for i in range(g.size)])
    # softmax Jacobian: diag(g) - g gᵀ
    return g * (dgamma - np.dot(g, dgamma))


def normalize_target(t: np.ndarray, task: TaskKind) -> np.ndarray:
    task = TaskKind(task)
    if task is TaskKind.MULTI_CLASS:
        s = t.sum(axis=1, keepdims=True)
        if np.any(s <= 0):
            bad = int(np.flatnonzero(s.ravel() <= 0)[0])
            raise DataError(f"target row {bad} sums to {s.ravel()[bad]}; labels are corrupt")
        return t / s
    if task is TaskKind.MULTI_LABEL:
        return np.clip(t, 0.0, 1.0)
    return t


def normalize_target_grad(t: np.ndarray, task: TaskKind, upstream: np.ndarray) -> np.ndarray:
    """Backprop ``upstream`` through :func:`normalize_target`."""
    task = TaskKind(task)
    if task is TaskKind.MULTI_CLASS:
        s = t.sum(axis=1, keepdims=True)
        n = t / s
        return (upstream - np.sum(upstream * n, axis=1, keepdims=True)) / s
    if task is TaskKind.MULTI_LABEL:
        return upstream * ((t >= 0.0) & (t <= 1.0))
    return upstream


def mixed_target(y: np.ndarray, yinv: np.ndarray, alpha: float, task: TaskKind) -> np.ndarray:
    """``(1 - alpha) * y + alpha * normalize(yinv)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if y.shape != yinv.shape:
        raise ShapeError(f"label rows {y.shape} and inverse labels {yinv.shape} differ")
    return (1.0 - alpha) * y + alpha * normalize_target(yinv, task)
