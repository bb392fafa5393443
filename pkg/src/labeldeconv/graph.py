"""Sparse graph structure, row normalization and sparse-dense products.

Graphs are stored in CSR form with sorted, deduplicated column indices.
Edges are directed as given; call :func:`symmetrize` for undirected input.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class CsrGraph:
    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray

    def __post_init__(self):
        rp = np.asarray(self.row_ptr, dtype=np.int64)
        ci = np.asarray(self.col_idx, dtype=np.int64)
        rp.setflags(write=False)
        ci.setflags(write=False)
        object.__setattr__(self, "row_ptr", rp)
        object.__setattr__(self, "col_idx", ci)
        self.validate()

    def validate(self) -> None:
        n = self.num_nodes
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (n + 1,) or rp[0] != 0 or rp[-1] != ci.size:
            raise DataError("row_ptr must have length num_nodes+1, start at 0 and end at num_edges")
        if np.any(np.diff(rp) < 0):
            raise DataError("row_ptr must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise DataError("col_idx entries must lie in [0, num_nodes)")
        # strictly increasing within each row <=> every in-row successor is larger
        if ci.size > 1:
            step = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[rp[:-1][rp[:-1] < ci.size]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise DataError("col_idx must be strictly increasing within each row")

    @property
    def num_edges(self) -> int:
        return int(self.col_idx.size)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def edges(self) -> np.ndarray:
        """(num_edges, 2) array of (src, dst) pairs in CSR order."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        return np.stack([src, self.col_idx], axis=1)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        e = self.edges()
        a[e[:, 0], e[:, 1]] = 1.0
        return a


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Row-stochastic ``D^{-1} A`` in CSR layout."""

    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _mat: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("row_ptr", "col_idx", "values"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        mat = sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.num_nodes, self.num_nodes)
        )
        object.__setattr__(self, "_mat", mat)

    @property
    def num_edges(self) -> int:
        return int(self.col_idx.size)

    @cached_property
    def _mat_t(self) -> sp.csr_matrix:
        return self._mat.T.tocsr()

    def row_sums(self) -> np.ndarray:
        return np.add.reduceat(self.values, self.row_ptr[:-1]) if self.values.size else np.zeros(0)

    def to_dense(self) -> np.ndarray:
        return self._mat.toarray()

    def to_scipy(self) -> sp.csr_matrix:
        return self._mat.copy()


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64).ravel())
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        parts = [self.train, self.val, self.test]
        joined = np.concatenate(parts)
        if np.unique(joined).size != joined.size:
            raise DataError("train/val/test splits overlap or contain duplicates")

    def validate(self, num_nodes: int) -> None:
        for name in ("train", "val", "test"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
                raise DataError(f"{name} split has node ids outside [0, {num_nodes})")

    @classmethod
    def all_train(cls, num_nodes: int) -> "NodeSplit":
        empty = np.zeros(0, dtype=np.int64)
        return cls(np.arange(num_nodes), empty, empty)

    def mask(self, name: str, num_nodes: int) -> np.ndarray:
        m = np.zeros(num_nodes, dtype=bool)
        m[getattr(self, name)] = True
        return m


def build_csr(edges: Iterable[Sequence[int]] | np.ndarray, num_nodes: int) -> CsrGraph:
    """Sorted, deduplicated CSR from directed (src, dst) pairs."""
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if e.size == 0:
        return CsrGraph(num_nodes, np.zeros(num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    e = e.reshape(-1, 2)
    bad = np.flatnonzero((e < 0).any(axis=1) | (e >= num_nodes).any(axis=1))
    if bad.size:
        s, d = e[bad[0]]
        raise DataError(f"edge #{bad[0]} ({s}, {d}) has an endpoint outside [0, {num_nodes})")
    key = np.unique(e[:, 0] * num_nodes + e[:, 1])
    src, dst = np.divmod(key, num_nodes)
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=row_ptr[1:])
    return CsrGraph(num_nodes, row_ptr, dst)


def symmetrize(g: CsrGraph) -> CsrGraph:
    e = g.edges()
    return build_csr(np.concatenate([e, e[:, ::-1]]), g.num_nodes)


def row_normalize(g: CsrGraph, isolated_policy: str = "self_loop") -> NormalizedAdjacency:
    """``D^{-1} A``; rows of isolated nodes become a unit self-loop."""
    if isolated_policy != "self_loop":
        raise ValueError(f"unknown isolated_policy {isolated_policy!r}")
    deg = g.degrees
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        g = build_csr(np.concatenate([g.edges(), np.stack([isolated, isolated], 1)]), g.num_nodes)
        deg = g.degrees
    values = np.repeat(1.0 / deg, deg)
    return NormalizedAdjacency(g.num_nodes, g.row_ptr, g.col_idx, values)


def sym_normalize_dense(g: CsrGraph) -> np.ndarray:
    """Dense ``D^{-1/2} A D^{-1/2}`` (symmetric input expected); isolated rows stay zero."""
    a = g.to_dense()
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    return inv[:, None] * a * inv[None, :]


def _check_rows(adj: NormalizedAdjacency, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim not in (1, 2) or m.shape[0] != adj.num_nodes:
        raise ShapeError(f"operand has {m.shape[0] if m.ndim else 0} rows, adjacency has {adj.num_nodes} nodes")
    return m


def spmm(adj: NormalizedAdjacency, m: np.ndarray) -> np.ndarray:
    """``Â @ m``. Each output row is summed sequentially in CSR order."""
    return np.asarray(adj._mat @ _check_rows(adj, m))


def spmm_t(adj: NormalizedAdjacency, m: np.ndarray) -> np.ndarray:
    """``Âᵀ @ m`` (used by backward passes)."""
    return np.asarray(adj._mat_t @ _check_rows(adj, m))


def k_hop_subgraph(g: CsrGraph, seeds: Sequence[int], depth: int) -> tuple[CsrGraph, np.ndarray]:
    """Induced subgraph on all nodes reachable from ``seeds`` in at most ``depth`` out-hops.

    Returns the subgraph and ``nodes`` with ``nodes[new] = old``; seeds keep their
    order and occupy the first ``len(seeds)`` positions.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("seeds must be non-empty")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    order: list[int] = []
    dist = {}
    queue: deque[int] = deque()
    for s in seeds:
        if s not in dist:
            dist[s] = 0
            order.append(s)
            queue.append(s)
    while queue:
        u = queue.popleft()
        if dist[u] == depth:
            continue
        for v in g.neighbors(u):
            v = int(v)
            if v not in dist:
                dist[v] = dist[u] + 1
                order.append(v)
                queue.append(v)
    nodes = np.asarray(order, dtype=np.int64)
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    e = g.edges()
    new_src, new_dst = remap[e[:, 0]], remap[e[:, 1]]
    keep = (new_src >= 0) & (new_dst >= 0)
    sub = build_csr(np.stack([new_src[keep], new_dst[keep]], 1), nodes.size)
    return sub, nodes


def read_edge_list(path: str | Path, num_nodes: int | None = None) -> CsrGraph:
    """Parse ``src dst`` lines; ``#`` starts a comment."""
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer node id") from exc
    if num_nodes is None:
        num_nodes = 1 + max((max(p) for p in pairs), default=-1)
    return build_csr(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), num_nodes)


def write_edge_list(g: CsrGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# num_nodes {g.num_nodes} num_edges {g.num_edges}\n")
        for s, d in g.edges():
            fh.write(f"{s} {d}\n")
