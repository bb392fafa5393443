"""Spectral GNN ``H = (sum_i c_i Â^i) ψ(F)`` with fixed or learnable coefficients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .graph import NormalizedAdjacency, spmm, spmm_t
from .nn import MlpParams, mlp_backward, mlp_forward


@dataclass
class FilterCoeffs:
    coeffs: np.ndarray
    learnable: bool = False

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64).ravel()
        if self.coeffs.size < 1:
            raise ShapeError("a filter needs at least one coefficient")

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def copy(self) -> "FilterCoeffs":
        return FilterCoeffs(self.coeffs.copy(), self.learnable)


def fixed_filter(kind: str, n: int | None = None) -> FilterCoeffs:
    """``gcn:N`` gives the fixed power ``Â^N``; ``poly:N`` a learnable uniform polynomial.

    ``kind`` may carry the degree (``"gcn:2"``) or take it from ``n``.
    """
    name, _, deg = kind.partition(":")
    if deg:
        try:
            n = int(deg)
        except ValueError as exc:
            raise ConfigError(f"bad filter degree in {kind!r}") from exc
    if n is None or n < 0:
        raise ConfigError(f"filter {kind!r} needs a degree >= 0")
    if name == "gcn":
        c = np.zeros(n + 1)
        c[n] = 1.0
        return FilterCoeffs(c, learnable=False)
    if name == "poly":
        return FilterCoeffs(np.full(n + 1, 1.0 / (n + 1)), learnable=True)
    raise ConfigError(f"unknown filter kind {name!r}; use gcn:N or poly:N")


def filter_apply(adj: NormalizedAdjacency, c: FilterCoeffs, m: np.ndarray) -> np.ndarray:
    """Horner evaluation: ``N`` sparse products, no matrix powers."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] != adj.num_nodes:
        raise ShapeError(f"operand has {m.shape[0]} rows, adjacency has {adj.num_nodes} nodes")
    coeffs = c.coeffs
    out = coeffs[-1] * m
    for ci in coeffs[-2::-1]:
        out = spmm(adj, out) + ci * m
    return out


def filter_apply_t(adj: NormalizedAdjacency, c: FilterCoeffs, m: np.ndarray) -> np.ndarray:
    """``(sum_i c_i Â^i)ᵀ m``."""
    coeffs = c.coeffs
    out = coeffs[-1] * m
    for ci in coeffs[-2::-1]:
        out = spmm_t(adj, out) + ci * m
    return out


@dataclass
class SpectralGnnParams:
    filter: FilterCoeffs
    head: MlpParams = field(default_factory=MlpParams)

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays: filter coefficients first (if learnable), then the head."""
        out = [self.filter.coeffs] if self.filter.learnable else []
        return out + self.head.arrays()

    def copy(self) -> "SpectralGnnParams":
        return SpectralGnnParams(self.filter.copy(), self.head.copy())


@dataclass
class GnnCache:
    head_cache: list
    powers: list[np.ndarray]


@dataclass
class GnnGrads:
    filter: np.ndarray
    head: list[np.ndarray]
    features: np.ndarray

    def trainable(self, p: SpectralGnnParams) -> list[np.ndarray]:
        """Aligned with ``p.arrays()``."""
        return ([self.filter] if p.filter.learnable else []) + self.head


def gnn_forward(f: np.ndarray, adj: NormalizedAdjacency, p: SpectralGnnParams) -> tuple[np.ndarray, GnnCache]:
    z, head_cache = mlp_forward(p.head, f)
    if z.shape[0] != adj.num_nodes:
        raise ShapeError(f"features have {z.shape[0]} rows, adjacency has {adj.num_nodes} nodes")
    powers = [z]
    for _ in range(p.filter.degree):
        powers.append(spmm(adj, powers[-1]))
    h = p.filter.coeffs[0] * powers[0]
    for ci, pw in zip(p.filter.coeffs[1:], powers[1:]):
        h = h + ci * pw
    return h, GnnCache(head_cache, powers)


def gnn_backward(
    adj: NormalizedAdjacency, p: SpectralGnnParams, cache: GnnCache, upstream: np.ndarray
) -> GnnGrads:
    upstream = np.asarray(upstream, dtype=np.float64)
    d_coeffs = np.array([np.sum(pw * upstream) for pw in cache.powers])
    dz = filter_apply_t(adj, p.filter, upstream)
    head_grads, df = mlp_backward(p.head, cache.head_cache, dz)
    return GnnGrads(d_coeffs, head_grads, df)
