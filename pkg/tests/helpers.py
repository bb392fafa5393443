"""Shared builders and a central-difference gradient checker."""
from __future__ import annotations

import numpy as np

from labeldeconv.graph import CsrGraph, build_csr, symmetrize


def random_graph(n: int, rng: np.random.Generator, p: float = 0.3, directed: bool = False) -> CsrGraph:
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    g = build_csr(np.argwhere(mask), n)
    return g if directed else symmetrize(g)


def dense_row_normalized(g: CsrGraph) -> np.ndarray:
    a = g.to_dense()
    deg = a.sum(axis=1)
    for i in np.flatnonzero(deg == 0):
        a[i, i] = 1.0
    return a / a.sum(axis=1, keepdims=True)


def central_difference(f, param: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Numeric gradient of scalar ``f()`` w.r.t. ``param``, perturbed in place."""
    grad = np.zeros_like(param)
    flat, gflat = param.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-8)
    return float(num / den)


def max_grad_error(f, params, grads, h: float = 1e-6) -> float:
    return max(rel_error(g, central_difference(f, p, h)) for p, g in zip(params, grads))
