"""A seeded suite that pits the sparse training path against the dense oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError, SingularMatrixError
from .graph import CsrGraph, build_csr, row_normalize, sym_normalize_dense, symmetrize
from .labels import precompute_hop_labels
from .oracle import (
    exact_inverse_labels,
    inverse_via_cayley,
    least_squares,
    polynomial_inverse_coeffs,
    polynomial_inverse_residual,
    universality_fit,
)
from .spectral import FilterCoeffs, filter_apply
from .synth import build_motivating_example, erdos_renyi

MAX_N = 12  # the polynomial inverse loses about a digit per node beyond this
GRAPH_KINDS = ("random", "path", "two-disjoint-edges")

PASS, FAIL, PRECONDITION = "pass", "fail", "precondition-failure"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    residual: float | None
    tol: float
    detail: str = ""

    def line(self) -> str:
        res = "n/a" if self.residual is None else f"{self.residual:.3e}"
        tail = f"  ({self.detail})" if self.detail else ""
        return f"{self.status.upper():>20}  {self.name:<28} residual={res} tol={self.tol:g}{tail}"


def make_graph(kind: str, n: int, rng: np.random.Generator, edge_prob: float = 0.4) -> CsrGraph:
    if kind == "random":
        return erdos_renyi(n, edge_prob, rng)
    if kind == "path":
        return symmetrize(build_csr([(i, i + 1) for i in range(n - 1)], n))
    if kind == "two-disjoint-edges":
        if n != 4:
            raise ConfigError("the two-disjoint-edges graph has exactly 4 nodes; pass --n 4")
        return symmetrize(build_csr([(0, 1), (2, 3)], 4))
    raise ConfigError(f"unknown graph kind {kind!r}; choose from {', '.join(GRAPH_KINDS)}")


def _status(residual: float, tol: float) -> str:
    return PASS if np.isfinite(residual) and residual < tol else FAIL


def check_cayley(n: int, rng: np.random.Generator, tol: float = 1e-8) -> CheckResult:
    m = rng.standard_normal((n, n)) + n * np.eye(n)
    inv = inverse_via_cayley(m)
    res = float(np.abs(inv @ m - np.eye(n)).max())
    return CheckResult("cayley_inverse", _status(res, tol), res, tol)


def _random_filter(rng: np.random.Generator, degree: int = 2) -> FilterCoeffs:
    c = rng.dirichlet(np.ones(degree + 1))
    c[0] += 0.5  # keeps φ(Â) away from singular since |λ(Â)| <= 1
    return FilterCoeffs(c / c.sum())


def check_polynomial_inverse(graph: CsrGraph, rng: np.random.Generator, tol: float = 1e-8) -> list[CheckResult]:
    adj = row_normalize(graph)
    dense = adj.to_dense()
    filt = _random_filter(rng)
    try:
        gamma = polynomial_inverse_coeffs(filt, dense)
    except SingularMatrixError as exc:
        return [CheckResult("polynomial_inverse", PRECONDITION, None, tol, str(exc))]
    res = polynomial_inverse_residual(filt, dense, gamma)
    y = rng.random((graph.num_nodes, 3))
    sparse = filter_apply(adj, FilterCoeffs(gamma), y)
    dense_res = float(np.abs(sparse - exact_inverse_labels(filt, dense, y)).max())
    return [
        CheckResult("polynomial_inverse", _status(res, tol), res, tol),
        CheckResult("sparse_vs_dense_inverse", _status(dense_res, tol), dense_res, tol),
    ]


def check_hop_labels(graph: CsrGraph, rng: np.random.Generator, n_hops: int = 4, tol: float = 1e-10) -> CheckResult:
    adj = row_normalize(graph)
    y = np.eye(3)[rng.integers(0, 3, graph.num_nodes)]
    stack = precompute_hop_labels(adj, y, n_hops)
    dense = adj.to_dense()
    res = max(float(np.abs(stack.hops[i] - np.linalg.matrix_power(dense, i) @ y).max()) for i in range(n_hops + 1))
    return CheckResult("hop_labels", _status(res, tol), res, tol)


def check_universality(graph: CsrGraph, rng: np.random.Generator, tol: float = 1e-6) -> CheckResult:
    a = sym_normalize_dense(graph)
    n = graph.num_nodes
    f = rng.standard_normal((n, 3))
    target = rng.standard_normal(n)
    try:
        fit = universality_fit(a, f, target, rng=rng)
    except PreconditionError as exc:
        return CheckResult("universality", PRECONDITION, None, tol, str(exc))
    return CheckResult("universality", _status(fit.residual, tol), fit.residual, tol)


def check_motivating_least_squares(tol: float = 1e-10) -> CheckResult:
    gen = build_motivating_example()
    beta = least_squares(gen.attrs, gen.labels.data)
    expected = np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
    res = float(np.abs(beta - expected).max())
    return CheckResult("label_only_least_squares", _status(res, tol), res, tol)


def run_oracle_checks(n: int = 8, graph: str = "random", seed: int = 0) -> list[CheckResult]:
    """Every oracle property at size ``n`` on one graph of the chosen kind."""
    if n < 2 or n > MAX_N:
        raise ConfigError(f"oracle checks run at 2 <= n <= {MAX_N}")
    rng = np.random.default_rng(seed)
    g = make_graph(graph, n, rng)
    results = [check_cayley(n, rng)]
    results += check_polynomial_inverse(g, rng)
    results.append(check_hop_labels(g, rng))
    results.append(check_universality(g, rng))
    results.append(check_motivating_least_squares())
    return results

