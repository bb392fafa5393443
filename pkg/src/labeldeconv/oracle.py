"""Dense reference linear algebra for checking the sparse training path.

Everything here is O(n^3) or worse and guarded to small matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import PreconditionError, ShapeError, SingularMatrixError

MAX_CHARPOLY_DIM = 64


@dataclass(frozen=True)
class CharPoly:
    """Coefficients ``p[0..n]`` of ``det(λI - M)``, lowest degree first; ``p[n] == 1``."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    return m


def char_poly(m) -> CharPoly:
    """Faddeev-LeVerrier trace recurrence."""
    m = _square(m)
    n = m.shape[0]
    if n > MAX_CHARPOLY_DIM:
        raise ShapeError(f"char_poly is limited to n <= {MAX_CHARPOLY_DIM}, got {n}")
    p = np.zeros(n + 1)
    p[n] = 1.0
    mk = np.zeros_like(m)
    eye = np.eye(n)
    for k in range(1, n + 1):
        mk = m @ mk + p[n - k + 1] * eye
        p[n - k] = -np.trace(m @ mk) / k
    return CharPoly(p)


def matrix_poly(coeffs, m) -> np.ndarray:
    """``sum_i coeffs[i] m^i`` by Horner's rule."""
    m = _square(m)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    out = coeffs[-1] * np.eye(m.shape[0])
    for c in coeffs[-2::-1]:
        out = m @ out
        out[np.diag_indices_from(out)] += c
    return out


def inverse_via_cayley(m, tol: float = 1e-12) -> np.ndarray:
    """``M^{-1} = -(1/p0)(p_n M^{n-1} + ... + p_1 I)`` from the characteristic polynomial."""
    m = _square(m)
    p = char_poly(m).coeffs
    if abs(p[0]) <= tol:
        raise SingularMatrixError(f"|p0| = {abs(p[0]):.3e} <= {tol:g}; matrix is singular")
    return -matrix_poly(p[1:], m) / p[0]


def _coeffs(filt) -> np.ndarray:
    c = getattr(filt, "coeffs", filt)
    return np.asarray(c, dtype=np.float64).ravel()


def _vandermonde_solve(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Björck-Pereyra solve of ``sum_j a_j x_i^j = f_i``; accurate for sorted real nodes."""
    a = np.array(f, dtype=np.float64)
    n = a.size
    for k in range(n - 1):
        a[k + 1:] = (a[k + 1:] - a[k:-1]) / (x[k + 1:] - x[: n - k - 1])
    for k in range(n - 2, -1, -1):
        a[k:-1] -= x[k] * a[k + 1:]
    return a


def _cayley_coeffs(c: np.ndarray, a: np.ndarray, phi: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    p = char_poly(phi).coeffs
    # φ^{-1} = -(1/p0) sum_{j>=1} p_j φ^{j-1}, as a polynomial in λ
    q = np.zeros(1)
    for pj in p[:0:-1]:
        q = P.polyadd(P.polymul(q, c), [pj])
    q = -q / p[0]
    _, rem = P.polydiv(q, char_poly(a).coeffs) if q.size > n else (None, q)
    gamma = np.zeros(n)
    gamma[: rem.size] = rem
    return gamma


def _interpolation_coeffs(c: np.ndarray, a: np.ndarray, merge_tol: float = 1e-9) -> np.ndarray | None:
    """Interpolate ``1/φ`` on the distinct eigenvalues; valid when ``a`` is diagonalizable
    with a real spectrum (true for ``D^{-1}A`` of undirected graphs). ``None`` otherwise."""
    lam, vec = np.linalg.eig(a)
    if np.abs(lam.imag).max() > 1e-10 or np.linalg.cond(vec) > 1e8:
        return None
    lam = np.sort(lam.real)
    nodes = [lam[0]]
    for v in lam[1:]:
        if v - nodes[-1] > merge_tol:
            nodes.append(v)
    x = np.asarray(nodes)
    vals = P.polyval(x, c)
    if np.abs(vals).min() == 0:
        return None
    gamma = np.zeros(a.shape[0])
    gamma[: x.size] = _vandermonde_solve(x, 1.0 / vals)
    return gamma


def polynomial_inverse_coeffs(filt, adj, cond_limit: float = 1e12) -> np.ndarray:
    """Coefficients ``γ`` (length ``n``) with ``sum_i γ_i Â^i = φ(Â)^{-1}``.

    Two exact constructions are tried and the one with the smaller residual
    wins: the Cayley-Hamilton inverse of ``φ(Â)`` expanded in powers of ``Â``
    and reduced modulo the characteristic polynomial of ``Â``, and Lagrange
    interpolation of ``1/φ`` on the spectrum of ``Â``. When the exact ``γ``
    has a large 1-norm, rounding bounds the residual below by roughly
    ``eps * sum |γ_i|`` whichever construction is used.
    """
    a = _square(adj)
    c = _coeffs(filt)
    phi = matrix_poly(c, a)
    if np.linalg.cond(phi) > cond_limit:
        raise SingularMatrixError("φ(Â) is singular or too ill-conditioned to invert")
    candidates = [_cayley_coeffs(c, a, phi)]
    interp = _interpolation_coeffs(c, a)
    if interp is not None:
        candidates.append(interp)
    return min(candidates, key=lambda g: polynomial_inverse_residual(c, a, g))


def polynomial_inverse_residual(filt, adj, gamma) -> float:
    a = _square(adj)
    phi = matrix_poly(_coeffs(filt), a)
    return float(np.linalg.norm(matrix_poly(gamma, a) - np.linalg.inv(phi), "fro"))


def exact_inverse_labels(filt, adj, y) -> np.ndarray:
    """Solve ``φ(Â) X = Y``."""
    a = _square(adj)
    phi = matrix_poly(_coeffs(filt), a)
    try:
        return np.linalg.solve(phi, np.asarray(y, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("φ(Â) is singular") from exc


@dataclass(frozen=True)
class UniversalityFit:
    coeffs: np.ndarray
    weights: np.ndarray
    residual: float
    eigenvalues: np.ndarray


def universality_fit(
    adj_sym,
    f,
    target,
    weights=None,
    rng: np.random.Generator | None = None,
    gap_tol: float = 1e-8,
    freq_tol: float = 1e-8,
    max_tries: int = 100,
) -> UniversalityFit:
    """Find a polynomial filter and linear head with ``Σ θ_j Â^j F W = target``.

    ``adj_sym`` must be symmetric. Raises :class:`PreconditionError` when the
    spectrum has a repeated eigenvalue or ``F`` misses a frequency component.
    """
    a = _square(adj_sym)
    if not np.allclose(a, a.T, atol=1e-12):
        raise PreconditionError("adjacency must be symmetric for the eigendecomposition")
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    y = np.asarray(target, dtype=np.float64).ravel()
    n = a.shape[0]
    lam, u = np.linalg.eigh(a)
    gaps = np.diff(lam)
    if n > 1 and gaps.min() <= gap_tol:
        raise PreconditionError(f"multiple eigenvalues: min eigengap {gaps.min():.3e} <= {gap_tol:g}")
    f_t = u.T @ f
    row_norms = np.linalg.norm(f_t, axis=1)
    if row_norms.min() <= freq_tol:
        raise PreconditionError(
            f"missing frequency: component {int(row_norms.argmin())} has |uᵀF| = {row_norms.min():.3e}"
        )
    rng = rng or np.random.default_rng(0)
    w = None if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    for _ in range(max_tries):
        if w is None:
            w = rng.standard_normal(f.shape[1])
        proj = f_t @ w
        if np.abs(proj).min() > 1e-10:
            break
        w = None
    else:
        raise PreconditionError("could not draw head weights outside the null hyperplanes")
    r = (u.T @ y) / proj
    vander = np.vander(lam, n, increasing=True)
    theta = np.linalg.solve(vander, r)
    h = matrix_poly(theta, a) @ f @ w
    return UniversalityFit(theta, w, float(np.linalg.norm(h - y)), lam)


def least_squares(a, b) -> np.ndarray:
    """Minimum-norm solution of ``min ||a x - b||_F``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"a has {a.shape[0]} rows, b has {b.shape[0]}")
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x
