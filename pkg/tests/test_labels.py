from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import central_difference, random_graph, rel_error
from labeldeconv.errors import DataError, ShapeError
from labeldeconv.graph import build_csr, row_normalize
from labeldeconv.labels import (
    DeconvWeights,
    HopLabelStack,
    LabelMatrix,
    TaskKind,
    deconv_init,
    inverse_labels,
    inverse_labels_grad,
    mixed_target,
    normalize_target,
    normalize_target_grad,
    precompute_hop_labels,
    weighted_hops,
)


def _one_hot(rng, n, d):
    return np.eye(d)[rng.integers(0, d, n)]


@given(st.integers(1, 30), st.integers(0, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_hop_labels_match_dense_powers(n, hops, d, seed):
    rng = np.random.default_rng(seed)
    adj = row_normalize(random_graph(n, rng, directed=True))
    y = rng.random((n, d))
    stack = precompute_hop_labels(adj, y, hops)
    dense = adj.to_dense()
    assert stack.hops.shape == (hops + 1, n, d)
    for i in range(hops + 1):
        np.testing.assert_allclose(stack.hops[i], np.linalg.matrix_power(dense, i) @ y, atol=1e-12)


def test_hop_labels_two_cycle_swaps_rows():
    adj = row_normalize(build_csr([(0, 1), (1, 0)], 2))
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    stack = precompute_hop_labels(adj, y, 2)
    assert np.array_equal(stack.hops[1], y[::-1])
    assert np.array_equal(stack.hops[2], y)


def test_hop_labels_reject_row_mismatch():
    adj = row_normalize(build_csr([(0, 1)], 2))
    with pytest.raises(ShapeError):
        precompute_hop_labels(adj, np.zeros((3, 2)), 1)


def test_stack_rows_bounds():
    stack = HopLabelStack(np.zeros((2, 4, 3)))
    assert stack.rows(np.array([3, 0])).shape == (2, 2, 3)
    with pytest.raises(IndexError):
        stack.rows(np.array([4]))


def test_stack_round_trip(tmp_path):
    stack = HopLabelStack(np.random.default_rng(0).random((3, 5, 2)))
    stack.save(tmp_path / "h.bin")
    back = HopLabelStack.load(tmp_path / "h.bin")
    assert np.array_equal(back.hops, stack.hops)
    raw = (tmp_path / "h.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        HopLabelStack.load(tmp_path / "cut.bin")
    (tmp_path / "bad.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(DataError, match="not a hop-label"):
        HopLabelStack.load(tmp_path / "bad.bin")


def test_uniform_init_gives_mean_of_hops():
    rows = np.random.default_rng(1).random((3, 4, 2))
    np.testing.assert_allclose(weighted_hops(rows, deconv_init(2)), rows.mean(axis=0), atol=1e-15)


def test_inverse_labels_on_batch_only():
    stack = HopLabelStack(np.arange(24.0).reshape(2, 4, 3))
    w = DeconvWeights([0.0, 100.0])
    out = inverse_labels(stack, np.array([2]), w)
    np.testing.assert_allclose(out, stack.hops[1, [2]], atol=1e-12)


@given(st.integers(1, 12), st.integers(0, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_inverse_labels_nonnegative_and_normalized_rows_stochastic(n, hops, d, seed):
    rng = np.random.default_rng(seed)
    adj = row_normalize(random_graph(n, rng, directed=True))
    stack = precompute_hop_labels(adj, _one_hot(rng, n, d), hops)
    w = DeconvWeights(rng.normal(scale=5.0, size=hops + 1))
    yinv = inverse_labels(stack, np.arange(n), w)
    assert np.all(yinv >= 0)
    norm = normalize_target(yinv, TaskKind.MULTI_CLASS)
    np.testing.assert_allclose(norm.sum(axis=1), 1.0, atol=1e-12)


def test_normalize_rejects_zero_rows():
    with pytest.raises(DataError, match="row 1"):
        normalize_target(np.array([[1.0, 0.0], [0.0, 0.0]]), TaskKind.MULTI_CLASS)


def test_normalize_multilabel_clamps():
    out = normalize_target(np.array([[-0.5, 0.4, 1.5]]), TaskKind.MULTI_LABEL)
    assert out.tolist() == [[0.0, 0.4, 1.0]]


def test_mixed_target_alpha_bounds():
    y = np.eye(2)
    with pytest.raises(ValueError):
        mixed_target(y, y, 1.5, TaskKind.MULTI_CLASS)
    assert np.array_equal(mixed_target(y, np.full((2, 2), 3.0), 0.0, TaskKind.MULTI_CLASS), y)
    np.testing.assert_allclose(mixed_target(y, np.full((2, 2), 3.0), 1.0, TaskKind.MULTI_CLASS), 0.5)


@given(st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_inverse_label_grad_matches_finite_differences(hops, seed):
    rng = np.random.default_rng(seed)
    rows = rng.random((hops + 1, 5, 3))
    up = rng.standard_normal((5, 3))
    w = DeconvWeights(rng.standard_normal(hops + 1))
    f = lambda: float(np.sum(weighted_hops(rows, w) * up))
    assert rel_error(inverse_labels_grad(rows, w, up), central_difference(f, w.raw)) < 1e-7


@pytest.mark.parametrize("task", list(TaskKind))
def test_normalize_grad_matches_finite_differences(task):
    rng = np.random.default_rng(3)
    t = rng.uniform(0.1, 0.9, size=(4, 3))
    up = rng.standard_normal((4, 3))
    f = lambda: float(np.sum(normalize_target(t, task) * up))
    assert rel_error(normalize_target_grad(t, task, up), central_difference(f, t)) < 1e-7


def test_label_matrix_validation():
    LabelMatrix.from_classes([0, 2], 3).validate()
    with pytest.raises(DataError):
        LabelMatrix(np.array([[0.5, 0.2]])).validate()
    with pytest.raises(DataError):
        LabelMatrix(np.array([[1.2, 0.0]]), TaskKind.MULTI_LABEL).validate()
    LabelMatrix(np.array([[-3.0, 7.0]]), TaskKind.REGRESSION).validate()
