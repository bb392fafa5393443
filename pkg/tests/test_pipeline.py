from __future__ import annotations

import json

import numpy as np
import pytest

from helpers import max_grad_error, random_graph
from labeldeconv.bundle import DatasetBundle
from labeldeconv.errors import ConfigError, NumericError
from labeldeconv.graph import NodeSplit, row_normalize
from labeldeconv.labels import DeconvWeights, LabelMatrix, TaskKind, precompute_hop_labels
from labeldeconv.nn import LossKind, MlpParams, init_mlp
from labeldeconv.pipeline import (
    Method,
    TrainConfig,
    encoder_step,
    generate_pseudo_labels,
    infer_features,
    joint_step,
    run_experiment,
    run_motivating_example,
    train_glem_baseline,
    train_joint_fullbatch,
    train_ne_phase,
)
from labeldeconv.spectral import FilterCoeffs, SpectralGnnParams, fixed_filter
from labeldeconv.synth import SynthConfig, generate_assumption1


def _labels(task, rng, n, d):
    if task is TaskKind.MULTI_CLASS:
        return np.eye(d)[rng.integers(0, d, n)]
    if task is TaskKind.MULTI_LABEL:
        return (rng.random((n, d)) < 0.5).astype(float)
    return rng.standard_normal((n, d))


@pytest.mark.parametrize("task", list(TaskKind))
@pytest.mark.parametrize("alpha", [0.3, 1.0])
def test_encoder_step_gradients(task, alpha):
    rng = np.random.default_rng(int(alpha * 10) + len(task.value))
    n, d = 9, 3
    adj = row_normalize(random_graph(n, rng))
    stack = precompute_hop_labels(adj, _labels(task, rng, n, d), 2)
    attrs = rng.standard_normal((n, 4))
    enc = init_mlp([4, 5, 3], rng)
    head = init_mlp([3, d], rng)
    w = DeconvWeights(rng.standard_normal(3))
    batch = np.array([1, 4, 7, 8])
    cfg = TrainConfig(alpha=alpha, task=task)
    _, grads = encoder_step(attrs, enc, head, stack, w, batch, cfg)
    f = lambda: encoder_step(attrs, enc, head, stack, w, batch, cfg)[0]
    assert max_grad_error(f, enc.arrays() + head.arrays() + [w.raw], grads) < 1e-4


def test_joint_step_gradients():
    rng = np.random.default_rng(4)
    n = 8
    adj = row_normalize(random_graph(n, rng))
    attrs = rng.standard_normal((n, 3))
    enc = init_mlp([3, 4], rng)
    p = SpectralGnnParams(FilterCoeffs(rng.random(3), learnable=True), init_mlp([4, 2], rng))
    y = np.eye(2)[rng.integers(0, 2, n)]
    rows = np.array([0, 2, 5])
    _, grads = joint_step(attrs, enc, adj, p, y, rows, LossKind.SOFT_CROSS_ENTROPY)
    f = lambda: joint_step(attrs, enc, adj, p, y, rows, LossKind.SOFT_CROSS_ENTROPY)[0]
    assert max_grad_error(f, enc.arrays() + p.arrays(), grads) < 1e-4


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(alpha=1.5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(filter="cheb:2").validate()
    with pytest.raises(ConfigError):
        TrainConfig(ne_nodes="val").validate()
    assert TrainConfig(filter="poly:3").hops == 3
    assert TrainConfig(task="multilabel").loss_for("ne") is LossKind.BINARY_CROSS_ENTROPY


def _setup(seed=0, n=40):
    rng = np.random.default_rng(seed)
    adj = row_normalize(random_graph(n, rng, p=0.1))
    y = np.eye(3)[rng.integers(0, 3, n)]
    attrs = rng.standard_normal((n, 5))
    enc = init_mlp([5, 8, 6], rng)
    head = init_mlp([6, 3], rng)
    return adj, y, attrs, enc, head


def test_alpha_zero_is_label_only_training_bitwise():
    adj, y, attrs, enc, head = _setup()
    cfg = TrainConfig(alpha=0.0, ne_epochs=5, batch_size=7, record_trajectory=True)
    ld = train_ne_phase(attrs, enc, head, precompute_hop_labels(adj, y, 2), DeconvWeights(np.zeros(3)), cfg)
    glem = train_glem_baseline(attrs, enc, head, y, None, cfg)
    assert len(ld.trajectory) == 5
    for a, b in zip(ld.trajectory, glem.trajectory):
        assert np.array_equal(a, b)
    assert ld.losses == glem.losses


def test_ne_phase_does_not_mutate_inputs_and_gamma_is_simplex():
    adj, y, attrs, enc, head = _setup(1)
    before = [a.copy() for a in enc.arrays()]
    res = train_ne_phase(attrs, enc, head, precompute_hop_labels(adj, y, 3), DeconvWeights(np.zeros(4)),
                         TrainConfig(ne_epochs=4, batch_size=16))
    assert all(np.array_equal(a, b) for a, b in zip(before, enc.arrays()))
    g = np.array(res.gammas)
    assert g.shape == (4, 4)
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)


def test_weight_count_must_match_hops():
    adj, y, attrs, enc, head = _setup()
    with pytest.raises(ConfigError):
        train_ne_phase(attrs, enc, head, precompute_hop_labels(adj, y, 2), DeconvWeights(np.zeros(2)), TrainConfig())


def test_non_finite_loss_raises():
    adj, y, attrs, enc, head = _setup()
    attrs[3, 0] = np.nan
    with pytest.raises(NumericError):
        train_glem_baseline(attrs, enc, head, y, None, TrainConfig(ne_epochs=1))


def test_infer_features_is_batch_invariant_bitwise():
    _, _, attrs, enc, _ = _setup(2, n=101)
    full = infer_features(attrs, enc)
    for b in (1, 7, 64):
        assert np.array_equal(infer_features(attrs, enc, b), full)


def test_joint_refuses_large_graphs():
    adj, y, attrs, enc, _ = _setup(n=30)
    p = SpectralGnnParams(fixed_filter("gcn:2"), init_mlp([6, 3], np.random.default_rng(0)))
    with pytest.raises(ConfigError, match="cap"):
        train_joint_fullbatch(attrs, enc, adj, p, y, NodeSplit.all_train(30), TrainConfig(joint_max_nodes=10))


def test_pseudo_labels_fill_only_unlabeled_rows():
    adj, y, attrs, _, _ = _setup(3)
    split = NodeSplit(np.arange(20), np.arange(20, 30), np.arange(30, 40))
    work = LabelMatrix(y.copy())
    work.data[20:] = 0.0
    out = generate_pseudo_labels(adj, attrs, work, split, TrainConfig(pseudo_epochs=5))
    assert np.array_equal(out.data[:20], y[:20])
    np.testing.assert_allclose(out.data[20:].sum(axis=1), 1.0, atol=1e-12)
    assert np.all(work.data[20:] == 0.0)


def _bundle(task="multiclass", n=60, seed=0):
    gen = generate_assumption1(SynthConfig(num_nodes=n, seed=seed, split=(0.5, 0.25, 0.25)))
    ds = gen.to_bundle(task if task != "multilabel" else None)
    if task == "multilabel":
        ds = DatasetBundle(ds.name, "multilabel", ds.graph, ds.attrs, (gen.targets > 0).astype(float), ds.split)
    return ds


@pytest.mark.parametrize("method", [m.value for m in Method])
def test_run_experiment_report_shape(method):
    cfg = TrainConfig(ne_epochs=2, gnn_epochs=3, batch_size=16, feature_dim=8, pseudo_epochs=2)
    rep = run_experiment(_bundle(), method, cfg)
    d = json.loads(rep.to_json())
    assert set(d) >= {"method", "config", "metrics", "curves", "timing_ms"}
    assert set(d["metrics"]) == {"train", "val", "test"}
    assert set(d["curves"]) == {"ne_loss", "gnn_loss", "gamma"}
    assert set(d["timing_ms"]) == {"preprocess", "ne", "gnn"}
    assert all(0.0 <= v <= 1.0 for v in d["metrics"].values())
    assert len(d["curves"]["gnn_loss"]) == 3
    if method == "ld":
        assert len(d["curves"]["gamma"]) == 2 and len(d["curves"]["gamma"][0]) == 3
    assert "timing_ms" not in json.loads(rep.to_json(include_timing=False))


def test_run_experiment_is_deterministic():
    cfg = TrainConfig(ne_epochs=3, gnn_epochs=5, batch_size=8, feature_dim=8, pseudo_epochs=3, seed=11)
    a = run_experiment(_bundle(), "ld", cfg).to_json(include_timing=False)
    b = run_experiment(_bundle(), "ld", cfg).to_json(include_timing=False)
    assert a == b


@pytest.mark.filterwarnings("ignore:roc_auc skipped")
def test_multilabel_and_regression_runs():
    cfg = TrainConfig(ne_epochs=2, gnn_epochs=3, batch_size=16, feature_dim=8, pseudo_epochs=2)
    ml = run_experiment(_bundle("multilabel"), "ld", cfg)
    assert ml.metric == "roc_auc" and ml.config["task"] == "multilabel"
    reg = run_experiment(_bundle("regression"), "ld", cfg)
    assert reg.config["task"] == "regression" and reg.objective > 0


def test_without_pseudo_labels_and_with_warm_start():
    cfg = TrainConfig(ne_epochs=2, gnn_epochs=3, batch_size=16, feature_dim=8, pseudo_labels=False,
                      warm_start_head=True, filter="poly:2")
    rep = run_experiment(_bundle(), "ld", cfg)
    assert rep.metrics["test"] is not None


def test_motivating_alpha_zero_matches_label_only():
    r = run_motivating_example(seed=3, alpha=0.0, ne_epochs=200)
    assert np.array_equal(r.beta_ld, r.beta_glem)
    assert r.acc_ld == r.acc_glem == 0.0
