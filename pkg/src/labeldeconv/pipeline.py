"""Two-phase separate training with inverse labels, plus the baselines it is
compared against.

Phase one trains a node encoder and a head on mini-batches against
``(1 - alpha) Y + alpha NORMALIZE(sum_i gamma_i Â^i Y)``; the hop labels
``Â^i Y`` are precomputed, so a step touches only the rows of its batch.
Phase two freezes the encoder's features and fits a spectral GNN on the true
training labels.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .bundle import DatasetBundle
from .errors import ConfigError, NumericError
from .graph import CsrGraph, NodeSplit, NormalizedAdjacency, k_hop_subgraph, row_normalize, symmetrize
from .labels import (
    DeconvWeights,
    HopLabelStack,
    LabelMatrix,
    TaskKind,
    deconv_init,
    inverse_labels_grad,
    label_array,
    mixed_target,
    normalize_target_grad,
    precompute_hop_labels,
    softmax,
    weighted_hops,
)
from .metrics import accuracy, roc_auc
from .nn import (
    LossKind,
    MlpParams,
    OptimizerState,
    adam_step,
    init_mlp,
    loss_and_grad,
    loss_grads,
    mlp_backward,
    mlp_forward,
    sigmoid,
)
from .spectral import SpectralGnnParams, fixed_filter, gnn_backward, gnn_forward

log = logging.getLogger(__name__)

DEFAULT_LOSS = {
    TaskKind.MULTI_CLASS: LossKind.SOFT_CROSS_ENTROPY,
    TaskKind.MULTI_LABEL: LossKind.BINARY_CROSS_ENTROPY,
    TaskKind.REGRESSION: LossKind.MEAN_SQUARED,
}


class Method(str, Enum):
    LD = "ld"
    GLEM = "glem"
    JOINT = "joint"
    JOINT_SAMPLED = "joint-sampled"
    FROZEN = "frozen"


@dataclass
class TrainConfig:
    n_hops: int | None = None  # None: the GNN filter degree
    alpha: float = 1.0
    ne_epochs: int = 50
    gnn_epochs: int = 200
    batch_size: int = 256
    seed: int = 0
    task: TaskKind = TaskKind.MULTI_CLASS
    lr: float = 1e-2
    gnn_lr: float | None = None
    lr_final: float | None = None  # if set, the rate anneals linearly to this by the last step
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    filter: str = "gcn:2"
    warm_start_head: bool = False
    feature_dim: int = 64
    encoder_hidden: tuple[int, ...] = ()
    encoder_bias: bool = True
    head_hidden: tuple[int, ...] = ()
    ne_head: bool = True  # False: features are compared to targets directly
    gnn_head: bool = True
    ne_loss: LossKind | None = None
    gnn_loss: LossKind | None = None
    ne_nodes: str = "all"  # "all" (pseudo labels off the train split) or "train"
    pseudo_labels: bool = True
    pseudo_epochs: int = 100
    joint_max_nodes: int = 5000
    symmetrize: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        self.task = TaskKind(self.task)
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.head_hidden = tuple(self.head_hidden)
        if self.ne_loss is not None:
            self.ne_loss = LossKind(self.ne_loss)
        if self.gnn_loss is not None:
            self.gnn_loss = LossKind(self.gnn_loss)

    def validate(self) -> None:
        if not (isinstance(self.alpha, (int, float)) and 0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_hops is not None and self.n_hops < 0:
            raise ConfigError("n_hops must be >= 0")
        if min(self.ne_epochs, self.gnn_epochs, self.pseudo_epochs) < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.lr <= 0 or (self.gnn_lr is not None and self.gnn_lr <= 0) or (
            self.lr_final is not None and self.lr_final < 0
        ):
            raise ConfigError("learning rates must be positive")
        if self.ne_nodes not in ("all", "train"):
            raise ConfigError("ne_nodes must be 'all' or 'train'")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        fixed_filter(self.filter)

    @property
    def hops(self) -> int:
        return self.n_hops if self.n_hops is not None else fixed_filter(self.filter).degree

    def loss_for(self, phase: str) -> LossKind:
        chosen = self.ne_loss if phase == "ne" else self.gnn_loss
        return chosen or DEFAULT_LOSS[self.task]

    def optimizer(self, lr: float | None = None) -> OptimizerState:
        return OptimizerState(lr=lr or self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


@dataclass
class PhaseResult:
    encoder: MlpParams | None = None
    head: MlpParams | None = None
    gnn: SpectralGnnParams | None = None
    weights: DeconvWeights | None = None
    losses: list[float] = field(default_factory=list)
    gammas: list[list[float]] = field(default_factory=list)
    trajectory: list[np.ndarray] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)


@dataclass
class ExperimentReport:
    method: str
    config: dict
    metrics: dict
    curves: dict
    timing_ms: dict
    metric: str = "accuracy"
    objective: float | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "method": self.method,
            "config": self.config,
            "metric": self.metric,
            "metrics": self.metrics,
            "objective": self.objective,
            "curves": self.curves,
        }
        if include_timing:
            out["timing_ms"] = self.timing_ms
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _check_finite(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} in {where}")


def _flat(arrays) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)


def _anneal(opt: OptimizerState, start: float, final: float | None, step: int, total: int) -> None:
    if final is not None and total > 1:
        opt.lr = start + (final - start) * step / (total - 1)


def _batches(nodes: np.ndarray, batch_size: int, rng: np.random.Generator):
    if batch_size >= nodes.size:
        yield nodes
        return
    perm = nodes[rng.permutation(nodes.size)]
    for start in range(0, perm.size, batch_size):
        yield perm[start:start + batch_size]


def encoder_step(attrs, encoder, head, stack, w, batch, cfg, deconv: bool = True):
    """Loss and gradients for one encoder-phase batch.

    Returns ``(loss, grads)`` with grads aligned to
    ``encoder.arrays() + head.arrays() + [w.raw]``.
    """
    f, enc_cache = mlp_forward(encoder, attrs[batch])
    out, head_cache = mlp_forward(head, f)
    rows = stack.rows(batch)
    y = rows[0]
    if deconv:
        yinv = weighted_hops(rows, w)
        target = mixed_target(y, yinv, cfg.alpha, cfg.task)
    else:
        target = y
    loss, g_out, g_target = loss_grads(cfg.loss_for("ne"), out, target)
    head_grads, g_f = mlp_backward(head, head_cache, g_out)
    enc_grads, _ = mlp_backward(encoder, enc_cache, g_f)
    if deconv:
        g_yinv = cfg.alpha * normalize_target_grad(yinv, cfg.task, g_target)
        g_raw = inverse_labels_grad(rows, w, g_yinv)
    else:
        g_raw = np.zeros_like(w.raw)
    return loss, enc_grads + head_grads + [g_raw]


def _train_encoder(attrs, encoder, head, stack, w, cfg, nodes, deconv: bool) -> PhaseResult:
    cfg.validate()
    attrs = np.asarray(attrs, dtype=np.float64)
    encoder, head, w = encoder.copy(), head.copy(), w.copy()
    params = encoder.arrays() + head.arrays() + [w.raw]
    opt = cfg.optimizer()
    rng = _rng(cfg.seed, 1)
    result = PhaseResult(encoder=encoder, head=head, weights=w)
    where = "encoder phase" if deconv else "label-only encoder baseline"
    for epoch in range(cfg.ne_epochs):
        _anneal(opt, cfg.lr, cfg.lr_final, epoch, cfg.ne_epochs)
        total, count = 0.0, 0
        for batch in _batches(nodes, cfg.batch_size, rng):
            t0 = time.perf_counter()
            loss, grads = encoder_step(attrs, encoder, head, stack, w, batch, cfg, deconv)
            _check_finite(loss, where)
            adam_step(opt, params, grads)
            result.step_seconds.append(time.perf_counter() - t0)
            total += loss * batch.size
            count += batch.size
        result.losses.append(total / count)
        if deconv:
            result.gammas.append(w.gamma.tolist())
        if cfg.record_trajectory:
            result.trajectory.append(_flat(encoder.arrays() + head.arrays()))
        log.debug("%s epoch %d loss %.6g", where, epoch + 1, result.losses[-1])
    return result


def _ne_nodes(n: int, split: NodeSplit | None, cfg: TrainConfig) -> np.ndarray:
    if cfg.ne_nodes == "train" and split is not None:
        return split.train.copy()
    return np.arange(n)


def train_ne_phase(attrs, encoder: MlpParams, head: MlpParams, stack: HopLabelStack, w: DeconvWeights,
                   cfg: TrainConfig, split: NodeSplit | None = None) -> PhaseResult:
    """Jointly fit encoder, head and deconvolution logits on inverse labels."""
    if w.raw.size != stack.n_hops + 1:
        raise ConfigError(f"{w.raw.size} deconvolution weights for {stack.n_hops} hops")
    return _train_encoder(attrs, encoder, head, stack, w, cfg, _ne_nodes(stack.num_nodes, split, cfg), True)


def train_glem_baseline(attrs, encoder: MlpParams, head: MlpParams, y, split: NodeSplit | None,
                        cfg: TrainConfig) -> PhaseResult:
    """Same loop as :func:`train_ne_phase` with the plain labels as target."""
    data = label_array(y)
    stack = HopLabelStack(np.asarray(data, dtype=np.float64)[None])
    res = _train_encoder(attrs, encoder, head, stack, deconv_init(0), cfg,
                         _ne_nodes(stack.num_nodes, split, cfg), False)
    res.weights = None
    return res


def infer_features(attrs, encoder: MlpParams, batch_size: int | None = None) -> np.ndarray:
    attrs = np.asarray(attrs, dtype=np.float64)
    n = attrs.shape[0]
    step = n if not batch_size else batch_size
    chunks = [mlp_forward(encoder, attrs[i:i + step])[0] for i in range(0, n, max(step, 1))]
    return np.concatenate(chunks) if chunks else np.zeros((0, encoder.out_dim or attrs.shape[1]))


def gnn_objective(features, adj, p: SpectralGnnParams, y, rows, kind: LossKind) -> float:
    h, _ = gnn_forward(features, adj, p)
    return loss_and_grad(kind, h, label_array(y), rows)[0]


def train_gnn_phase(features, adj: NormalizedAdjacency, p: SpectralGnnParams, y, split: NodeSplit,
                    cfg: TrainConfig) -> PhaseResult:
    """Full-batch training of the filter (if learnable) and head on the train split."""
    cfg.validate()
    target = label_array(y)
    features = np.asarray(features, dtype=np.float64)
    p = p.copy()
    params = p.arrays()
    opt = cfg.optimizer(cfg.gnn_lr)
    kind = cfg.loss_for("gnn")
    rows = split.train
    result = PhaseResult(gnn=p)
    for epoch in range(cfg.gnn_epochs):
        _anneal(opt, cfg.gnn_lr or cfg.lr, cfg.lr_final, epoch, cfg.gnn_epochs)
        h, cache = gnn_forward(features, adj, p)
        loss, g = loss_and_grad(kind, h, target, rows)
        _check_finite(loss, "GNN phase")
        if params:
            grads = gnn_backward(adj, p, cache, g).trainable(p)
            adam_step(opt, params, grads)
        result.losses.append(loss)
    return result


def _joint_params(encoder: MlpParams, p: SpectralGnnParams) -> list[np.ndarray]:
    return encoder.arrays() + p.arrays()


def joint_step(attrs, encoder: MlpParams, adj, p: SpectralGnnParams, target, rows, kind: LossKind):
    """Loss and gradients (aligned with encoder then GNN arrays) through the whole model."""
    f, enc_cache = mlp_forward(encoder, attrs)
    h, cache = gnn_forward(f, adj, p)
    loss, g = loss_and_grad(kind, h, target, rows)
    gg = gnn_backward(adj, p, cache, g)
    enc_grads, _ = mlp_backward(encoder, enc_cache, gg.features)
    return loss, enc_grads + gg.trainable(p)


def train_joint_fullbatch(attrs, encoder: MlpParams, adj: NormalizedAdjacency, p: SpectralGnnParams, y,
                          split: NodeSplit, cfg: TrainConfig) -> PhaseResult:
    """End-to-end training through the GNN into the encoder; small graphs only."""
    cfg.validate()
    if adj.num_nodes > cfg.joint_max_nodes:
        raise ConfigError(
            f"joint full-batch training refused: {adj.num_nodes} nodes > cap {cfg.joint_max_nodes}. "
            "Use method 'ld', 'joint-sampled', or raise joint_max_nodes."
        )
    attrs = np.asarray(attrs, dtype=np.float64)
    target = label_array(y)
    encoder, p = encoder.copy(), p.copy()
    params = _joint_params(encoder, p)
    opt = cfg.optimizer()
    kind = cfg.loss_for("gnn")
    result = PhaseResult(encoder=encoder, gnn=p)
    for epoch in range(cfg.gnn_epochs):
        _anneal(opt, cfg.lr, cfg.lr_final, epoch, cfg.gnn_epochs)
        loss, grads = joint_step(attrs, encoder, adj, p, target, split.train, kind)
        _check_finite(loss, "joint training")
        adam_step(opt, params, grads)
        result.losses.append(loss)
    return result


def train_joint_sampled(attrs, encoder: MlpParams, graph: CsrGraph, p: SpectralGnnParams, y,
                        split: NodeSplit, cfg: TrainConfig) -> PhaseResult:
    """Joint training on k-hop subgraphs around mini-batches of training nodes.

    A subgraph of depth ``filter degree`` reproduces the exact outputs at its
    seed nodes, so each step's loss equals the full-graph loss on that batch.
    """
    cfg.validate()
    attrs = np.asarray(attrs, dtype=np.float64)
    target = label_array(y)
    encoder, p = encoder.copy(), p.copy()
    params = _joint_params(encoder, p)
    opt = cfg.optimizer()
    kind = cfg.loss_for("gnn")
    rng = _rng(cfg.seed, 2)
    result = PhaseResult(encoder=encoder, gnn=p)
    for epoch in range(cfg.gnn_epochs):
        _anneal(opt, cfg.lr, cfg.lr_final, epoch, cfg.gnn_epochs)
        total, count = 0.0, 0
        for batch in _batches(split.train, cfg.batch_size, rng):
            t0 = time.perf_counter()
            sub, nodes = k_hop_subgraph(graph, batch, p.filter.degree)
            sub_adj = row_normalize(sub)
            loss, grads = joint_step(attrs[nodes], encoder, sub_adj, p, target[nodes],
                                     np.arange(batch.size), kind)
            _check_finite(loss, "sampled joint training")
            adam_step(opt, params, grads)
            result.step_seconds.append(time.perf_counter() - t0)
            total += loss * batch.size
            count += batch.size
        result.losses.append(total / count)
    return result


def predict_proba(h: np.ndarray, task: TaskKind) -> np.ndarray:
    if task is TaskKind.MULTI_CLASS:
        return softmax(h, axis=1)
    if task is TaskKind.MULTI_LABEL:
        return sigmoid(h)
    return h


def _gnn_params(cfg: TrainConfig, in_dim: int, out_dim: int, rng, head: MlpParams | None = None) -> SpectralGnnParams:
    filt = fixed_filter(cfg.filter)
    if head is not None:
        return SpectralGnnParams(filt, head.copy())
    if cfg.gnn_head:
        return SpectralGnnParams(filt, init_mlp([in_dim, *cfg.head_hidden, out_dim], rng))
    return SpectralGnnParams(filt, MlpParams())


def generate_pseudo_labels(adj: NormalizedAdjacency, features, y: LabelMatrix, split: NodeSplit,
                           cfg: TrainConfig) -> LabelMatrix:
    """Fit a spectral GNN on the train split of frozen features and write its
    predicted distributions into every non-train row. Single pass."""
    features = np.asarray(features, dtype=np.float64)
    p = _gnn_params(cfg, features.shape[1], y.num_classes, _rng(cfg.seed, 3))
    res = train_gnn_phase(features, adj, p, y, split, replace(cfg, gnn_epochs=cfg.pseudo_epochs))
    h, _ = gnn_forward(features, adj, res.gnn)
    probs = predict_proba(h, y.task)
    out = y.copy()
    others = np.setdiff1d(np.arange(y.num_nodes), split.train)
    out.data[others] = probs[others]
    return out


def _evaluate(h, labels: LabelMatrix, split: NodeSplit, seed: int) -> tuple[str, dict]:
    task = labels.task
    metric = "roc_auc" if task is TaskKind.MULTI_LABEL else "accuracy"
    out = {}
    for name in ("train", "val", "test"):
        rows = getattr(split, name)
        if rows.size == 0:
            out[name] = None
            continue
        fn = roc_auc if task is TaskKind.MULTI_LABEL else accuracy
        out[name] = fn(h, labels.data, rows, split=name, seed=seed).value
    return metric, out


def run_experiment(dataset: DatasetBundle, method: Method | str, cfg: TrainConfig) -> ExperimentReport:
    """Preprocess, run the chosen training scheme and score every split."""
    method = Method(method)
    cfg = replace(cfg, task=dataset.task)
    cfg.validate()
    timing = {"preprocess": 0.0, "ne": 0.0, "gnn": 0.0}
    t0 = time.perf_counter()

    graph = symmetrize(dataset.graph) if cfg.symmetrize else dataset.graph
    adj = row_normalize(graph)
    labels = dataset.label_matrix()
    split = dataset.split
    attrs = np.asarray(dataset.attrs, dtype=np.float64)
    n, d = labels.data.shape

    y_work = labels.copy()
    unlabeled = np.setdiff1d(np.arange(n), split.train)
    y_work.data[unlabeled] = 0.0
    ne_cfg = cfg
    if method in (Method.LD, Method.GLEM) and unlabeled.size:
        if cfg.pseudo_labels:
            y_work = generate_pseudo_labels(adj, attrs, y_work, split, cfg)
        else:
            ne_cfg = replace(cfg, ne_nodes="train")

    init_rng = _rng(cfg.seed, 0)
    encoder = init_mlp([attrs.shape[1], *cfg.encoder_hidden, cfg.feature_dim], init_rng, bias=cfg.encoder_bias)
    ne_head = init_mlp([cfg.feature_dim, *cfg.head_hidden, d], init_rng) if cfg.ne_head else MlpParams()
    gnn_rng = _rng(cfg.seed, 4)

    curves = {"ne_loss": [], "gnn_loss": [], "gamma": []}
    timing["preprocess"] = (time.perf_counter() - t0) * 1e3

    if method is Method.JOINT or method is Method.JOINT_SAMPLED:
        t1 = time.perf_counter()
        p = _gnn_params(cfg, cfg.feature_dim, d, gnn_rng)
        if method is Method.JOINT:
            res = train_joint_fullbatch(attrs, encoder, adj, p, labels, split, cfg)
        else:
            res = train_joint_sampled(attrs, encoder, graph, p, labels, split, cfg)
        timing["gnn"] = (time.perf_counter() - t1) * 1e3
        features, gnn, curves["gnn_loss"] = infer_features(attrs, res.encoder), res.gnn, res.losses
    else:
        t1 = time.perf_counter()
        head = None
        if method is Method.LD:
            stack = precompute_hop_labels(adj, y_work, cfg.hops)
            timing["preprocess"] += (time.perf_counter() - t1) * 1e3
            t1 = time.perf_counter()
            ne = train_ne_phase(attrs, encoder, ne_head, stack, deconv_init(cfg.hops), ne_cfg, split)
            curves["gamma"] = ne.gammas
        elif method is Method.GLEM:
            ne = train_glem_baseline(attrs, encoder, ne_head, y_work, split, ne_cfg)
        else:
            ne = None
        if ne is not None:
            features = infer_features(attrs, ne.encoder)
            curves["ne_loss"] = ne.losses
            head = ne.head if cfg.warm_start_head and not ne.head.is_identity else None
        else:
            features = attrs
        timing["ne"] = (time.perf_counter() - t1) * 1e3
        t2 = time.perf_counter()
        p = _gnn_params(cfg, features.shape[1], d, gnn_rng, head)
        res = train_gnn_phase(features, adj, p, labels, split, cfg)
        gnn, curves["gnn_loss"] = res.gnn, res.losses
        timing["gnn"] = (time.perf_counter() - t2) * 1e3

    h, _ = gnn_forward(features, adj, gnn)
    metric, metrics = _evaluate(h, labels, split, cfg.seed)
    objective = None
    if split.train.size:
        objective = loss_and_grad(cfg.loss_for("gnn"), h, labels.data, split.train)[0]
    return ExperimentReport(
        method=method.value,
        config=cfg.to_dict(),
        metrics=metrics,
        curves=curves,
        timing_ms=timing,
        metric=metric,
        objective=objective,
    )


MOTIVATING_DEFAULTS = dict(
    n_hops=1,
    ne_epochs=3000,
    gnn_epochs=0,
    batch_size=4,
    filter="gcn:1",
    feature_dim=3,
    encoder_bias=False,
    ne_head=False,
    gnn_head=False,
    ne_loss=LossKind.MEAN_SQUARED,
    lr=0.05,
    beta2=0.99,
    lr_final=0.0,
    pseudo_labels=False,
)


@dataclass
class MotivatingResult:
    beta_ld: np.ndarray
    beta_glem: np.ndarray
    beta_glem_exact: np.ndarray
    gamma: np.ndarray
    features_ld: np.ndarray
    features_glem: np.ndarray
    pred_ld: np.ndarray
    pred_glem: np.ndarray
    labels: np.ndarray
    acc_ld: float
    acc_glem: float


def run_motivating_example(seed: int = 0, alpha: float = 1.0, **overrides) -> MotivatingResult:
    """Linear encoder ``F = X β``, no head, GNN ``Â F``; LD against the label-only baseline."""
    from .oracle import least_squares
    from .synth import build_motivating_example

    gen = build_motivating_example()
    cfg = TrainConfig(**{**MOTIVATING_DEFAULTS, "seed": seed, "alpha": alpha, **overrides})
    cfg.validate()
    adj = row_normalize(gen.graph)
    x, y = gen.attrs, gen.labels.data
    encoder = init_mlp([3, 3], _rng(seed, 0), bias=False)
    ld = train_ne_phase(x, encoder, MlpParams(), precompute_hop_labels(adj, y, cfg.hops),
                        deconv_init(cfg.hops), cfg)
    glem = train_glem_baseline(x, encoder, MlpParams(), y, None, cfg)
    gnn = SpectralGnnParams(fixed_filter(cfg.filter))
    out = {}
    for name, res in (("ld", ld), ("glem", glem)):
        feats = infer_features(x, res.encoder)
        pred, _ = gnn_forward(feats, adj, gnn)
        out[name] = (res.encoder.layers[0].weight.copy(), feats, pred, accuracy(pred, y).value)
    return MotivatingResult(
        beta_ld=out["ld"][0],
        beta_glem=out["glem"][0],
        beta_glem_exact=least_squares(x, y),
        gamma=ld.weights.gamma,
        features_ld=out["ld"][1],
        features_glem=out["glem"][1],
        pred_ld=out["ld"][2],
        pred_glem=out["glem"][2],
        labels=y,
        acc_ld=out["ld"][3],
        acc_glem=out["glem"][3],
    )
