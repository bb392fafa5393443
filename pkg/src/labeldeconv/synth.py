"""Synthetic datasets: the four-node motivating graph, its scaled-up
counterexample family, and graphs whose labels follow ``Y = φ(Â) ψ(F*)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .bundle import DatasetBundle
from .errors import ConfigError, SingularMatrixError
from .graph import CsrGraph, NodeSplit, build_csr, row_normalize, symmetrize
from .labels import LabelMatrix, TaskKind
from .nn import MlpParams, init_mlp, mlp_forward
from .spectral import FilterCoeffs, filter_apply
from .oracle import matrix_poly

DENSE_CHECK_LIMIT = 512


@dataclass
class GeneratedDataset:
    name: str
    graph: CsrGraph
    attrs: np.ndarray
    targets: np.ndarray
    labels: LabelMatrix
    split: NodeSplit
    true_filter: FilterCoeffs
    true_head: MlpParams
    true_features: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def to_bundle(self, task: TaskKind | str | None = None) -> DatasetBundle:
        """Classification bundles carry the one-hot labels, regression ones the continuous targets."""
        task = TaskKind(task) if task is not None else self.labels.task
        labels = self.targets if task is TaskKind.REGRESSION else self.labels.data
        return DatasetBundle(
            name=self.name,
            task=task,
            graph=self.graph,
            attrs=self.attrs,
            labels=labels,
            split=self.split,
            provenance=dict(self.provenance),
        )


def _one_hot(idx, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(idx, dtype=np.int64)]


def build_motivating_example() -> GeneratedDataset:
    """Two disjoint 2-cycles; labels are the neighbour's one-hot attribute."""
    g = build_csr([(0, 1), (1, 0), (2, 3), (3, 2)], 4)
    x = _one_hot([0, 1, 1, 2], 3)
    y = _one_hot([1, 0, 2, 1], 3)
    return GeneratedDataset(
        name="motivating",
        graph=g,
        attrs=x,
        targets=y.copy(),
        labels=LabelMatrix(y, TaskKind.MULTI_CLASS),
        split=NodeSplit.all_train(4),
        true_filter=FilterCoeffs([0.0, 1.0]),
        true_head=MlpParams(),
        true_features=x.copy(),
        provenance={"generator": "motivating_example"},
    )


def build_counterexample_family(num_pairs: int, num_classes: int = 4, seed: int | None = 0) -> GeneratedDataset:
    """``num_pairs`` disjoint 2-cycles; pair ``k`` joins attributes ``k mod C`` and ``(k+1) mod C``.

    Every node's label is its partner's attribute, so two nodes with the same
    attribute can carry different labels. For ``C >= 4`` the label-only optimal
    feature of class ``c`` depends only on the parity of ``c``, which erases the
    information a graph model would need. ``seed`` shuffles node ids.
    """
    if num_pairs < 2:
        raise ConfigError("num_pairs must be >= 2")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    n = 2 * num_pairs
    k = np.arange(num_pairs)
    attr = np.empty(n, dtype=np.int64)
    attr[0::2] = k % num_classes
    attr[1::2] = (k + 1) % num_classes
    perm = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    # perm[old] = new
    new_attr = np.empty_like(attr)
    new_attr[perm] = attr
    pairs = np.stack([perm[0::2], perm[1::2]], axis=1)
    g = symmetrize(build_csr(pairs, n))
    x = _one_hot(new_attr, num_classes)
    partner = np.empty(n, dtype=np.int64)
    partner[pairs[:, 0]] = pairs[:, 1]
    partner[pairs[:, 1]] = pairs[:, 0]
    y = x[partner]
    return GeneratedDataset(
        name=f"counterexample-{num_pairs}x{num_classes}",
        graph=g,
        attrs=x,
        targets=y.copy(),
        labels=LabelMatrix(y, TaskKind.MULTI_CLASS),
        split=NodeSplit.all_train(n),
        true_filter=FilterCoeffs([0.0, 1.0]),
        true_head=MlpParams(),
        true_features=x.copy(),
        provenance={
            "generator": "counterexample_family",
            "num_pairs": num_pairs,
            "num_classes": num_classes,
            "seed": seed,
        },
    )


@dataclass
class SynthConfig:
    num_nodes: int = 200
    attr_dim: int = 8
    num_classes: int = 4
    filter_coeffs: tuple[float, ...] = (0.6, 0.3, 0.1)
    psi_hidden: tuple[int, ...] = (16,)
    component_size: int = 10
    component_degree: int = 4
    noise_edge_prob: float = 0.01
    num_duplicates: int = 0
    split: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed: int = 0
    cond_limit: float = 1e8
    max_retries: int = 10

    def validate(self) -> None:
        if self.num_nodes < 2 or self.attr_dim < 1 or self.num_classes < 1:
            raise ConfigError("num_nodes >= 2, attr_dim >= 1 and num_classes >= 1 are required")
        if len(self.filter_coeffs) < 1:
            raise ConfigError("filter_coeffs must be non-empty")
        if self.num_duplicates < 0 or 2 * self.num_duplicates > self.num_nodes:
            raise ConfigError("num_duplicates must lie in [0, num_nodes / 2]")
        if any(s < 0 for s in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be non-negative and sum to 1")
        if not 0.0 <= self.noise_edge_prob <= 1.0:
            raise ConfigError("noise_edge_prob must lie in [0, 1]")
        if self.component_degree % 2 or self.component_degree >= self.component_size:
            raise ConfigError("component_degree must be even and smaller than component_size")


def random_component_graph(
    num_nodes: int,
    rng: np.random.Generator,
    component_size: int = 10,
    component_degree: int = 4,
    noise_edge_prob: float = 0.01,
) -> CsrGraph:
    """Disjoint regular ring lattices on shuffled node blocks plus Erdős–Rényi noise; undirected."""
    order = rng.permutation(num_nodes)
    edges = []
    for start in range(0, num_nodes, component_size):
        block = order[start:start + component_size]
        m = block.size
        for hop in range(1, min(component_degree // 2, (m - 1) // 2) + 1):
            edges.append(np.stack([block, np.roll(block, -hop)], 1))
    total_pairs = num_nodes * (num_nodes - 1) // 2
    n_noise = rng.binomial(total_pairs, noise_edge_prob) if noise_edge_prob > 0 else 0
    if n_noise:
        src = rng.integers(0, num_nodes, size=n_noise)
        dst = rng.integers(0, num_nodes, size=n_noise)
        keep = src != dst
        edges.append(np.stack([src[keep], dst[keep]], 1))
    e = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
    return symmetrize(build_csr(e, num_nodes))


def erdos_renyi(num_nodes: int, edge_prob: float, rng: np.random.Generator) -> CsrGraph:
    """Undirected G(n, p) without self-loops."""
    if not 0.0 <= edge_prob <= 1.0:
        raise ConfigError("edge_prob must lie in [0, 1]")
    upper = np.triu(rng.random((num_nodes, num_nodes)) < edge_prob, k=1)
    return symmetrize(build_csr(np.argwhere(upper), num_nodes))


def _split(n: int, fractions, rng: np.random.Generator) -> NodeSplit:
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return NodeSplit(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])


def generate_assumption1(cfg: SynthConfig) -> GeneratedDataset:
    """Sample a graph, ``F* ~ N(0, I)``, a random MLP ``ψ*``, and set ``Y = φ(Â) ψ*(F*)``.

    ``φ(Â)`` must be invertible; if its condition number exceeds
    ``cfg.cond_limit`` the filter is redrawn (checked densely for n <= 512).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_nodes
    graph = random_component_graph(n, rng, cfg.component_size, cfg.component_degree, cfg.noise_edge_prob)
    adj = row_normalize(graph)

    feats = rng.standard_normal((n, cfg.attr_dim))
    # disjoint pairs, so a later copy never overwrites an earlier pair's source
    picked = rng.choice(n, size=2 * cfg.num_duplicates, replace=False).reshape(-1, 2)
    duplicates = []
    for src, dst in picked:
        feats[dst] = feats[src]
        duplicates.append((int(src), int(dst)))

    psi = init_mlp([cfg.attr_dim, *cfg.psi_hidden, cfg.num_classes], rng)
    for layer in psi.layers:
        layer.bias[:] = 0.1 * rng.standard_normal(layer.out_dim)

    coeffs = np.asarray(cfg.filter_coeffs, dtype=np.float64)
    for attempt in range(cfg.max_retries + 1):
        if n > DENSE_CHECK_LIMIT:
            break
        cond = np.linalg.cond(matrix_poly(coeffs, adj.to_dense()))
        if np.isfinite(cond) and cond <= cfg.cond_limit:
            break
        if attempt == cfg.max_retries:
            raise SingularMatrixError(f"φ(Â) stayed singular after {cfg.max_retries} redraws")
        coeffs = rng.dirichlet(np.ones(coeffs.size))
    filt = FilterCoeffs(coeffs)

    z, _ = mlp_forward(psi, feats)
    targets = filter_apply(adj, filt, z)
    labels = LabelMatrix(_one_hot(np.argmax(targets, axis=1), cfg.num_classes), TaskKind.MULTI_CLASS)
    provenance = {
        "generator": "assumption1",
        "feature_distribution": "iid standard normal",
        "attributes": "equal to the latent features",
        "duplicates": duplicates,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "filter_coeffs": coeffs.tolist(),
    }
    return GeneratedDataset(
        name=f"assumption1-n{n}-seed{cfg.seed}",
        graph=graph,
        attrs=feats,
        targets=targets,
        labels=labels,
        split=_split(n, cfg.split, rng),
        true_filter=filt,
        true_head=psi,
        true_features=feats.copy(),
        provenance=provenance,
    )
