"""On-disk dataset bundles.

Layout of a bundle directory::

    manifest.json          name, task, dims, split sizes, provenance
    edges.txt              one ``src dst`` pair per line
    attrs.f32, labels.f32  little-endian float32, row-major
    split_{train,val,test}.u32
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import CsrGraph, NodeSplit, read_edge_list, write_edge_list
from .labels import LabelMatrix, TaskKind

BUNDLE_VERSION = 1
_SPLITS = ("train", "val", "test")


@dataclass
class DatasetBundle:
    name: str
    task: TaskKind
    graph: CsrGraph
    attrs: np.ndarray
    labels: np.ndarray
    split: NodeSplit
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task = TaskKind(self.task)
        self.attrs = np.asarray(self.attrs)
        self.labels = np.asarray(self.labels)
        n = self.graph.num_nodes
        if self.attrs.ndim != 2 or self.attrs.shape[0] != n:
            raise DataError(f"attrs shape {self.attrs.shape} does not match {n} nodes")
        if self.labels.ndim != 2 or self.labels.shape[0] != n:
            raise DataError(f"labels shape {self.labels.shape} does not match {n} nodes")
        self.split.validate(n)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def label_matrix(self) -> LabelMatrix:
        return LabelMatrix(self.labels.astype(np.float64), self.task)

    def manifest(self) -> dict:
        return {
            "format_version": BUNDLE_VERSION,
            "name": self.name,
            "task": self.task.value,
            "num_nodes": self.num_nodes,
            "num_edges": self.graph.num_edges,
            "attr_dim": int(self.attrs.shape[1]),
            "num_classes": int(self.labels.shape[1]),
            "split_sizes": {s: int(getattr(self.split, s).size) for s in _SPLITS},
            "provenance": self.provenance,
        }


def save_bundle(ds: DatasetBundle, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "manifest.json", "w") as fh:
        json.dump(ds.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_edge_list(ds.graph, path / "edges.txt")
    (path / "attrs.f32").write_bytes(np.ascontiguousarray(ds.attrs, dtype="<f4").tobytes())
    (path / "labels.f32").write_bytes(np.ascontiguousarray(ds.labels, dtype="<f4").tobytes())
    for s in _SPLITS:
        (path / f"split_{s}.u32").write_bytes(np.asarray(getattr(ds.split, s), dtype="<u4").tobytes())
    return path


def _read_array(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing bundle file {path.name}")
    raw = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    expected = int(np.prod(shape)) * itemsize
    if len(raw) != expected:
        raise DataError(f"{path.name}: {len(raw)} bytes, manifest implies {expected} for shape {shape}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_bundle(path: str | Path) -> DatasetBundle:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{path} is not a bundle (no manifest.json)")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != BUNDLE_VERSION:
        raise DataError(f"bundle format_version {version!r}, expected {BUNDLE_VERSION}")
    try:
        n = int(manifest["num_nodes"])
        attr_dim = int(manifest["attr_dim"])
        num_classes = int(manifest["num_classes"])
        sizes = manifest["split_sizes"]
        task = TaskKind(manifest["task"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"manifest is missing or has a bad field: {exc}") from exc
    graph = read_edge_list(path / "edges.txt", num_nodes=n)
    if graph.num_edges != manifest.get("num_edges"):
        raise DataError(f"edges.txt has {graph.num_edges} edges, manifest says {manifest.get('num_edges')}")
    attrs = _read_array(path / "attrs.f32", "<f4", (n, attr_dim))
    labels = _read_array(path / "labels.f32", "<f4", (n, num_classes))
    parts = {s: _read_array(path / f"split_{s}.u32", "<u4", (int(sizes[s]),)) for s in _SPLITS}
    split = NodeSplit(parts["train"], parts["val"], parts["test"])
    return DatasetBundle(
        name=manifest.get("name", path.name),
        task=task,
        graph=graph,
        attrs=attrs,
        labels=labels,
        split=split,
        provenance=manifest.get("provenance", {}),
    )
