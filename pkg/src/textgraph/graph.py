"""Text-attributed graphs: data model, file I/O, synthetic generation, splits."""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .sparse import binary_from_pairs

SPLITS = ("train", "valid", "test")


class GraphFormatError(ValueError):
    pass


class TextGraph:
    """Undirected graph whose nodes carry raw text and optional class labels.

    The adjacency is a binary, symmetric CSR matrix with an empty diagonal.
    Label ``-1`` marks an unlabeled node. Instances are treated as immutable;
    ``with_split`` returns a new graph.

    Reads of ``labels`` are counted in ``label_reads`` so that label-free
    code paths (e.g. self-supervised pretraining) can be audited.
    """

    def __init__(
        self,
        texts: Sequence[str],
        adjacency: sp.csr_matrix,
        labels: Sequence[int] | None = None,
        num_classes: int | None = None,
        split: Sequence[str] | None = None,
    ):
        n = len(texts)
        self.n = n
        self.texts = tuple(texts)
        adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
        adjacency.sort_indices()
        self.adjacency = adjacency
        if labels is not None:
            lab = np.asarray(labels, dtype=np.int64).copy()
            lab.flags.writeable = False
            if len(lab) != n:
                raise GraphFormatError("labels length differs from node count")
            if num_classes is None:
                num_classes = int(lab.max()) + 1 if n and lab.max() >= 0 else 0
            if n and (lab.min() < -1 or lab.max() >= num_classes):
                raise GraphFormatError("label outside [-1, num_classes)")
        else:
            lab = None
        self._labels = lab
        self.num_classes = int(num_classes or 0)
        if split is None:
            split = ["train"] * n
        split_arr = np.asarray(split, dtype="<U5")
        if len(split_arr) != n:
            raise GraphFormatError("split length differs from node count")
        bad = set(split_arr.tolist()) - set(SPLITS)
        if bad:
            raise GraphFormatError(f"unknown split tags {sorted(bad)}")
        split_arr.flags.writeable = False
        self.split = split_arr
        self.label_reads = 0
        self._check_adjacency()

    def _check_adjacency(self) -> None:
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise GraphFormatError(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if a.nnz and not np.all(a.data == 1.0):
            raise GraphFormatError("adjacency values must all be 1")
        if a.diagonal().any():
            raise GraphFormatError("adjacency has self-loops")
        if (a != a.T).nnz:
            raise GraphFormatError("adjacency is not symmetric")

    @property
    def labels(self) -> np.ndarray | None:
        self.label_reads += 1
        return self._labels

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def nodes_in(self, *splits: str) -> np.ndarray:
        return np.flatnonzero(np.isin(self.split, splits))

    def with_split(self, split: Sequence[str]) -> TextGraph:
        return TextGraph(self.texts, self.adjacency, self._labels, self.num_classes, split)

    def split_fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.split.tolist()).encode()).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TextGraph):
            return NotImplemented
        same_labels = (self._labels is None and other._labels is None) or (
            self._labels is not None
            and other._labels is not None
            and np.array_equal(self._labels, other._labels)
        )
        return (
            self.n == other.n
            and self.texts == other.texts
            and self.num_classes == other.num_classes
            and same_labels
            and np.array_equal(self.split, other.split)
            and np.array_equal(self.adjacency.indptr, other.adjacency.indptr)
            and np.array_equal(self.adjacency.indices, other.adjacency.indices)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"TextGraph(n={self.n}, edges={self.adjacency.nnz // 2}, classes={self.num_classes})"


def adjacency_from_edges(edges, n: int) -> sp.csr_matrix:
    """Symmetrized binary adjacency; duplicate edges collapse, self-loops drop."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    keep = edges[:, 0] != edges[:, 1]
    src, dst = edges[keep, 0], edges[keep, 1]
    return binary_from_pairs(np.concatenate([src, dst]), np.concatenate([dst, src]), (n, n))


def load_graph(nodes_path: str | Path, edges_path: str | Path) -> TextGraph:
    """Read a tab-separated node file and edge file.

    Node lines are ``id<TAB>split<TAB>label<TAB>text``; edge lines are
    ``src<TAB>dst``. Edges are symmetrized.
    """
    records: dict[int, tuple[str, int, str]] = {}
    for lineno, line in enumerate(Path(nodes_path).read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise GraphFormatError(f"{nodes_path}:{lineno}: expected 4 tab-separated fields")
        try:
            node_id = int(parts[0])
        except ValueError:
            raise GraphFormatError(f"{nodes_path}:{lineno}: non-integer node id {parts[0]!r}") from None
        try:
            label = int(parts[2])
        except ValueError:
            raise GraphFormatError(f"{nodes_path}:{lineno}: non-integer label {parts[2]!r}") from None
        if node_id in records:
            raise GraphFormatError(f"{nodes_path}:{lineno}: duplicate node id {node_id}")
        if parts[1] not in SPLITS:
            raise GraphFormatError(f"{nodes_path}:{lineno}: unknown split {parts[1]!r}")
        records[node_id] = (parts[1], label, parts[3])
    n = len(records)
    for node_id in records:
        if not 0 <= node_id < n:
            raise GraphFormatError(f"node id {node_id} outside 0..{n - 1}")

    edges = []
    for lineno, line in enumerate(Path(edges_path).read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{edges_path}:{lineno}: expected 2 fields")
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"{edges_path}:{lineno}: non-integer endpoint") from None
        if not (0 <= s < n and 0 <= d < n):
            raise GraphFormatError(f"{edges_path}:{lineno}: endpoint out of range")
        edges.append((s, d))

    split = [records[i][0] for i in range(n)]
    labels = [records[i][1] for i in range(n)]
    texts = [records[i][2] for i in range(n)]
    has_labels = any(lab >= 0 for lab in labels)
    return TextGraph(
        texts,
        adjacency_from_edges(edges, n),
        labels if has_labels else None,
        split=split,
    )


def save_graph(graph: TextGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    labels = graph._labels if graph._labels is not None else np.full(graph.n, -1)
    lines = []
    for i in range(graph.n):
        text = graph.texts[i]
        if "\t" in text or "\n" in text:
            raise GraphFormatError(f"node {i}: text contains tab or newline")
        lines.append(f"{i}\t{graph.split[i]}\t{int(labels[i])}\t{text}")
    Path(nodes_path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    Path(edges_path).write_text(
        "".join(f"{coo.row[k]}\t{coo.col[k]}\n" for k in order), encoding="utf-8"
    )


@dataclass(frozen=True)
class SynthSpec:
    n: int = 600
    num_classes: int = 4
    p_in: float = 0.1
    p_out: float = 0.005
    vocab_per_class: int = 50
    shared_vocab: int = 200
    text_len: int = 12
    text_ambiguity: float = 0.7

    def validate(self) -> None:
        if min(self.n, self.num_classes, self.vocab_per_class, self.shared_vocab, self.text_len) < 1:
            raise ValueError("all SynthSpec counts must be positive")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if not 0.0 <= self.text_ambiguity <= 1.0:
            raise ValueError("text_ambiguity must lie in [0, 1]")


def class_token(c: int, j: int) -> str:
    return f"c{c}w{j}"


def shared_token(j: int) -> str:
    return f"s{j}"


def generate_synthetic(spec: SynthSpec, seed: int) -> TextGraph:
    """Planted-partition graph with class-dependent bag-of-words text.

    Node ``i`` belongs to class ``i % C``. Every unordered pair is joined with
    probability ``p_in`` (same class) or ``p_out``. Each token is drawn from the
    shared vocabulary with probability ``text_ambiguity``, otherwise from the
    node's class vocabulary.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n, C = spec.n, spec.num_classes
    labels = np.arange(n) % C

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)
    hit = rng.random(len(iu)) < prob
    adjacency = binary_from_pairs(
        np.concatenate([iu[hit], ju[hit]]), np.concatenate([ju[hit], iu[hit]]), (n, n)
    )

    from_shared = rng.random((n, spec.text_len)) < spec.text_ambiguity
    shared_pick = rng.integers(0, spec.shared_vocab, size=(n, spec.text_len))
    class_pick = rng.integers(0, spec.vocab_per_class, size=(n, spec.text_len))
    texts = []
    for i in range(n):
        toks = [
            shared_token(shared_pick[i, t]) if from_shared[i, t] else class_token(labels[i], class_pick[i, t])
            for t in range(spec.text_len)
        ]
        texts.append(" ".join(toks))
    return TextGraph(texts, adjacency, labels, C)


def split_nodes(graph: TextGraph, ratios: tuple[float, float, float], seed: int) -> TextGraph:
    """Seeded shuffle of node ids, then contiguous train/valid/test blocks."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three nonnegative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios sum to {sum(ratios)}, expected 1")
    n = graph.n
    order = np.random.default_rng(seed).permutation(n)
    b1 = int(round(ratios[0] * n))
    b2 = int(round((ratios[0] + ratios[1]) * n))
    b2 = min(max(b2, b1), n)
    split = np.empty(n, dtype="<U5")
    split[order[:b1]] = "train"
    split[order[b1:b2]] = "valid"
    split[order[b2:]] = "test"
    return graph.with_split(split)


def k_hop_neighborhood(graph: TextGraph, node: int, k: int) -> set[int]:
    """Nodes within ``k`` hops of ``node``, excluding ``node`` itself."""
    if not 0 <= node < graph.n:
        raise IndexError(f"node {node} out of range")
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = {node: 0}
    queue = deque([node])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for v in graph.neighbors(u).tolist():
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    del dist[node]
    return set(dist)
