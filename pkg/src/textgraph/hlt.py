"""Hierarchical label trees over the node set and per-depth neighborhood targets.

The tree is built by recursive balanced spherical 2-means on node TF-IDF rows.
At depth ``d`` there are ``B**d`` clusters; cluster ``c`` at depth ``d + 1`` has
parent ``c // B`` at depth ``d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .sparse import binary_from_pairs

MAX_ITER = 20


class HLTConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HierLabelTree:
    branching: int
    depth: int
    assignments: tuple[np.ndarray, ...]  # assignments[d - 1][i] = cluster of node i at depth d

    @property
    def n(self) -> int:
        return len(self.assignments[0])

    def num_clusters(self, d: int) -> int:
        return self.branching ** d

    def assignment(self, d: int) -> np.ndarray:
        if not 1 <= d <= self.depth:
            raise HLTConfigError(f"depth {d} outside 1..{self.depth}")
        return self.assignments[d - 1]

    def parent(self, c):
        return c // self.branching

    def members(self, d: int, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment(d) == c)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, HierLabelTree)
            and self.branching == other.branching
            and self.depth == other.depth
            and all(np.array_equal(a, b) for a, b in zip(self.assignments, other.assignments))
        )

    __hash__ = None

    def to_text(self) -> str:
        lines = [f"# branching={self.branching} depth={self.depth} n={self.n}"]
        lines += [" ".join(map(str, a.tolist())) for a in self.assignments]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> HierLabelTree:
        lines = [ln for ln in text.split("\n") if ln.strip()]
        header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
        assignments = tuple(np.array([int(x) for x in ln.split()], dtype=np.int64) for ln in lines[1:])
        tree = cls(int(header["branching"]), int(header["depth"]), assignments)
        if len(assignments) != tree.depth:
            raise HLTConfigError("depth header does not match number of assignment lines")
        return tree

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> HierLabelTree:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _normalized_mean(x: sp.csr_matrix) -> np.ndarray:
    c = np.asarray(x.mean(axis=0)).ravel()
    norm = np.linalg.norm(c)
    return c / norm if norm > 0 else c


def balanced_split(features: sp.csr_matrix, member_ids: Sequence[int], seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``member_ids`` into two halves by balanced spherical 2-means.

    Centroids start at the first and last member of a seeded shuffle. Each
    iteration ranks members by ``<x, c_left> - <x, c_right>`` (descending,
    ties by node id) and sends the top ``ceil(m/2)`` left.
    """
    ids = np.asarray(member_ids, dtype=np.int64)
    m = len(ids)
    if m < 2:
        raise ValueError("balanced_split needs at least two members")
    x = sp.csr_matrix(features)[ids]
    order = np.random.default_rng(seed).permutation(m)
    c_left = x[order[0]].toarray().ravel()
    c_right = x[order[-1]].toarray().ravel()
    half = math.ceil(m / 2)
    assign = None
    for _ in range(MAX_ITER):
        margin = x @ c_left - x @ c_right
        rank = np.lexsort((ids, -margin))
        new_assign = np.zeros(m, dtype=bool)
        new_assign[rank[:half]] = True
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        c_left = _normalized_mean(x[assign])
        c_right = _normalized_mean(x[~assign])
    return np.sort(ids[assign]), np.sort(ids[~assign])


def split_objective(features: sp.csr_matrix, groups: Sequence[Sequence[int]]) -> float:
    """Total cosine similarity of members to their group's normalized centroid."""
    features = sp.csr_matrix(features)
    total = 0.0
    for g in groups:
        x = features[np.asarray(g, dtype=np.int64)]
        total += float(np.sum(x @ _normalized_mean(x)))
    return total


def _split_seed(seed: int, d: int, cluster: int, sub: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, d, cluster, sub])


def build_hlt(features: sp.csr_matrix, branching: int = 2, depth: int = 2, seed: int = 0) -> HierLabelTree:
    """Recursively cluster all nodes into ``branching**d`` groups per depth.

    ``branching`` must be a power of two; each level applies ``log2(branching)``
    rounds of binary splits. Every split gets its own seed derived from
    ``(seed, depth, parent cluster, split index)``, so the result does not
    depend on traversal order.
    """
    if branching < 2 or branching & (branching - 1):
        raise HLTConfigError("branching must be a power of two >= 2")
    if depth < 1:
        raise HLTConfigError("depth must be >= 1")
    n = features.shape[0]
    if branching ** depth > n:
        raise HLTConfigError(f"{branching}^{depth} clusters exceed {n} nodes")
    features = sp.csr_matrix(features)
    rounds = int(math.log2(branching))

    assignments = []
    groups = [np.arange(n)]
    for d in range(1, depth + 1):
        children = []
        for parent, members in enumerate(groups):
            parts = [members]
            for r in range(rounds):
                nxt = []
                for k, part in enumerate(parts):
                    seq = _split_seed(seed, d, parent, (1 << r) + k)
                    left, right = balanced_split(features, part, int(seq.generate_state(1)[0]))
                    nxt += [left, right]
                parts = nxt
            children += parts
        groups = children
        a = np.empty(n, dtype=np.int64)
        for c, members in enumerate(groups):
            a[members] = c
        assignments.append(a)
    return HierLabelTree(branching, depth, tuple(assignments))


@dataclass(frozen=True, eq=False)
class NeighborhoodTarget:
    depth: int
    matrix: sp.csr_matrix  # n x B**depth, binary

    def row(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]


def project_targets(adjacency: sp.csr_matrix, hlt: HierLabelTree, d: int) -> NeighborhoodTarget:
    """Bit ``c`` of row ``i`` is set iff some neighbor of ``i`` lies in cluster ``c``."""
    assign = hlt.assignment(d)
    n = adjacency.shape[0]
    membership = binary_from_pairs(np.arange(n), assign, (n, hlt.num_clusters(d)))
    t = sp.csr_matrix(adjacency) @ membership
    t = binary_from_pairs(*t.nonzero(), t.shape)
    return NeighborhoodTarget(d, t)
