import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textgraph.graph import (
    GraphFormatError,
    SynthSpec,
    TextGraph,
    adjacency_from_edges,
    generate_synthetic,
    k_hop_neighborhood,
    load_graph,
    save_graph,
    split_nodes,
)


def _write(tmp_path, nodes: str, edges: str):
    n, e = tmp_path / "nodes.tsv", tmp_path / "edges.tsv"
    n.write_text(nodes, encoding="utf-8")
    e.write_text(edges, encoding="utf-8")
    return n, e


def assert_valid_adjacency(g: TextGraph):
    a = g.adjacency
    assert a.shape == (g.n, g.n)
    assert np.all(a.data == 1.0)
    assert not a.diagonal().any()
    assert (a != a.T).nnz == 0


def test_load_symmetrizes_single_edge(tmp_path):
    g = load_graph(*_write(tmp_path, "0\ttrain\t0\thello\n1\ttest\t1\tworld\n", "0\t1\n"))
    coo = g.adjacency.tocoo()
    assert sorted(zip(coo.row.tolist(), coo.col.tolist())) == [(0, 1), (1, 0)]
    assert g.labels.tolist() == [0, 1]
    assert g.split.tolist() == ["train", "test"]


def test_load_empty_edges_keeps_nodes(tmp_path):
    g = load_graph(*_write(tmp_path, "0\ttrain\t0\ta\n1\ttrain\t1\tb\n2\tvalid\t0\tc\n", ""))
    assert g.n == 3
    assert g.adjacency.nnz == 0


def test_load_collapses_duplicates_and_self_loops(tmp_path):
    g = load_graph(*_write(tmp_path, "0\ttrain\t0\ta\n1\ttrain\t1\tb\n", "0\t1\n1\t0\n0\t1\n1\t1\n"))
    assert g.adjacency.nnz == 2
    assert_valid_adjacency(g)


def test_unlabeled_marker(tmp_path):
    g = load_graph(*_write(tmp_path, "0\ttrain\t1\ta\n1\ttest\t-1\tb\n", ""))
    assert g.labels.tolist() == [1, -1]
    assert g.num_classes == 2


@pytest.mark.parametrize(
    "nodes, edges",
    [
        ("0\ttrain\t0\ta\n5\ttrain\t0\tb\n2\ttrain\t0\tc\n", ""),  # id out of range
        ("0\ttrain\t0\ta\n0\ttrain\t0\tb\n", ""),  # duplicate id
        ("0\ttrain\tx\ta\n", ""),  # non-integer label
        ("0\ttrain\t0\ta\n1\ttrain\t0\tb\n", "0\t7\n"),  # edge endpoint out of range
        ("0\tholdout\t0\ta\n", ""),  # unknown split
    ],
)
def test_load_format_errors(tmp_path, nodes, edges):
    with pytest.raises(GraphFormatError):
        load_graph(*_write(tmp_path, nodes, edges))


def test_save_load_roundtrip(tmp_path):
    g = split_nodes(generate_synthetic(SynthSpec(n=30, num_classes=3, p_in=0.3, p_out=0.05), 1), (0.5, 0.2, 0.3), 1)
    save_graph(g, tmp_path / "n.tsv", tmp_path / "e.tsv")
    assert load_graph(tmp_path / "n.tsv", tmp_path / "e.tsv") == g


def test_synthetic_no_cross_edges_when_p_out_zero():
    g = generate_synthetic(SynthSpec(n=60, num_classes=3, p_in=0.3, p_out=0.0), 4)
    coo = g.adjacency.tocoo()
    labels = g.labels
    assert coo.nnz > 0
    assert np.all(labels[coo.row] == labels[coo.col])


def test_synthetic_unambiguous_text_uses_class_vocab():
    g = generate_synthetic(SynthSpec(n=40, num_classes=4, text_ambiguity=0.0), 2)
    for i, text in enumerate(g.texts):
        assert all(tok.startswith(f"c{i % 4}w") for tok in text.split())


def test_synthetic_deterministic():
    spec = SynthSpec(n=50, num_classes=3, p_in=0.2, p_out=0.02)
    a, b = generate_synthetic(spec, 7), generate_synthetic(spec, 7)
    assert a == b
    assert a.adjacency.indices.tobytes() == b.adjacency.indices.tobytes()
    assert generate_synthetic(spec, 8) != a


def test_synthetic_round_robin_classes():
    g = generate_synthetic(SynthSpec(n=10, num_classes=3), 0)
    assert g.labels.tolist() == [0, 1, 2, 0, 1, 2, 0, 1, 2, 0]


def test_synthetic_uniform_edges_follow_pair_proportion():
    # With p_in == p_out the within-class edge fraction estimates the share of
    # same-class pairs: C * C(n/C, 2) / C(n, 2). Tolerance: 4 binomial std devs.
    n, c = 300, 3
    g = generate_synthetic(SynthSpec(n=n, num_classes=c, p_in=0.05, p_out=0.05), 11)
    coo = g.adjacency.tocoo()
    upper = coo.row < coo.col
    same = g.labels[coo.row[upper]] == g.labels[coo.col[upper]]
    expected = c * (n // c) * (n // c - 1) / (n * (n - 1))
    tol = 4 * np.sqrt(expected * (1 - expected) / len(same))
    assert abs(same.mean() - expected) < tol


@pytest.mark.parametrize(
    "spec",
    [
        SynthSpec(p_in=0.01, p_out=0.1),
        SynthSpec(text_ambiguity=1.5),
        SynthSpec(n=0),
        SynthSpec(text_len=0),
    ],
)
def test_synth_spec_validation(spec):
    with pytest.raises(ValueError):
        generate_synthetic(spec, 0)


@given(st.integers(1, 40), st.integers(1, 4), st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_generated_adjacency_invariants(n, c, p1, p2, seed):
    spec = SynthSpec(n=n, num_classes=c, p_in=max(p1, p2), p_out=min(p1, p2), vocab_per_class=3, shared_vocab=3, text_len=4)
    assert_valid_adjacency(generate_synthetic(spec, seed))


def test_split_sizes():
    g = generate_synthetic(SynthSpec(n=10, num_classes=2), 0)
    s = split_nodes(g, (0.5, 0.2, 0.3), 3)
    assert [(s.split == t).sum() for t in ("train", "valid", "test")] == [5, 2, 3]


def test_split_degenerate_all_train():
    g = generate_synthetic(SynthSpec(n=9, num_classes=2), 0)
    assert set(split_nodes(g, (1, 0, 0), 0).split.tolist()) == {"train"}


def test_split_deterministic_and_seed_dependent():
    g = generate_synthetic(SynthSpec(n=50, num_classes=2), 0)
    a, b = split_nodes(g, (0.6, 0.2, 0.2), 5), split_nodes(g, (0.6, 0.2, 0.2), 5)
    assert a.split.tolist() == b.split.tolist()
    assert split_nodes(g, (0.6, 0.2, 0.2), 6).split.tolist() != a.split.tolist()


def test_split_rejects_bad_ratios():
    g = generate_synthetic(SynthSpec(n=10, num_classes=2), 0)
    with pytest.raises(ValueError):
        split_nodes(g, (0.5, 0.2, 0.2), 0)


@given(st.integers(1, 200), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_split_counts_within_one(n, r0, r1):
    r0, r1 = r0 * 0.5, r1 * 0.5
    ratios = (r0, r1, 1.0 - r0 - r1)
    g = TextGraph(["x"] * n, adjacency_from_edges([], n))
    s = split_nodes(g, ratios, 0)
    for tag, r in zip(("train", "valid", "test"), ratios):
        assert abs((s.split == tag).sum() - r * n) <= 1 + 1e-9


def _graph_from_edges(n, edges):
    return TextGraph(["t"] * n, adjacency_from_edges(edges, n))


def test_k_hop_path():
    assert k_hop_neighborhood(_graph_from_edges(3, [(0, 1), (1, 2)]), 0, 2) == {1, 2}


def test_k_hop_isolated():
    assert k_hop_neighborhood(_graph_from_edges(3, [(0, 1)]), 2, 5) == set()


def test_k_hop_complete():
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    assert k_hop_neighborhood(_graph_from_edges(4, edges), 0, 1) == {1, 2, 3}


def test_k_hop_out_of_range():
    with pytest.raises(IndexError):
        k_hop_neighborhood(_graph_from_edges(3, []), 3, 1)


def _bfs_oracle(n, edges, src, k):
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    seen, frontier = {src}, [src]
    for _ in range(k):
        frontier = [v for u in frontier for v in adj[u] if v not in seen and not seen.add(v)]
    return seen - {src}


@given(st.integers(1, 50).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=120),
    st.integers(0, n - 1),
    st.integers(1, 5),
)))
@settings(max_examples=100, deadline=None)
def test_k_hop_matches_bfs_oracle(case):
    n, edges, src, k = case
    assert k_hop_neighborhood(_graph_from_edges(n, edges), src, k) == _bfs_oracle(n, edges, src, k)


def test_label_reads_are_counted():
    g = generate_synthetic(SynthSpec(n=6, num_classes=2), 0)
    before = g.label_reads
    _ = g.labels
    assert g.label_reads == before + 1
