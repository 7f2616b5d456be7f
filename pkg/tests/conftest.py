from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from textgraph.graph import SynthSpec, generate_synthetic, split_nodes
from textgraph.hlt import build_hlt, project_targets
from textgraph.model import Batch, init_model, init_round_heads
from textgraph.trainer import TrainConfig, loss_masks, prepare_data

SMALL = TrainConfig(embed_dim=8, hidden_dim=6, dropout=0.0, depth=2, batch_size=8, lr_max=1e-2, seed=0)


def small_data(n=20, num_classes=3, seed=0, ratios=(0.5, 0.25, 0.25), config=SMALL, **synth):
    spec = SynthSpec(n=n, num_classes=num_classes, p_in=synth.pop("p_in", 0.3), p_out=synth.pop("p_out", 0.05),
                     vocab_per_class=synth.pop("vocab_per_class", 6), shared_vocab=synth.pop("shared_vocab", 10),
                     text_len=synth.pop("text_len", 6), **synth)
    graph = split_nodes(generate_synthetic(spec, seed), ratios, seed)
    return prepare_data(graph, config)


def full_batch(data, config=SMALL, depth=2, round_index=None, seed=0, nodes=None):
    """Model at HLT depth ``depth`` plus one batch holding ``nodes`` (default: all)."""
    graph = data.graph
    hlt = build_hlt(data.features, config.branching, depth, seed)
    state = init_model(len(data.vocab), config.embed_dim, config.hidden_dim, graph.num_classes, config.dropout, seed)
    for d in range(1, depth + 1):
        state = init_round_heads(state, hlt, d, warm_start=False, seed=seed + d)
    targets = project_targets(graph.adjacency, hlt, depth)
    signs = -np.ones(targets.matrix.shape)
    signs[targets.matrix.nonzero()] = 1.0
    use_nbr, use_main = loss_masks(graph, config, depth if round_index is None else round_index)
    nodes = np.arange(graph.n) if nodes is None else np.asarray(nodes)
    batch = Batch(
        docs=[data.docs[i] for i in nodes],
        signs=signs[nodes],
        labels=np.where(use_main, graph.labels, -1)[nodes],
        use_nbr=use_nbr[nodes],
        use_main=use_main[nodes],
        node_ids=nodes,
    )
    return state, batch, hlt


@pytest.fixture
def small():
    return small_data()


def with_config(**kw):
    return replace(SMALL, **kw)
