"""Comparison models sharing the encoder, data and evaluation protocol.

* ``text_only``: encoder + linear classifier, classification loss only.
* ``degree_mlp``: two-layer perceptron on degree features, no text. This
  stands in for a message-passing GNN fed with node degrees.
* ``two_stage``: neighborhood-prediction pretraining of the encoder, then a
  downstream classifier on the frozen embeddings.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .graph import TextGraph
from .hlt import HierLabelTree
from .model import MLPHead, ModelState, embed
from .trainer import (
    ConfigError,
    TrainConfig,
    TrainData,
    TrainHistory,
    fit_head,
    labeled_split,
    new_model,
    run_curriculum,
)


class BaselineKind(str, enum.Enum):
    TEXT_ONLY = "text_only"
    DEGREE_MLP = "degree_mlp"
    TWO_STAGE = "two_stage"


def text_only_config(config: TrainConfig) -> TrainConfig:
    """Single classification-only round with the same epoch budget as the curriculum."""
    return replace(
        config,
        depth=1,
        delay_rounds=0,
        extra_round=False,
        epochs_per_round=config.depth * config.epochs_per_round,
    )


def _require_train_labels(graph: TextGraph) -> None:
    if not graph.has_labels or not len(labeled_split(graph, "train")):
        raise ConfigError("no labeled training nodes")


def train_text_only(data: TrainData, config: TrainConfig) -> tuple[ModelState, TrainHistory]:
    _require_train_labels(data.graph)
    return run_curriculum(
        data, None, text_only_config(config), use_nbr=False, patience=config.patience, kind="text_only"
    )


def degree_features(graph: TextGraph) -> np.ndarray:
    """Columns: log(1 + degree) and degree / max degree."""
    deg = graph.degrees().astype(np.float64)
    top = deg.max() if len(deg) else 0.0
    return np.column_stack([np.log1p(deg), deg / top if top > 0 else np.zeros_like(deg)])


def _train_labels(graph: TextGraph) -> np.ndarray:
    return np.where(graph.labels >= 0, graph.labels, 0)


@dataclass
class DegreeClassifier:
    head: MLPHead

    def predict(self, graph: TextGraph) -> np.ndarray:
        return self.head.predict(degree_features(graph))


def train_degree_mlp(data: TrainData, config: TrainConfig) -> tuple[DegreeClassifier, TrainHistory]:
    graph = data.graph
    x = degree_features(graph)
    head = MLPHead.init(x.shape[1], config.downstream_hidden, max(graph.num_classes, 1), config.seed)
    head, hist = fit_head(
        head, x, _train_labels(graph), labeled_split(graph, "train"), labeled_split(graph, "valid"),
        config, 1, 707, BaselineKind.DEGREE_MLP.value, data.fingerprint,
    )
    return DegreeClassifier(head), hist


@dataclass
class TwoStageModel:
    encoder: ModelState  # frozen after stage 1
    head: MLPHead

    def predict(self, data: TrainData) -> np.ndarray:
        return self.head.predict(embed(self.encoder, data.docs))


def train_two_stage(
    data: TrainData,
    hlt: HierLabelTree,
    config: TrainConfig,
    pretrain: bool = True,
) -> tuple[TwoStageModel, TrainHistory]:
    """Stage 1 never touches labels; stage 2 fits a fresh head on frozen embeddings.

    ``pretrain=False`` skips stage 1 and keeps the randomly initialized encoder.
    """
    kind = BaselineKind.TWO_STAGE.value
    stage1_cfg = replace(config, extra_round=False, delay_rounds=0)
    if pretrain:
        encoder, history = run_curriculum(data, hlt, stage1_cfg, main_task=False, kind=kind)
    else:
        encoder, history = new_model(data, config), TrainHistory(kind=kind, fingerprint=data.fingerprint)
    graph = data.graph
    z = embed(encoder, data.docs)
    head = MLPHead.init(z.shape[1], config.downstream_hidden, max(graph.num_classes, 1), config.seed)
    head, stage2 = fit_head(
        head, z, _train_labels(graph), labeled_split(graph, "train"), labeled_split(graph, "valid"),
        config, config.depth + 1, 808, kind, data.fingerprint,
    )
    history.extend(stage2)
    return TwoStageModel(encoder, head), history
