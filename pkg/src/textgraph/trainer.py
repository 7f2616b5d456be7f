"""Multi-task curriculum training.

Each round ``d = 1..D`` trains the shared encoder on neighborhood prediction
at HLT depth ``d`` together with node classification. Optional main-task
delay skips the classification loss in the first rounds; an optional final
round freezes the encoder and fits only the classification head with early
stopping on validation accuracy.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import Vocabulary, build_vocab, tfidf, tokenize
from .graph import TextGraph
from .hlt import HierLabelTree, NeighborhoodTarget, project_targets
from .model import (
    Batch,
    MLPHead,
    ModelState,
    backward,
    embed,
    encode_batch,
    init_model,
    init_round_heads,
    predict,
)

REFERENCE_LR_MAX = 6e-5  # tuned for BERT-size encoders
HISTORY_COLUMNS = ("round", "epoch", "step", "loss_nbr", "loss_main", "val_acc", "lr", "train_acc", "kind", "fingerprint")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.1
    depth: int = 2
    branching: int = 2
    lam: float = 1.0
    pos_weight: float = 1.0
    delay_rounds: int = 0
    extra_round: bool = False
    mode: str = "transductive"
    transductive_heldout_fraction: float = 1.0
    patience: int = 3
    epochs_per_round: int = 1
    extra_max_epochs: int = 100
    warm_start: bool = True
    embed_dim: int = 64
    hidden_dim: int = 64
    mlp_hidden: int = -1  # downstream MLP width for baselines; -1 means hidden_dim
    min_df: int = 1
    max_features: int = 50_000
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("transductive", "inductive"):
            raise ConfigError(f"mode must be transductive or inductive, got {self.mode!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not 0 <= self.delay_rounds <= self.depth:
            raise ConfigError("delay_rounds must lie in [0, depth]")
        if self.lr_max <= 0 or self.batch_size < 1 or self.epochs_per_round < 1:
            raise ConfigError("lr_max, batch_size and epochs_per_round must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.transductive_heldout_fraction <= 1.0:
            raise ConfigError("transductive_heldout_fraction must lie in [0, 1]")
        if self.lam < 0 or self.pos_weight <= 0:
            raise ConfigError("lam must be >= 0 and pos_weight > 0")
        if self.patience < 0 or self.extra_max_epochs < 1:
            raise ConfigError("patience must be >= 0 and extra_max_epochs >= 1")

    @property
    def downstream_hidden(self) -> int:
        return self.hidden_dim if self.mlp_hidden < 0 else self.mlp_hidden


@dataclass
class EpochRecord:
    round: int
    epoch: int
    step: int
    loss_nbr: float
    loss_main: float
    val_acc: float
    lr: float
    train_acc: float = float("nan")


@dataclass
class TrainHistory:
    kind: str = "multitask"
    fingerprint: str = ""
    rows: list[EpochRecord] = field(default_factory=list)
    lr_trace: list[tuple[int, int, float]] = field(default_factory=list)  # (round, step, lr)
    wall_times: list[float] = field(default_factory=list)  # per row, kept apart from the deterministic data
    extras: dict[str, float] = field(default_factory=dict)

    def extend(self, other: TrainHistory) -> None:
        self.rows += other.rows
        self.lr_trace += other.lr_trace
        self.wall_times += other.wall_times
        self.extras.update(other.extras)

    def best_round(self) -> int | None:
        scored = [r for r in self.rows if not math.isnan(r.val_acc)]
        if not scored:
            return None
        return max(scored, key=lambda r: (r.val_acc, -r.round, -r.epoch)).round

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r.round, r.epoch, r.step, repr(r.loss_nbr), repr(r.loss_main),
                            repr(r.val_acc), repr(r.lr), repr(r.train_acc), self.kind, self.fingerprint])


def read_history_csv(path: str | Path) -> TrainHistory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    h = TrainHistory(kind=rows[0]["kind"] if rows else "", fingerprint=rows[0]["fingerprint"] if rows else "")
    for r in rows:
        h.rows.append(EpochRecord(int(r["round"]), int(r["epoch"]), int(r["step"]), float(r["loss_nbr"]),
                                  float(r["loss_main"]), float(r["val_acc"]), float(r["lr"]), float(r["train_acc"])))
    return h


# -- data preparation ----------------------------------------------------------


@dataclass
class TrainData:
    """Graph plus everything derived from its text that training needs."""

    graph: TextGraph
    vocab: Vocabulary
    docs: list[np.ndarray]
    features: object  # csr TF-IDF rows, used for HLT clustering

    @property
    def fingerprint(self) -> str:
        return f"{self.graph.split_fingerprint()}-{self.vocab.fingerprint()}"


def prepare_data(graph: TextGraph, config: TrainConfig) -> TrainData:
    """Tokenize all nodes, build the vocabulary and TF-IDF rows.

    In inductive mode the vocabulary only sees training-node text.
    """
    tokens = [tokenize(t) for t in graph.texts]
    if config.mode == "inductive":
        vocab = build_vocab([tokens[i] for i in graph.nodes_in("train")], config.min_df, config.max_features)
    else:
        vocab = build_vocab(tokens, config.min_df, config.max_features)
    docs = [vocab.encode(t) for t in tokens]
    return TrainData(graph, vocab, docs, tfidf(tokens, vocab))


# -- optimizer and schedule ----------------------------------------------------


def lr_at(step: int, total_steps: int, lr_max: float) -> float:
    """Linear decay from ``lr_max`` at step 0 to 0 at ``total_steps``."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError("need 0 <= step <= total_steps and total_steps >= 1")
    return lr_max * (1.0 - step / total_steps)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        """In-place update of every array in ``params`` that has an optimizer slot."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for k in self.m:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -- masking -------------------------------------------------------------------


def heldout_topology_nodes(graph: TextGraph, config: TrainConfig) -> np.ndarray:
    """Valid/test nodes whose topology may be used in transductive training."""
    held = graph.nodes_in("valid", "test")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 505]))
    keep = int(round(config.transductive_heldout_fraction * len(held)))
    return np.sort(held[rng.permutation(len(held))[:keep]])


def loss_masks(graph: TextGraph, config: TrainConfig, round_index: int, main_task: bool = True):
    """Per-node (use_nbr, use_main) flags for a 1-indexed round.

    With ``main_task`` off no label is ever read.
    """
    is_train = graph.split == "train"
    use_nbr = is_train.copy()
    if config.mode == "transductive":
        use_nbr[heldout_topology_nodes(graph, config)] = True
    if main_task and round_index > config.delay_rounds and graph.has_labels:
        use_main = is_train & (graph.labels >= 0)
    else:
        use_main = np.zeros(graph.n, dtype=bool)
    return use_nbr, use_main


def loss_mask(node: int, graph: TextGraph, config: TrainConfig, round_index: int) -> tuple[bool, bool]:
    use_nbr, use_main = loss_masks(graph, config, round_index)
    return bool(use_nbr[node]), bool(use_main[node])


# -- evaluation ----------------------------------------------------------------


def split_accuracy(preds: np.ndarray, graph: TextGraph, split: str) -> float:
    idx = graph.nodes_in(split)
    labels = graph.labels
    idx = idx[labels[idx] >= 0]
    if not len(idx):
        return float("nan")
    return float(np.mean(preds[idx] == labels[idx]))


class BestTracker:
    """Keeps the first state reaching the highest validation accuracy."""

    def __init__(self):
        self.best_acc = -math.inf
        self.state = None

    def offer(self, acc: float, state) -> bool:
        if not math.isnan(acc) and acc > self.best_acc:
            self.best_acc = acc
            self.state = state.copy()
            return True
        return False


def _signs(targets: NeighborhoodTarget | None, n: int) -> np.ndarray | None:
    if targets is None:
        return None
    s = -np.ones(targets.matrix.shape)
    s[targets.matrix.nonzero()] = 1.0
    return s


def train_round(
    state: ModelState,
    data: TrainData,
    targets: NeighborhoodTarget | None,
    config: TrainConfig,
    round_index: int,
    *,
    main_task: bool = True,
    tracker: BestTracker | None = None,
    patience: int | None = None,
    kind: str = "multitask",
) -> tuple[ModelState, TrainHistory]:
    """One curriculum round of ``epochs_per_round`` passes over the active nodes.

    Without ``targets`` the neighborhood loss is off. ``patience`` enables
    early stopping on validation accuracy (used by the text-only baseline).
    """
    graph = data.graph
    if targets is not None and targets.depth != state.depth:
        raise ValueError(f"targets at depth {targets.depth}, model head at depth {state.depth}")
    use_nbr, use_main = loss_masks(graph, config, round_index, main_task)
    if targets is None:
        use_nbr[:] = False
    labels = np.where(use_main, graph.labels, -1) if use_main.any() else np.full(graph.n, -1)
    signs = _signs(targets, graph.n)
    active = np.flatnonzero(use_nbr | use_main)

    state = state.copy()
    hist = TrainHistory(kind=kind, fingerprint=data.fingerprint)
    if not len(active):
        return state, hist
    bs = config.batch_size
    n_batches = math.ceil(len(active) / bs)
    total = config.epochs_per_round * n_batches
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 303, round_index]))
    opt = Adam(state.params())
    params = state.params()
    step = 0
    best_local, bad = -math.inf, 0
    for epoch in range(1, config.epochs_per_round + 1):
        t0 = time.perf_counter()
        order = active[rng.permutation(len(active))]
        sum_nbr = sum_main = 0.0
        for b in range(n_batches):
            nodes = order[b * bs:(b + 1) * bs]
            batch = Batch(
                docs=[data.docs[i] for i in nodes],
                signs=signs[nodes] if signs is not None else None,
                labels=labels[nodes],
                use_nbr=use_nbr[nodes],
                use_main=use_main[nodes],
                node_ids=nodes,
            )
            cache = encode_batch(state, batch.docs, train_mode=True, rng=rng)
            _, grads, (ln, lm) = backward(state, cache, batch, config.lam, config.pos_weight, denom=bs)
            lr = lr_at(step, total, config.lr_max)
            opt.step(params, grads, lr)
            hist.lr_trace.append((round_index, step, lr))
            sum_nbr += ln * bs
            sum_main += lm * bs
            step += 1
        n_nbr, n_main = int(use_nbr.sum()), int(use_main.sum())
        if main_task:
            preds = predict(state, data.docs)
            val_acc = split_accuracy(preds, graph, "valid")
            train_acc = split_accuracy(preds, graph, "train")
        else:
            val_acc = train_acc = float("nan")
        hist.rows.append(EpochRecord(
            round_index, epoch, step,
            sum_nbr / n_nbr if n_nbr else 0.0,
            sum_main / (config.lam * n_main) if n_main and config.lam else 0.0,
            val_acc, lr, train_acc,
        ))
        hist.wall_times.append(time.perf_counter() - t0)
        if tracker is not None:
            tracker.offer(val_acc, state)
        if patience is not None and not math.isnan(val_acc):
            if val_acc > best_local:
                best_local, bad = val_acc, 0
            else:
                bad += 1
                if bad >= patience:
                    break
    return state, hist


# -- standalone head fitting -----------------------------------------------------


def fit_head(
    head: MLPHead,
    x: np.ndarray,
    labels: np.ndarray,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    config: TrainConfig,
    round_index: int,
    seed_tag: int,
    kind: str,
    fingerprint: str,
) -> tuple[MLPHead, TrainHistory]:
    """Fit a classifier on fixed inputs with early stopping on validation accuracy.

    Training stops once validation accuracy has failed to improve for
    ``config.patience`` consecutive epochs; the best-validation head is returned.
    """
    if not len(train_idx):
        raise ConfigError("no labeled training nodes")
    head = head.copy()
    params = head.params()
    opt = Adam(params)
    bs = config.batch_size
    n_batches = math.ceil(len(train_idx) / bs)
    total = config.extra_max_epochs * n_batches
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, seed_tag, round_index]))
    hist = TrainHistory(kind=kind, fingerprint=fingerprint)
    tracker = BestTracker()
    best, bad, step = -math.inf, 0, 0
    for epoch in range(1, config.extra_max_epochs + 1):
        t0 = time.perf_counter()
        order = train_idx[rng.permutation(len(train_idx))]
        total_loss = 0.0
        for b in range(n_batches):
            nodes = order[b * bs:(b + 1) * bs]
            loss, grads = head.loss_and_grads(x[nodes], labels[nodes], bs)
            lr = lr_at(step, total, config.lr_max)
            opt.step(params, grads, lr)
            hist.lr_trace.append((round_index, step, lr))
            total_loss += loss * bs
            step += 1
        preds = head.predict(x)
        val_acc = float(np.mean(preds[val_idx] == labels[val_idx])) if len(val_idx) else float("nan")
        train_acc = float(np.mean(preds[train_idx] == labels[train_idx]))
        hist.rows.append(EpochRecord(round_index, epoch, step, 0.0, total_loss / len(train_idx), val_acc, lr, train_acc))
        hist.wall_times.append(time.perf_counter() - t0)
        tracker.offer(val_acc, head)
        if math.isnan(val_acc):
            continue
        if val_acc > best:
            best, bad = val_acc, 0
        else:
            bad += 1
        if bad >= config.patience:
            break
    return (tracker.state if tracker.state is not None else head), hist


def labeled_split(graph: TextGraph, split: str) -> np.ndarray:
    idx = graph.nodes_in(split)
    return idx[graph.labels[idx] >= 0]


def extra_round(state: ModelState, data: TrainData, config: TrainConfig, round_index: int | None = None):
    """Freeze the encoder and fit only the classification head.

    Returns the best-validation state and the round's history.
    """
    graph = data.graph
    round_index = config.depth + 1 if round_index is None else round_index
    train_idx = labeled_split(graph, "train")
    if not len(train_idx):
        raise ConfigError("extra round needs labeled training nodes")
    val_idx = labeled_split(graph, "valid")
    z = embed(state, data.docs)
    labels = np.where(graph.labels >= 0, graph.labels, 0)
    head = MLPHead(np.zeros((state.hidden_dim, 0)), np.zeros(0), state.w_cls, state.b_cls)
    head, hist = fit_head(head, z, labels, train_idx, val_idx, config, round_index, 606, "multitask", data.fingerprint)
    out = state.copy()
    out.w_cls = head.w_out.copy()
    out.b_cls = head.b_out.copy()
    return out, hist


# -- curriculum ------------------------------------------------------------------


def new_model(data: TrainData, config: TrainConfig) -> ModelState:
    return init_model(
        len(data.vocab), config.embed_dim, config.hidden_dim, max(data.graph.num_classes, 1),
        config.dropout, config.seed, config.branching,
    )


def run_curriculum(
    data: TrainData,
    hlt: HierLabelTree | None,
    config: TrainConfig,
    *,
    main_task: bool = True,
    use_nbr: bool = True,
    patience: int | None = None,
    kind: str = "multitask",
    initial: ModelState | None = None,
) -> tuple[ModelState, TrainHistory]:
    """Train through HLT depths ``1..D`` and return the best-validation state.

    ``main_task=False`` runs pure neighborhood prediction (no label access) and
    returns the final state. ``use_nbr=False`` trains classification only.
    """
    config.validate()
    if use_nbr and hlt is None:
        raise ConfigError("neighborhood prediction needs an HLT")
    if hlt is not None and hlt.depth < config.depth:
        raise ConfigError(f"HLT depth {hlt.depth} < configured depth {config.depth}")
    state = initial.copy() if initial is not None else new_model(data, config)
    history = TrainHistory(kind=kind, fingerprint=data.fingerprint)
    tracker = BestTracker()
    for d in range(1, config.depth + 1):
        targets = None
        if use_nbr:
            state = init_round_heads(state, hlt, d, config.warm_start, config.seed)
            targets = project_targets(data.graph.adjacency, hlt, d)
        state, rows = train_round(
            state, data, targets, config, d,
            main_task=main_task, tracker=tracker, patience=patience, kind=kind,
        )
        history.extend(rows)
    if config.extra_round and main_task:
        before = split_accuracy(predict(state, data.docs), data.graph, "valid")
        state, rows = extra_round(state, data, config)
        rows.kind = kind
        after = max((r.val_acc for r in rows.rows), default=float("nan"))
        history.extend(rows)
        history.extras.update(val_before_extra=before, val_after_extra=after)
        tracker.offer(after, state)
    if not main_task or tracker.state is None:
        return state, history
    return tracker.state, history


def config_from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown TrainConfig keys {sorted(unknown)}")
    return replace(TrainConfig(), **values)


def predictions(state: ModelState, data: TrainData) -> np.ndarray:
    return predict(state, data.docs)


def accuracies(preds: np.ndarray, graph: TextGraph, splits: Sequence[str] = ("train", "valid", "test")) -> dict[str, float]:
    return {s: split_accuracy(preds, graph, s) for s in splits}
