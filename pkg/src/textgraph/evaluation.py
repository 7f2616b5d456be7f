"""Metrics, multi-seed experiments and disagreement analysis."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import train_degree_mlp, train_text_only, train_two_stage
from .config import ExperimentConfig, config_to_text
from .graph import TextGraph, generate_synthetic, k_hop_neighborhood, load_graph, save_graph, split_nodes
from .hlt import build_hlt
from .model import save_checkpoint, save_head
from .trainer import TrainHistory, accuracies, predictions, prepare_data, run_curriculum

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("row_type", "kind", "mode", "seed", "split", "accuracy", "std", "n", "status")


def accuracy(preds, gold, mask) -> float:
    """Fraction of masked nodes predicted correctly.

    ``mask`` is either a boolean vector or an array of node indices.
    """
    preds, gold = np.asarray(preds), np.asarray(gold)
    if preds.shape != gold.shape:
        raise ValueError("preds and gold differ in length")
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if not len(idx):
        raise ValueError("empty evaluation mask")
    return float(np.mean(preds[idx] == gold[idx]))


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single value."""
    if not len(values):
        raise ValueError("aggregate needs at least one value")
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))


# -- result table ----------------------------------------------------------------


@dataclass
class ResultRow:
    kind: str
    mode: str
    seed: int
    split: str
    accuracy: float
    status: str = "ok"


@dataclass
class AggregateRow:
    kind: str
    mode: str
    split: str
    mean: float
    std: float
    n: int


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def aggregates(self) -> list[AggregateRow]:
        groups: dict[tuple[str, str, str], list[float]] = {}
        for r in self.rows:
            key = (r.kind, r.mode, r.split)
            groups.setdefault(key, [])
            if r.status == "ok":
                groups[key].append(r.accuracy)
        out = []
        for (kind, mode, split), vals in groups.items():
            mean, std = aggregate(vals) if vals else (float("nan"), float("nan"))
            out.append(AggregateRow(kind, mode, split, mean, std, len(vals)))
        return out

    def accuracies(self, kind: str, split: str = "test") -> list[float]:
        return [r.accuracy for r in self.rows if r.kind == kind and r.split == split and r.status == "ok"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.rows:
            w.writerow(["run", r.kind, r.mode, r.seed, r.split, repr(r.accuracy), "", 1, r.status])
        for a in self.aggregates():
            w.writerow(["aggregate", a.kind, a.mode, "", a.split, repr(a.mean), repr(a.std), a.n, "ok"])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | Path) -> tuple[ResultTable, list[AggregateRow]]:
        table, aggs = cls(), []
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                if r["row_type"] == "run":
                    table.rows.append(ResultRow(r["kind"], r["mode"], int(r["seed"]), r["split"],
                                                float(r["accuracy"]), r["status"]))
                else:
                    aggs.append(AggregateRow(r["kind"], r["mode"], r["split"], float(r["accuracy"]),
                                             float(r["std"]), int(r["n"])))
        return table, aggs

    def to_markdown(self) -> str:
        lines = ["| kind | mode | split | mean acc (%) | std | runs |", "|---|---|---|---|---|---|"]
        for a in self.aggregates():
            lines.append(f"| {a.kind} | {a.mode} | {a.split} | {100 * a.mean:.2f} | {100 * a.std:.2f} | {a.n} |")
        return "\n".join(lines) + "\n"


# -- disagreement analysis -------------------------------------------------------


@dataclass
class DisagreementReport:
    a_over_b: list[int]
    b_over_a: list[int]
    both_wrong: list[int]
    samples: dict[int, dict]

    def to_json(self) -> str:
        return json.dumps(
            {
                "a_over_b": self.a_over_b,
                "b_over_a": self.b_over_a,
                "both_wrong": self.both_wrong,
                "samples": {str(k): v for k, v in self.samples.items()},
            },
            indent=2,
            sort_keys=True,
        )


def disagreement_samples(
    preds_a: Mapping[int, np.ndarray],
    preds_b: Mapping[int, np.ndarray],
    gold: np.ndarray,
    nodes: Sequence[int],
    graph: TextGraph | None = None,
    k: int = 2,
) -> DisagreementReport:
    """Nodes on which every seed of one model is right and every seed of the other wrong.

    ``preds_a`` / ``preds_b`` map seed -> per-node predictions. ``both_wrong``
    collects nodes missed by every seed of both models. With a graph, each
    reported node carries its text, predictions and the gold-class histogram of
    its ``k``-hop neighborhood.
    """
    if not preds_a or not preds_b:
        raise ValueError("each model needs predictions for at least one seed")
    if set(preds_a) != set(preds_b):
        raise ValueError("models cover different seeds")
    gold = np.asarray(gold)
    nodes = np.asarray(nodes, dtype=np.int64)
    for preds in list(preds_a.values()) + list(preds_b.values()):
        if len(preds) != len(gold):
            raise ValueError("a prediction vector does not cover every node")
    seeds = sorted(preds_a)
    ok_a = np.all([np.asarray(preds_a[s])[nodes] == gold[nodes] for s in seeds], axis=0)
    bad_a = np.all([np.asarray(preds_a[s])[nodes] != gold[nodes] for s in seeds], axis=0)
    ok_b = np.all([np.asarray(preds_b[s])[nodes] == gold[nodes] for s in seeds], axis=0)
    bad_b = np.all([np.asarray(preds_b[s])[nodes] != gold[nodes] for s in seeds], axis=0)
    a_over_b = nodes[ok_a & bad_b].tolist()
    b_over_a = nodes[ok_b & bad_a].tolist()
    both_wrong = nodes[bad_a & bad_b].tolist()

    samples = {}
    if graph is not None:
        for v in a_over_b + b_over_a + both_wrong:
            hood = sorted(k_hop_neighborhood(graph, v, k))
            hist = Counter(int(gold[u]) for u in hood if gold[u] >= 0)
            samples[v] = {
                "text": graph.texts[v],
                "gold": int(gold[v]),
                "pred_a": [int(preds_a[s][v]) for s in seeds],
                "pred_b": [int(preds_b[s][v]) for s in seeds],
                "neighborhood_size": len(hood),
                "neighborhood_classes": {str(c): n for c, n in sorted(hist.items())},
            }
    return DisagreementReport(a_over_b, b_over_a, both_wrong, samples)


# -- experiments -------------------------------------------------------------------


def experiment_graph(cfg: ExperimentConfig) -> TextGraph:
    if cfg.uses_files:
        graph = load_graph(cfg.nodes_path, cfg.edges_path)
        return split_nodes(graph, cfg.split, cfg.data_seed) if cfg.resplit else graph
    return split_nodes(generate_synthetic(cfg.synth, cfg.data_seed), cfg.split, cfg.data_seed)


@dataclass
class RunOutcome:
    kind: str
    seed: int
    preds: np.ndarray
    accuracies: dict[str, float]
    history: TrainHistory


def train_kind(kind: str, data, train_cfg):
    """Train one model kind; returns (predictions, history, artifact writer)."""
    if kind in ("multitask", "two_stage"):
        hlt = build_hlt(data.features, train_cfg.branching, train_cfg.depth, train_cfg.seed)
    if kind == "multitask":
        state, hist = run_curriculum(data, hlt, train_cfg)
        return predictions(state, data), hist, lambda p: save_checkpoint(state, p / "model.ckpt")
    if kind == "text_only":
        state, hist = train_text_only(data, train_cfg)
        return predictions(state, data), hist, lambda p: save_checkpoint(state, p / "model.ckpt")
    if kind == "two_stage":
        model, hist = train_two_stage(data, hlt, train_cfg)

        def write(p):
            save_checkpoint(model.encoder, p / "model.ckpt")
            save_head(model.head, p / "head.bin")

        return model.predict(data), hist, write
    if kind == "degree_mlp":
        clf, hist = train_degree_mlp(data, train_cfg)
        return clf.predict(data.graph), hist, lambda p: save_head(clf.head, p / "head.bin")
    raise ValueError(f"unknown model kind {kind!r}")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ResultTable:
    """Train every (kind, seed) pair and evaluate on every split.

    Artifacts land in ``cfg.out_dir``: ``results.csv``, ``runs.csv``,
    ``summary.md``, the dataset used, and per-run directories with history,
    predictions and checkpoints. A failing run is recorded as ``failed`` and
    the remaining runs proceed.
    """
    cfg.validate()
    graph = experiment_graph(cfg)
    data = prepare_data(graph, cfg.train)
    out = Path(cfg.out_dir)
    if write:
        (out / "data").mkdir(parents=True, exist_ok=True)
        save_graph(graph, out / "data" / "nodes.tsv", out / "data" / "edges.tsv")
        (out / "data" / "vocab.txt").write_text(data.vocab.to_text(), encoding="utf-8")
        (out / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")

    table = ResultTable()
    run_lines = [["kind", "seed", "train_acc", "valid_acc", "test_acc", "best_round", "total_rounds",
                  "val_before_extra", "val_after_extra", "fingerprint"]]
    for kind in cfg.kinds:
        for seed in cfg.seeds:
            train_cfg = replace(cfg.train, seed=seed)
            t0 = time.perf_counter()
            try:
                preds, hist, writer = train_kind(kind, data, train_cfg)
            except Exception as exc:  # recorded, not fatal
                log.warning("run %s seed %d failed: %s", kind, seed, exc)
                for split in cfg.report_splits:
                    table.rows.append(ResultRow(kind, cfg.train.mode, seed, split, float("nan"), "failed"))
                run_lines.append([kind, seed, "", "", "", "", "", "", "", f"failed: {exc}"])
                continue
            accs = accuracies(preds, graph)
            log.info("%s seed %d: %s (%.1fs)", kind, seed, accs, time.perf_counter() - t0)
            for split in cfg.report_splits:
                table.rows.append(ResultRow(kind, cfg.train.mode, seed, split, accs[split]))
            rounds = sorted({r.round for r in hist.rows})
            run_lines.append([
                kind, seed, repr(accs["train"]), repr(accs["valid"]), repr(accs["test"]),
                hist.best_round() or "", len(rounds),
                repr(hist.extras.get("val_before_extra", "")) if "val_before_extra" in hist.extras else "",
                repr(hist.extras.get("val_after_extra", "")) if "val_after_extra" in hist.extras else "",
                hist.fingerprint,
            ])
            if write:
                run_dir = out / f"{kind}_seed{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                hist.write_csv(run_dir / "history.csv")
                (run_dir / "predictions.csv").write_text(
                    "node,pred\n" + "".join(f"{i},{int(p)}\n" for i, p in enumerate(preds)), encoding="utf-8"
                )
                writer(run_dir)
    if write:
        table.write_csv(out / "results.csv")
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(run_lines)
        (out / "runs.csv").write_text(buf.getvalue(), encoding="utf-8")
        (out / "summary.md").write_text(summary_markdown(cfg, table), encoding="utf-8")
    return table


def summary_markdown(cfg: ExperimentConfig, table: ResultTable) -> str:
    src = f"files {cfg.nodes_path}, {cfg.edges_path}" if cfg.uses_files else f"synthetic {cfg.synth}"
    lines = [
        "# Experiment summary",
        "",
        f"- data: {src}",
        f"- mode: {cfg.train.mode}",
        f"- seeds: {', '.join(map(str, cfg.seeds))}",
        "- degree_mlp is a perceptron on degree features, not a message-passing GNN.",
        "",
        table.to_markdown(),
    ]
    failed = [r for r in table.rows if r.status != "ok"]
    if failed:
        lines += ["", "Failed runs: " + ", ".join(f"{r.kind}/seed{r.seed}" for r in failed)]
    return "\n".join(lines) + "\n"


def read_predictions(path: str | Path) -> np.ndarray:
    rows = Path(path).read_text(encoding="utf-8").split("\n")[1:]
    pairs = [tuple(map(int, r.split(","))) for r in rows if r]
    out = np.empty(len(pairs), dtype=np.int64)
    for node, pred in pairs:
        out[node] = pred
    return out


def compare_kinds(table: ResultTable, a: str, b: str, split: str = "test") -> dict[str, float]:
    """Medians and means of two kinds over seeds, with the (a - b) differences in points."""
    va, vb = table.accuracies(a, split), table.accuracies(b, split)
    if not va or not vb:
        raise ValueError(f"no successful runs for {a!r} or {b!r}")
    return {
        "median_a": statistics.median(va),
        "median_b": statistics.median(vb),
        "median_delta_points": 100 * (statistics.median(va) - statistics.median(vb)),
        "mean_delta_points": 100 * (aggregate(va)[0] - aggregate(vb)[0]),
    }
