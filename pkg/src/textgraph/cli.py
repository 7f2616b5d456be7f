"""Command-line interface.

    textgraph gen-synth --config exp.cfg --out-dir data/
    textgraph featurize --nodes data/nodes.tsv --out-dir feats/
    textgraph build-hlt --features feats/features.txt --out-dir feats/
    textgraph train --config exp.cfg --out-dir run/
    textgraph eval --checkpoint run/model.ckpt --vocab run/vocab.txt --nodes ... --edges ...
    textgraph run --config exp.cfg --out-dir results/
    textgraph compare --results results/results.csv --a multitask --b text_only
    textgraph explain --run-dir results/ --a multitask --b text_only
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .evaluation import (
    ResultTable,
    compare_kinds,
    disagreement_samples,
    experiment_graph,
    read_predictions,
    run_experiment,
    train_kind,
)
from .features import Vocabulary, build_vocab, tfidf, tokenize
from .graph import load_graph, save_graph
from .hlt import build_hlt
from .model import load_checkpoint, predict
from .sparse import read_sparse, write_sparse
from .trainer import accuracies, prepare_data

log = logging.getLogger("textgraph")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the seed (run: single-seed experiment)")
    p.add_argument("--mode", choices=("transductive", "inductive"))
    p.add_argument("--delay-rounds", type=int)
    p.add_argument("--extra-round", action="store_true", default=None)
    p.add_argument("--out-dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    train = cfg.train
    if args.mode is not None:
        train = replace(train, mode=args.mode)
    if args.delay_rounds is not None:
        train = replace(train, delay_rounds=args.delay_rounds)
    if args.extra_round:
        train = replace(train, extra_round=True)
    if args.seed is not None:
        train = replace(train, seed=args.seed)
        cfg = replace(cfg, seeds=(args.seed,))
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    return replace(cfg, train=train)


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_synth(args) -> int:
    cfg = _experiment(args)
    out = _out(cfg)
    graph = experiment_graph(replace(cfg, nodes_path="", edges_path="",
                                     data_seed=args.seed if args.seed is not None else cfg.data_seed))
    save_graph(graph, out / "nodes.tsv", out / "edges.tsv")
    print(f"wrote {graph} to {out}")
    return 0


def _node_tokens(nodes_path: str) -> list[list[str]]:
    texts = []
    for line in Path(nodes_path).read_text(encoding="utf-8").split("\n"):
        if line:
            texts.append(line.split("\t")[3])
    return [tokenize(t) for t in texts]


def cmd_featurize(args) -> int:
    cfg = _experiment(args)
    out = _out(cfg)
    tokens = _node_tokens(args.nodes)
    vocab = build_vocab(tokens, cfg.train.min_df, cfg.train.max_features)
    write_sparse(tfidf(tokens, vocab), out / "features.txt")
    (out / "vocab.txt").write_text(vocab.to_text(), encoding="utf-8")
    print(f"{len(tokens)} documents, {len(vocab)} tokens -> {out / 'features.txt'}")
    return 0


def cmd_build_hlt(args) -> int:
    cfg = _experiment(args)
    out = _out(cfg)
    hlt = build_hlt(read_sparse(args.features), cfg.train.branching, cfg.train.depth, cfg.train.seed)
    hlt.save(out / "hlt.txt")
    print(f"HLT depth {hlt.depth}, branching {hlt.branching} -> {out / 'hlt.txt'}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment(args)
    cfg.validate()
    out = _out(cfg)
    graph = experiment_graph(cfg)
    data = prepare_data(graph, cfg.train)
    preds, hist, writer = train_kind(args.kind, data, cfg.train)
    writer(out)
    hist.write_csv(out / "history.csv")
    (out / "vocab.txt").write_text(data.vocab.to_text(), encoding="utf-8")
    save_graph(graph, out / "nodes.tsv", out / "edges.tsv")
    accs = accuracies(preds, graph)
    print(json.dumps({"kind": args.kind, "seed": cfg.train.seed, **accs}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.from_text(Path(args.vocab).read_text(encoding="utf-8"))
    graph = load_graph(args.nodes, args.edges)
    docs = [vocab.encode(tokenize(t)) for t in graph.texts]
    preds = predict(state, docs)
    print(json.dumps(accuracies(preds, graph), sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    table, _ = ResultTable.read_csv(args.results)
    print(table.to_markdown())
    if args.a and args.b:
        print(json.dumps(compare_kinds(table, args.a, args.b, args.split), sort_keys=True))
    return 0


def cmd_explain(args) -> int:
    run_dir = Path(args.run_dir)
    graph = load_graph(run_dir / "data" / "nodes.tsv", run_dir / "data" / "edges.tsv")

    def load(kind):
        return {
            int(p.name.rsplit("seed", 1)[1]): read_predictions(p / "predictions.csv")
            for p in sorted(run_dir.glob(f"{kind}_seed*"))
        }

    gold = graph.labels
    report = disagreement_samples(load(args.a), load(args.b), gold, graph.nodes_in(args.split), graph)
    target = Path(args.output) if args.output else run_dir / f"explain_{args.a}_vs_{args.b}.json"
    target.write_text(report.to_json(), encoding="utf-8")
    print(f"{args.a} over {args.b}: {len(report.a_over_b)}; {args.b} over {args.a}: "
          f"{len(report.b_over_a)}; both wrong: {len(report.both_wrong)} -> {target}")
    return 0


def cmd_run(args) -> int:
    cfg = _experiment(args)
    table = run_experiment(cfg)
    print(table.to_markdown())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="textgraph", description="Multi-task node classification on text-attributed graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-synth", parents=[common], help="write a synthetic graph").set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("featurize", parents=[common], help="TF-IDF features of a node file")
    p.add_argument("--nodes", required=True)
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("build-hlt", parents=[common], help="hierarchical label tree from features")
    p.add_argument("--features", required=True)
    p.set_defaults(fn=cmd_build_hlt)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--kind", default="multitask", choices=("multitask", "text_only", "degree_mlp", "two_stage"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate an encoder checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="aggregate a results table")
    p.add_argument("--results", required=True)
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("explain", parents=[common], help="disagreement analysis between two kinds")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_explain)

    sub.add_parser("run", parents=[common], help="full multi-seed experiment").set_defaults(fn=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
