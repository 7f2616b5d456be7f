"""End-to-end multi-task node classification for text-attributed graphs."""
from .features import Vocabulary, build_vocab, tfidf, tokenize
from .graph import SynthSpec, TextGraph, generate_synthetic, k_hop_neighborhood, load_graph, split_nodes
from .hlt import HierLabelTree, balanced_split, build_hlt, project_targets
from .model import ModelState, init_model
from .trainer import TrainConfig, prepare_data, run_curriculum

__all__ = [
    "HierLabelTree", "ModelState", "SynthSpec", "TextGraph", "TrainConfig", "Vocabulary",
    "balanced_split", "build_hlt", "build_vocab", "generate_synthetic", "init_model",
    "k_hop_neighborhood", "load_graph", "prepare_data", "project_targets", "run_curriculum",
    "split_nodes", "tfidf", "tokenize",
]
