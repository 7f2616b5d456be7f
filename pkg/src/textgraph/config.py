"""Experiment configuration and the flat ``key = value`` config file format.

Example::

    # data
    synth_n = 600
    synth_text_ambiguity = 0.7
    split_train = 0.2
    split_valid = 0.2
    split_test = 0.6
    # training
    depth = 4
    epochs_per_round = 10
    kinds = multitask, text_only, two_stage
    seeds = 0, 1, 2, 3, 4

Keys are TrainConfig fields, ``synth_``-prefixed SynthSpec fields, or the
experiment keys below. Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .graph import SynthSpec
from .trainer import ConfigError, TrainConfig

MODEL_KINDS = ("multitask", "text_only", "degree_mlp", "two_stage")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    kinds: tuple[str, ...] = ("multitask",)
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    nodes_path: str = ""
    edges_path: str = ""
    synth: SynthSpec = field(default_factory=SynthSpec)
    data_seed: int = 0
    split: tuple[float, float, float] = (0.2, 0.2, 0.6)
    resplit: bool = False
    report_splits: tuple[str, ...] = ("test",)

    @property
    def uses_files(self) -> bool:
        return bool(self.nodes_path)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.kinds:
            raise ConfigError("at least one model kind is required")
        bad = [k for k in self.kinds if k not in MODEL_KINDS]
        if bad:
            raise ConfigError(f"unknown model kinds {bad}; choose from {MODEL_KINDS}")
        if len(set(self.kinds)) != len(self.kinds) or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("kinds and seeds must not repeat")
        if bool(self.nodes_path) != bool(self.edges_path):
            raise ConfigError("nodes_path and edges_path go together")
        for s in self.report_splits:
            if s not in ("train", "valid", "test"):
                raise ConfigError(f"unknown report split {s!r}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        self.train.validate()
        if not self.uses_files:
            try:
                self.synth.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None


_EXPERIMENT_KEYS = {
    "kinds", "seeds", "out_dir", "nodes_path", "edges_path", "data_seed",
    "split_train", "split_valid", "split_test", "resplit", "report_splits",
}


_SCALARS = {"bool": bool, "int": int, "float": float, "str": str}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _coerce(raw: str, typ, key: str):
    if isinstance(typ, str):
        typ = _SCALARS.get(typ, typ)  # annotations are strings under postponed evaluation
    try:
        if typ is bool:
            return _parse_bool(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported type {typ!r}")


def _split_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def experiment_from_mapping(values: dict[str, str]) -> ExperimentConfig:
    train_types = {f.name: f.type for f in fields(TrainConfig)}
    synth_types = {f.name: f.type for f in fields(SynthSpec)}
    train_kw, synth_kw, exp_kw = {}, {}, {}
    split = list(ExperimentConfig().split)
    for key, raw in values.items():
        if key in train_types:
            train_kw[key] = _coerce(raw, train_types[key], key)
        elif key.startswith("synth_") and key[6:] in synth_types:
            synth_kw[key[6:]] = _coerce(raw, synth_types[key[6:]], key)
        elif key in _EXPERIMENT_KEYS:
            if key == "kinds":
                exp_kw["kinds"] = tuple(_split_list(raw))
            elif key == "report_splits":
                exp_kw["report_splits"] = tuple(_split_list(raw))
            elif key == "seeds":
                try:
                    exp_kw["seeds"] = tuple(int(s) for s in _split_list(raw))
                except ValueError:
                    raise ConfigError(f"seeds: cannot parse {raw!r}") from None
            elif key.startswith("split_"):
                split[("split_train", "split_valid", "split_test").index(key)] = _coerce(raw, float, key)
            elif key == "data_seed":
                exp_kw[key] = _coerce(raw, int, key)
            elif key == "resplit":
                exp_kw[key] = _parse_bool(raw)
            else:
                exp_kw[key] = raw
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ExperimentConfig(
        train=replace(TrainConfig(), **train_kw),
        synth=replace(SynthSpec(), **synth_kw),
        split=tuple(split),
        **exp_kw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    return experiment_from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))


def config_to_text(cfg: ExperimentConfig) -> str:
    """Inverse of ``load_config`` (every key written explicitly)."""
    lines = [f"{f.name} = {getattr(cfg.train, f.name)}" for f in fields(TrainConfig)]
    lines += [f"synth_{f.name} = {getattr(cfg.synth, f.name)}" for f in fields(SynthSpec)]
    lines += [
        f"kinds = {', '.join(cfg.kinds)}",
        f"seeds = {', '.join(map(str, cfg.seeds))}",
        f"out_dir = {cfg.out_dir}",
        f"data_seed = {cfg.data_seed}",
        f"split_train = {cfg.split[0]!r}",
        f"split_valid = {cfg.split[1]!r}",
        f"split_test = {cfg.split[2]!r}",
        f"resplit = {cfg.resplit}",
        f"report_splits = {', '.join(cfg.report_splits)}",
    ]
    if cfg.nodes_path:
        lines += [f"nodes_path = {cfg.nodes_path}", f"edges_path = {cfg.edges_path}"]
    return "\n".join(lines) + "\n"
