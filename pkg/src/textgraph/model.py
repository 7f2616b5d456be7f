"""Text encoder with a neighborhood-prediction head and a classification head.

The encoder averages token embeddings, applies one affine layer, ReLU and
inverted dropout. All gradients are derived by hand; ``numerical_gradient``
provides a central-difference check.

Forward products go through ``_rowwise`` (a plain einsum) so that a sample's
activations are bitwise independent of which other samples share its batch.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .hlt import HierLabelTree

PARAM_NAMES = ("embeddings", "w1", "b1", "w_nbr", "w_cls", "b_cls")
ENCODER_PARAMS = ("embeddings", "w1", "b1")
HEAD_PARAMS = ("w_cls", "b_cls")
_MAGIC = "textgraph-checkpoint-v1"


@dataclass
class ModelState:
    embeddings: np.ndarray  # |V| x e
    w1: np.ndarray  # e x h
    b1: np.ndarray  # h
    w_nbr: np.ndarray  # h x B**depth, no bias
    w_cls: np.ndarray  # h x C
    b_cls: np.ndarray  # C
    dropout: float = 0.1
    depth: int = 0
    branching: int = 2
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w_cls.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> ModelState:
        return copy.deepcopy(self)

    def encoder_bytes(self) -> bytes:
        return b"".join(getattr(self, k).tobytes() for k in ENCODER_PARAMS)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(
    vocab_size: int,
    embed_dim: int,
    hidden_dim: int,
    num_classes: int,
    dropout: float = 0.1,
    seed: int = 0,
    branching: int = 2,
) -> ModelState:
    """Fresh parameters: embeddings ~ N(0, 0.02), everything else U(+-1/sqrt(fan_in))."""
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    return ModelState(
        embeddings=rng.normal(0.0, 0.02, size=(vocab_size, embed_dim)),
        w1=_uniform(rng, embed_dim, (embed_dim, hidden_dim)),
        b1=_uniform(rng, embed_dim, hidden_dim),
        w_nbr=np.zeros((hidden_dim, 0)),
        w_cls=_uniform(rng, hidden_dim, (hidden_dim, num_classes)),
        b_cls=_uniform(rng, hidden_dim, num_classes),
        dropout=dropout,
        depth=0,
        branching=branching,
        seed=seed,
    )


def init_round_heads(state: ModelState, hlt: HierLabelTree, d: int, warm_start: bool = True, seed: int = 0) -> ModelState:
    """Resize the neighborhood head for depth ``d``; the encoder and classifier carry over.

    With ``warm_start`` each child column starts as a copy of its parent's
    column from depth ``d - 1``. Depth 1 always gets a seeded uniform init.
    """
    if not 1 <= d <= hlt.depth:
        raise ValueError(f"depth {d} outside 1..{hlt.depth}")
    h, k = state.hidden_dim, hlt.num_clusters(d)
    new = state.copy()
    if warm_start and d > 1:
        if state.w_nbr.shape[1] != hlt.num_clusters(d - 1):
            raise ValueError("warm start needs the previous depth's head")
        new.w_nbr = state.w_nbr[:, hlt.parent(np.arange(k))].copy()
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 202, d]))
        new.w_nbr = _uniform(rng, h, (h, k))
    new.depth = d
    new.branching = hlt.branching
    return new


def _rowwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk->ik", a, b)


def bag_matrix(docs: Sequence[np.ndarray], vocab_size: int) -> sp.csr_matrix:
    """Row ``i`` holds the token-averaging weights of document ``i``."""
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for doc in docs:
        doc = np.asarray(doc, dtype=np.int64)
        if len(doc) and (doc.min() < 0 or doc.max() >= vocab_size):
            raise IndexError("token index out of range")
        cols, counts = np.unique(doc, return_counts=True)
        indices.append(cols)
        data.append(counts / max(len(doc), 1))
        indptr.append(indptr[-1] + len(cols))
    return sp.csr_matrix(
        (
            np.concatenate(data) if data else np.zeros(0),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
            np.array(indptr),
        ),
        shape=(len(docs), vocab_size),
    )


@dataclass
class ForwardCache:
    bags: sp.csr_matrix
    mean: np.ndarray  # b x e
    pre: np.ndarray  # b x h, before ReLU
    mask: np.ndarray | None  # inverted-dropout multipliers, None when off
    z: np.ndarray  # b x h


def encode_batch(
    state: ModelState,
    docs: Sequence[np.ndarray],
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
) -> ForwardCache:
    """Encode a batch of token-index arrays. ``mask`` replays a cached dropout mask."""
    bags = bag_matrix(docs, state.vocab_size)
    mean = np.asarray(bags @ state.embeddings)
    pre = _rowwise(mean, state.w1) + state.b1
    z = np.maximum(pre, 0.0)
    if mask is None and train_mode and state.dropout > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = rng.random(z.shape) >= state.dropout
        mask = keep / (1.0 - state.dropout)
    if mask is not None:
        z = z * mask
    return ForwardCache(bags, mean, pre, mask, z)


def encode(state: ModelState, tokens, train_mode: bool = False, rng=None) -> np.ndarray:
    return encode_batch(state, [np.asarray(tokens, dtype=np.int64)], train_mode, rng).z[0]


def nbr_scores(state: ModelState, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != state.w_nbr.shape[0]:
        raise ValueError(f"embedding width {z.shape[-1]} != head input {state.w_nbr.shape[0]}")
    if z.ndim == 1:
        return _rowwise(z[None, :], state.w_nbr)[0]
    return _rowwise(z, state.w_nbr)


def cls_logits(state: ModelState, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != state.w_cls.shape[0]:
        raise ValueError(f"embedding width {z.shape[-1]} != head input {state.w_cls.shape[0]}")
    if z.ndim == 1:
        return _rowwise(z[None, :], state.w_cls)[0] + state.b_cls
    return _rowwise(z, state.w_cls) + state.b_cls


# -- losses ------------------------------------------------------------------


def squared_hinge_batch(scores: np.ndarray, signs: np.ndarray, pos_weight: float = 1.0):
    """Per-sample weighted squared hinge, mean over labels, and d(loss)/d(scores).

    ``signs`` is +1 for target labels and -1 otherwise.
    """
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    k = scores.shape[-1]
    w = np.where(signs > 0, pos_weight, 1.0)
    slack = np.maximum(0.0, 1.0 - signs * scores)
    losses = (w * slack * slack).sum(axis=-1) / k
    grad = -2.0 * w * slack * signs / k
    return losses, grad


def squared_hinge_loss(scores, target, pos_weight: float = 1.0) -> tuple[float, np.ndarray]:
    """``target`` is a collection of positive label indices."""
    scores = np.asarray(scores, dtype=np.float64)
    signs = -np.ones_like(scores)
    signs[list(target)] = 1.0
    loss, grad = squared_hinge_batch(scores[None, :], signs[None, :], pos_weight)
    return float(loss[0]), grad[0]


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    c = logits.shape[-1]
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(len(labels))
    losses = logsumexp - shifted[rows, labels]
    grad = np.exp(shifted - logsumexp[:, None])
    grad[rows, labels] -= 1.0
    return losses, grad


def cross_entropy_loss(logits, label: int) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    loss, grad = cross_entropy_batch(logits[None, :], np.array([label]))
    return float(loss[0]), grad[0]


# -- composite objective -----------------------------------------------------


@dataclass
class Batch:
    """Samples of one optimizer step.

    ``signs`` holds +-1 neighborhood targets (rows of unused samples are
    ignored); ``labels`` holds class ids (ignored where ``use_main`` is off).
    """

    docs: list[np.ndarray]
    signs: np.ndarray | None
    labels: np.ndarray
    use_nbr: np.ndarray
    use_main: np.ndarray
    node_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.docs)


def zero_grads(state: ModelState) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in state.params().items()}


def _encoder_backward(state: ModelState, cache: ForwardCache, rows: np.ndarray, dz: np.ndarray, grads: dict) -> None:
    if cache.mask is not None:
        dz = dz * cache.mask[rows]
    dpre = dz * (cache.pre[rows] > 0)
    grads["w1"] += cache.mean[rows].T @ dpre
    grads["b1"] += dpre.sum(axis=0)
    dmean = dpre @ state.w1.T
    grads["embeddings"] += np.asarray(cache.bags[rows].T @ dmean)


def path_gradients(
    state: ModelState,
    cache: ForwardCache | None,
    batch: Batch,
    path: str,
    lam: float = 1.0,
    pos_weight: float = 1.0,
    denom: float | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients of one task ("nbr" or "main") over its active samples.

    Only rows whose mask is on enter the computation, so samples with the mask
    off contribute exactly nothing, whatever else is in the batch.
    """
    if cache is None:
        raise ValueError("backward needs the forward cache")
    denom = float(len(batch)) if denom is None else float(denom)
    grads = zero_grads(state)
    if path == "nbr":
        rows = np.flatnonzero(batch.use_nbr)
        if not len(rows):
            return 0.0, grads
        z = cache.z[rows]
        losses, ds = squared_hinge_batch(_rowwise(z, state.w_nbr), batch.signs[rows], pos_weight)
        ds = ds / denom
        grads["w_nbr"] += z.T @ ds
        dz = ds @ state.w_nbr.T
        loss = float(losses.sum()) / denom
    elif path == "main":
        rows = np.flatnonzero(batch.use_main)
        if not len(rows) or lam == 0:
            return 0.0, grads
        z = cache.z[rows]
        losses, dl = cross_entropy_batch(_rowwise(z, state.w_cls) + state.b_cls, batch.labels[rows])
        dl = dl * (lam / denom)
        grads["w_cls"] += z.T @ dl
        grads["b_cls"] += dl.sum(axis=0)
        dz = dl @ state.w_cls.T
        loss = lam * float(losses.sum()) / denom
    else:
        raise ValueError(f"unknown path {path!r}")
    _encoder_backward(state, cache, rows, dz, grads)
    return loss, grads


def backward(state, cache, batch, lam=1.0, pos_weight=1.0, denom=None):
    """Composite loss ``L_nbr + lam * L_cls`` and the sum of both paths' gradients."""
    ln, gn = path_gradients(state, cache, batch, "nbr", lam, pos_weight, denom)
    lm, gm = path_gradients(state, cache, batch, "main", lam, pos_weight, denom)
    return ln + lm, {k: gn[k] + gm[k] for k in gn}, (ln, lm)


def composite_loss(state, batch, lam=1.0, pos_weight=1.0, denom=None, mask=None) -> float:
    """Scalar objective re-evaluated from scratch (for finite differences)."""
    cache = encode_batch(state, batch.docs, mask=mask)
    ln, _ = path_gradients(state, cache, batch, "nbr", lam, pos_weight, denom)
    lm, _ = path_gradients(state, cache, batch, "main", lam, pos_weight, denom)
    return ln + lm


def numerical_gradient(state: ModelState, batch: Batch, step: float = 1e-3, names=PARAM_NAMES, **kw) -> dict[str, np.ndarray]:
    """Central differences of ``composite_loss`` for every entry of each parameter."""
    probe = state.copy()
    out = {}
    for name in names:
        p = getattr(probe, name)
        g = np.zeros_like(p)
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + step
            up = composite_loss(probe, batch, **kw)
            flat_p[j] = orig - step
            down = composite_loss(probe, batch, **kw)
            flat_p[j] = orig
            flat_g[j] = (up - down) / (2 * step)
        out[name] = g
    return out


def predict(state: ModelState, docs: Sequence[np.ndarray]) -> np.ndarray:
    """Argmax class per document; ties go to the smallest class id."""
    if not len(docs):
        return np.zeros(0, dtype=np.int64)
    z = encode_batch(state, docs).z
    return np.argmax(cls_logits(state, z), axis=1)


def embed(state: ModelState, docs: Sequence[np.ndarray]) -> np.ndarray:
    return encode_batch(state, docs).z


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Text header line, then little-endian float64 arrays in PARAM_NAMES order."""
    header = (
        f"{_MAGIC} vocab={state.vocab_size} embed={state.embed_dim} hidden={state.hidden_dim} "
        f"classes={state.num_classes} nbr_cols={state.w_nbr.shape[1]} depth={state.depth} "
        f"branching={state.branching} dropout={state.dropout!r} seed={state.seed}\n"
    )
    payload = b"".join(np.ascontiguousarray(getattr(state, k), dtype="<f8").tobytes() for k in PARAM_NAMES)
    Path(path).write_bytes(header.encode("ascii") + payload)


def load_checkpoint(path: str | Path) -> ModelState:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("ascii").split()
    if fields[0] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    h = {k: v for k, v in (f.split("=") for f in fields[1:])}
    V, e, hd, C, K = (int(h[k]) for k in ("vocab", "embed", "hidden", "classes", "nbr_cols"))
    shapes = {
        "embeddings": (V, e), "w1": (e, hd), "b1": (hd,),
        "w_nbr": (hd, K), "w_cls": (hd, C), "b_cls": (C,),
    }
    buf = np.frombuffer(raw[nl + 1:], dtype="<f8")
    arrays, off = {}, 0
    for k in PARAM_NAMES:
        size = int(np.prod(shapes[k]))
        arrays[k] = buf[off:off + size].reshape(shapes[k]).astype(np.float64)
        off += size
    if off != len(buf):
        raise ValueError(f"{path}: payload length mismatch")
    return ModelState(
        **arrays,
        dropout=float(h["dropout"]),
        depth=int(h["depth"]),
        branching=int(h["branching"]),
        seed=int(h["seed"]),
    )


# -- standalone classifier head ---------------------------------------------


@dataclass
class MLPHead:
    """Classifier on fixed input vectors: optional ReLU hidden layer, then affine.

    With ``w_hidden`` of width 0 the head is a single linear projection.
    """

    w_hidden: np.ndarray  # d x m (m may be 0)
    b_hidden: np.ndarray  # m
    w_out: np.ndarray  # (m or d) x C
    b_out: np.ndarray  # C

    @classmethod
    def init(cls, in_dim: int, hidden: int, num_classes: int, seed: int) -> MLPHead:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
        if hidden > 0:
            return cls(
                _uniform(rng, in_dim, (in_dim, hidden)),
                _uniform(rng, in_dim, hidden),
                _uniform(rng, hidden, (hidden, num_classes)),
                _uniform(rng, hidden, num_classes),
            )
        return cls(
            np.zeros((in_dim, 0)), np.zeros(0),
            _uniform(rng, in_dim, (in_dim, num_classes)), _uniform(rng, in_dim, num_classes),
        )

    @property
    def has_hidden(self) -> bool:
        return self.w_hidden.shape[1] > 0

    def params(self) -> dict[str, np.ndarray]:
        return {"w_hidden": self.w_hidden, "b_hidden": self.b_hidden, "w_out": self.w_out, "b_out": self.b_out}

    def copy(self) -> MLPHead:
        return copy.deepcopy(self)

    def logits(self, x: np.ndarray) -> np.ndarray:
        if self.has_hidden:
            x = np.maximum(_rowwise(x, self.w_hidden) + self.b_hidden, 0.0)
        return _rowwise(x, self.w_out) + self.b_out

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, denom: float):
        if self.has_hidden:
            pre = _rowwise(x, self.w_hidden) + self.b_hidden
            hid = np.maximum(pre, 0.0)
        else:
            hid = x
        losses, dl = cross_entropy_batch(_rowwise(hid, self.w_out) + self.b_out, labels)
        dl = dl / denom
        grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        grads["w_out"] = hid.T @ dl
        grads["b_out"] = dl.sum(axis=0)
        if self.has_hidden:
            dpre = (dl @ self.w_out.T) * (pre > 0)
            grads["w_hidden"] = x.T @ dpre
            grads["b_hidden"] = dpre.sum(axis=0)
        return float(losses.sum()) / denom, grads


_HEAD_MAGIC = "textgraph-head-v1"
_HEAD_FIELDS = ("w_hidden", "b_hidden", "w_out", "b_out")


def save_head(head: MLPHead, path: str | Path) -> None:
    d, m = head.w_hidden.shape
    header = f"{_HEAD_MAGIC} in={d} hidden={m} classes={head.w_out.shape[1]}\n"
    payload = b"".join(np.ascontiguousarray(getattr(head, k), dtype="<f8").tobytes() for k in _HEAD_FIELDS)
    Path(path).write_bytes(header.encode("ascii") + payload)


def load_head(path: str | Path) -> MLPHead:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("ascii").split()
    if fields[0] != _HEAD_MAGIC:
        raise ValueError(f"{path}: not a classifier head file")
    h = {k: int(v) for k, v in (f.split("=") for f in fields[1:])}
    d, m, c = h["in"], h["hidden"], h["classes"]
    shapes = {"w_hidden": (d, m), "b_hidden": (m,), "w_out": (m if m else d, c), "b_out": (c,)}
    buf = np.frombuffer(raw[nl + 1:], dtype="<f8")
    arrays, off = {}, 0
    for k in _HEAD_FIELDS:
        size = int(np.prod(shapes[k]))
        arrays[k] = buf[off:off + size].reshape(shapes[k]).astype(np.float64)
        off += size
    if off != len(buf):
        raise ValueError(f"{path}: payload length mismatch")
    return MLPHead(**arrays)
