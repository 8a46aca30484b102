"""Quality-aware textual-visual relevance model.

A linear layer maps frame features to ``d + 1`` outputs: the first ``d`` are
the frame's embedding, the last one its query-independent quality score.
Queries are embedded by averaging word vectors.  The relevance of a frame to
a query is the cosine similarity of the two embeddings plus the quality.

Training uses a triplet ranking loss with Huber cost on hinge violations and
per-coordinate AdaGrad updates.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MODEL_MAGIC = "qrsum-model"
MODEL_VERSION = "v1"


class LossMode(enum.Enum):
    EXPLICIT = "expli"  # separate margins on similarity and quality
    IMPLICIT = "impli"  # one margin on similarity + quality
    NO_QUALITY = "noq"  # similarity margin only

    @classmethod
    def parse(cls, value) -> "LossMode":
        if isinstance(value, LossMode):
            return value
        key = str(value).lower()
        for mode in cls:
            if key in (mode.value, mode.name.lower(), mode.name.lower().replace("_", "")):
                return mode
        raise ValueError(f"unknown loss mode {value!r}")


@dataclass(frozen=True)
class QueryEncoderKind:
    """Query encoder configuration; only mean pooling is available."""

    variant: str = "MeanPool"
    max_tokens: int = 14

    def __post_init__(self):
        if self.variant != "MeanPool":
            raise ValueError(f"unsupported query encoder {self.variant!r}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    weight: np.ndarray  # (F, d + 1)
    bias: np.ndarray  # (d + 1,)
    embed_dim: int
    encoder: QueryEncoderKind = field(default_factory=QueryEncoderKind)

    def __post_init__(self):
        weight = np.array(self.weight, dtype=float)
        bias = np.zeros(weight.shape[1]) if self.bias is None else np.array(self.bias, dtype=float)
        if weight.ndim != 2:
            raise ValueError("weight must be a matrix")
        if self.embed_dim < 1 or weight.shape[0] < 1:
            raise ValueError("embed_dim and feature_dim must be >= 1")
        if weight.shape[1] != self.embed_dim + 1:
            raise ValueError(f"weight has {weight.shape[1]} columns, expected embed_dim + 1 = {self.embed_dim + 1}")
        if bias.shape != (self.embed_dim + 1,):
            raise ValueError("bias must have length embed_dim + 1")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise ValueError("model parameters must be finite")
        weight.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def random(cls, feature_dim: int, embed_dim: int, rng, encoder: QueryEncoderKind | None = None) -> "EmbeddingModel":
        """Uniform init in [-1/sqrt(F), 1/sqrt(F)], zero bias."""
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(feature_dim)
        weight = rng.uniform(-bound, bound, size=(feature_dim, embed_dim + 1))
        return cls(weight, np.zeros(embed_dim + 1), embed_dim, encoder or QueryEncoderKind())

    def with_params(self, weight, bias) -> "EmbeddingModel":
        return replace(self, weight=weight, bias=bias)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingModel):
            return NotImplemented
        return (
            self.embed_dim == other.embed_dim
            and self.encoder == other.encoder
            and np.array_equal(self.weight, other.weight)
            and np.array_equal(self.bias, other.bias)
        )

    # -- serialization ------------------------------------------------------

    def dumps(self) -> str:
        rows = [f"{MODEL_MAGIC} {MODEL_VERSION} {self.feature_dim} {self.embed_dim}"]
        rows += [" ".join(repr(float(x)) for x in row) for row in self.weight]
        rows.append(" ".join(repr(float(x)) for x in self.bias))
        return "\n".join(rows) + "\n"

    @classmethod
    def loads(cls, text: str, encoder: QueryEncoderKind | None = None) -> "EmbeddingModel":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty model file")
        head = lines[0].split()
        if len(head) != 4 or head[0] != MODEL_MAGIC or head[1] != MODEL_VERSION:
            raise ValueError(f"line 1: bad model header {lines[0]!r}")
        feature_dim, embed_dim = int(head[2]), int(head[3])
        if len(lines) != feature_dim + 2:
            raise ValueError(f"expected {feature_dim + 2} lines, found {len(lines)}")
        rows = []
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                row = [float(x) for x in line.split()]
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric value") from None
            if len(row) != embed_dim + 1:
                raise ValueError(f"line {lineno}: expected {embed_dim + 1} values, found {len(row)}")
            if not all(np.isfinite(row)):
                raise ValueError(f"line {lineno}: non-finite value")
            rows.append(row)
        return cls(np.array(rows[:-1]), np.array(rows[-1]), embed_dim, encoder or QueryEncoderKind())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path, encoder: QueryEncoderKind | None = None) -> "EmbeddingModel":
        return cls.loads(Path(path).read_text(), encoder)


@dataclass(frozen=True, eq=False)
class Triplet:
    query_words: np.ndarray  # (m, word_dim)
    pos_feature: np.ndarray
    neg_feature: np.ndarray

    def __post_init__(self):
        words = np.atleast_2d(np.asarray(self.query_words, dtype=float))
        pos = np.asarray(self.pos_feature, dtype=float)
        neg = np.asarray(self.neg_feature, dtype=float)
        if words.shape[0] == 0 or words.size == 0:
            raise ValueError("triplet query has no words")
        if pos.ndim != 1 or pos.shape != neg.shape:
            raise ValueError("positive and negative features must be vectors of equal length")
        if not (np.all(np.isfinite(words)) and np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("triplet contains non-finite values")
        object.__setattr__(self, "query_words", words)
        object.__setattr__(self, "pos_feature", pos)
        object.__setattr__(self, "neg_feature", neg)


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    huber_delta: float = 1.5
    l2_lambda: float = 1e-3
    epochs: int = 20
    batch_size: int = 128
    adagrad_base_rate: float = 0.1
    adagrad_epsilon: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("margin", "huber_delta", "adagrad_base_rate", "adagrad_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(a @ b / (na * nb))


def project_frame(model: EmbeddingModel, feature) -> tuple[np.ndarray, float]:
    feature = np.asarray(feature, dtype=float)
    if feature.shape != (model.feature_dim,):
        raise ValueError(f"feature has shape {feature.shape}, expected ({model.feature_dim},)")
    out = feature @ model.weight + model.bias
    return out[: model.embed_dim], float(out[model.embed_dim])


def project_frames(model: EmbeddingModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Batch version of :func:`project_frame`: (n, d) embeddings and (n,) quality."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != model.feature_dim:
        raise ValueError(f"features have {features.shape[1]} columns, expected {model.feature_dim}")
    out = features @ model.weight + model.bias
    return out[:, : model.embed_dim], out[:, model.embed_dim]


def encode_query(model: EmbeddingModel, query_words) -> np.ndarray:
    words = np.asarray(query_words, dtype=float)
    if words.ndim == 1:
        words = words[None, :]
    if words.shape[0] == 0:
        raise ValueError("empty query")
    if words.shape[1] != model.embed_dim:
        raise ValueError(f"word vectors have dimension {words.shape[1]}, expected {model.embed_dim}")
    return words[: model.encoder.max_tokens].mean(axis=0)


def relevance_score(model: EmbeddingModel, query_words, feature) -> float:
    t = encode_query(model, query_words)
    v, q = project_frame(model, feature)
    return cosine_similarity(t, v) + q


def rank_frames(model: EmbeddingModel, query_words, features) -> list[tuple[int, float]]:
    """Frames sorted by descending relevance; ties keep ascending index."""
    if len(features) == 0:
        raise ValueError("no frames to rank")
    scores = [relevance_score(model, query_words, f) for f in features]
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [(i, scores[i]) for i in order]


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def huber(x, delta: float):
    """Quadratic up to ``delta``, linear beyond; defined for x >= 0."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("huber expects non-negative input")
    out = np.where(x_arr <= delta, 0.5 * x_arr**2, delta * (x_arr - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def _huber_slope(x: np.ndarray, delta: float) -> np.ndarray:
    return np.minimum(x, delta)


def _stack(batch: Sequence[Triplet], model: EmbeddingModel):
    if len(batch) == 0:
        raise ValueError("empty batch")
    t = np.stack([encode_query(model, tr.query_words) for tr in batch])
    xp = np.stack([tr.pos_feature for tr in batch])
    xn = np.stack([tr.neg_feature for tr in batch])
    if xp.shape[1] != model.feature_dim:
        raise ValueError(f"triplet features have length {xp.shape[1]}, expected {model.feature_dim}")
    return t, xp, xn


def _cos_rows(t, v):
    tn = np.linalg.norm(t, axis=1)
    vn = np.linalg.norm(v, axis=1)
    if np.any(tn == 0) or np.any(vn == 0):
        raise ValueError("cosine similarity of a zero vector")
    return np.einsum("ij,ij->i", t, v) / (tn * vn), tn, vn


def _batch_terms(model, t, xp, xn, config: TrainConfig, mode: LossMode, need_grad: bool):
    d = model.embed_dim
    op = xp @ model.weight + model.bias
    on = xn @ model.weight + model.bias
    vp, qp = op[:, :d], op[:, d]
    vn_, qn = on[:, :d], on[:, d]
    sp, tnorm, pnorm = _cos_rows(t, vp)
    sn, _, nnorm = _cos_rows(t, vn_)

    gamma, delta = config.margin, config.huber_delta
    if mode is LossMode.IMPLICIT:
        hinge = np.maximum(0.0, gamma - (sp + qp) + (sn + qn))
        loss = huber(hinge, delta)
        slope = _huber_slope(hinge, delta)
        ds_p, ds_n = -slope, slope
        dq_p, dq_n = -slope, slope
    else:
        hinge_s = np.maximum(0.0, gamma - sp + sn)
        loss = huber(hinge_s, delta)
        slope_s = _huber_slope(hinge_s, delta)
        ds_p, ds_n = -slope_s, slope_s
        dq_p = dq_n = np.zeros_like(slope_s)
        if mode is LossMode.EXPLICIT:
            hinge_q = np.maximum(0.0, gamma - qp + qn)
            loss = loss + huber(hinge_q, delta)
            slope_q = _huber_slope(hinge_q, delta)
            dq_p, dq_n = -slope_q, slope_q
    loss = np.atleast_1d(loss)
    if not need_grad:
        return loss, None, None

    def dcos_dv(v, vnorm, s):
        # d cos(t, v) / dv = t / (|t||v|) - cos * v / |v|^2
        return t / (tnorm * vnorm)[:, None] - (s / vnorm**2)[:, None] * v

    g_out_p = np.empty_like(op)
    g_out_n = np.empty_like(on)
    g_out_p[:, :d] = ds_p[:, None] * dcos_dv(vp, pnorm, sp)
    g_out_n[:, :d] = ds_n[:, None] * dcos_dv(vn_, nnorm, sn)
    g_out_p[:, d] = dq_p
    g_out_n[:, d] = dq_n
    b = len(t)
    g_weight = (xp.T @ g_out_p + xn.T @ g_out_n) / b
    g_bias = (g_out_p.sum(axis=0) + g_out_n.sum(axis=0)) / b
    return loss, g_weight, g_bias


def triplet_loss(model: EmbeddingModel, triplet: Triplet, config: TrainConfig, mode: LossMode) -> float:
    mode = LossMode.parse(mode)
    t, xp, xn = _stack([triplet], model)
    loss, _, _ = _batch_terms(model, t, xp, xn, config, mode, need_grad=False)
    return float(loss[0])


def batch_objective(model: EmbeddingModel, batch: Sequence[Triplet], config: TrainConfig, mode: LossMode) -> float:
    """Mean triplet loss plus (lambda / 2) * ||W||^2 (bias not penalized)."""
    mode = LossMode.parse(mode)
    t, xp, xn = _stack(batch, model)
    loss, _, _ = _batch_terms(model, t, xp, xn, config, mode, need_grad=False)
    return float(loss.mean() + 0.5 * config.l2_lambda * np.sum(model.weight**2))


def loss_gradient(model: EmbeddingModel, batch: Sequence[Triplet], config: TrainConfig, mode: LossMode):
    """Gradient of :func:`batch_objective` w.r.t. (weight, bias)."""
    mode = LossMode.parse(mode)
    t, xp, xn = _stack(batch, model)
    _, g_weight, g_bias = _batch_terms(model, t, xp, xn, config, mode, need_grad=True)
    g_weight = g_weight + config.l2_lambda * model.weight
    return g_weight, g_bias


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class _TripletArrays:
    """Triplets pre-encoded into dense arrays for fast minibatching."""

    def __init__(self, model: EmbeddingModel, triplets: Sequence[Triplet]):
        self.t, self.xp, self.xn = _stack(triplets, model)

    def __len__(self):
        return len(self.t)


def train_relevance(init: EmbeddingModel, triplets: Sequence[Triplet], config: TrainConfig, mode: LossMode):
    """Minibatch AdaGrad on the triplet objective.

    Returns the trained model and the mean objective of each epoch (each
    minibatch's objective is measured before its update).  With the
    no-quality mode the quality output is not modelled and is zeroed.
    """
    mode = LossMode.parse(mode)
    if not isinstance(config, TrainConfig):
        raise TypeError("config must be a TrainConfig")
    if len(triplets) == 0:
        raise ValueError("no training triplets")
    if config.epochs == 0:
        return init, []

    data = _TripletArrays(init, triplets)
    rng = np.random.default_rng(config.rng_seed)
    weight = np.array(init.weight)
    bias = np.array(init.bias)
    d = init.embed_dim
    if mode is LossMode.NO_QUALITY:
        weight[:, d] = 0.0
        bias[d] = 0.0
    acc_w = np.zeros_like(weight)
    acc_b = np.zeros_like(bias)
    rate, eps = config.adagrad_base_rate, config.adagrad_epsilon

    history = []
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            model = init.with_params(weight, bias)
            loss, g_w, g_b = _batch_terms(model, data.t[idx], data.xp[idx], data.xn[idx], config, mode, need_grad=True)
            g_w = g_w + config.l2_lambda * weight
            total += (loss.mean() + 0.5 * config.l2_lambda * np.sum(weight**2)) * len(idx)
            acc_w += g_w**2
            acc_b += g_b**2
            weight = weight - rate * g_w / (np.sqrt(acc_w) + eps)
            bias = bias - rate * g_b / (np.sqrt(acc_b) + eps)
        history.append(float(total / n))
        logger.debug("epoch %d: mean objective %.6f", epoch, history[-1])
    return init.with_params(weight, bias), history


def triplet_accuracy(model: EmbeddingModel, triplets: Sequence[Triplet]) -> float:
    """Fraction of triplets where the positive frame is more query-similar than the negative."""
    t, xp, xn = _stack(triplets, model)
    vp, _ = project_frames(model, xp)
    vn, _ = project_frames(model, xn)
    sp, _, _ = _cos_rows(t, vp)
    sn, _, _ = _cos_rows(t, vn)
    return float(np.mean(sp > sn))
