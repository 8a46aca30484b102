"""Annotations, ground truth, training triplets and synthetic corpora.

File formats (all JSON lines, one record per line; a first line holding a
``_header`` object with the producing run's config is skipped on load):

* annotations: ``{"video_id", "labels": [5 x n label strings], "clusterings": [5 x n ints]}``
* ground truth: ``{"video_id", "relevance": [n bools], "clustering": [n ints], "scores": [n], "labels": [n]}``
* videos: ``{"video_id", "query": [[word vector], ...], "features": n x F, "div_features": n x p}``
* problems: ``{"video_id", "embeddings", "quality", "div_features", "query_embedding", "k"}``
* triplets: ``{"query", "pos", "neg"}`` (optionally ``video_id``)
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .metrics import Label, mean_pairwise_nmi
from .relevance import EmbeddingModel, QueryEncoderKind, Triplet
from .summarize import SummaryProblem

logger = logging.getLogger(__name__)

N_RATERS = 5

LABEL_VALUE = {
    Label.VERY_GOOD: 1.0,
    Label.GOOD: 0.5,
    Label.NOT_GOOD: 0.0,
    Label.TRASH: 0.0,
}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def map_label(label) -> float:
    return LABEL_VALUE[Label.parse(label)]


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


@dataclass
class AnnotationSet:
    rater_labels: list[list[Label]]
    rater_clusterings: list[list[int]]
    video_id: str = ""

    def __post_init__(self):
        vid = self.video_id or "?"
        if len(self.rater_labels) != N_RATERS or len(self.rater_clusterings) != N_RATERS:
            raise DataError(
                f"video {vid}: expected {N_RATERS} raters, found "
                f"{len(self.rater_labels)} label lists and {len(self.rater_clusterings)} clusterings"
            )
        self.rater_labels = [[Label.parse(x) for x in row] for row in self.rater_labels]
        self.rater_clusterings = [[int(x) for x in row] for row in self.rater_clusterings]
        lengths = {len(row) for row in self.rater_labels} | {len(row) for row in self.rater_clusterings}
        if len(lengths) != 1:
            raise DataError(f"video {vid}: raters disagree on the frame count")
        if any(c < 0 for row in self.rater_clusterings for c in row):
            raise DataError(f"video {vid}: cluster ids must be non-negative")

    @property
    def n_frames(self) -> int:
        return len(self.rater_labels[0])

    def scores(self) -> np.ndarray:
        """Mapped numeric labels, shape (5, n)."""
        return np.array([[LABEL_VALUE[x] for x in row] for row in self.rater_labels])

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "labels": [[x.value for x in row] for row in self.rater_labels],
            "clusterings": [list(row) for row in self.rater_clusterings],
        }


@dataclass
class GroundTruth:
    binary_relevance: np.ndarray
    prototype_clustering: np.ndarray
    scores: np.ndarray | None = None
    labels: list[Label] | None = None
    video_id: str = ""

    def __post_init__(self):
        self.binary_relevance = np.asarray(self.binary_relevance, dtype=bool)
        self.prototype_clustering = np.asarray(self.prototype_clustering, dtype=int)
        if self.binary_relevance.shape != self.prototype_clustering.shape:
            raise DataError("relevance and clustering disagree on the frame count")
        if self.scores is None:
            self.scores = self.binary_relevance.astype(float)
        self.scores = np.asarray(self.scores, dtype=float)
        if self.labels is None:
            self.labels = [Label.GOOD if r else Label.NOT_GOOD for r in self.binary_relevance]
        self.labels = [Label.parse(x) for x in self.labels]

    @property
    def n_frames(self) -> int:
        return len(self.binary_relevance)

    @property
    def has_positive(self) -> bool:
        return bool(self.binary_relevance.any())

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "relevance": [bool(x) for x in self.binary_relevance],
            "clustering": [int(x) for x in self.prototype_clustering],
            "scores": [float(x) for x in self.scores],
            "labels": [x.value for x in self.labels],
        }


def merge_relevance(rater_labels) -> np.ndarray:
    """Positive iff the mean mapped label over the five raters is >= 0.5."""
    if len(rater_labels) != N_RATERS:
        raise DataError(f"expected {N_RATERS} raters, found {len(rater_labels)}")
    scores = np.array([[map_label(x) for x in row] for row in rater_labels])
    # exact rational threshold: sum of 0/0.5/1 values over 5 raters >= 2.5
    return scores.sum(axis=0) >= 2.5


def consensus_labels(rater_labels) -> list[Label]:
    """Single label per frame, consistent with :func:`merge_relevance`.

    Mean >= 0.75 is VeryGood, >= 0.5 Good; below that Trash when most raters
    said Trash, NotGood otherwise.
    """
    scores = np.array([[map_label(x) for x in row] for row in rater_labels]).sum(axis=0)
    trash = np.array([[Label.parse(x) is Label.TRASH for x in row] for row in rater_labels]).sum(axis=0)
    out = []
    for total, n_trash in zip(scores, trash):
        if total >= 3.75:
            out.append(Label.VERY_GOOD)
        elif total >= 2.5:
            out.append(Label.GOOD)
        elif n_trash > N_RATERS // 2:
            out.append(Label.TRASH)
        else:
            out.append(Label.NOT_GOOD)
    return out


def merge_clusterings(rater_clusterings) -> np.ndarray:
    """The rater clustering with highest mean NMI to the others (lowest index on ties)."""
    if len(rater_clusterings) < 2:
        raise DataError("need at least two clusterings to merge")
    idx = int(np.argmax(mean_pairwise_nmi(rater_clusterings)))
    return np.asarray(rater_clusterings[idx], dtype=int)


def build_ground_truth(annotations: AnnotationSet) -> GroundTruth:
    scores = annotations.scores()
    return GroundTruth(
        binary_relevance=merge_relevance(annotations.rater_labels),
        prototype_clustering=merge_clusterings(annotations.rater_clusterings),
        scores=scores.mean(axis=0),
        labels=consensus_labels(annotations.rater_labels),
        video_id=annotations.video_id,
    )


def sample_triplets(gt: GroundTruth, frames, query, per_video: int, rng_seed) -> list[Triplet]:
    """Pair uniformly drawn positive and negative frames of one video."""
    if per_video < 0:
        raise DataError("per_video must be >= 0")
    frames = np.asarray(frames, dtype=float)
    pos = np.flatnonzero(gt.binary_relevance)
    neg = np.flatnonzero(~gt.binary_relevance)
    if len(pos) == 0 or len(neg) == 0:
        raise DataError(f"video {gt.video_id or '?'}: needs at least one positive and one negative frame")
    if per_video == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    ip = rng.choice(pos, size=per_video)
    ineg = rng.choice(neg, size=per_video)
    query = np.asarray(query, dtype=float)
    return [Triplet(query, frames[a], frames[b]) for a, b in zip(ip, ineg)]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n_videos: int = 60
    frames_per_video: int = 40
    n_clusters_range: tuple[int, int] = (4, 8)
    feature_dim: int = 32
    embed_dim: int = 8
    word_dim: int = 8
    vocab_size: int = 200
    noise_sigma: float = 0.1
    rng_seed: int = 0
    words_per_query: tuple[int, int] = (2, 6)
    relevant_cluster_fraction: float = 0.4
    relevance_threshold: float = 0.5
    # mean quality shift of relevant (+) vs irrelevant (-) frames; 0: quality independent of relevance
    quality_signal: float = 0.0
    cluster_spread: float = 0.35
    triplets_per_video: int = 50

    def __post_init__(self):
        for name in ("n_videos", "frames_per_video", "feature_dim", "embed_dim", "word_dim", "vocab_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        lo, hi = self.n_clusters_range
        if not 2 <= lo <= hi <= self.frames_per_video:
            raise ValueError("n_clusters_range must satisfy 2 <= lo <= hi <= frames_per_video")
        wlo, whi = self.words_per_query
        if not 1 <= wlo <= whi:
            raise ValueError("words_per_query must satisfy 1 <= lo <= hi")
        if self.word_dim != self.embed_dim:
            raise ValueError("word_dim must equal embed_dim for the mean-pool encoder")
        if self.feature_dim < self.embed_dim + 1:
            raise ValueError("feature_dim must be >= embed_dim + 1")
        if self.noise_sigma < 0 or not math.isfinite(self.noise_sigma):
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.relevant_cluster_fraction < 1:
            raise ValueError("relevant_cluster_fraction must lie in (0, 1)")
        if not -1 < self.relevance_threshold < 1:
            raise ValueError("relevance_threshold must lie in (-1, 1)")
        if self.quality_signal < 0:
            raise ValueError("quality_signal must be >= 0")
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be >= 0")
        if self.triplets_per_video < 0:
            raise ValueError("triplets_per_video must be >= 0")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    @property
    def flip_rate(self) -> float:
        """Per-rater probability of a wrong relevance or cluster judgement."""
        return min(0.5, self.noise_sigma / 4)

    @classmethod
    def from_dict(cls, values: dict) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        kwargs = dict(values)
        for name in ("n_clusters_range", "words_per_query"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Video:
    video_id: str
    query_words: np.ndarray
    features: np.ndarray
    div_features: np.ndarray | None = None
    planted_relevance: np.ndarray | None = None
    planted_clusters: np.ndarray | None = None
    planted_quality: np.ndarray | None = None

    def __post_init__(self):
        self.query_words = np.atleast_2d(np.asarray(self.query_words, dtype=float))
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.div_features is None:
            self.div_features = self.features
        self.div_features = np.asarray(self.div_features, dtype=float)
        if len(self.div_features) != len(self.features):
            raise DataError(f"video {self.video_id}: div_features and features disagree on the frame count")

    @property
    def n_frames(self) -> int:
        return len(self.features)

    def problem(self, model: EmbeddingModel, k: int) -> SummaryProblem:
        if k > self.n_frames:
            raise DataError(f"video {self.video_id}: budget k={k} exceeds {self.n_frames} frames")
        return SummaryProblem.from_model(model, self.query_words, self.features, k, self.div_features)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "query": self.query_words.tolist(),
            "features": self.features.tolist(),
            "div_features": self.div_features.tolist(),
        }


@dataclass
class SyntheticCorpus:
    config: SyntheticConfig
    videos: list[Video]
    annotations: list[AnnotationSet]
    planted_model: EmbeddingModel
    triplets: list[Triplet] = field(default_factory=list)
    triplet_video: list[str] = field(default_factory=list)

    def ground_truth(self) -> list[GroundTruth]:
        return [build_ground_truth(a) for a in self.annotations]

    def triplets_for(self, video_ids: Iterable[str]) -> list[Triplet]:
        keep = set(video_ids)
        return [t for t, v in zip(self.triplets, self.triplet_video) if v in keep]


def _video_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def _cluster_centers(rng, t_hat, n_rel, n_irr, d):
    centers = []
    for j in range(n_rel + n_irr):
        other = rng.standard_normal(d)
        other = _unit(other - (other @ t_hat) * t_hat)
        if j < n_rel:
            # cosine to the query around 0.9
            angle = rng.uniform(0.2, 0.55)
        else:
            # cosine to the query between -0.3 and 0.1
            angle = rng.uniform(1.47, 1.88)
        centers.append(np.cos(angle) * t_hat + np.sin(angle) * other)
    return np.array(centers)


def _rater_label(relevant: bool, quality: float) -> Label:
    if relevant:
        return Label.VERY_GOOD if quality >= 0 else Label.GOOD
    return Label.TRASH if quality < -1.0 else Label.NOT_GOOD


def _gen_video(cfg: SyntheticConfig, index: int, planted: EmbeddingModel, pinv: np.ndarray, vocab: np.ndarray):
    rng = _video_rng(cfg.rng_seed, index)
    d = cfg.embed_dim
    n = cfg.frames_per_video
    n_words = int(rng.integers(cfg.words_per_query[0], cfg.words_per_query[1] + 1))
    words = vocab[rng.integers(cfg.vocab_size, size=n_words)]
    t_hat = _unit(words[: planted.encoder.max_tokens].mean(axis=0))

    n_clusters = int(rng.integers(cfg.n_clusters_range[0], cfg.n_clusters_range[1] + 1))
    n_rel = min(n_clusters - 1, max(1, round(cfg.relevant_cluster_fraction * n_clusters)))
    centers = _cluster_centers(rng, t_hat, n_rel, n_clusters - n_rel, d)
    # every cluster gets at least one frame
    clusters = np.concatenate([np.arange(n_clusters), rng.integers(n_clusters, size=n - n_clusters)])
    clusters = rng.permutation(clusters)

    emb = centers[clusters] + cfg.cluster_spread / np.sqrt(d) * rng.standard_normal((n, d))
    cos = emb @ t_hat / np.linalg.norm(emb, axis=1)
    if not (cos >= cfg.relevance_threshold).any():
        # every video needs a relevant frame: pin the closest one onto the query
        emb[np.argmax(cos)] = t_hat
    elif (cos >= cfg.relevance_threshold).all():
        emb[np.argmin(cos)] = centers[n_rel]
    cos = emb @ t_hat / np.linalg.norm(emb, axis=1)
    relevant = cos >= cfg.relevance_threshold
    quality = cfg.quality_signal * np.where(relevant, 1.0, -1.0) + rng.standard_normal(n)

    planted_out = np.column_stack([emb, quality])
    features = (planted_out - planted.bias) @ pinv
    if cfg.noise_sigma > 0:
        features = features + cfg.noise_sigma * features.std() * rng.standard_normal(features.shape)

    flip = cfg.flip_rate
    labels, clusterings = [], []
    for _ in range(N_RATERS):
        seen_relevant = np.where(rng.random(n) < flip, ~relevant, relevant)
        seen_quality = quality + cfg.noise_sigma * rng.standard_normal(n)
        labels.append([_rater_label(r, q) for r, q in zip(seen_relevant, seen_quality)])
        seen_clusters = np.where(rng.random(n) < flip, rng.integers(n_clusters, size=n), clusters)
        # raters name their clusters arbitrarily
        clusterings.append(rng.permutation(n_clusters)[seen_clusters].tolist())
    video_id = f"v{index:04d}"
    video = Video(video_id, words, features, features, relevant, clusters, quality)
    ann = AnnotationSet(labels, clusterings, video_id)

    triplets = []
    gt = build_ground_truth(ann)
    if cfg.triplets_per_video and gt.binary_relevance.any() and not gt.binary_relevance.all():
        triplets = sample_triplets(gt, features, words, cfg.triplets_per_video, rng)
    return video, ann, triplets


def gen_synthetic(config: SyntheticConfig) -> SyntheticCorpus:
    """Corpus with a planted linear relevance model and noisy raters."""
    if not isinstance(config, SyntheticConfig):
        raise TypeError("config must be a SyntheticConfig")
    root = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 2**31 - 1]))
    F, d = config.feature_dim, config.embed_dim
    weight = root.standard_normal((F, d + 1)) / np.sqrt(F)
    planted = EmbeddingModel(weight, np.zeros(d + 1), d, QueryEncoderKind())
    # maps planted outputs back to feature space: (out @ pinv) @ weight == out
    pinv = np.linalg.pinv(weight)
    vocab = root.standard_normal((config.vocab_size, config.word_dim))

    corpus = SyntheticCorpus(config, [], [], planted)
    for i in range(config.n_videos):
        video, ann, triplets = _gen_video(config, i, planted, pinv, vocab)
        corpus.videos.append(video)
        corpus.annotations.append(ann)
        corpus.triplets.extend(triplets)
        corpus.triplet_video.extend([video.video_id] * len(triplets))
    return corpus


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def _check_finite(values, where: str):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{where}: non-finite value")
    return arr


def _reject_constant(name):
    raise DataError(f"non-finite value {name}")


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line, parse_constant=_reject_constant)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if "_header" in record:
                continue
            yield lineno, record


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(records: Iterable[dict], header: dict | None = None) -> str:
    lines = []
    if header is not None:
        lines.append(json.dumps({"_header": header}, sort_keys=True))
    lines.extend(json.dumps(r, allow_nan=False) for r in records)
    return "".join(line + "\n" for line in lines)


def write_jsonl(path, records: Iterable[dict], header: dict | None = None) -> None:
    atomic_write_text(path, dumps_jsonl(records, header))


def _field(record: dict, name: str, where: str):
    try:
        return record[name]
    except KeyError:
        raise DataError(f"{where}: missing field {name!r}") from None


def load_annotations(path) -> list[AnnotationSet]:
    out = []
    for lineno, rec in iter_jsonl(path):
        where = f"{path}:{lineno}"
        vid = str(rec.get("video_id", f"line{lineno}"))
        try:
            out.append(AnnotationSet(_field(rec, "labels", where), _field(rec, "clusterings", where), vid))
        except (TypeError, ValueError) as exc:
            msg = str(exc)
            raise DataError(msg if msg.startswith("video") else f"{where}: video {vid}: {msg}") from None
    return out


def save_annotations(path, annotations: Sequence[AnnotationSet], header: dict | None = None) -> None:
    write_jsonl(path, (a.to_dict() for a in annotations), header)


def load_ground_truth(path) -> list[GroundTruth]:
    out = []
    for lineno, rec in iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            out.append(
                GroundTruth(
                    _field(rec, "relevance", where),
                    _field(rec, "clustering", where),
                    _check_finite(rec["scores"], where) if "scores" in rec else None,
                    rec.get("labels"),
                    str(rec.get("video_id", f"line{lineno}")),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None
    return out


def save_ground_truth(path, truths: Sequence[GroundTruth], header: dict | None = None) -> None:
    write_jsonl(path, (g.to_dict() for g in truths), header)


def problem_to_dict(problem: SummaryProblem, video_id: str = "") -> dict:
    return {
        "video_id": video_id,
        "embeddings": problem.embeddings.tolist(),
        "quality": problem.quality.tolist(),
        "div_features": problem.div_features.tolist(),
        "query_embedding": problem.query_embedding.tolist(),
        "k": problem.k,
    }


def load_problems(path) -> list[tuple[str, SummaryProblem]]:
    out = []
    for lineno, rec in iter_jsonl(path):
        where = f"{path}:{lineno}"
        vid = str(rec.get("video_id", f"line{lineno}"))
        try:
            problem = SummaryProblem(
                _check_finite(_field(rec, "embeddings", where), where),
                _check_finite(_field(rec, "quality", where), where),
                _check_finite(_field(rec, "div_features", where), where),
                _check_finite(_field(rec, "query_embedding", where), where),
                int(_field(rec, "k", where)),
            )
        except DataError:
            raise
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: video {vid}: {exc}") from None
        out.append((vid, problem))
    return out


def save_problems(path, problems: Sequence[tuple[str, SummaryProblem]], header: dict | None = None) -> None:
    write_jsonl(path, (problem_to_dict(p, vid) for vid, p in problems), header)


def load_videos(path) -> list[Video]:
    out = []
    for lineno, rec in iter_jsonl(path):
        where = f"{path}:{lineno}"
        vid = str(rec.get("video_id", f"line{lineno}"))
        features = _check_finite(_field(rec, "features", where), where)
        div = _check_finite(rec["div_features"], where) if "div_features" in rec else None
        query = _check_finite(_field(rec, "query", where), where)
        if query.size == 0:
            raise DataError(f"{where}: video {vid}: empty query")
        try:
            out.append(Video(vid, query, features, div))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None
    return out


def save_videos(path, videos: Sequence[Video], header: dict | None = None) -> None:
    write_jsonl(path, (v.to_dict() for v in videos), header)


def triplet_to_dict(triplet: Triplet, video_id: str | None = None) -> dict:
    rec = {
        "query": triplet.query_words.tolist(),
        "pos": triplet.pos_feature.tolist(),
        "neg": triplet.neg_feature.tolist(),
    }
    if video_id is not None:
        rec["video_id"] = video_id
    return rec


def load_triplets(path) -> list[Triplet]:
    out = []
    for lineno, rec in iter_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            out.append(
                Triplet(
                    _check_finite(_field(rec, "query", where), where),
                    _check_finite(_field(rec, "pos", where), where),
                    _check_finite(_field(rec, "neg", where), where),
                )
            )
        except DataError:
            raise
        except (TypeError, ValueError) as exc:
            raise DataError(f"{where}: {exc}") from None
    return out


def save_triplets(path, triplets: Sequence[Triplet], video_ids: Sequence[str] | None = None, header: dict | None = None) -> None:
    ids = video_ids if video_ids is not None else [None] * len(triplets)
    write_jsonl(path, (triplet_to_dict(t, v) for t, v in zip(triplets, ids)), header)
