"""Submodular mixture summarization of video frames.

Four normalized objectives are combined with non-negative weights and
maximized under a cardinality budget ``k``:

* query similarity   -- sum of (cos(t, v) + 1) / (2k)
* quality            -- sum of sigmoid(q) / k
* diversity          -- first pick 1/k, then min distance to earlier picks / (d_max k)
* representativeness -- k-medoid coverage (1 / (n d_max^2)) sum_v [d_max^2 - min_s D(v, s)^2]

Every marginal gain lies in [0, 1] and every objective total in [0, 1].
"""
from __future__ import annotations

import enum
import heapq
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)


class ObjectiveKind(enum.IntEnum):
    QUERY_SIMILARITY = 0
    QUALITY = 1
    DIVERSITY = 2
    REPRESENTATIVENESS = 3


N_OBJECTIVES = len(ObjectiveKind)
OBJECTIVE_NAMES = ("similarity", "quality", "diversity", "representativeness")


@dataclass(frozen=True, eq=False)
class SummaryProblem:
    embeddings: np.ndarray  # (n, d)
    quality: np.ndarray  # (n,)
    div_features: np.ndarray  # (n, p)
    query_embedding: np.ndarray  # (d,)
    k: int
    pairwise_distance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        emb = np.atleast_2d(np.asarray(self.embeddings, dtype=float))
        quality = np.asarray(self.quality, dtype=float).reshape(-1)
        feats = np.asarray(self.div_features, dtype=float)
        if feats.ndim == 1:
            feats = feats[:, None]
        query = np.asarray(self.query_embedding, dtype=float).reshape(-1)
        n = emb.shape[0]
        if quality.shape != (n,) or feats.shape[0] != n:
            raise ValueError("embeddings, quality and div_features disagree on the frame count")
        if query.shape != (emb.shape[1],):
            raise ValueError("query embedding dimension differs from frame embeddings")
        if not 1 <= int(self.k) <= n:
            raise ValueError(f"budget k={self.k} must satisfy 1 <= k <= n={n}")
        for name, arr in (("embeddings", emb), ("quality", quality), ("div_features", feats), ("query_embedding", query)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        dist = cdist(feats, feats)
        np.fill_diagonal(dist, 0.0)
        dist = np.maximum(dist, dist.T)
        for name, arr in (("embeddings", emb), ("quality", quality), ("div_features", feats), ("query_embedding", query), ("dist", dist)):
            arr.flags.writeable = False
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "quality", quality)
        object.__setattr__(self, "div_features", feats)
        object.__setattr__(self, "query_embedding", query)
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "pairwise_distance", dist)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d_max(self) -> float:
        return float(self.pairwise_distance.max())

    @property
    def similarity(self) -> np.ndarray:
        """Cosine similarity of every frame to the query (0 for zero vectors)."""
        try:
            return self._similarity
        except AttributeError:
            pass
        en = np.linalg.norm(self.embeddings, axis=1)
        tn = np.linalg.norm(self.query_embedding)
        denom = en * tn
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(denom > 0, self.embeddings @ self.query_embedding / np.where(denom > 0, denom, 1.0), 0.0)
        sim = np.clip(sim, -1.0, 1.0)
        object.__setattr__(self, "_similarity", sim)
        return sim

    def with_budget(self, k: int) -> "SummaryProblem":
        return SummaryProblem(self.embeddings, self.quality, self.div_features, self.query_embedding, k)

    def permuted(self, perm) -> "SummaryProblem":
        perm = np.asarray(perm)
        return SummaryProblem(self.embeddings[perm], self.quality[perm], self.div_features[perm], self.query_embedding, self.k)

    @classmethod
    def from_model(cls, model, query_words, features, k: int, div_features=None) -> "SummaryProblem":
        """Build a problem by running frames and query through a relevance model."""
        from .relevance import encode_query, project_frames

        emb, quality = project_frames(model, features)
        div = np.asarray(features, dtype=float) if div_features is None else div_features
        return cls(emb, quality, div, encode_query(model, query_words), k)


@dataclass(frozen=True, eq=False)
class Mixture:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape != (N_OBJECTIVES,):
            raise ValueError(f"mixture needs {N_OBJECTIVES} weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("mixture weights must be finite and non-negative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def single(cls, kind: ObjectiveKind, weight: float = 1.0) -> "Mixture":
        w = np.zeros(N_OBJECTIVES)
        w[kind] = weight
        return cls(w)

    def percentages(self) -> np.ndarray:
        total = self.weights.sum()
        return self.weights / total * 100 if total > 0 else np.zeros(N_OBJECTIVES)

    def is_modular(self) -> bool:
        """True when only the modular objectives (similarity, quality) carry weight."""
        return self.weights[ObjectiveKind.DIVERSITY] == 0 and self.weights[ObjectiveKind.REPRESENTATIVENESS] == 0


@dataclass
class Summary:
    selected: list[int]
    objective_value: float
    per_objective: np.ndarray
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "selected": [int(i) for i in self.selected],
            "objective_value": float(self.objective_value),
            "per_objective": [float(x) for x in self.per_objective],
        }


class _State:
    """Incremental bookkeeping for an ordered selection."""

    def __init__(self, problem: SummaryProblem):
        self.problem = problem
        self.selected: list[int] = []
        self.in_set = np.zeros(problem.n, dtype=bool)
        d_max = problem.d_max
        self.d_max = d_max
        self.sq_dist = problem.pairwise_distance**2
        # distance from each frame to its nearest selected frame
        self.min_dist = np.full(problem.n, np.inf)
        # facility-location coverage d_max^2 - min D^2 (0 for the empty set)
        self.cover = np.zeros(problem.n)
        self.rep_sim = d_max**2 - self.sq_dist if d_max > 0 else None
        self.rep_norm = problem.n * d_max**2

    def gains(self, c: int) -> np.ndarray:
        p = self.problem
        k = p.k
        g = np.empty(N_OBJECTIVES)
        g[0] = (p.similarity[c] + 1.0) / (2.0 * k)
        g[1] = expit(p.quality[c]) / k
        if not self.selected:
            g[2] = 1.0 / k
        elif self.d_max == 0:
            g[2] = 0.0
        else:
            g[2] = self.min_dist[c] / self.d_max / k
        if self.rep_sim is None:
            g[3] = 0.0
        else:
            g[3] = np.maximum(0.0, self.rep_sim[c] - self.cover).sum() / self.rep_norm
        return g

    def add(self, c: int) -> None:
        if self.in_set[c]:
            raise ValueError(f"frame {c} already selected")
        self.selected.append(c)
        self.in_set[c] = True
        self.min_dist = np.minimum(self.min_dist, self.problem.pairwise_distance[c])
        if self.rep_sim is not None:
            self.cover = np.maximum(self.cover, self.rep_sim[c])


def _weighted(weights: np.ndarray, g: np.ndarray) -> float:
    return float(weights[0] * g[0] + weights[1] * g[1] + weights[2] * g[2] + weights[3] * g[3])


def _check_index(problem: SummaryProblem, c: int) -> None:
    if not 0 <= c < problem.n:
        raise ValueError(f"frame index {c} out of range [0, {problem.n})")


def _replay(problem: SummaryProblem, ordered: Sequence[int]) -> _State:
    state = _State(problem)
    for c in ordered:
        _check_index(problem, int(c))
        state.add(int(c))
    return state


def objective_gain(kind: ObjectiveKind, problem: SummaryProblem, selected: Sequence[int], candidate: int) -> float:
    """Marginal gain of one normalized objective when appending ``candidate``."""
    state = _replay(problem, selected)
    _check_index(problem, candidate)
    if state.in_set[candidate]:
        raise ValueError(f"candidate {candidate} already selected")
    return float(state.gains(candidate)[ObjectiveKind(kind)])


def objective_values(problem: SummaryProblem, ordered: Sequence[int]) -> np.ndarray:
    """Per-objective totals of an ordered selection (sum of prefix gains)."""
    state = _State(problem)
    total = np.zeros(N_OBJECTIVES)
    for c in ordered:
        c = int(c)
        _check_index(problem, c)
        if state.in_set[c]:
            raise ValueError(f"duplicate frame index {c}")
        total += state.gains(c)
        state.add(c)
    return total


def evaluate_mixture(mixture: Mixture, problem: SummaryProblem, ordered: Sequence[int]) -> float:
    return float(mixture.weights @ objective_values(problem, ordered))


def _summary(mixture: Mixture, problem: SummaryProblem, selected: list[int], evaluations: int) -> Summary:
    per = objective_values(problem, selected)
    return Summary(selected, float(mixture.weights @ per), per, evaluations)


def greedy_select(mixture: Mixture, problem: SummaryProblem) -> Summary:
    """Plain greedy: re-evaluate every candidate at every step."""
    w = mixture.weights
    state = _State(problem)
    evaluations = 0
    for _ in range(problem.k):
        best, best_gain = -1, -np.inf
        for c in range(problem.n):
            if state.in_set[c]:
                continue
            gain = _weighted(w, state.gains(c))
            evaluations += 1
            if gain > best_gain:
                best, best_gain = c, gain
        state.add(best)
    return _summary(mixture, problem, state.selected, evaluations)


def lazy_greedy_select(mixture: Mixture, problem: SummaryProblem) -> Summary:
    """Greedy with lazy evaluations over a max-heap of stale upper bounds.

    Produces exactly the selection of :func:`greedy_select`.  When the
    mixture is modular, bounds never go stale and nothing is re-evaluated.
    """
    w = mixture.weights
    state = _State(problem)
    modular = mixture.is_modular()
    # entries: (-bound, index, step at which the bound was computed)
    heap = [(-_weighted(w, state.gains(c)), c, 0) for c in range(problem.n)]
    heapq.heapify(heap)
    evaluations = problem.n
    for step in range(problem.k):
        while True:
            neg_bound, c, stamp = heapq.heappop(heap)
            if stamp == step or modular:
                state.add(c)
                break
            gain = _weighted(w, state.gains(c))
            evaluations += 1
            heapq.heappush(heap, (-gain, c, step))
    return _summary(mixture, problem, state.selected, evaluations)


def mmr_select(problem: SummaryProblem, lambda_sim: float) -> Summary:
    """Maximal marginal relevance: query similarity traded against novelty."""
    if not 0.0 <= lambda_sim <= 1.0:
        raise ValueError("lambda_sim must lie in [0, 1]")
    k = problem.k
    sim_gain = (problem.similarity + 1.0) / (2.0 * k)
    d_max = problem.d_max
    min_dist = np.full(problem.n, np.inf)
    taken = np.zeros(problem.n, dtype=bool)
    selected: list[int] = []
    for step in range(k):
        if step == 0:
            novelty = np.full(problem.n, 1.0 / k)
        elif d_max == 0:
            novelty = np.zeros(problem.n)
        else:
            novelty = min_dist / d_max / k
        score = lambda_sim * sim_gain + (1.0 - lambda_sim) * novelty
        score[taken] = -np.inf
        c = int(np.argmax(score))
        selected.append(c)
        taken[c] = True
        min_dist = np.minimum(min_dist, problem.pairwise_distance[c])
    return _summary(Mixture([lambda_sim, 0.0, 1.0 - lambda_sim, 0.0]), problem, selected, 0)


# ---------------------------------------------------------------------------
# k-means baseline
# ---------------------------------------------------------------------------


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(x, k: int, iters: int = 100, rng_seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding.

    An empty cluster is re-seeded at the point farthest from its current
    center.  Returns (labels, centers).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= k <= len(x):
        raise ValueError("k must satisfy 1 <= k <= n")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(rng_seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = np.full(len(x), -1)
    for _ in range(iters):
        dist = cdist(x, centers, "sqeuclidean")
        new_labels = np.argmin(dist, axis=1)
        for j in range(k):
            if not np.any(new_labels == j):
                # only take points whose cluster can spare them
                counts = np.bincount(new_labels, minlength=k)
                spread = dist[np.arange(len(x)), new_labels]
                spread = np.where(counts[new_labels] > 1, spread, -np.inf)
                far = int(np.argmax(spread))
                new_labels[far] = j
                dist[far] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = np.array([x[labels == j].mean(axis=0) for j in range(k)])
    return labels, centers


def hecate_select(problem: SummaryProblem, kmeans_iters: int = 100, rng_seed=0) -> Summary:
    """Best-quality frame from each of the k largest k-means clusters."""
    k = problem.k
    labels, _ = kmeans(problem.div_features, k, kmeans_iters, rng_seed)
    clusters = []
    for j in np.unique(labels):
        members = np.flatnonzero(labels == j)
        clusters.append((-len(members), int(members.min()), members))
    clusters.sort(key=lambda c: (c[0], c[1]))
    q = problem.quality
    selected: list[int] = []
    for _, _, members in clusters[:k]:
        # argmax returns the first (lowest-index) maximum
        selected.append(int(members[np.argmax(q[members])]))
    if len(selected) < k:
        rest = [i for i in np.argsort(-q, kind="stable") if i not in selected]
        selected.extend(int(i) for i in rest[: k - len(selected)])
    return _summary(Mixture.single(ObjectiveKind.QUALITY), problem, selected, 0)
