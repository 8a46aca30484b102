"""Learning mixture weights toward summary F1.

Structured subgradient descent: for each training video the loss-augmented
greedy selection (mixture gain plus increase in 1 - F1) is compared with a
greedy max-F1 target, and the difference of their objective vectors is the
subgradient.  Updates are per-coordinate AdaGrad followed by clamping to
the non-negative orthant.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import GroundTruth
from .metrics import f1
from .summarize import N_OBJECTIVES, Mixture, SummaryProblem, _State, _weighted, lazy_greedy_select, objective_values

logger = logging.getLogger(__name__)


class UnusablePairError(ValueError):
    """Training video without any relevant ground-truth frame."""


@dataclass
class TrainingPair:
    problem: SummaryProblem
    ground_truth: GroundTruth
    video_id: str = ""

    def __post_init__(self):
        if self.ground_truth.n_frames != self.problem.n:
            raise ValueError(
                f"video {self.video_id or '?'}: ground truth has {self.ground_truth.n_frames} frames, problem has {self.problem.n}"
            )


@dataclass(frozen=True)
class WeightLearnConfig:
    epochs: int = 10
    adagrad_base_rate: float = 0.1
    adagrad_epsilon: float = 1e-8
    init_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        # a zero rate is allowed and freezes the weights
        if self.adagrad_base_rate < 0:
            raise ValueError("adagrad_base_rate must be >= 0")
        if not self.adagrad_epsilon > 0:
            raise ValueError("adagrad_epsilon must be > 0")
        w = np.asarray(self.init_weights, dtype=float)
        if w.shape != (N_OBJECTIVES,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"init_weights must be {N_OBJECTIVES} finite non-negative values")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


class _F1Tracker:
    """Summary F1 of a growing selection against one ground truth."""

    def __init__(self, gt: GroundTruth):
        self.pos = gt.binary_relevance
        self.clusters = gt.prototype_clustering
        self.relevant_clusters = len(set(self.clusters[self.pos].tolist()))
        if self.relevant_clusters == 0:
            raise UnusablePairError(f"video {gt.video_id or '?'}: no relevant ground-truth frame")
        self.size = 0
        self.n_pos = 0
        self.covered: set[int] = set()

    def value(self, extra: int | None = None) -> float:
        size, n_pos, n_cov = self.size, self.n_pos, len(self.covered)
        if extra is not None:
            size += 1
            if self.pos[extra]:
                n_pos += 1
                if int(self.clusters[extra]) not in self.covered:
                    n_cov += 1
        if size == 0:
            return 0.0
        return f1(n_pos / size, n_cov / self.relevant_clusters)

    def add(self, c: int) -> None:
        self.size += 1
        if self.pos[c]:
            self.n_pos += 1
            self.covered.add(int(self.clusters[c]))


def summary_f1(selected: Sequence[int], gt: GroundTruth) -> float:
    tracker = _F1Tracker(gt)
    for c in selected:
        tracker.add(int(c))
    return tracker.value()


def target_summary(problem: SummaryProblem, ground_truth: GroundTruth) -> list[int]:
    """Greedy max-F1 selection of k frames (lowest index on ties)."""
    tracker = _F1Tracker(ground_truth)
    taken = np.zeros(problem.n, dtype=bool)
    selected = []
    for _ in range(problem.k):
        best, best_val = -1, -np.inf
        for c in range(problem.n):
            if taken[c]:
                continue
            val = tracker.value(c)
            if val > best_val:
                best, best_val = c, val
        tracker.add(best)
        taken[best] = True
        selected.append(best)
    return selected


def loss_augmented_select(mixture: Mixture, problem: SummaryProblem, ground_truth: GroundTruth) -> list[int]:
    """Greedy on weighted gain plus the prefix increase of 1 - F1."""
    w = mixture.weights
    state = _State(problem)
    tracker = _F1Tracker(ground_truth)
    for _ in range(problem.k):
        current = tracker.value()
        best, best_val = -1, -np.inf
        for c in range(problem.n):
            if state.in_set[c]:
                continue
            val = _weighted(w, state.gains(c)) + (current - tracker.value(c))
            if val > best_val:
                best, best_val = c, val
        state.add(best)
        tracker.add(best)
    return state.selected


def subgradient(mixture: Mixture, pair: TrainingPair) -> np.ndarray:
    predicted = loss_augmented_select(mixture, pair.problem, pair.ground_truth)
    target = target_summary(pair.problem, pair.ground_truth)
    if predicted == target:
        return np.zeros(N_OBJECTIVES)
    return objective_values(pair.problem, predicted) - objective_values(pair.problem, target)


def mean_f1(mixture: Mixture, pairs: Sequence[TrainingPair]) -> float:
    return float(np.mean([summary_f1(lazy_greedy_select(mixture, p.problem).selected, p.ground_truth) for p in pairs]))


def usable_pairs(pairs: Sequence[TrainingPair]) -> list[TrainingPair]:
    keep = [p for p in pairs if p.ground_truth.has_positive]
    if len(keep) < len(pairs):
        logger.warning("skipping %d video(s) without relevant ground-truth frames", len(pairs) - len(keep))
    return keep


def learn_weights(pairs: Sequence[TrainingPair], config: WeightLearnConfig) -> tuple[Mixture, list[float]]:
    """Projected AdaGrad over seeded-shuffled videos.

    Returns the final mixture and the mean training F1 after each epoch.
    """
    pairs = usable_pairs(pairs)
    if not pairs:
        raise UnusablePairError("no usable training video")
    w = np.array(config.init_weights, dtype=float)
    if config.epochs == 0:
        return Mixture(w), []
    rng = np.random.default_rng(config.rng_seed)
    acc = np.zeros(N_OBJECTIVES)
    rate, eps = config.adagrad_base_rate, config.adagrad_epsilon
    # precomputed targets; they ignore the weights
    targets = [objective_values(p.problem, target_summary(p.problem, p.ground_truth)) for p in pairs]
    history = []
    for epoch in range(config.epochs):
        for i in rng.permutation(len(pairs)):
            pair = pairs[i]
            predicted = loss_augmented_select(Mixture(w), pair.problem, pair.ground_truth)
            g = objective_values(pair.problem, predicted) - targets[i]
            acc += g**2
            w = np.maximum(0.0, w - rate * g / (np.sqrt(acc) + eps))
        history.append(mean_f1(Mixture(w), pairs))
        logger.info("epoch %d: weights %s, mean train F1 %.4f", epoch, np.round(w, 4), history[-1])
    return Mixture(w), history
