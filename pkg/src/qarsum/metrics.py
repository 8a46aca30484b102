"""Evaluation and inter-annotator consistency measures.

Ranking metrics (HIT@1, average precision, Spearman's rho), summary metrics
(precision, cluster recall, F1) and clustering agreement (NMI and the
derived consistency scores used to build merged ground truth).
"""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class Label(enum.Enum):
    """Four-level relevance label given by a rater to a frame."""

    VERY_GOOD = "VeryGood"
    GOOD = "Good"
    NOT_GOOD = "NotGood"
    TRASH = "Trash"

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        key = str(value).replace(" ", "").replace("_", "").lower()
        try:
            return _LABEL_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown relevance label {value!r}") from None


_LABEL_ALIASES = {
    "verygood": Label.VERY_GOOD,
    "vg": Label.VERY_GOOD,
    "good": Label.GOOD,
    "g": Label.GOOD,
    "notgood": Label.NOT_GOOD,
    "ng": Label.NOT_GOOD,
    "trash": Label.TRASH,
    "t": Label.TRASH,
}

VG = frozenset({Label.VERY_GOOD})
VG_OR_G = frozenset({Label.VERY_GOOD, Label.GOOD})


class MetricError(ValueError):
    """Raised when a metric is undefined for its input."""


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------


def hit_at_1(ranking: Sequence[int], labels: Sequence[Label], accept=VG_OR_G) -> int:
    """1 if the top-ranked frame carries an accepted label, else 0."""
    if len(ranking) == 0:
        raise MetricError("empty ranking")
    return int(Label.parse(labels[ranking[0]]) in accept)


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # stable sort on -score: ties keep ascending index
    return np.argsort(-scores, kind="stable")


def average_precision(scores, binary_labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(binary_labels, dtype=bool)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricError("average precision undefined without positives")
    hits = labels[_descending_order(scores)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def mean_average_precision(per_video: Iterable[tuple]) -> float:
    """Mean AP over (scores, binary_labels) pairs; videos without positives are skipped."""
    aps = []
    skipped = 0
    for scores, labels in per_video:
        try:
            aps.append(average_precision(scores, labels))
        except MetricError:
            skipped += 1
    if skipped:
        logger.warning("mAP: skipped %d video(s) without positive frames", skipped)
    if not aps:
        raise MetricError("no video with positive frames")
    return float(np.mean(aps))


def spearman(a, b) -> float:
    """Spearman's rho: Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("spearman needs two 1-d vectors of equal length")
    if a.size < 2:
        raise MetricError("spearman needs at least two observations")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise MetricError("spearman undefined for a constant vector")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    rho = float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))
    return min(1.0, max(-1.0, rho))


# ---------------------------------------------------------------------------
# summary metrics
# ---------------------------------------------------------------------------


def summary_precision(selected: Sequence[int], gt_binary) -> float:
    if len(selected) == 0:
        raise MetricError("empty summary")
    gt = np.asarray(gt_binary, dtype=bool)
    return float(gt[list(selected)].sum() / len(selected))


def cluster_recall(selected: Sequence[int], gt_binary, gt_clustering) -> float:
    """Fraction of relevant clusters hit by at least one selected positive frame.

    A cluster is relevant when it holds at least one positive frame.
    """
    gt = np.asarray(gt_binary, dtype=bool)
    clusters = np.asarray(gt_clustering)
    relevant = set(clusters[gt].tolist())
    if not relevant:
        raise MetricError("no relevant cluster")
    covered = {int(clusters[i]) for i in selected if gt[i]}
    return len(covered) / len(relevant)


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# clusterings
# ---------------------------------------------------------------------------


def _contingency(c1, c2) -> np.ndarray:
    _, a = np.unique(np.asarray(c1), return_inverse=True)
    _, b = np.unique(np.asarray(c2), return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    return table


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def entropy(clustering) -> float:
    """Natural-log entropy of the cluster size distribution."""
    _, counts = np.unique(np.asarray(clustering), return_counts=True)
    return _entropy(counts / counts.sum())


def mutual_information(c1, c2) -> float:
    if len(c1) != len(c2):
        raise MetricError("clusterings differ in length")
    joint = _contingency(c1, c2)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())
    return max(mi, 0.0)


def nmi(c1, c2) -> float:
    """Normalized mutual information 2 I(C, C') / (H(C) + H(C'))."""
    if len(c1) != len(c2):
        raise MetricError("clusterings differ in length")
    if len(c1) == 0:
        raise MetricError("empty clustering")
    h = entropy(c1) + entropy(c2)
    if h == 0:
        # both trivial single-cluster partitions
        return 1.0
    return min(1.0, 2.0 * mutual_information(c1, c2) / h)


def mean_pairwise_nmi(clusterings: Sequence) -> np.ndarray:
    """Mean NMI of each clustering to all the others."""
    m = len(clusterings)
    if m < 2:
        raise MetricError("need at least two clusterings")
    pair = np.zeros((m, m))
    for i, j in itertools.combinations(range(m), 2):
        pair[i, j] = pair[j, i] = nmi(clusterings[i], clusterings[j])
    return pair.sum(axis=1) / (m - 1)


def clustering_consistency(clusterings: Sequence) -> float:
    """Mean NMI over all unordered pairs of clusterings."""
    m = len(clusterings)
    if m < 2:
        raise MetricError("need at least two clusterings")
    vals = [nmi(clusterings[i], clusterings[j]) for i, j in itertools.combinations(range(m), 2)]
    return float(np.mean(vals))


def prototype_index(clusterings: Sequence) -> int:
    """Index of the clustering with highest mean NMI to the rest (lowest index on ties)."""
    return int(np.argmax(mean_pairwise_nmi(clusterings)))


# ---------------------------------------------------------------------------
# relevance-score consistency
# ---------------------------------------------------------------------------


def half_splits(n_raters: int = 5, group_size: int = 2) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    splits = []
    for group in itertools.combinations(range(n_raters), group_size):
        rest = tuple(r for r in range(n_raters) if r not in group)
        splits.append((group, rest))
    return splits


def split_correlations(annotations) -> list[float]:
    """Spearman rho between group means for every 2-vs-3 rater split.

    Splits where a group mean is constant are skipped.
    """
    scores = np.asarray(annotations, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != 5:
        raise MetricError("split-half consistency needs exactly 5 annotations")
    rhos = []
    for group, rest in half_splits(5, 2):
        try:
            rhos.append(spearman(scores[list(group)].mean(axis=0), scores[list(rest)].mean(axis=0)))
        except MetricError:
            logger.info("split %s vs %s skipped: constant group mean", group, rest)
    return rhos


def split_half_consistency(annotations) -> float:
    rhos = split_correlations(annotations)
    if not rhos:
        raise MetricError("every split has a constant group mean")
    return float(np.mean(rhos))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    ("hit1_vg", "HIT@1 VG"),
    ("hit1_vg_or_g", "HIT@1 VG-or-G"),
    ("spearman", "Spearman rho"),
    ("map", "mAP"),
    ("precision", "<PR>"),
    ("cluster_recall", "<CR>"),
    ("f1", "<F1>"),
    ("nmi_consistency", "NMI"),
)


@dataclass
class EvalReport:
    """Per-video metric rows plus unweighted per-video means."""

    per_video: dict[str, dict[str, float]] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def add(self, video_id: str, **values: float) -> None:
        self.per_video.setdefault(video_id, {}).update(values)

    def skip(self, metric: str) -> None:
        self.skipped[metric] = self.skipped.get(metric, 0) + 1

    @property
    def aggregate(self) -> dict[str, float]:
        out = {}
        for key, _ in REPORT_COLUMNS:
            vals = [row[key] for row in self.per_video.values() if key in row]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "per_video": self.per_video,
            "skipped": self.skipped,
            "notes": "AP sorts ties by ascending frame index",
        }

    def to_table(self) -> str:
        agg = self.aggregate
        cols = [(k, title) for k, title in REPORT_COLUMNS if k in agg]
        widths = [max(len(title), 8) for _, title in cols]
        name_w = max([len("video")] + [len(v) for v in self.per_video] + [len("mean")])
        head = "  ".join(["video".ljust(name_w)] + [t.rjust(w) for (_, t), w in zip(cols, widths)])
        lines = [head, "-" * len(head)]

        def fmt(row):
            return [(repr(float(row[k])) if k in row else "-").rjust(w) for (k, _), w in zip(cols, widths)]

        for vid, row in self.per_video.items():
            lines.append("  ".join([vid.ljust(name_w)] + fmt(row)))
        lines.append("-" * len(head))
        lines.append("  ".join(["mean".ljust(name_w)] + fmt(agg)))
        return "\n".join(lines)
