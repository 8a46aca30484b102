"""Query-adaptive video frame summarization.

Relevance scoring with a quality-aware textual-visual embedding, submodular
mixture summarization, mixture-weight learning and the evaluation metrics
used to judge summaries against multi-rater ground truth.
"""

__version__ = "0.1.0"

from .metrics import EvalReport, Label
from .relevance import EmbeddingModel, LossMode, QueryEncoderKind, TrainConfig, Triplet
from .summarize import Mixture, ObjectiveKind, Summary, SummaryProblem

__all__ = [
    "EmbeddingModel",
    "EvalReport",
    "Label",
    "LossMode",
    "Mixture",
    "ObjectiveKind",
    "QueryEncoderKind",
    "Summary",
    "SummaryProblem",
    "TrainConfig",
    "Triplet",
]
