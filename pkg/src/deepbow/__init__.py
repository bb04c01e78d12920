"""DeepBoW: sparse bag-of-words relevance between queries and products."""

from ._accel import backend
from .bow import SparseBoW, truncate_threshold, truncate_topk
from .inference import DeepBoW, Truncation
from .metrics import neg_pr_auc, roc_auc
from .scoring import Q_SYNONYM, Q_WEIGHT, explain, intersect_dot, score
from .store import BoWStore, precompute
from .vocab import Vocabulary, build_vocabulary

__version__ = "0.1.0"

__all__ = [
    "BoWStore", "DeepBoW", "Q_SYNONYM", "Q_WEIGHT", "SparseBoW", "Truncation", "Vocabulary", "backend",
    "build_vocabulary", "explain", "intersect_dot", "neg_pr_auc", "precompute", "roc_auc", "score",
    "truncate_threshold", "truncate_topk",
]
