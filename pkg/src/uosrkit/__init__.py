"""Post-hoc uncertainty scoring and unified open-set recognition (UOSR) evaluation."""

from .errors import UosrError
from .fewshot import FewShotConfig, FewShotResult, draw_reference_partition, run_fewshot
from .fusion import FusionParams, RefStats, additive_fuse, fsknns_fuse, multiplicative_fuse, ref_stats, select_lambda
from .knn import SimilarityBank, fsknn_score, knn_score, topk_similarity
from .metrics import MetricReport, aupr, auroc, aurc, ece, evaluate, risk_coverage_curve
from .outcomes import Outcome, OutcomeVector, Task, classify_outcomes, closed_set_accuracy, ground_truth
from .scorers import (
    ScoreVector,
    energy_score,
    entropy_score,
    gini_score,
    maxlogit_score,
    msp_score,
    predictions_from_logits,
    softmax,
)
from .tensorio import EvaluationBundle, load_labels, load_matrix, validate_bundle, write_labels, write_matrix

__version__ = "0.1.0"
