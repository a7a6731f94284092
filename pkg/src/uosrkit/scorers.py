"""Post-hoc uncertainty scorers over logits.

Every scorer returns a :class:`ScoreVector` whose values follow a single
convention: higher means more uncertain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import LengthMismatch, MissingComponent, ValidationError


@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    scorer_id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 1:
            raise LengthMismatch(f"scores must be 1-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError(f"{self.scorer_id}: non-finite score")
        object.__setattr__(self, "scores", arr)

    def __len__(self):
        return len(self.scores)

    def concat(self, other: ScoreVector) -> ScoreVector:
        return ScoreVector(np.concatenate([self.scores, other.scores]), self.scorer_id, dict(self.params))


def _check_temperature(t):
    if not t > 0:
        raise ValidationError(f"temperature must be positive, got {t}")


def _logits(logits) -> np.ndarray:
    if logits is None:
        raise MissingComponent("missing logits")
    arr = np.asarray(logits, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def softmax(logits, t: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / t``, shifted by the row max for stability."""
    _check_temperature(t)
    z = _logits(logits) / t
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if np.ndim(logits) == 1 else p


def msp_score(logits, t: float = 1.0) -> ScoreVector:
    p = softmax(_logits(logits), t)
    return ScoreVector(1.0 - p.max(axis=1), "msp", {"temperature": t})


def entropy_score(logits, t: float = 1.0) -> ScoreVector:
    _check_temperature(t)
    z = _logits(logits) / t
    # log p computed directly from log-sum-exp so saturated rows give exactly 0 * -inf -> 0
    logp = z - logsumexp(z, axis=1, keepdims=True)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1)
    return ScoreVector(np.maximum(h, 0.0), "entropy", {"temperature": t})


def maxlogit_score(logits) -> ScoreVector:
    return ScoreVector(-_logits(logits).max(axis=1), "maxlogit", {})


def energy_score(logits, t: float = 1.0) -> ScoreVector:
    _check_temperature(t)
    z = _logits(logits)
    return ScoreVector(-t * logsumexp(z / t, axis=1), "energy", {"temperature": t})


def gini_score(logits, t: float = 1.0) -> ScoreVector:
    p = softmax(_logits(logits), t)
    return ScoreVector(1.0 - (p * p).sum(axis=1), "gini", {"temperature": t})


def predictions_from_logits(logits) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return _logits(logits).argmax(axis=1).astype(np.int64)


LOGIT_SCORERS = {
    "msp": msp_score,
    "entropy": entropy_score,
    "energy": energy_score,
    "gini": gini_score,
    "maxlogit": lambda logits, t=1.0: maxlogit_score(logits),
}


def score_logits(scorer_id: str, logits, t: float = 1.0) -> ScoreVector:
    try:
        fn = LOGIT_SCORERS[scorer_id]
    except KeyError:
        raise ValidationError(f"unknown logit scorer {scorer_id!r}") from None
    return fn(logits, t)
