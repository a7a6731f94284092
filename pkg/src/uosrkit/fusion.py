"""Fusing a softmax-family score with the few-shot KNN score."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EmptyInput, LengthMismatch, ValidationError
from .scorers import ScoreVector


@dataclass(frozen=True)
class FusionParams:
    alpha: float = 50.0
    beta: float = 1.0
    lam: float | None = None  # gate threshold; computed from reference scores when None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class RefStats:
    mean: float
    std: float
    n: int


def ref_stats(ref_uncertainties) -> RefStats:
    """Mean and population standard deviation of the reference samples' scores."""
    u = np.asarray(getattr(ref_uncertainties, "scores", ref_uncertainties), dtype=np.float64)
    if u.size == 0:
        raise EmptyInput("no reference scores")
    mean = math.fsum(u) / u.size
    var = math.fsum((u - mean) ** 2) / u.size
    return RefStats(mean=mean, std=math.sqrt(var), n=int(u.size))


def select_lambda(s: RefStats, beta: float) -> float:
    return s.mean - beta * s.std


def _pair(u0, u1):
    a = np.asarray(getattr(u0, "scores", u0), dtype=np.float64)
    b = np.asarray(getattr(u1, "scores", u1), dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"score lengths differ: {a.shape} vs {b.shape}")
    return a, b


def gate_weight(u1, lam: float, alpha: float) -> np.ndarray:
    # expit saturates cleanly to 0/1 without overflow warnings
    return expit(alpha * (np.asarray(u1, dtype=np.float64) - lam))


def fsknns_fuse(u0, u1, p: FusionParams) -> ScoreVector:
    """``u0 + sigmoid(alpha * (u1 - lambda)) * u1``; requires ``p.lam`` to be set."""
    if p.lam is None:
        raise ValidationError("fsknns_fuse needs a gate threshold; use select_lambda first")
    a, b = _pair(u0, u1)
    return ScoreVector(
        a + gate_weight(b, p.lam, p.alpha) * b,
        "fsknns",
        {"alpha": p.alpha, "beta": p.beta, "lambda": p.lam},
    )


def additive_fuse(u0, u1) -> ScoreVector:
    a, b = _pair(u0, u1)
    return ScoreVector(a + b, "fsknn+s")


def multiplicative_fuse(u0, u1) -> ScoreVector:
    a, b = _pair(u0, u1)
    return ScoreVector(a * b, "fsknn*s")
