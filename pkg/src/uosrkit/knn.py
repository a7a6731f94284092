"""Cosine top-K scoring against a training bank (KNN) and a reference bank (FS-KNN).

Queries are processed in fixed-size chunks. Each chunk is one float64 GEMM
against the unit-normalised bank, run with BLAS pinned to one thread, so the
accumulation order for every dot product depends only on the chunk shape and
never on how many worker threads are used.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DimMismatch, KOutOfRange, ZeroVector
from .scorers import ScoreVector

CHUNK_ROWS = 256


class SimilarityBank:
    """Immutable bank of feature rows, cached in unit-normalised form."""

    def __init__(self, features):
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DimMismatch(f"bank must be a non-empty 2-D matrix, got shape {feats.shape}")
        norms = np.linalg.norm(feats, axis=1)
        if (norms == 0).any():
            raise ZeroVector(f"bank row {int(np.flatnonzero(norms == 0)[0])} has zero norm")
        self.norms = norms
        self.unit = feats / norms[:, None]
        self.unit.setflags(write=False)
        self.norms.setflags(write=False)

    def __len__(self):
        return self.unit.shape[0]

    @property
    def dim(self) -> int:
        return self.unit.shape[1]

    def subset(self, idx) -> SimilarityBank:
        bank = object.__new__(SimilarityBank)
        bank.unit = self.unit[np.asarray(idx)]
        bank.norms = self.norms[np.asarray(idx)]
        bank.unit.setflags(write=False)
        bank.norms.setflags(write=False)
        return bank


def _as_bank(bank) -> SimilarityBank:
    return bank if isinstance(bank, SimilarityBank) else SimilarityBank(bank)


def _unit_queries(queries, dim) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[1] != dim:
        raise DimMismatch(f"query dim {q.shape[1]} != bank dim {dim}")
    norms = np.linalg.norm(q, axis=1)
    if (norms == 0).any():
        raise ZeroVector(f"query row {int(np.flatnonzero(norms == 0)[0])} has zero norm")
    return q / norms[:, None]


def effective_k(k: int, bank_rows: int) -> int:
    """``min(k, bank_rows)``; small reference banks (1-shot) get a clamped K."""
    if k < 1:
        raise KOutOfRange(f"k must be >= 1, got {k}")
    return min(k, bank_rows)


def cosine_similarities(queries, bank) -> np.ndarray:
    """Full (n_queries, bank_rows) cosine matrix. Used for small problems and as an oracle input."""
    bank = _as_bank(bank)
    q = _unit_queries(queries, bank.dim)
    with threadpool_limits(limits=1, user_api="blas"):
        return _chunked(q, bank.unit, lambda s: s)


def _chunked(q, unit, reduce):
    parts = []
    for start in range(0, q.shape[0], CHUNK_ROWS):
        parts.append(reduce(np.clip(q[start:start + CHUNK_ROWS] @ unit.T, -1.0, 1.0)))
    return np.concatenate(parts, axis=0)


def kth_largest(sims: np.ndarray, k: int) -> np.ndarray:
    """K-th largest value of each row (duplicates counted separately)."""
    n = sims.shape[1]
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    return np.partition(sims, n - k, axis=1)[:, n - k]


def topk_similarities(queries, bank, k: int, threads: int = 1) -> np.ndarray:
    """K-th largest cosine similarity of every query row against ``bank``."""
    bank = _as_bank(bank)
    if not 1 <= k <= len(bank):
        raise KOutOfRange(f"k={k} outside [1, {len(bank)}]")
    q = _unit_queries(queries, bank.dim)
    starts = range(0, q.shape[0], CHUNK_ROWS)

    def work(start):
        sims = np.clip(q[start:start + CHUNK_ROWS] @ bank.unit.T, -1.0, 1.0)
        return kth_largest(sims, k)

    with threadpool_limits(limits=1, user_api="blas"):
        if threads <= 1 or len(starts) == 1:
            parts = [work(s) for s in starts]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(work, starts))
    return np.concatenate(parts)


def topk_similarity(query, bank, k: int) -> float:
    return float(topk_similarities(query, bank, k)[0])


def knn_score(test, train_bank, k: int = 5, threads: int = 1) -> ScoreVector:
    """``1 - topK`` cosine similarity to the training bank."""
    train_bank = _as_bank(train_bank)
    k_eff = effective_k(k, len(train_bank))
    top = topk_similarities(test, train_bank, k_eff, threads)
    return ScoreVector(1.0 - top, "knn", {"k": k, "k_eff_train": k_eff})


def fsknn_from_topk(train_top, ref_top) -> np.ndarray:
    return 1.0 - np.asarray(train_top) + np.asarray(ref_top)


def fsknn_score(test, train_bank, ref_bank, k: int = 5, threads: int = 1) -> ScoreVector:
    """``1 - topK(train) + topK(reference)``: far from training data and close to known OoD is uncertain."""
    train_bank = _as_bank(train_bank)
    ref_bank = _as_bank(ref_bank)
    if train_bank.dim != ref_bank.dim:
        raise DimMismatch(f"train dim {train_bank.dim} != reference dim {ref_bank.dim}")
    k_train = effective_k(k, len(train_bank))
    k_ref = effective_k(k, len(ref_bank))
    train_top = topk_similarities(test, train_bank, k_train, threads)
    ref_top = topk_similarities(test, ref_bank, k_ref, threads)
    return ScoreVector(
        fsknn_from_topk(train_top, ref_top),
        "fsknn",
        {"k": k, "k_eff_train": k_train, "k_eff_ref": k_ref},
    )
