"""Few-shot UOSR protocol.

A handful of labelled OoD samples per OoD class serve as a reference bank.
The OoD pool is shuffled within each class (PCG64, seeded) and cut into
consecutive chunks of ``shots``; repeat ``r`` uses chunk ``r`` of every
class. Every repeat is scored and evaluated independently and the reports
are averaged.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyPool, MissingComponent, ShotsExceedClassSize, ValidationError
from .fusion import FusionParams, additive_fuse, fsknns_fuse, multiplicative_fuse, ref_stats, select_lambda
from .knn import SimilarityBank, effective_k, fsknn_from_topk, topk_similarities
from .metrics import DEFAULT_BINS, FEWSHOT_COLUMNS, MetricReport, evaluate, format_table, mean_report
from .outcomes import OutcomeVector, classify_outcomes
from .scorers import ScoreVector, msp_score, predictions_from_logits, score_logits
from .tensorio import EvaluationBundle

METHODS = ("u0", "knn", "fsknn", "fsknn+s", "fsknn*s", "fsknns")


@dataclass(frozen=True)
class FewShotConfig:
    shots: int = 5
    k: int = 5
    alpha: float = 50.0
    beta: float = 1.0
    seed: int = 0
    scorer0: str = "msp"
    temperature: float = 1.0
    exclude_reference: bool = True
    lam: float | None = None  # fixed gate threshold; None derives it per repeat
    n_bins: int = DEFAULT_BINS
    threads: int = 1

    def __post_init__(self):
        if self.shots < 1:
            raise ValidationError(f"shots must be >= 1, got {self.shots}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        FusionParams(alpha=self.alpha, beta=self.beta)


def draw_reference_partition(class_ids, shots: int, seed: int) -> list[np.ndarray]:
    """Split the OoD pool into per-repeat reference index sets.

    Returns ``floor(min_class_count / shots)`` sorted index arrays, each holding
    ``shots`` indices of every class. Leftover samples are not used.
    """
    class_ids = np.asarray(class_ids)
    if class_ids.size == 0:
        raise EmptyPool("empty reference pool")
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    rng = np.random.default_rng(seed)
    classes = np.unique(class_ids)
    shuffled = [rng.permutation(np.flatnonzero(class_ids == c)) for c in classes]
    smallest = min(len(s) for s in shuffled)
    if smallest < shots:
        c = classes[int(np.argmin([len(s) for s in shuffled]))]
        raise ShotsExceedClassSize(f"OoD class {c} has {smallest} samples, fewer than shots={shots}")
    n_repeats = smallest // shots
    return [
        np.sort(np.concatenate([s[r * shots:(r + 1) * shots] for s in shuffled]))
        for r in range(n_repeats)
    ]


def partition_digest(partitions) -> str:
    h = hashlib.sha256()
    for part in partitions:
        h.update(np.asarray(part, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()


@dataclass
class FewShotResult:
    config: FewShotConfig
    reports: dict[str, list[MetricReport]]  # method -> per-repeat reports
    partitions: list[np.ndarray]
    lambdas: list[float]
    ref_stats: list[dict]
    n_unused: int
    mean_reports: dict[str, MetricReport] = field(init=False)

    def __post_init__(self):
        self.mean_reports = {m: mean_report(r) for m, r in self.reports.items()}

    @property
    def n_repeats(self) -> int:
        return len(self.partitions)

    @property
    def per_repeat(self) -> list[MetricReport]:
        return self.reports["fsknns"]

    @property
    def mean_report(self) -> MetricReport:
        return self.mean_reports["fsknns"]

    def row_name(self, method: str) -> str:
        return self.config.scorer0 if method == "u0" else method

    def table(self, fmt: str = "markdown", methods=METHODS) -> str:
        rows = [(self.row_name(m), self.mean_reports[m]) for m in methods]
        return format_table(rows, FEWSHOT_COLUMNS, fmt)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_repeats": self.n_repeats,
            "n_unused": self.n_unused,
            "partition_digest": partition_digest(self.partitions),
            "partitions": [p.tolist() for p in self.partitions],
            "lambdas": self.lambdas,
            "ref_stats": self.ref_stats,
            "mean": {self.row_name(m): r.to_dict() for m, r in self.mean_reports.items()},
            "per_repeat": {
                self.row_name(m): [r.to_dict() for r in reps] for m, reps in self.reports.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _require(bundle: EvaluationBundle, *names):
    for name in names:
        if getattr(bundle, name) is None:
            raise MissingComponent(f"missing {name.replace('_', ' ')}")


class _Prepared:
    """Repeat-independent quantities shared by every repeat (and every sweep cell with the same K)."""

    def __init__(self, bundle: EvaluationBundle, cfg: FewShotConfig):
        _require(bundle, "train_features", "test_features", "test_logits", "test_labels",
                 "ood_features", "ood_logits", "ood_class_ids")
        self.n_test = bundle.n_test
        self.n_ood = bundle.n_ood
        logits = np.vstack([bundle.test_logits, bundle.ood_logits])
        preds = predictions_from_logits(bundle.test_logits)
        self.outcomes = classify_outcomes(preds, bundle.test_labels, self.n_ood)
        self.u0 = score_logits(cfg.scorer0, logits, cfg.temperature)
        self.confidence = 1.0 - msp_score(logits, cfg.temperature).scores
        self.features = np.vstack([bundle.test_features, bundle.ood_features])
        train_bank = SimilarityBank(bundle.train_features)
        self.k_train = effective_k(cfg.k, len(train_bank))
        self.train_top = topk_similarities(self.features, train_bank, self.k_train, cfg.threads)
        self.pool = SimilarityBank(bundle.ood_features)
        self.class_ids = bundle.ood_class_ids


def _run_repeat(prep: _Prepared, cfg: FewShotConfig, ref_idx: np.ndarray):
    ref_bank = prep.pool.subset(ref_idx)
    k_ref = effective_k(cfg.k, len(ref_bank))
    ref_top = topk_similarities(prep.features, ref_bank, k_ref, cfg.threads)
    u1_all = fsknn_from_topk(prep.train_top, ref_top)

    stats = ref_stats(u1_all[prep.n_test + ref_idx])
    lam = cfg.lam if cfg.lam is not None else select_lambda(stats, cfg.beta)
    params = FusionParams(alpha=cfg.alpha, beta=cfg.beta, lam=lam)

    keep = np.ones(len(prep.features), dtype=bool)
    if cfg.exclude_reference:
        keep[prep.n_test + ref_idx] = False
    outcomes = OutcomeVector(prep.outcomes.outcomes[keep])
    conf = prep.confidence[keep]
    u0 = ScoreVector(prep.u0.scores[keep], cfg.scorer0, dict(prep.u0.params))
    u1 = ScoreVector(u1_all[keep], "fsknn", {"k": cfg.k, "k_eff_train": prep.k_train, "k_eff_ref": k_ref})
    knn = ScoreVector(1.0 - prep.train_top[keep], "knn", {"k": cfg.k, "k_eff_train": prep.k_train})
    scores = {
        "u0": u0,
        "knn": knn,
        "fsknn": u1,
        "fsknn+s": additive_fuse(u0, u1),
        "fsknn*s": multiplicative_fuse(u0, u1),
        "fsknns": fsknns_fuse(u0, u1, params),
    }
    reports = {m: evaluate(s, outcomes, conf, cfg.n_bins) for m, s in scores.items()}
    return reports, lam, stats


def run_fewshot(bundle: EvaluationBundle, cfg: FewShotConfig = FewShotConfig(), _prep: _Prepared | None = None) -> FewShotResult:
    _require(bundle, "ood_class_ids")
    partitions = draw_reference_partition(bundle.ood_class_ids, cfg.shots, cfg.seed)
    prep = _prep if _prep is not None else _Prepared(bundle, cfg)
    reports = {m: [] for m in METHODS}
    lambdas, stats = [], []
    for ref_idx in partitions:
        rep, lam, st = _run_repeat(prep, cfg, ref_idx)
        for m in METHODS:
            reports[m].append(rep[m])
        lambdas.append(lam)
        stats.append(asdict(st))
    used = sum(len(p) for p in partitions)
    return FewShotResult(
        config=cfg,
        reports=reports,
        partitions=partitions,
        lambdas=lambdas,
        ref_stats=stats,
        n_unused=bundle.n_ood - used,
    )
