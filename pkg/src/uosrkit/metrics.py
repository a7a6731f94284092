"""Threshold-free evaluation: AUROC, AUPR, risk-coverage/AURC, ECE and report assembly.

All functions take uncertainty scores (higher = more uncertain) unless the
argument is explicitly called ``confidence``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import (
    EmptyClass,
    EmptyInD,
    EmptyInput,
    InvariantViolation,
    LengthMismatch,
    OutOfRange,
)
from .outcomes import Outcome, OutcomeVector, Task, closed_set_accuracy, ground_truth

MIXTURE_TOL = 1e-9
DEFAULT_BINS = 15


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "scores", x), dtype=np.float64).ravel()


def auroc(neg, pos) -> float:
    """P(pos > neg) + 0.5 P(pos == neg) via the Mann-Whitney U statistic with midranks."""
    neg, pos = _arr(neg), _arr(pos)
    m, n = len(neg), len(pos)
    if m == 0 or n == 0:
        raise EmptyClass(f"auroc needs both classes (neg={m}, pos={n})")
    ranks = rankdata(np.concatenate([neg, pos]), method="average")
    # midranks are half-integers, so this sum is exact in float64
    u = ranks[m:].sum() - n * (n + 1) / 2.0
    return float(u / (m * n))


def aupr(neg, pos) -> float:
    """Average precision with the reject class (``pos``) as positives.

    Tied scores form a single operating point; the segment from recall 0 to
    the first point takes that point's precision.
    """
    neg, pos = _arr(neg), _arr(pos)
    if len(neg) == 0 or len(pos) == 0:
        raise EmptyClass(f"aupr needs both classes (neg={len(neg)}, pos={len(pos)})")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-scores, kind="stable")
    scores, is_pos = scores[order], is_pos[order]
    # last index of each run of tied scores
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp = np.cumsum(is_pos)[ends]
    seen = ends + 1.0
    precision = tp / seen
    recall = tp / len(pos)
    d_recall = np.diff(np.r_[0.0, recall])
    return float(math.fsum(d_recall * precision))


class RiskCoverageCurve(NamedTuple):
    coverage: np.ndarray
    risk: np.ndarray
    theta: np.ndarray  # confidence threshold at each point


def risk_coverage_curve(confidence, correct) -> RiskCoverageCurve:
    """Accept samples in order of decreasing confidence (ties by input index)."""
    conf = _arr(confidence)
    correct = np.asarray(correct).ravel()
    if len(conf) != len(correct):
        raise LengthMismatch(f"{len(conf)} confidences for {len(correct)} correctness flags")
    if len(conf) == 0:
        raise EmptyInput("empty risk-coverage input")
    order = np.argsort(-conf, kind="stable")
    wrong = (correct[order] == 0).astype(np.float64)
    accepted = np.arange(1, len(conf) + 1, dtype=np.float64)
    return RiskCoverageCurve(
        coverage=accepted / len(conf),
        risk=np.cumsum(wrong) / accepted,
        theta=conf[order],
    )


def aurc(curve: RiskCoverageCurve) -> float:
    """Mean selective risk over the n coverage levels, x1000."""
    risk = np.asarray(curve.risk)
    if risk.size == 0:
        raise EmptyInput("empty risk-coverage curve")
    return 1000.0 * math.fsum(risk) / risk.size


def bin_index(confidence, n_bins: int) -> np.ndarray:
    """Bin b owns (b/n_bins, (b+1)/n_bins]; confidence 0 goes to bin 0."""
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, confidence, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


def ece(confidence, correct, n_bins: int = DEFAULT_BINS) -> float:
    conf = _arr(confidence)
    correct = np.asarray(correct, dtype=np.float64).ravel()
    if len(conf) != len(correct):
        raise LengthMismatch(f"{len(conf)} confidences for {len(correct)} correctness flags")
    if len(conf) == 0:
        raise EmptyInput("empty ECE input")
    if n_bins < 1:
        raise OutOfRange(f"n_bins must be >= 1, got {n_bins}")
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise OutOfRange("confidence must lie in [0, 1]")
    idx = bin_index(conf, n_bins)
    parts = []
    for b in np.unique(idx):
        sel = idx == b
        size = int(sel.sum())
        acc = math.fsum(correct[sel]) / size
        avg_conf = math.fsum(conf[sel]) / size
        parts.append(size / len(conf) * abs(acc - avg_conf))
    return math.fsum(parts)


@dataclass
class MetricReport:
    accuracy: float | None = None  # percent
    auroc_uosr: float | None = None
    auroc_osr: float | None = None
    auroc_sp: float | None = None
    auroc_inc_inw: float | None = None
    auroc_inc_ood: float | None = None
    auroc_inw_ood: float | None = None
    aupr_uosr: float | None = None
    aurc_uosr: float | None = None  # x1000
    ece: float | None = None
    n_inc: float = 0
    n_inw: float = 0
    n_ood: float = 0
    scorer_id: str = ""
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def check_mixtures(self, tol: float = MIXTURE_TOL) -> None:
        """Raise InvariantViolation if the pairwise AUROCs don't recombine into the task AUROCs."""
        r = self
        if None not in (r.auroc_uosr, r.auroc_inc_inw, r.auroc_inc_ood):
            mix = (r.n_inw * r.auroc_inc_inw + r.n_ood * r.auroc_inc_ood) / (r.n_inw + r.n_ood)
            if abs(mix - r.auroc_uosr) > tol:
                raise InvariantViolation(f"UOSR mixture identity off by {abs(mix - r.auroc_uosr):.3g}")
        if None not in (r.auroc_osr, r.auroc_inc_ood, r.auroc_inw_ood):
            mix = (r.n_inc * r.auroc_inc_ood + r.n_inw * r.auroc_inw_ood) / (r.n_inc + r.n_inw)
            if abs(mix - r.auroc_osr) > tol:
                raise InvariantViolation(f"OSR mixture identity off by {abs(mix - r.auroc_osr):.3g}")


REPORT_NUMERIC = [f.name for f in fields(MetricReport) if f.name not in ("scorer_id", "params")]


def _maybe(fn, *args):
    try:
        return fn(*args)
    except (EmptyClass, EmptyInD):
        return None


def pairwise_auroc(scores, o: OutcomeVector, neg: Outcome, pos: Outcome) -> float | None:
    s = _arr(scores)
    return _maybe(auroc, s[o.outcomes == neg], s[o.outcomes == pos])


def task_auroc(scores, o: OutcomeVector, task) -> float | None:
    s = _arr(scores)
    gt = ground_truth(task, o)
    sub = s[gt.mask]
    return _maybe(auroc, sub[gt.labels == 0], sub[gt.labels == 1])


def evaluate(scores, outcomes: OutcomeVector, confidence=None, n_bins: int = DEFAULT_BINS) -> MetricReport:
    """Fill a :class:`MetricReport` for one score vector.

    ``confidence`` is an optional per-sample probability (e.g. max softmax),
    full length; only the InD entries are used for ECE. Metrics whose class
    is empty are left as ``None``.
    """
    s = _arr(scores)
    o = outcomes
    if len(s) != len(o):
        raise LengthMismatch(f"{len(s)} scores for {len(o)} outcomes")
    if len(s) == 0:
        raise EmptyInput("nothing to evaluate")

    acc = _maybe(closed_set_accuracy, o)
    gt = ground_truth(Task.UOSR, o)
    inc = o.outcomes == Outcome.INC
    report = MetricReport(
        accuracy=None if acc is None else 100.0 * acc,
        auroc_uosr=task_auroc(s, o, Task.UOSR),
        auroc_osr=task_auroc(s, o, Task.OSR),
        auroc_sp=task_auroc(s, o, Task.SP),
        auroc_inc_inw=pairwise_auroc(s, o, Outcome.INC, Outcome.INW),
        auroc_inc_ood=pairwise_auroc(s, o, Outcome.INC, Outcome.OOD),
        auroc_inw_ood=pairwise_auroc(s, o, Outcome.INW, Outcome.OOD),
        aupr_uosr=_maybe(aupr, s[gt.labels == 0], s[gt.labels == 1]),
        aurc_uosr=aurc(risk_coverage_curve(-s, inc.astype(np.int8))),
        n_inc=o.n_inc,
        n_inw=o.n_inw,
        n_ood=o.n_ood,
        scorer_id=getattr(scores, "scorer_id", ""),
        params=dict(getattr(scores, "params", {})),
    )
    if confidence is not None:
        conf = _arr(confidence)
        if len(conf) != len(o):
            raise LengthMismatch(f"{len(conf)} confidences for {len(o)} outcomes")
        ind = o.outcomes != Outcome.OOD
        if ind.any():
            report.ece = ece(conf[ind], inc[ind].astype(np.int8), n_bins)
    report.check_mixtures()
    return report


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Field-wise arithmetic mean; a field is None if it is None in any report."""
    if not reports:
        raise EmptyInput("no reports to average")
    out = MetricReport(scorer_id=reports[0].scorer_id, params=dict(reports[0].params))
    for name in REPORT_NUMERIC:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            setattr(out, name, None)
        else:
            setattr(out, name, math.fsum(vals) / len(vals))
    return out


# (header, field, kind) in report column order
EVAL_COLUMNS = [
    ("Acc.", "accuracy", "raw"),
    ("AURC", "aurc_uosr", "raw"),
    ("UOSR", "auroc_uosr", "pct"),
    ("OSR", "auroc_osr", "pct"),
    ("InC/InW", "auroc_inc_inw", "pct"),
    ("InC/OoD", "auroc_inc_ood", "pct"),
    ("InW/OoD", "auroc_inw_ood", "pct"),
]
FEWSHOT_COLUMNS = [
    ("AURC", "aurc_uosr", "raw"),
    ("UOSR", "auroc_uosr", "pct"),
    ("OSR", "auroc_osr", "pct"),
    ("InC/OoD", "auroc_inc_ood", "pct"),
    ("InC/InW", "auroc_inc_inw", "pct"),
]


def _cell(report, attr, kind) -> str:
    v = getattr(report, attr)
    if v is None:
        return "-"
    return f"{100.0 * v:.2f}" if kind == "pct" else f"{v:.2f}"


def format_table(rows, columns=EVAL_COLUMNS, fmt: str = "markdown", header: bool = True) -> str:
    """Render ``[(row_name, MetricReport), ...]`` as markdown or CSV."""
    heads = ["Method"] + [c[0] for c in columns]
    lines = []
    body = [[name] + [_cell(r, a, k) for _, a, k in columns] for name, r in rows]
    if fmt == "markdown":
        if header:
            lines.append("| " + " | ".join(heads) + " |")
            lines.append("|" + "|".join("---" for _ in heads) + "|")
        lines += ["| " + " | ".join(b) + " |" for b in body]
    elif fmt == "csv":
        if header:
            lines.append(",".join(heads))
        lines += [",".join(b) for b in body]
    else:
        raise ValueError(f"unknown table format {fmt!r}")
    return "\n".join(lines) + "\n"
