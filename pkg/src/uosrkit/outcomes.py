"""Outcome categories (InC / InW / OoD) and task ground truths."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from .errors import EmptyInD, RowCountMismatch


class Outcome(IntEnum):
    INC = 0
    INW = 1
    OOD = 2


class Task(str, Enum):
    UOSR = "uosr"
    OSR = "osr"
    SP = "sp"


# reject (1) / accept (0) per outcome; -1 means "does not participate"
_TASK_TABLE = {
    Task.UOSR: (0, 1, 1),
    Task.OSR: (0, 0, 1),
    Task.SP: (0, 1, -1),
}


@dataclass(frozen=True)
class OutcomeVector:
    outcomes: np.ndarray  # int8 codes from Outcome

    def __post_init__(self):
        arr = np.asarray(self.outcomes, dtype=np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "outcomes", arr)

    def __len__(self):
        return len(self.outcomes)

    @property
    def n_inc(self) -> int:
        return int(np.count_nonzero(self.outcomes == Outcome.INC))

    @property
    def n_inw(self) -> int:
        return int(np.count_nonzero(self.outcomes == Outcome.INW))

    @property
    def n_ood(self) -> int:
        return int(np.count_nonzero(self.outcomes == Outcome.OOD))

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.n_inc, self.n_inw, self.n_ood

    def mask(self, *which: Outcome) -> np.ndarray:
        return np.isin(self.outcomes, [int(w) for w in which])


@dataclass(frozen=True)
class TaskGroundTruth:
    task: Task
    labels: np.ndarray  # 0 accept / 1 reject, over participating samples only
    mask: np.ndarray  # bool over all samples


def classify_outcomes(predictions, labels, n_ood: int) -> OutcomeVector:
    """InD sample i is InC iff ``predictions[i] == labels[i]``; ``n_ood`` OoD samples follow."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise RowCountMismatch(
            f"{len(predictions)} predictions for {len(labels)} labels"
        )
    if n_ood < 0:
        raise ValueError("n_ood must be non-negative")
    ind = np.where(predictions == labels, Outcome.INC, Outcome.INW).astype(np.int8)
    return OutcomeVector(np.concatenate([ind, np.full(n_ood, Outcome.OOD, dtype=np.int8)]))


def ground_truth(task, o: OutcomeVector) -> TaskGroundTruth:
    task = Task(task)
    table = np.asarray(_TASK_TABLE[task], dtype=np.int8)
    full = table[o.outcomes]
    mask = full >= 0
    return TaskGroundTruth(task=task, labels=full[mask].astype(np.int8), mask=mask)


def closed_set_accuracy(o: OutcomeVector) -> float:
    n_ind = o.n_inc + o.n_inw
    if n_ind == 0:
        raise EmptyInD("no in-distribution samples")
    return o.n_inc / n_ind
