"""Synthetic score distributions and feature bundles with known InC/InW/OoD structure."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadSpec, IoFailure
from .outcomes import Outcome, OutcomeVector
from .scorers import ScoreVector
from .tensorio import EvaluationBundle

_DISTS = {"gaussian": 2, "beta": 2, "point": 1}


@dataclass(frozen=True)
class GroupSpec:
    """Score distribution for one outcome group: gaussian(mu, sigma), beta(a, b) or point(v)."""

    n: int
    dist: str = "gaussian"
    params: tuple[float, ...] = (0.0, 1.0)
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n < 0:
            raise BadSpec(f"group size must be >= 0, got {self.n}")
        if self.dist not in _DISTS:
            raise BadSpec(f"unknown distribution {self.dist!r}")
        if len(self.params) != _DISTS[self.dist]:
            raise BadSpec(f"{self.dist} takes {_DISTS[self.dist]} parameters, got {len(self.params)}")
        if self.dist == "gaussian" and self.params[1] < 0:
            raise BadSpec("gaussian sigma must be >= 0")
        if self.dist == "beta" and min(self.params) <= 0:
            raise BadSpec("beta parameters must be > 0")
        if self.clip is not None and self.clip[0] > self.clip[1]:
            raise BadSpec(f"clip range {self.clip} is empty")

    @classmethod
    def gaussian(cls, n, mu, sigma, clip=None):
        return cls(n, "gaussian", (mu, sigma), clip)

    @classmethod
    def beta(cls, n, a, b, clip=None):
        return cls(n, "beta", (a, b), clip)

    @classmethod
    def point(cls, n, v):
        return cls(n, "point", (v,))

    @classmethod
    def from_dict(cls, d: dict) -> GroupSpec:
        try:
            clip = d.get("clip")
            return cls(int(d["n"]), d.get("dist", "gaussian"), tuple(map(float, d["params"])),
                       None if clip is None else (float(clip[0]), float(clip[1])))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"bad group spec {d!r}: {exc}") from None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "gaussian":
            x = rng.normal(self.params[0], self.params[1], size=self.n)
        elif self.dist == "beta":
            x = rng.beta(self.params[0], self.params[1], size=self.n)
        else:
            x = np.full(self.n, self.params[0], dtype=np.float64)
        if self.clip is not None:
            x = np.clip(x, *self.clip)
        return x


@dataclass(frozen=True)
class ClusterSpec:
    n: int
    center: tuple[float, ...]
    spread: float = 0.0
    class_id: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise BadSpec(f"cluster size must be >= 0, got {self.n}")
        if self.spread < 0:
            raise BadSpec(f"spread must be >= 0, got {self.spread}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def from_dict(cls, d: dict) -> ClusterSpec:
        try:
            return cls(int(d["n"]), tuple(d["center"]), float(d.get("spread", 0.0)), int(d.get("class_id", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"bad cluster spec {d!r}: {exc}") from None


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_scores(inc: GroupSpec, inw: GroupSpec, ood: GroupSpec, seed: int = 0):
    """Draw uncertainty scores per group; returns (ScoreVector, OutcomeVector) in InC, InW, OoD order."""
    groups = (inc, inw, ood)
    if sum(g.n for g in groups) < 1:
        raise BadSpec("no samples requested")
    rngs = _streams(seed, 3)
    scores = np.concatenate([g.sample(r) for g, r in zip(groups, rngs)])
    codes = np.concatenate([np.full(g.n, o, dtype=np.int8) for g, o in zip(groups, Outcome)])
    params = {"seed": seed, "groups": [[g.dist, list(g.params)] for g in groups]}
    return ScoreVector(scores, "synthetic", params), OutcomeVector(codes)


def class_centers(train: list[ClusterSpec]) -> np.ndarray:
    """Per-class center: size-weighted mean of that class's training cluster centers."""
    if not train:
        raise BadSpec("no training clusters")
    n_classes = max(c.class_id for c in train) + 1
    dim = len(train[0].center)
    centers = np.zeros((n_classes, dim))
    weight = np.zeros(n_classes)
    for c in train:
        if len(c.center) != dim:
            raise BadSpec("cluster centers disagree in dimension")
        if c.class_id < 0:
            raise BadSpec(f"negative class id {c.class_id}")
        w = max(c.n, 1)
        centers[c.class_id] += w * np.asarray(c.center)
        weight[c.class_id] += w
    if (weight == 0).any():
        raise BadSpec(f"classes {np.flatnonzero(weight == 0).tolist()} have no training cluster")
    return centers / weight[:, None]


def distance_logits(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """logit_c = -||x - center_c||, so the argmax is the nearest center."""
    diff = x[:, None, :] - centers[None, :, :]
    return -np.sqrt((diff * diff).sum(axis=2))


def _sample_clusters(specs, rng, dim):
    feats, ids = [], []
    for spec in specs:
        if len(spec.center) != dim:
            raise BadSpec(f"cluster center has dim {len(spec.center)}, expected {dim}")
        feats.append(np.asarray(spec.center) + spec.spread * rng.standard_normal((spec.n, dim)))
        ids.append(np.full(spec.n, spec.class_id, dtype=np.int64))
    if not feats:
        return np.zeros((0, dim)), np.zeros(0, dtype=np.int64)
    return np.vstack(feats), np.concatenate(ids)


def gen_bundle(train, test_ind, ood, seed: int = 0) -> EvaluationBundle:
    """Sample features around cluster centers and synthesize distance-based logits."""
    centers = class_centers(list(train))
    dim = centers.shape[1]
    n_classes = len(centers)
    for spec in test_ind:
        if not 0 <= spec.class_id < n_classes:
            raise BadSpec(f"test cluster class {spec.class_id} outside [0, {n_classes})")
    r_train, r_test, r_ood = _streams(seed, 3)
    train_x, train_y = _sample_clusters(train, r_train, dim)
    test_x, test_y = _sample_clusters(test_ind, r_test, dim)
    ood_x, ood_ids = _sample_clusters(ood, r_ood, dim)
    if len(test_x) == 0 or len(ood_x) == 0:
        raise BadSpec("need at least one test and one OoD sample")
    return EvaluationBundle(
        train_features=train_x,
        train_labels=train_y,
        test_features=test_x,
        test_logits=distance_logits(test_x, centers),
        test_labels=test_y,
        ood_features=ood_x,
        ood_logits=distance_logits(ood_x, centers),
        ood_class_ids=ood_ids,
    )


# InC confidences are shared by every scenario; only the InW layout changes.
_CALIB_INC = ((45, 0.9), (35, 0.7))
CALIBRATION_SCENARIOS = {
    "a-inw-overconfident": ((20, 0.95),),
    "b-separable-miscalibrated": ((20, 0.6),),
    "c-calibrated": ((5, 0.9), (15, 0.7)),
    "d-separable-low": ((20, 0.3),),
    "e-separable-near-zero": ((20, 0.05),),
}


def calibration_scenarios(seed: int = 0):
    """Five InD-only confidence layouts whose ECE and SP-AUROC orderings disagree.

    Returns a list of ``(uncertainty ScoreVector, correct flags, scenario_id)``;
    uncertainty is ``1 - confidence``. The seed only permutes sample order.
    """
    out = []
    for rng, (sid, inw) in zip(_streams(seed, len(CALIBRATION_SCENARIOS)), CALIBRATION_SCENARIOS.items()):
        conf = np.concatenate([np.full(n, v) for n, v in _CALIB_INC + inw])
        n_inc = sum(n for n, _ in _CALIB_INC)
        correct = np.r_[np.ones(n_inc, dtype=np.int8), np.zeros(len(conf) - n_inc, dtype=np.int8)]
        perm = rng.permutation(len(conf))
        conf, correct = conf[perm], correct[perm]
        out.append((ScoreVector(1.0 - conf, "confidence", {"scenario": sid}), correct, sid))
    return out


def fewshot_demo_specs(dim: int = 16, n_train: int = 300, n_test: int = 300, n_ood: int = 100):
    """Cluster layout with feature-inseparable InW and an OoD class that the classifier is confident on.

    Three InD classes sit on orthogonal axes; a fourth training cluster with the
    same label as class 0 fills the region between classes 0 and 1 so KNN sees
    boundary samples as familiar. Two OoD classes sit close (in Euclidean
    distance) to class 2, tilted off its axis, so softmax is confident on them
    while cosine similarity to the reference shots separates them.
    """
    e = np.eye(dim)
    c = [6.0 * e[i] for i in range(3)]
    mid = 3.0 * (e[0] + e[1])
    train = [ClusterSpec(n_train, tuple(ci), 1.0, i) for i, ci in enumerate(c)]
    train += [
        ClusterSpec(n_train // 2, tuple(mid), 1.0, 0),
        ClusterSpec(n_train // 2, tuple(mid), 1.0, 1),
    ]
    test_ind = [ClusterSpec(n_test, tuple(ci), 1.0, i) for i, ci in enumerate(c)]
    test_ind += [ClusterSpec(n_test // 2, tuple(mid), 1.0, 0)]
    ood = [
        ClusterSpec(n_ood, tuple(6.0 * e[2] + 4.0 * e[3]), 0.5, 0),
        ClusterSpec(n_ood, tuple(6.0 * e[2] + 4.0 * e[4]), 0.5, 1),
    ]
    return train, test_ind, ood


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadSpec(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise BadSpec(f"{path}: config must be an object with a 'kind' key")
    return cfg


def clusters_from_config(items) -> list[ClusterSpec]:
    if not isinstance(items, list):
        raise BadSpec("cluster lists must be JSON arrays")
    return [ClusterSpec.from_dict(d) for d in items]
