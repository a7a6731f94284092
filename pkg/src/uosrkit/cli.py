"""Command-line front end.

Exit codes: 0 success, 1 IO failure, 2 validation/config error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import synth
from .errors import BadSpec, EmptyInput, IoFailure, MissingComponent, UosrError, ValidationError
from .fewshot import METHODS, FewShotConfig, run_fewshot
from .knn import knn_score
from .metrics import DEFAULT_BINS, EVAL_COLUMNS, evaluate, format_table
from .outcomes import Outcome, OutcomeVector, classify_outcomes
from .scorers import LOGIT_SCORERS, msp_score, predictions_from_logits, score_logits
from .sweep import SweepGrid, sweep, to_csv, to_json
from .tensorio import (
    EvaluationBundle,
    atomic_write_bytes,
    load_labels,
    load_matrix,
    save_bundle,
    validate_bundle,
    write_labels,
    write_matrix,
)

SCORERS = sorted(LOGIT_SCORERS) + ["knn"]

DEFAULTS = {
    "scorer": "msp",
    "temperature": 1.0,
    "k": 5,
    "alpha": 50.0,
    "beta": 1.0,
    "shots": 5,
    "seed": 0,
    "bins": DEFAULT_BINS,
    "format": "json",
    "threads": 1,
    "keep_reference": False,
}

BUNDLE_FLAGS = {
    "train_feats": "train_features",
    "train_labels": "train_labels",
    "test_feats": "test_features",
    "test_logits": "test_logits",
    "test_labels": "test_labels",
    "ood_feats": "ood_features",
    "ood_logits": "ood_logits",
    "ood_class_ids": "ood_class_ids",
}
_LABEL_FLAGS = {"train_labels", "test_labels", "ood_class_ids", "test_preds"}


def _settings(args) -> dict:
    """Built-in defaults < config file < explicit flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
        merged.update({k.replace("-", "_"): v for k, v in cfg.items()})
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    return merged


def _load_components(s: dict) -> dict:
    out = {}
    for flag in list(BUNDLE_FLAGS) + ["test_preds"]:
        path = s.get(flag)
        if path is None:
            continue
        out[flag] = load_labels(path) if flag in _LABEL_FLAGS else load_matrix(path)
    return out


def _bundle(parts: dict) -> EvaluationBundle:
    for flag, name in (("test_labels", "test labels"), ("test_feats", "test features"), ("ood_feats", "ood features")):
        if flag not in parts:
            raise MissingComponent(f"missing {name}")
    return EvaluationBundle(**{BUNDLE_FLAGS[f]: v for f, v in parts.items() if f in BUNDLE_FLAGS})


def _n_classes(s, parts) -> int:
    if s.get("n_classes") is not None:
        return int(s["n_classes"])
    if "test_logits" in parts:
        return parts["test_logits"].shape[1]
    labels = [parts[f] for f in ("test_labels", "train_labels", "test_preds") if f in parts]
    return int(max(int(l.max()) for l in labels)) + 1


def _write_output(path, text: str) -> None:
    if path is None:
        return
    atomic_write_bytes(path, text.encode())


def _report_text(report, fmt: str, name: str) -> str:
    if fmt == "json":
        return report.to_json() + "\n"
    return format_table([(name, report)], EVAL_COLUMNS, fmt)


def _summary(report) -> str:
    def pct(v):
        return "-" if v is None else f"{100 * v:.2f}"

    def raw(v):
        return "-" if v is None else f"{v:.2f}"

    lines = [
        f"scorer: {report.scorer_id}",
        f"counts: InC={report.n_inc} InW={report.n_inw} OoD={report.n_ood}",
        f"Acc.: {raw(report.accuracy)}",
        f"AURC (x1e3): {raw(report.aurc_uosr)}",
        f"AUROC UOSR: {pct(report.auroc_uosr)}",
        f"AUROC OSR: {pct(report.auroc_osr)}",
        f"AUROC InC/InW: {pct(report.auroc_inc_inw)}",
        f"AUROC InC/OoD: {pct(report.auroc_inc_ood)}",
        f"AUROC InW/OoD: {pct(report.auroc_inw_ood)}",
        f"AUPR UOSR: {pct(report.aupr_uosr)}",
        f"ECE: {'-' if report.ece is None else f'{report.ece:.4f}'}",
    ]
    return "\n".join(lines)


def cmd_ingest(args) -> int:
    paths = args.paths
    if len(paths) % 2:
        raise ValidationError("ingest expects IN OUT pairs")
    for src, dst in zip(paths[::2], paths[1::2]):
        if args.kind == "labels":
            write_labels(load_labels(src, "csv"), dst)
        else:
            write_matrix(load_matrix(src, "csv"), dst)
        print(f"{src} -> {dst}")
    return 0


def cmd_eval(args) -> int:
    s = _settings(args)
    parts = _load_components(s)
    bundle = _bundle(parts)
    n_classes = _n_classes(s, parts)
    validate_bundle(bundle, n_classes)

    if "test_preds" in parts:
        preds = parts["test_preds"]
    elif bundle.test_logits is not None:
        preds = predictions_from_logits(bundle.test_logits)
    else:
        raise MissingComponent("missing test logits or predictions")
    outcomes = classify_outcomes(preds, bundle.test_labels, bundle.n_ood)

    scorer, t = s["scorer"], float(s["temperature"])
    if scorer == "knn":
        if bundle.train_features is None:
            raise MissingComponent("missing train features")
        feats = np.vstack([bundle.test_features, bundle.ood_features])
        scores = knn_score(feats, bundle.train_features, int(s["k"]), int(s["threads"]))
    elif scorer in LOGIT_SCORERS:
        if bundle.test_logits is None:
            raise MissingComponent("missing test logits")
        if bundle.ood_logits is None:
            raise MissingComponent("missing ood logits")
        scores = score_logits(scorer, np.vstack([bundle.test_logits, bundle.ood_logits]), t)
    else:
        raise ValidationError(f"unknown scorer {scorer!r}; choose from {', '.join(SCORERS)}")

    confidence = None
    if bundle.test_logits is not None and bundle.ood_logits is not None:
        confidence = 1.0 - msp_score(np.vstack([bundle.test_logits, bundle.ood_logits]), t).scores
    report = evaluate(scores, outcomes, confidence, int(s["bins"]))
    _write_output(s.get("out"), _report_text(report, s["format"], scorer))
    print(_summary(report))
    return 0


def _fewshot_cfg(s) -> FewShotConfig:
    return FewShotConfig(
        shots=int(s["shots"]),
        k=int(s["k"]),
        alpha=float(s["alpha"]),
        beta=float(s["beta"]),
        seed=int(s["seed"]),
        scorer0=s["scorer"],
        temperature=float(s["temperature"]),
        exclude_reference=not s["keep_reference"],
        lam=None if s.get("lam") is None else float(s["lam"]),
        n_bins=int(s["bins"]),
        threads=int(s["threads"]),
    )


def _fewshot_bundle(s):
    parts = _load_components(s)
    bundle = _bundle(parts)
    validate_bundle(bundle, _n_classes(s, parts))
    if s["scorer"] not in LOGIT_SCORERS:
        raise ValidationError(f"few-shot u0 scorer must be a logit scorer, got {s['scorer']!r}")
    return bundle


def _rows(spec) -> list[str]:
    if spec is None:
        return list(METHODS)
    aliases = {m: m for m in METHODS}
    aliases.update({"softmax": "u0", "msp": "u0", "s": "u0"})
    rows = []
    for item in str(spec).split(","):
        item = item.strip().lower()
        if item not in aliases:
            raise ValidationError(f"unknown row {item!r}; choose from {', '.join(METHODS)}")
        rows.append(aliases[item])
    return rows


def cmd_fewshot(args) -> int:
    s = _settings(args)
    bundle = _fewshot_bundle(s)
    result = run_fewshot(bundle, _fewshot_cfg(s))
    rows = _rows(s.get("rows"))
    if s["format"] == "json":
        doc = result.to_dict()
        doc["table"] = {result.row_name(m): doc["mean"][result.row_name(m)] for m in rows}
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    else:
        text = result.table(s["format"], rows)
    _write_output(s.get("out"), text)
    print(f"repeats: {result.n_repeats} (unused OoD samples: {result.n_unused})")
    print(result.table("markdown", rows), end="")
    return 0


def _floats(spec, cast=float):
    if spec is None:
        return ()
    try:
        return tuple(cast(x) for x in str(spec).split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"bad list {spec!r}") from None


def cmd_sweep(args) -> int:
    s = _settings(args)
    bundle = _fewshot_bundle(s)
    grid = SweepGrid(
        ks=_floats(s.get("ks"), int),
        alphas=_floats(s.get("alphas")),
        betas=_floats(s.get("betas")),
    )
    rows = sweep(bundle, _fewshot_cfg(s), grid)
    text = to_json(rows) + "\n" if s["format"] == "json" else to_csv(rows)
    _write_output(s.get("out"), text)
    print(to_csv(rows), end="")
    return 0


def cmd_synth(args) -> int:
    cfg = synth.load_config(args.config)
    kind = cfg["kind"]
    seed = int(cfg.get("seed", 0) if args.seed is None else args.seed)
    prefix = args.out
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": kind, "seed": seed, "files": {}}
    if kind == "scores":
        try:
            groups = [synth.GroupSpec.from_dict(cfg[g]) for g in ("inc", "inw", "ood")]
        except KeyError as exc:
            raise BadSpec(f"scores config needs inc/inw/ood groups, missing {exc}") from None
        scores, outcomes = synth.gen_scores(*groups, seed=seed)
        manifest["files"]["scores"] = f"{prefix}_scores.bin"
        manifest["files"]["outcomes"] = f"{prefix}_outcomes.bin"
        write_matrix(scores.scores, manifest["files"]["scores"])
        write_labels(outcomes.outcomes, manifest["files"]["outcomes"])
    elif kind in ("bundle", "fewshot-demo"):
        if kind == "bundle":
            try:
                specs = [synth.clusters_from_config(cfg[g]) for g in ("train", "test_ind", "ood")]
            except KeyError as exc:
                raise BadSpec(f"bundle config needs train/test_ind/ood, missing {exc}") from None
        else:
            specs = synth.fewshot_demo_specs(**cfg.get("params", {}))
        bundle = synth.gen_bundle(*specs, seed=seed)
        manifest["files"] = save_bundle(bundle, prefix)
    elif kind == "calibration":
        for scores, correct, sid in synth.calibration_scenarios(seed):
            outcomes = np.where(correct == 1, Outcome.INC, Outcome.INW).astype(np.int64)
            spath, opath = f"{prefix}_{sid}_scores.bin", f"{prefix}_{sid}_outcomes.bin"
            write_matrix(scores.scores, spath)
            write_labels(outcomes, opath)
            manifest["files"][sid] = {"scores": spath, "outcomes": opath}
    else:
        raise BadSpec(f"unknown synth kind {kind!r}")
    _write_output(f"{prefix}_manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {prefix}_manifest.json")
    return 0


def histogram(scores, outcomes: OutcomeVector, bins: int):
    """Per-group counts over equal-width bins spanning [min, max] of the pooled scores."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("no scores to histogram")
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    lo, hi = float(s.min()), float(s.max())
    counts = {}
    for o in Outcome:
        sel = s[outcomes.outcomes == o]
        if lo < hi:
            counts[o], edges = np.histogram(sel, bins=bins, range=(lo, hi))
        else:
            edges = np.full(bins + 1, lo)
            counts[o] = np.zeros(bins, dtype=np.int64)
            counts[o][0] = sel.size
    return edges, counts


def cmd_hist(args) -> int:
    scores = load_matrix(args.scores)
    if scores.shape[1] != 1:
        raise ValidationError(f"{args.scores}: expected a single score column, got {scores.shape[1]}")
    codes = load_labels(args.outcomes)
    if len(codes) != len(scores):
        raise ValidationError(f"{len(scores)} scores for {len(codes)} outcomes")
    if codes.min() < 0 or codes.max() > 2:
        raise ValidationError("outcome codes must be 0 (InC), 1 (InW) or 2 (OoD)")
    edges, counts = histogram(scores[:, 0], OutcomeVector(codes), args.bins)
    lines = ["bin_lo,bin_hi,inc,inw,ood"]
    for b in range(args.bins):
        lines.append(
            f"{float(edges[b])!r},{float(edges[b + 1])!r},{counts[Outcome.INC][b]},{counts[Outcome.INW][b]},{counts[Outcome.OOD][b]}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_output(args.out, text)
    else:
        print(text, end="")
    return 0


def _add_common(p, fewshot=False):
    p.add_argument("--config", help="JSON file with flag values (flags win)")
    for flag in list(BUNDLE_FLAGS) + ["test_preds"]:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag)
    p.add_argument("--n-classes", type=int, dest="n_classes")
    p.add_argument("--scorer", choices=SCORERS)
    p.add_argument("--temperature", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--format", choices=["json", "markdown", "csv"])
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    if fewshot:
        p.add_argument("--lam", type=float, help="fixed gate threshold instead of mean - beta*std")
        p.add_argument("--keep-reference", action="store_true", default=None,
                       help="do not remove drawn reference samples from the evaluated OoD set")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uosrkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert CSV files to the binary container")
    p.add_argument("paths", nargs="+", metavar="IN OUT")
    p.add_argument("--kind", choices=["matrix", "labels"], default="matrix")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eval", help="score and evaluate one bundle")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="few-shot protocol with FS-KNN/FS-KNNS")
    _add_common(p, fewshot=True)
    p.add_argument("--rows", help="comma-separated subset of " + ",".join(METHODS))
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("sweep", help="grid over k / alpha / beta")
    _add_common(p, fewshot=True)
    p.add_argument("--ks")
    p.add_argument("--alphas")
    p.add_argument("--betas")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate synthetic scores or bundles")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hist", help="per-group histogram data for score files")
    p.add_argument("--scores", required=True)
    p.add_argument("--outcomes", required=True, help="label file with 0=InC 1=InW 2=OoD")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_hist)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UosrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
