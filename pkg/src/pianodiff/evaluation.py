"""Experimental protocol: seeded stratified splits, balanced accuracy,
probability-derived difficulty ranking, Spearman correlations, window-size
ablation.

For ranking, a score's difficulty scalar is the expectation of the class
number under its probability vector; averaging per-window expectations is
identical to the expectation of averaged probabilities (linearity), so both
tree variants share one ranking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .deepgru import GruNetConfig, forward as gru_predict, train_deepgru
from .errors import DataError, TrainingError
from .features import FeatureKind, FeatureMatrix, flatten, window_segments
from .gbt import (
    GbtHyperParams,
    WindowDataset,
    fit_gbt,
    predict_proba,
    predict_score_avg,
    random_search,
)
from .metrics import balanced_accuracy, expected_class, spearman
from .score import DifficultyLabel

CLASSIFIERS = ("gbt_window", "gbt_avg", "deepgru")
METRIC_KEYS = ("train_acc", "test_acc", "spearman_bartok", "spearman_henle")


@dataclass
class CorpusEntry:
    """A score's precomputed feature matrices plus its labels."""

    score_id: str
    label: DifficultyLabel
    matrices: dict[FeatureKind, FeatureMatrix]


@dataclass
class ExperimentSpec:
    features: tuple = (FeatureKind.DP_VELOCITY,)
    classifiers: tuple = ("gbt_avg",)
    seeds: tuple = tuple(range(50))
    train_fraction: float = 0.8
    window: int = 9
    stride: int = 1
    search_configs: int = 0  # 0: skip search, use gbt_hyper as-is
    gbt_hyper: GbtHyperParams = field(default_factory=GbtHyperParams)
    gru_config: GruNetConfig = field(default_factory=GruNetConfig.desk)

    def __post_init__(self):
        self.features = tuple(FeatureKind(f) for f in self.features)
        self.classifiers = tuple(self.classifiers)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise DataError("seeds must be nonempty")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train_fraction must be in (0, 1)")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise DataError(f"unknown classifier {c!r}")

    def to_dict(self) -> dict:
        return {
            "features": [f.value for f in self.features],
            "classifiers": list(self.classifiers),
            "seeds": list(self.seeds),
            "train_fraction": self.train_fraction,
            "window": self.window,
            "stride": self.stride,
            "search_configs": self.search_configs,
            "gbt_hyper": asdict(self.gbt_hyper),
            "gru_config": asdict(self.gru_config),
        }


def split(entries: list[CorpusEntry], seed: int, train_fraction: float = 0.8):
    """Deterministic score-level split, stratified by class.

    Per class the test size is round-half-up of (1 - train_fraction) * n;
    the remainder trains.
    """
    by_class: dict[int, list[int]] = {}
    for idx, entry in enumerate(entries):
        by_class.setdefault(entry.label.class3, []).append(idx)
    train_idx, test_idx = [], []
    rng = np.random.default_rng([seed, 2654435769])
    for cls in sorted(by_class):
        members = by_class[cls]
        if len(members) < 2:
            raise DataError(f"class {cls} has fewer than 2 scores")
        perm = rng.permutation(len(members))
        n_test = int(np.floor((1.0 - train_fraction) * len(members) + 0.5))
        n_test = min(max(n_test, 1), len(members) - 1)
        for pos, p in enumerate(perm):
            (test_idx if pos < n_test else train_idx).append(members[p])
    return sorted(train_idx), sorted(test_idx)


@dataclass
class CellResult:
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    spearman_bartok: list = field(default_factory=list)
    spearman_henle: list = field(default_factory=list)
    error: str | None = None

    def summary(self) -> dict:
        out = {}
        for key in METRIC_KEYS:
            vals = np.array(getattr(self, key), dtype=float)
            if len(vals) == 0 or np.all(np.isnan(vals)):
                out[key] = {"mean": None, "std": None}
            else:
                out[key] = {
                    "mean": float(np.nanmean(vals)),
                    "std": float(np.nanstd(vals)),
                }
        return out


@dataclass
class EvaluationReport:
    spec: ExperimentSpec
    cells: dict  # (FeatureKind, classifier) -> CellResult

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "spec": self.spec.to_dict(),
            "cells": {
                f"{kind.value}/{clf}": {
                    "train_acc": cell.train_acc,
                    "test_acc": cell.test_acc,
                    "spearman_bartok": cell.spearman_bartok,
                    "spearman_henle": cell.spearman_henle,
                    "summary": cell.summary(),
                    "error": cell.error,
                }
                for (kind, clf), cell in sorted(
                    self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1])
                )
            },
        }
        return json.dumps(doc, separators=(",", ":"))

    def to_markdown(self) -> str:
        def fmt(cell: CellResult, key: str, scale=100.0, digits=0) -> str:
            s = cell.summary()[key]
            if s["mean"] is None:
                return "-"
            return f"{s['mean'] * scale:.{digits}f}±{s['std'] * scale:.{digits}f}"

        clfs = [c for c in CLASSIFIERS if c in self.spec.classifiers]
        lines = ["## Classification accuracy (%)", ""]
        header = "| feature | " + " | ".join(f"{c} train | {c} test" for c in clfs) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (1 + 2 * len(clfs)))
        for kind in self.spec.features:
            row = [kind.value]
            for clf in clfs:
                cell = self.cells.get((kind, clf))
                if cell is None or cell.error:
                    row += ["-", "-"]
                else:
                    row += [fmt(cell, "train_acc"), fmt(cell, "test_acc")]
            lines.append("| " + " | ".join(row) + " |")
        lines += ["", "## Spearman rank correlation", ""]
        header = "| feature | " + " | ".join(f"{c} Bartok | {c} Henle" for c in clfs) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (1 + 2 * len(clfs)))
        for kind in self.spec.features:
            row = [kind.value]
            for clf in clfs:
                cell = self.cells.get((kind, clf))
                if cell is None or cell.error:
                    row += ["-", "-"]
                else:
                    row += [
                        fmt(cell, "spearman_bartok", 1.0, 2),
                        fmt(cell, "spearman_henle", 1.0, 2),
                    ]
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"


def _window_dataset(entries, idxs, kind, w, s) -> WindowDataset:
    xs, ys, sids = [], [], []
    for i in idxs:
        entry = entries[i]
        for seg in window_segments(
            entry.matrices[kind], w, s, entry.score_id, entry.label.class3
        ):
            xs.append(flatten(seg))
            ys.append(seg.label)
            sids.append(entry.score_id)
    return WindowDataset(np.array(xs), np.array(ys), np.array(sids))


def _rank_metrics(entries, test_idx, probs_by_idx):
    expected = [expected_class(probs_by_idx[i]) for i in test_idx]
    bartok = [entries[i].label.bartok_index for i in test_idx]
    sp_bartok = _safe_spearman(expected, bartok)
    henle_pairs = [
        (e, entries[i].label.henle_grade)
        for e, i in zip(expected, test_idx)
        if entries[i].label.henle_grade is not None
    ]
    if len(henle_pairs) >= 2:
        sp_henle = _safe_spearman(
            [p[0] for p in henle_pairs], [p[1] for p in henle_pairs]
        )
    else:
        sp_henle = float("nan")
    return sp_bartok, sp_henle


def _safe_spearman(a, b) -> float:
    try:
        return spearman(a, b)
    except DataError:
        return float("nan")


def _run_gbt_seed(entries, spec, kind, seed, want_window, want_avg):
    train_idx, test_idx = split(entries, seed, spec.train_fraction)
    train_data = _window_dataset(entries, train_idx, kind, spec.window, spec.stride)
    hyper = spec.gbt_hyper
    if spec.search_configs > 0:
        hyper, _ = random_search(train_data, spec.search_configs, seed)
    model = fit_gbt(train_data.X, train_data.y, hyper, seed)

    out = {}
    if want_window:
        test_data = _window_dataset(entries, test_idx, kind, spec.window, spec.stride)
        train_pred = np.argmax(predict_proba(model, train_data.X), axis=1) + 1
        test_pred = np.argmax(predict_proba(model, test_data.X), axis=1) + 1
        out["gbt_window"] = {
            "train_acc": balanced_accuracy(train_pred, train_data.y),
            "test_acc": balanced_accuracy(test_pred, test_data.y),
        }

    probs_by_idx = {}
    for i in train_idx + test_idx:
        entry = entries[i]
        segs = [
            flatten(seg)
            for seg in window_segments(
                entry.matrices[kind], spec.window, spec.stride, entry.score_id
            )
        ]
        probs_by_idx[i] = predict_score_avg(model, np.array(segs))
    sp_bartok, sp_henle = _rank_metrics(entries, test_idx, probs_by_idx)
    if want_window:
        out["gbt_window"]["spearman_bartok"] = sp_bartok
        out["gbt_window"]["spearman_henle"] = sp_henle
    if want_avg:
        train_pred = [int(np.argmax(probs_by_idx[i])) + 1 for i in train_idx]
        test_pred = [int(np.argmax(probs_by_idx[i])) + 1 for i in test_idx]
        out["gbt_avg"] = {
            "train_acc": balanced_accuracy(
                train_pred, [entries[i].label.class3 for i in train_idx]
            ),
            "test_acc": balanced_accuracy(
                test_pred, [entries[i].label.class3 for i in test_idx]
            ),
            "spearman_bartok": sp_bartok,
            "spearman_henle": sp_henle,
        }
    return out


def _run_deepgru_seed(entries, spec, kind, seed):
    train_idx, test_idx = split(entries, seed, spec.train_fraction)
    config = GruNetConfig(**{**asdict(spec.gru_config), "seed": seed})
    corpus = [(entries[i].matrices[kind], entries[i].label.class3) for i in train_idx]
    model = train_deepgru(corpus, config)

    probs_by_idx = {
        i: gru_predict(model, entries[i].matrices[kind])[0]
        for i in train_idx + test_idx
    }
    train_pred = [int(np.argmax(probs_by_idx[i])) + 1 for i in train_idx]
    test_pred = [int(np.argmax(probs_by_idx[i])) + 1 for i in test_idx]
    sp_bartok, sp_henle = _rank_metrics(entries, test_idx, probs_by_idx)
    return {
        "deepgru": {
            "train_acc": balanced_accuracy(
                train_pred, [entries[i].label.class3 for i in train_idx]
            ),
            "test_acc": balanced_accuracy(
                test_pred, [entries[i].label.class3 for i in test_idx]
            ),
            "spearman_bartok": sp_bartok,
            "spearman_henle": sp_henle,
        }
    }


def run_experiment(spec: ExperimentSpec, entries: list[CorpusEntry]) -> EvaluationReport:
    """Run the full (feature x classifier x seed) grid.

    Failures are recorded per cell without aborting the other cells.
    """
    cells = {
        (kind, clf): CellResult()
        for kind in spec.features
        for clf in spec.classifiers
    }
    for kind in spec.features:
        want_window = "gbt_window" in spec.classifiers
        want_avg = "gbt_avg" in spec.classifiers
        for seed in spec.seeds:
            if want_window or want_avg:
                try:
                    res = _run_gbt_seed(entries, spec, kind, seed, want_window, want_avg)
                    for clf, metrics in res.items():
                        cell = cells[(kind, clf)]
                        cell.train_acc.append(metrics["train_acc"])
                        cell.test_acc.append(metrics["test_acc"])
                        cell.spearman_bartok.append(metrics["spearman_bartok"])
                        cell.spearman_henle.append(metrics["spearman_henle"])
                except (DataError, TrainingError) as exc:
                    for clf in ("gbt_window", "gbt_avg"):
                        if (kind, clf) in cells:
                            cells[(kind, clf)].error = str(exc)
            if "deepgru" in spec.classifiers:
                try:
                    res = _run_deepgru_seed(entries, spec, kind, seed)
                    cell = cells[(kind, "deepgru")]
                    metrics = res["deepgru"]
                    cell.train_acc.append(metrics["train_acc"])
                    cell.test_acc.append(metrics["test_acc"])
                    cell.spearman_bartok.append(metrics["spearman_bartok"])
                    cell.spearman_henle.append(metrics["spearman_henle"])
                except (DataError, TrainingError) as exc:
                    cells[(kind, "deepgru")].error = str(exc)
    return EvaluationReport(spec, cells)


DEFAULT_ABLATION_SIZES = (1, 3, 5, 9, 13, 19)


def window_ablation(
    entries: list[CorpusEntry],
    sizes=DEFAULT_ABLATION_SIZES,
    feature: FeatureKind = FeatureKind.DP_VELOCITY,
    seeds=tuple(range(10)),
    gbt_hyper: GbtHyperParams | None = None,
    search_configs: int = 0,
):
    """Score-averaged tree classification at several window sizes.

    Returns a list of row dicts (one per size) with accuracy and both
    Spearman columns.
    """
    rows = []
    for w in sizes:
        spec = ExperimentSpec(
            features=(feature,),
            classifiers=("gbt_avg",),
            seeds=tuple(seeds),
            window=w,
            search_configs=search_configs,
            gbt_hyper=gbt_hyper or GbtHyperParams(),
        )
        report = run_experiment(spec, entries)
        cell = report.cells[(feature, "gbt_avg")]
        summary = cell.summary()
        rows.append(
            {
                "window": w,
                "test_acc": summary["test_acc"],
                "spearman_bartok": summary["spearman_bartok"],
                "spearman_henle": summary["spearman_henle"],
                "error": cell.error,
            }
        )
    return rows


def ablation_markdown(rows) -> str:
    lines = [
        "| window size | 3-class acc (%) | Bartok rank | Henle rank |",
        "|---|---|---|---|",
    ]
    for row in rows:
        if row["error"]:
            lines.append(f"| {row['window']} | error | error | error |")
            continue

        def cell(summary, scale, digits):
            if summary["mean"] is None:
                return "-"
            return f"{summary['mean'] * scale:.{digits}f}±{summary['std'] * scale:.{digits}f}"

        lines.append(
            f"| {row['window']} | {cell(row['test_acc'], 100, 0)} | "
            f"{cell(row['spearman_bartok'], 1, 2)} | {cell(row['spearman_henle'], 1, 2)} |"
        )
    return "\n".join(lines) + "\n"
