"""Command-line entry point.

Subcommands: ingest, finger, features, train, run, ablate, rank, feedback.
All randomness flows from explicit --seed arguments; artifacts embed the
tool version and the fully resolved configuration, and contain no
timestamps, so reruns are byte-identical.

Exit codes: 0 success, 1 usage, 2 data error, 3 training/runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .deepgru import GruNetConfig, GruNetModel, forward as gru_forward, train_deepgru
from .errors import DataError, PianodiffError, TrainingError, UsageError
from .evaluation import (
    CorpusEntry,
    ExperimentSpec,
    ablation_markdown,
    run_experiment,
    window_ablation,
)
from .features import FeatureKind, build_feature_matrix, flatten, window_segments
from .fingering_dp import DpConfig, FingeringAssignment, assign_fingers_dp_both
from .fingering_hmm import HmmParams, assign_fingers_hmm, default_prior_params, load_pig, train_hmm
from .gbt import GbtHyperParams, GbtModel, fit_gbt, predict_proba, predict_score_avg
from .metrics import expected_class, spearman
from .report import FeedbackAnnotation, aggregate_onset_probs, render_report
from .score import (
    DifficultyLabel,
    Score,
    load_manifest,
    make_label,
    onset_slices,
    parse_musicxml,
    score_from_json,
    score_to_json,
)
from .synthetic import generate_synthetic_corpus

ALL_KINDS = [k.value for k in FeatureKind]


def atomic_write(path: Path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def _provenance(args: argparse.Namespace) -> dict:
    skip = {"func", "out", "out_dir"}  # output locations are not configuration
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    return {"tool_version": __version__, "config": cfg}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage failures map to exit code 1
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Corpus archive helpers
# ---------------------------------------------------------------------------


def corpus_to_doc(corpus, provenance: dict) -> dict:
    scores = []
    for score, label in corpus:
        scores.append(
            {
                "id": score.title,
                "bartok_index": label.bartok_index,
                "henle_grade": label.henle_grade,
                "class3": label.class3,
                "tempo_bpm": score.tempo_bpm,
                "n_notes": score.n_notes,
                "n_bars": score.n_bars,
                "n_onsets": len(onset_slices(score)),
                "score": json.loads(score_to_json(score)),
            }
        )
    stats = {}
    for cls in (1, 2, 3):
        rows = [s for s in scores if s["class3"] == cls]
        if rows:
            stats[str(cls)] = {
                "n_scores": len(rows),
                "notes_mean": float(np.mean([r["n_notes"] for r in rows])),
                "bars_mean": float(np.mean([r["n_bars"] for r in rows])),
                "tempo_mean": float(np.mean([r["tempo_bpm"] for r in rows])),
            }
    return {"version": 1, **provenance, "stats": stats, "scores": scores}


def load_corpus_archive(path) -> list[tuple[Score, DifficultyLabel]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise DataError(f"unsupported corpus version {doc.get('version')}")
    corpus = []
    for row in doc["scores"]:
        score = score_from_json(json.dumps(row["score"]))
        corpus.append((score, make_label(row["bartok_index"], row["henle_grade"])))
    return corpus


def compute_assignments(corpus, engine: str, dp_cfg=None, hmm_params=None):
    out = {}
    for score, _ in corpus:
        if engine == "dp":
            out[score.title] = assign_fingers_dp_both(score, cfg=dp_cfg)
        else:
            out[score.title] = assign_fingers_hmm(score, hmm_params)
    return out


def build_entries(corpus, kinds, dp_cfg=None, hmm_params=None) -> list[CorpusEntry]:
    kinds = [FeatureKind(k) for k in kinds]
    need_dp = any(k.needs_engine == "dp" for k in kinds)
    need_hmm = any(k.needs_engine == "hmm" for k in kinds)
    dp_by_id = compute_assignments(corpus, "dp", dp_cfg=dp_cfg) if need_dp else {}
    hmm_by_id = compute_assignments(corpus, "hmm", hmm_params=hmm_params) if need_hmm else {}
    entries = []
    for score, label in corpus:
        matrices = {
            kind: build_feature_matrix(
                score, kind, dp_by_id.get(score.title), hmm_by_id.get(score.title)
            )
            for kind in kinds
        }
        entries.append(CorpusEntry(score.title, label, matrices))
    return entries


def _profile_spec(args, features, classifiers) -> ExperimentSpec:
    if args.profile == "full":
        seeds = tuple(range(50))
        gru = GruNetConfig()
        search = 50
    else:
        seeds = tuple(range(10))
        gru = GruNetConfig.desk()
        search = 0
    if getattr(args, "seeds", None):
        seeds = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "search", None) is not None:
        search = args.search
    return ExperimentSpec(
        features=tuple(FeatureKind(f) for f in features),
        classifiers=tuple(classifiers),
        seeds=seeds,
        search_configs=search,
        gru_config=gru,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    if args.synthetic is not None:
        corpus = generate_synthetic_corpus(args.synthetic, args.seed)
    else:
        if not args.manifest or not args.scores_dir:
            raise UsageError("ingest needs --manifest and --scores-dir (or --synthetic)")
        manifest_text = Path(args.manifest).read_text()
        entries, missing = load_manifest(manifest_text, root=args.scores_dir)
        for rel in missing:
            print(f"missing score file: {rel}", file=sys.stderr)
        corpus = []
        failures = []
        for path, label in entries:
            try:
                score = parse_musicxml(Path(path).read_text(), title=Path(path).stem)
            except DataError as exc:
                failures.append(f"{path}: {exc}")
                continue
            corpus.append((score, label))
        for failure in failures:
            print(f"unparseable: {failure}", file=sys.stderr)
        if failures or missing:
            raise DataError(f"{len(failures) + len(missing)} scores failed to ingest")
        if not corpus:
            raise DataError("no scores ingested")
    doc = corpus_to_doc(corpus, _provenance(args))
    atomic_write(args.out, json.dumps(doc, separators=(",", ":")))
    for cls, stat in doc["stats"].items():
        print(
            f"class {cls}: {stat['n_scores']} scores, "
            f"mean notes {stat['notes_mean']:.1f}, mean bars {stat['bars_mean']:.1f}, "
            f"mean tempo {stat['tempo_mean']:.1f}"
        )
    return 0


def cmd_finger(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    if args.engine not in ("dp", "hmm"):
        raise UsageError(f"unknown engine {args.engine!r}")
    hmm_params = None
    dp_cfg = None
    if args.engine == "hmm":
        if args.params:
            hmm_params = HmmParams.from_json(Path(args.params).read_text())
        elif args.pig:
            hmm_params = train_hmm(load_pig(Path(args.pig).read_text()), alpha=args.alpha)
        else:
            print("no params given; using default prior", file=sys.stderr)
            hmm_params = default_prior_params()
    elif args.config:
        dp_cfg = DpConfig.from_json(Path(args.config).read_text())
    assignments = compute_assignments(corpus, args.engine, dp_cfg, hmm_params)
    per_score = {
        sid: {"fingers": a.fingers, "scalars": a.scalars}
        for sid, a in sorted(assignments.items())
    }
    by_class: dict[int, list[float]] = {1: [], 2: [], 3: []}
    for score, label in corpus:
        scalars = [s for s in assignments[score.title].scalars if s is not None]
        by_class[label.class3].extend(scalars)
    summary = {
        str(cls): (float(np.mean(vals)) if vals else None)
        for cls, vals in by_class.items()
    }
    doc = {
        "version": 1,
        **_provenance(args),
        "engine": args.engine,
        "summary_mean_scalar": summary,
        "per_score": per_score,
    }
    atomic_write(args.out, json.dumps(doc, separators=(",", ":")))
    print(f"mean scalar per class: {summary}")
    return 0


def load_fingering_archive(path, corpus) -> dict[str, FingeringAssignment]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise DataError(f"unsupported fingering archive version {doc.get('version')}")
    out = {}
    for sid, rec in doc["per_score"].items():
        out[sid] = FingeringAssignment(doc["engine"], rec["fingers"], rec["scalars"])
    return out


def cmd_features(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    kinds = [FeatureKind(k) for k in args.kinds.split(",")]
    dp_by_id = hmm_by_id = {}
    if args.dp_fingering:
        dp_by_id = load_fingering_archive(args.dp_fingering, corpus)
    if args.hmm_fingering:
        hmm_by_id = load_fingering_archive(args.hmm_fingering, corpus)
    need_dp = any(k.needs_engine == "dp" for k in kinds)
    need_hmm = any(k.needs_engine == "hmm" for k in kinds)
    if need_dp and not dp_by_id:
        dp_by_id = compute_assignments(corpus, "dp")
    if need_hmm and not hmm_by_id:
        hmm_by_id = compute_assignments(corpus, "hmm")
    per_score = {}
    for score, _ in corpus:
        per_score[score.title] = {
            kind.value: {
                "rows": len(onset_slices(score)),
                "cols": kind.width,
                "cells": build_feature_matrix(
                    score, kind, dp_by_id.get(score.title), hmm_by_id.get(score.title)
                ).values.tolist(),
            }
            for kind in kinds
        }
    doc = {"version": 1, **_provenance(args), "per_score": per_score}
    atomic_write(args.out, json.dumps(doc, separators=(",", ":")))
    print(f"wrote {len(per_score)} scores x {len(kinds)} feature kinds")
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    kind = FeatureKind(args.feature)
    entries = build_entries(corpus, [kind])
    if args.classifier == "gbt":
        xs, ys = [], []
        for entry in entries:
            for seg in window_segments(
                entry.matrices[kind], args.window, 1, entry.score_id, entry.label.class3
            ):
                xs.append(flatten(seg))
                ys.append(seg.label)
        model = fit_gbt(np.array(xs), np.array(ys), GbtHyperParams(), seed=args.seed)
        payload = {"classifier": "gbt", "feature": kind.value, "window": args.window,
                   "model": json.loads(model.to_json())}
    elif args.classifier == "deepgru":
        config = GruNetConfig.desk(seed=args.seed) if args.profile == "desk" else GruNetConfig(seed=args.seed)
        model = train_deepgru(
            [(e.matrices[kind], e.label.class3) for e in entries], config
        )
        payload = {"classifier": "deepgru", "feature": kind.value,
                   "model": json.loads(model.to_json())}
    else:
        raise UsageError(f"unknown classifier {args.classifier!r}")
    doc = {"version": 1, **_provenance(args), **payload}
    atomic_write(args.out, json.dumps(doc, separators=(",", ":")))
    print(f"trained {args.classifier} on {kind.value}")
    return 0


def load_model_doc(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise DataError(f"unsupported model file version {doc.get('version')}")
    return doc


def cmd_run(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    features = args.features.split(",") if args.features else ALL_KINDS
    classifiers = args.classifiers.split(",") if args.classifiers else list(
        ("gbt_window", "gbt_avg", "deepgru")
    )
    spec = _profile_spec(args, features, classifiers)
    entries = build_entries(corpus, spec.features)
    report = run_experiment(spec, entries)
    out_dir = Path(args.out_dir)
    atomic_write(out_dir / "report.json", report.to_json())
    atomic_write(out_dir / "report.md", report.to_markdown())
    print(report.to_markdown())
    failed = [cell for cell in report.cells.values() if cell.error]
    if failed:
        for (kind, clf), cell in report.cells.items():
            if cell.error:
                print(f"cell {kind.value}/{clf} failed: {cell.error}", file=sys.stderr)
        return 3
    return 0


def cmd_ablate(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    kind = FeatureKind(args.feature)
    entries = build_entries(corpus, [kind])
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else tuple(range(10))
    rows = window_ablation(entries, feature=kind, seeds=seeds)
    doc = {
        "version": 1,
        **_provenance(args),
        "default_window": 9,
        "rows": rows,
    }
    out_dir = Path(args.out_dir)
    atomic_write(out_dir / "ablation.json", json.dumps(doc, separators=(",", ":")))
    atomic_write(out_dir / "ablation.md", ablation_markdown(rows))
    print(ablation_markdown(rows))
    if any(r["error"] for r in rows):
        return 3
    return 0


def _score_probs(model_doc, entry, kind):
    if model_doc["classifier"] == "gbt":
        model = GbtModel.from_json(json.dumps(model_doc["model"]))
        segs = [
            flatten(seg)
            for seg in window_segments(entry.matrices[kind], model_doc["window"], 1)
        ]
        return predict_score_avg(model, np.array(segs))
    model = GruNetModel.from_json(json.dumps(model_doc["model"]))
    probs, _ = gru_forward(model, entry.matrices[kind])
    return probs


def cmd_rank(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    model_doc = load_model_doc(args.model)
    kind = FeatureKind(model_doc["feature"])
    entries = build_entries(corpus, [kind])
    rows = []
    for entry in entries:
        probs = _score_probs(model_doc, entry, kind)
        rows.append(
            {
                "id": entry.score_id,
                "expected_class": expected_class(probs),
                "bartok_index": entry.label.bartok_index,
                "henle_grade": entry.label.henle_grade,
            }
        )
    rows.sort(key=lambda r: (r["expected_class"], r["id"]))
    sp = spearman([r["expected_class"] for r in rows], [r["bartok_index"] for r in rows])
    doc = {"version": 1, **_provenance(args), "spearman_bartok": sp, "ranking": rows}
    atomic_write(args.out, json.dumps(doc, separators=(",", ":")))
    print(f"spearman vs piece order: {sp:.3f}")
    return 0


def cmd_feedback(args) -> int:
    corpus = load_corpus_archive(args.corpus)
    model_doc = load_model_doc(args.model)
    kind = FeatureKind(model_doc["feature"])
    if args.mode == "attention" and model_doc["classifier"] != "deepgru":
        raise UsageError("attention feedback requires a deepgru model")
    if args.mode == "window" and model_doc["classifier"] != "gbt":
        raise UsageError("window feedback requires a gbt model")
    entries = build_entries(corpus, [kind])
    out_dir = Path(args.out_dir)
    for entry in entries:
        matrix = entry.matrices[kind]
        I = matrix.rows
        if args.mode == "window":
            model = GbtModel.from_json(json.dumps(model_doc["model"]))
            w = model_doc["window"]
            segs = [flatten(s) for s in window_segments(matrix, w, 1)]
            win_probs = predict_proba(model, np.array(segs))
            probs = aggregate_onset_probs(win_probs, I, w)
            annotation = FeedbackAnnotation(entry.score_id, probs=probs)
        else:
            model = GruNetModel.from_json(json.dumps(model_doc["model"]))
            probs, alpha = gru_forward(model, matrix)
            annotation = FeedbackAnnotation(entry.score_id, attention=alpha)
        score = next(s for s, _ in corpus if s.title == entry.score_id)
        atomic_write(out_dir / f"{entry.score_id}.html", render_report(score, annotation))
        atomic_write(out_dir / f"{entry.score_id}.json", annotation.to_json())
    print(f"wrote {len(entries)} reports to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="pianodiff", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse scores + manifest (or synthesize) into a corpus archive")
    p.add_argument("--scores-dir", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--synthetic", type=int, help="generate N synthetic scores per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("finger", help="run a fingering engine over a corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--engine", required=True)
    p.add_argument("--config", type=Path, help="dp engine config JSON")
    p.add_argument("--params", type=Path, help="hmm params JSON")
    p.add_argument("--pig", type=Path, help="PIG-style training file for the hmm engine")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_finger)

    p = sub.add_parser("features", help="build feature matrices")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--kinds", default=",".join(ALL_KINDS))
    p.add_argument("--dp-fingering", type=Path)
    p.add_argument("--hmm-fingering", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one classifier on one feature kind")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--feature", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run the evaluation protocol grid")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--features")
    p.add_argument("--classifiers")
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--seeds", help="comma-separated seed list override")
    p.add_argument("--search", type=int, help="random-search budget override")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="window-size ablation for score-averaged trees")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--feature", default="pv")
    p.add_argument("--seeds")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("rank", help="rank corpus scores by expected class")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("feedback", help="emit per-score HTML difficulty reports")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--mode", choices=("window", "attention"), required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_feedback)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, PianodiffError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
