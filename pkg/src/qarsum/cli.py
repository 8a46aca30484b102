"""Command-line entry point: ``qarsum <command> [options]``.

Commands: gen-synthetic, train, summarize, learn-weights, evaluate, consistency.
Settings resolve as command-line flag > ``--config`` JSON file > default, and
every output records the resolved settings in its header.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    SyntheticConfig,
    atomic_write_text,
    gen_synthetic,
    iter_jsonl,
    load_annotations,
    load_ground_truth,
    load_problems,
    load_triplets,
    load_videos,
    save_annotations,
    save_ground_truth,
    save_problems,
    save_triplets,
    save_videos,
    write_jsonl,
)
from .metrics import (
    VG,
    VG_OR_G,
    EvalReport,
    MetricError,
    average_precision,
    cluster_recall,
    clustering_consistency,
    f1,
    hit_at_1,
    spearman,
    split_correlations,
    summary_precision,
)
from .relevance import EmbeddingModel, LossMode, TrainConfig, project_frames, encode_query, train_relevance
from .summarize import OBJECTIVE_NAMES, Mixture, hecate_select, lazy_greedy_select, mmr_select
from .weightlearn import TrainingPair, WeightLearnConfig, learn_weights

logger = logging.getLogger("qarsum")


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"config {path}: malformed JSON ({exc.msg})") from None
    if not isinstance(values, dict):
        raise CLIError(f"config {path}: expected a JSON object")
    return values


def _resolve(cls, file_values: dict, flags: dict):
    """Build a config dataclass from defaults < file < flags."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(file_values) - names
    if unknown:
        raise CLIError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    values = dict(file_values)
    values.update({k: v for k, v in flags.items() if v is not None and k in names})
    for f in dataclasses.fields(cls):
        if f.name in values and isinstance(values[f.name], list):
            values[f.name] = tuple(values[f.name])
    try:
        return cls(**values)
    except TypeError as exc:
        raise CLIError(f"invalid config: {exc}") from None


def _header(command: str, args: argparse.Namespace, **resolved) -> dict:
    inputs = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("func", "command", "out", "loss_log", "f1_log")}
    out = {"command": command, "version": __version__, "args": inputs}
    for key, val in resolved.items():
        out[key] = dataclasses.asdict(val) if dataclasses.is_dataclass(val) else val
    return out


def _csv(header: dict, columns: list[str], rows) -> str:
    lines = [f"# {json.dumps(header, sort_keys=True)}", ",".join(columns)]
    lines += [",".join(repr(x) if isinstance(x, float) else str(x) for x in row) for row in rows]
    return "\n".join(lines) + "\n"


def _problems_from_args(args) -> list:
    """(video_id, SummaryProblem) pairs from --problems or --model/--videos."""
    if args.problems is not None:
        problems = load_problems(args.problems)
        if args.k is not None:
            problems = [(vid, _with_budget(vid, p, args.k)) for vid, p in problems]
        return problems
    if args.model is None or args.videos is None:
        raise CLIError("give --problems, or both --model and --videos")
    model = EmbeddingModel.load(args.model)
    k = args.k if args.k is not None else 5
    return [(v.video_id, v.problem(model, k)) for v in load_videos(args.videos)]


def _with_budget(vid, problem, k):
    if k > problem.n:
        raise CLIError(f"video {vid}: budget k={k} exceeds {problem.n} frames")
    return problem.with_budget(k)


def _load_weights(path) -> Mixture:
    rec = json.loads(Path(path).read_text())
    try:
        return Mixture(rec["weights"])
    except (KeyError, TypeError) as exc:
        raise CLIError(f"weights {path}: expected {{\"weights\": [4 numbers]}}") from exc


def percentage_line(mixture: Mixture) -> str:
    pct = mixture.percentages()
    return "  ".join(f"{name} ({p:.0f}%)" for name, p in zip(OBJECTIVE_NAMES, pct))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> None:
    flags = {
        "n_videos": args.n_videos,
        "frames_per_video": args.frames_per_video,
        "feature_dim": args.feature_dim,
        "embed_dim": args.embed_dim,
        "word_dim": args.embed_dim,
        "noise_sigma": args.noise_sigma,
        "quality_signal": args.quality_signal,
        "triplets_per_video": args.triplets_per_video,
        "rng_seed": args.seed,
    }
    file_values = _load_config_file(args.config)
    if "embed_dim" in file_values and "word_dim" not in file_values and args.embed_dim is None:
        file_values["word_dim"] = file_values["embed_dim"]
    cfg = _resolve(SyntheticConfig, file_values, flags)
    corpus = gen_synthetic(cfg)
    out = Path(args.out)
    header = _header("gen-synthetic", args, config=cfg)
    save_triplets(out / "triplets.jsonl", corpus.triplets, corpus.triplet_video, header)
    save_videos(out / "videos.jsonl", corpus.videos, header)
    save_annotations(out / "annotations.jsonl", corpus.annotations, header)
    save_ground_truth(out / "ground_truth.jsonl", corpus.ground_truth(), header)
    problems = [(v.video_id, v.problem(corpus.planted_model, min(args.k, v.n_frames))) for v in corpus.videos]
    save_problems(out / "problems.jsonl", problems, header)
    atomic_write_text(out / "planted_model.txt", corpus.planted_model.dumps())
    atomic_write_text(out / "config.json", json.dumps(header, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(corpus.videos)} videos and {len(corpus.triplets)} triplets to {out}")


def cmd_train(args) -> None:
    flags = {"epochs": args.epochs, "batch_size": args.batch_size, "rng_seed": args.seed, "l2_lambda": args.l2_lambda,
             "adagrad_base_rate": args.rate, "margin": args.margin, "huber_delta": args.huber_delta}
    cfg = _resolve(TrainConfig, _load_config_file(args.config), flags)
    mode = LossMode.parse(args.mode)
    triplets = load_triplets(args.triplets)
    if not triplets:
        raise CLIError(f"{args.triplets}: no triplets")
    if args.init is not None:
        init = EmbeddingModel.load(args.init)
    else:
        feature_dim = triplets[0].pos_feature.shape[0]
        embed_dim = args.embed_dim or triplets[0].query_words.shape[1]
        init = EmbeddingModel.random(feature_dim, embed_dim, cfg.rng_seed)
    model, history = train_relevance(init, triplets, cfg, mode)
    atomic_write_text(args.out, model.dumps())
    header = _header("train", args, config=cfg, mode=mode.value)
    quality = "absent" if mode is LossMode.NO_QUALITY else mode.value
    log_path = args.loss_log or f"{args.out}.loss.csv"
    atomic_write_text(log_path, _csv(header, ["epoch", "loss"], enumerate(history)))
    print(f"objective=Huber  cost={mode.value}  text=Mean  quality={quality}")
    if history:
        print(f"epochs={len(history)}  final_loss={history[-1]!r}")


def cmd_summarize(args) -> None:
    chosen = sum(x is not None and x is not False for x in (args.weights, args.mmr, args.hecate or None))
    if chosen != 1:
        raise CLIError("choose exactly one of --weights, --mmr, --hecate")
    problems = _problems_from_args(args)
    if args.mmr is not None:
        method = {"method": "mmr", "lambda_sim": args.mmr}
        run = lambda p: mmr_select(p, args.mmr)  # noqa: E731
    elif args.hecate:
        method = {"method": "hecate", "kmeans_iters": args.kmeans_iters, "seed": args.seed}
        run = lambda p: hecate_select(p, args.kmeans_iters, args.seed)  # noqa: E731
    else:
        mixture = _load_weights(args.weights)
        method = {"method": "mixture", "weights": mixture.weights.tolist()}
        run = lambda p: lazy_greedy_select(mixture, p)  # noqa: E731
    records = []
    for vid, problem in problems:
        rec = {"video_id": vid}
        rec.update(run(problem).to_dict())
        records.append(rec)
    write_jsonl(args.out, records, _header("summarize", args, method=method))
    print(f"wrote {len(records)} summaries to {args.out}")


def cmd_learn_weights(args) -> None:
    flags = {"epochs": args.epochs, "adagrad_base_rate": args.rate, "rng_seed": args.seed}
    cfg = _resolve(WeightLearnConfig, _load_config_file(args.config), flags)
    problems = _problems_from_args(args)
    truths = {g.video_id: g for g in load_ground_truth(args.ground_truth)}
    pairs = []
    for vid, problem in problems:
        if vid not in truths:
            raise CLIError(f"video {vid}: no ground truth")
        pairs.append(TrainingPair(problem, truths[vid], vid))
    mixture, history = learn_weights(pairs, cfg)
    header = _header("learn-weights", args, config=cfg)
    atomic_write_text(args.out, json.dumps({"weights": mixture.weights.tolist(), "_header": header}, sort_keys=True) + "\n")
    log_path = args.f1_log or f"{args.out}.f1.csv"
    atomic_write_text(log_path, _csv(header, ["epoch", "train_f1"], enumerate(history)))
    print(percentage_line(mixture))


def _index(records, what):
    out = {}
    for rec in records:
        if "video_id" not in rec:
            raise CLIError(f"{what}: record without video_id")
        out[str(rec["video_id"])] = rec
    return out


def _read_records(path):
    return [rec for _, rec in iter_jsonl(path)]


def evaluate(truths, summaries=None, rankings=None) -> EvalReport:
    """Per-video metrics for summaries and/or frame rankings."""
    report = EvalReport()
    for gt in truths:
        vid = gt.video_id
        if summaries is not None and vid in summaries:
            selected = [int(i) for i in summaries[vid]["selected"]]
            if not gt.has_positive:
                report.skip("f1")
            else:
                pr = summary_precision(selected, gt.binary_relevance)
                cr = cluster_recall(selected, gt.binary_relevance, gt.prototype_clustering)
                report.add(vid, precision=pr, cluster_recall=cr, f1=f1(pr, cr))
        if rankings is not None and vid in rankings:
            scores = np.asarray(rankings[vid]["scores"], dtype=float)
            if scores.shape != (gt.n_frames,):
                raise CLIError(f"video {vid}: {scores.size} scores for {gt.n_frames} frames")
            order = np.argsort(-scores, kind="stable")
            report.add(vid, hit1_vg=hit_at_1(order, gt.labels, VG), hit1_vg_or_g=hit_at_1(order, gt.labels, VG_OR_G))
            try:
                report.add(vid, spearman=spearman(scores, gt.scores))
            except MetricError:
                report.skip("spearman")
            try:
                report.add(vid, map=average_precision(scores, gt.binary_relevance))
            except MetricError:
                report.skip("map")
    for metric, count in report.skipped.items():
        logger.warning("%s: %d video(s) excluded", metric, count)
    return report


def _rankings_from_model(model_path, videos_path):
    model = EmbeddingModel.load(model_path)
    out = {}
    for v in load_videos(videos_path):
        t = encode_query(model, v.query_words)
        emb, quality = project_frames(model, v.features)
        sims = emb @ t / (np.linalg.norm(emb, axis=1) * np.linalg.norm(t))
        out[v.video_id] = {"scores": (sims + quality).tolist()}
    return out


def cmd_evaluate(args) -> None:
    truths = load_ground_truth(args.ground_truth)
    summaries = _index(_read_records(args.summaries), "summaries") if args.summaries else None
    rankings = None
    if args.rankings:
        rankings = _index(_read_records(args.rankings), "rankings")
    elif args.model and args.videos:
        rankings = _rankings_from_model(args.model, args.videos)
    if summaries is None and rankings is None:
        raise CLIError("give --summaries and/or --rankings (or --model with --videos)")
    report = evaluate(truths, summaries, rankings)
    _emit(report, args)


def consistency(annotations) -> EvalReport:
    report = EvalReport()
    for ann in annotations:
        rhos = split_correlations(ann.scores())
        row = {"n_splits": len(rhos), "nmi_consistency": clustering_consistency(ann.rater_clusterings)}
        if rhos:
            row["spearman"] = float(np.mean(rhos))
        else:
            report.skip("spearman")
        report.add(ann.video_id, **row)
    return report


def cmd_consistency(args) -> None:
    report = consistency(load_annotations(args.annotations))
    _emit(report, args)


def _emit(report: EvalReport, args) -> None:
    if args.format == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        text = report.to_table() + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qarsum", description="Query-adaptive video frame summarization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus with planted structure")
    p.add_argument("--config", help="JSON file with synthetic-corpus settings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-videos", type=int)
    p.add_argument("--frames-per-video", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--quality-signal", type=float)
    p.add_argument("--triplets-per-video", type=int)
    p.add_argument("--k", type=int, default=5, help="budget stored in problems.jsonl")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train the relevance model on triplets")
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--mode", choices=[m.value for m in LossMode], default="expli")
    p.add_argument("--config", help="JSON file with training settings")
    p.add_argument("--init", help="initial model file (default: seeded random)")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rate", type=float, help="AdaGrad base rate")
    p.add_argument("--l2-lambda", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--huber-delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-log", help="per-epoch loss CSV (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    def problem_inputs(p):
        p.add_argument("--problems", help="problems JSONL")
        p.add_argument("--model", help="relevance model, used with --videos")
        p.add_argument("--videos", help="videos JSONL, used with --model")
        p.add_argument("--k", type=int, help="summary budget")

    p = sub.add_parser("summarize", help="select k frames per video")
    problem_inputs(p)
    p.add_argument("--weights", help="mixture weights JSON")
    p.add_argument("--mmr", type=float, metavar="LAMBDA", help="MMR baseline with similarity weight LAMBDA")
    p.add_argument("--hecate", action="store_true", help="k-means / best-quality baseline")
    p.add_argument("--kmeans-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("learn-weights", help="learn mixture weights toward F1")
    problem_inputs(p)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--config", help="JSON file with weight-learning settings")
    p.add_argument("--epochs", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="weights JSON")
    p.add_argument("--f1-log", help="per-epoch F1 CSV (default: <out>.f1.csv)")
    p.set_defaults(func=cmd_learn_weights)

    p = sub.add_parser("evaluate", help="score summaries and rankings against ground truth")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--summaries")
    p.add_argument("--rankings", help="JSONL with video_id and per-frame scores")
    p.add_argument("--model")
    p.add_argument("--videos")
    p.add_argument("--format", choices=["json", "table"], default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("consistency", help="rater agreement of an annotation file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--format", choices=["json", "table"], default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_consistency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, DataError, MetricError, ValueError, TypeError, KeyError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"qarsum: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
