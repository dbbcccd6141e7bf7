"""Command-line interface.

Subcommands: score, select, simulate, exact-delta, verify-mc, fit-prior,
surrogate, corrupt. Text goes to stdout; machine-readable output goes
behind --out (written atomically: temp file then rename). Exit codes:
0 success, 1 validation failure, 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from . import curation, exactap, ingest, matching, montecarlo, priors
from .model import IouThresholdGrid, ScoreDistribution


class CliError(Exception):
    """Flag/value validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    # Unknown flags and missing required arguments exit 1, not argparse's 2.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_tau_grid(spec: str) -> IouThresholdGrid:
    """Parse 'start:stop:step' into a threshold grid (inclusive stop)."""
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError as exc:
        raise CliError(f"--tau-grid expects start:stop:step, got {spec!r}") from exc
    if step <= 0:
        raise CliError("--tau-grid step must be positive")
    n = int(round((stop - start) / step)) + 1
    values = [round(start + k * step, 10) for k in range(n) if start + k * step <= stop + 1e-9]
    if not values:
        raise CliError(f"--tau-grid {spec!r} yields no thresholds")
    try:
        return IouThresholdGrid(tuple(values))
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def parse_dist(spec: str) -> ScoreDistribution:
    if spec == "uniform":
        return ScoreDistribution.uniform()
    if spec.startswith("beta:"):
        try:
            a_tp, b_tp, a_fp, b_fp = (float(v) for v in spec[5:].split(","))
            return ScoreDistribution.beta(a_tp, b_tp, a_fp, b_fp)
        except ValueError as exc:
            raise CliError(f"--dist beta expects beta:aTP,bTP,aFP,bFP, got {spec!r}") from exc
    raise CliError(f"unknown distribution {spec!r} (use uniform or beta:a,b,a,b)")


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".detgain-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _thread_count(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("DETGAIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise CliError(f"DETGAIN_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Shared scoring pipeline
# ---------------------------------------------------------------------------


def _load_matched(args) -> tuple[ingest.Dataset, matching.MatchedDataset, matching.MatchedDataset, dict, IouThresholdGrid]:
    grid = parse_tau_grid(args.tau_grid)
    ds = ingest.load_ground_truth(args.gt)
    teacher = matching.match_dataset(ingest.load_detections(args.teacher), ds, grid, args.max_dets)
    student = matching.match_dataset(ingest.load_detections(args.student), ds, grid, args.max_dets)
    stats = curation.pool_stats(student, grid, args.stats)
    return ds, teacher, student, stats, grid


def _scorer_from_args(args, stats, grid):
    prior_table = surrogate = None
    if args.prior in ("beta-table", "surrogate"):
        if not args.prior_table:
            raise CliError(f"--prior {args.prior} requires --prior-table FILE")
        prior_table, surrogate = priors.load_prior_table(args.prior_table)
        if args.prior == "surrogate" and surrogate is None:
            raise CliError("the prior table has no surrogate fits; run `detgain surrogate` first")
    return curation.make_image_scorer(stats, grid, args.prior, prior_table, surrogate)


def cmd_score(args) -> int:
    ds, teacher, student, stats, grid = _load_matched(args)
    scorer = _scorer_from_args(args, stats, grid)
    threads = _thread_count(args.threads)
    ids = ds.image_ids()

    def score_one(image_id: int):
        return curation.score_superbatch([image_id], teacher, student, stats, grid, scorer)[0]

    records = _parallel_map(score_one, ids, threads)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["image_id", "delta_teacher", "delta_student", "learnability"])
    for rec in records:
        writer.writerow([rec.image_id, repr(rec.delta_teacher), repr(rec.delta_student), repr(rec.learnability)])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_select(args) -> int:
    try:
        with open(args.scores, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ingest.ParseError(f"cannot read {args.scores}: {exc}") from exc
    try:
        records = [
            (int(r["image_id"]), float(r["learnability"])) for r in rows
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ingest.ParseError(f"{args.scores}: expected columns image_id,learnability") from exc
    if not records:
        raise CliError(f"{args.scores} holds no score rows")
    cfg = curation.CurationConfig(ratio=args.ratio, superbatch_size=args.superbatch, seed=args.seed)
    by_id = dict(records)
    ids = sorted(by_id)
    iters = args.iters if args.iters is not None else max(1, len(ids) // cfg.superbatch_size)

    lines = []
    queue: list[int] = []
    epoch = 0
    for it in range(iters):
        while len(queue) < cfg.superbatch_size:
            rng = np.random.default_rng(np.random.SeedSequence((int(cfg.seed), epoch)))
            queue.extend(int(i) for i in rng.permutation(ids))
            epoch += 1
        batch = queue[: cfg.superbatch_size]
        del queue[: cfg.superbatch_size]
        ranked = sorted(batch, key=lambda i: (-by_id[i], i))
        selected = ranked[: cfg.selection_count(len(batch))]
        lines.append(json.dumps({"iter": it, "superbatch": batch, "selected": selected}))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    grid = parse_tau_grid(args.tau_grid)
    ds = ingest.load_ground_truth(args.gt)
    teacher_dets = ingest.load_detections(args.teacher)
    student_dets = ingest.load_detections(args.student)
    cfg = curation.CurationConfig(
        ratio=args.ratio,
        superbatch_size=args.superbatch,
        seed=args.seed,
        prior_mode=args.prior,
        stats_source=args.stats,
        max_dets=args.max_dets,
    )
    manifest = None
    if args.corruption_manifest:
        with open(args.corruption_manifest, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        manifest = raw["modified"] if isinstance(raw, dict) else raw
    prior_table = surrogate = None
    if args.prior in ("beta-table", "surrogate"):
        if not args.prior_table:
            raise CliError(f"--prior {args.prior} requires --prior-table FILE")
        prior_table, surrogate = priors.load_prior_table(args.prior_table)
    trace = curation.run_simulation(
        ds, teacher_dets, student_dets, cfg, args.iters, grid,
        prior_table=prior_table, surrogate=surrogate, corruption_manifest=manifest,
    )
    summary = trace.summary()
    payload = {
        "config": {
            "ratio": cfg.ratio,
            "superbatch_size": cfg.superbatch_size,
            "seed": cfg.seed,
            "prior_mode": cfg.prior_mode,
            "stats_source": cfg.stats_source,
            "max_dets": cfg.max_dets,
            "tau_grid": list(grid.thresholds),
            "iterations": args.iters,
        },
        "summary": summary,
        "iterations": [
            {
                "iter": it.iteration,
                "superbatch": list(it.superbatch),
                "selected": list(it.selected),
                "learnability": {str(r.image_id): r.learnability for r in it.records},
            }
            for it in trace.iterations
        ],
        "selection_counts": {str(k): v for k, v in sorted(trace.selection_counts.items())},
    }
    for key, value in summary.items():
        print(f"{key}: {value}")
    if args.out:
        atomic_write_text(args.out, json.dumps(payload, indent=2))
    return 0


def cmd_exact_delta(args) -> int:
    grid = parse_tau_grid(args.tau_grid)
    ds = ingest.load_ground_truth(args.gt)
    if args.image_id not in {im.image_id for im in ds.images}:
        raise CliError(f"--image-id {args.image_id} is not in the dataset")
    dets = ingest.load_detections(args.dets)
    pool_all = matching.match_dataset(dets, ds, grid, args.max_dets)
    x_counts = matching.image_gt_counts(ds, args.image_id)
    x = matching.MatchedImage(args.image_id, pool_all.images[args.image_id], x_counts)
    pool = pool_all.without_image(args.image_id, x_counts)
    delta = exactap.exact_delta_map(pool, x, grid)
    print(repr(delta))
    return 0


def cmd_verify_mc(args) -> int:
    cfg = montecarlo.McConfig(
        tp_count=args.t,
        fp_count=args.f,
        gt_count=args.t_gt,
        scores=montecarlo.default_probe_scores(args.n_scores),
        trials=args.trials,
        dist=parse_dist(args.dist),
        seed=args.seed,
    )
    kinds = []
    if args.tp:
        kinds.append("tp")
    if args.fp:
        kinds.append("fp")
    if not kinds:
        kinds = ["tp", "fp"]
    reports = [montecarlo.mc_report(cfg, kind, n_points=args.points) for kind in kinds]
    if args.format == "json":
        _emit(json.dumps([r.to_json() for r in reports], indent=2) + "\n", args.out)
    else:
        _emit("\n\n".join(r.to_text() for r in reports) + "\n", args.out)
    return 0


def cmd_fit_prior(args) -> int:
    grid = parse_tau_grid(args.tau_grid)
    ds = ingest.load_ground_truth(args.gt)
    pool = matching.match_dataset(ingest.load_detections(args.dets), ds, grid, args.max_dets)
    table = priors.fit_dataset_priors(pool, grid, args.min_samples)
    tmp = args.out + ".detgain-tmp"
    priors.save_prior_table(table, tmp)
    os.replace(tmp, args.out)
    n_tp, n_fp = table.n_fitted()
    print(f"fitted {n_tp} TP and {n_fp} FP cells out of {len(table.cells)} "
          f"(min {args.min_samples} samples per side)")
    return 0


def cmd_surrogate(args) -> int:
    table, _ = priors.load_prior_table(args.priors)
    surrogate = priors.fit_surrogates(
        table, n_samples=args.samples, n_points=args.points, residual_limit=args.max_residual
    )
    tmp = args.out + ".detgain-tmp"
    priors.save_prior_table(table, tmp, surrogate)
    os.replace(tmp, args.out)
    flagged = surrogate.flagged()
    print(f"fitted {len(surrogate.cells)} cells; max residual {surrogate.max_residual():.3e}; "
          f"{len(flagged)} flagged for the numeric path")
    return 0


def cmd_corrupt(args) -> int:
    ds = ingest.load_ground_truth(args.gt)
    enabled = tuple(args.types.split(",")) if args.types else ingest.CORRUPTION_TYPES
    try:
        cfg = ingest.CorruptionConfig(probability=args.p, enabled=enabled, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    result = ingest.corrupt_dataset(ds, cfg)
    tmp = args.out + ".detgain-tmp"
    ingest.save_ground_truth(result.dataset, tmp)
    os.replace(tmp, args.out)
    if args.manifest:
        atomic_write_text(args.manifest, json.dumps(result.manifest(), indent=2))
    report = {
        "selected_images": len(result.selected_ids),
        "modified_images": len(result.modified_ids),
        "total_images": len(ds.images),
        "load_report": ds.load_report.to_json() if ds.load_report else None,
    }
    if args.report:
        atomic_write_text(args.report, json.dumps(report, indent=2))
    else:
        print(json.dumps(report), file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------


def _add_common(p: _Parser, *, seed: bool = True, tau: bool = True, threads: bool = False) -> None:
    if seed:
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    if tau:
        p.add_argument(
            "--tau-grid",
            default="0.5:0.95:0.05",
            help="IoU thresholds as start:stop:step (default 0.5:0.95:0.05)",
        )
    if threads:
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker thread cap (default: DETGAIN_THREADS or all logical cores)",
        )


ANNOTATION_SCHEMA = (
    'annotation JSON: {"images": [{id, width, height}], "annotations": '
    '[{id, image_id, category_id, bbox: [x, y, w, h], iscrowd}], '
    '"categories": [{id, name}]}'
)
RESULTS_SCHEMA = "detection-results JSON: [{image_id, category_id, bbox: [x, y, w, h], score}]"
PRIOR_SCHEMA = (
    "prior-table JSON: [{class, tau, alpha_tp, beta_tp, alpha_fp, beta_fp, "
    "tp_uniform_fallback, fp_uniform_fallback, T, F, t_gt, coeffs_tp[7], "
    "coeffs_fp[7], residual, monotone}]"
)


def build_parser() -> _Parser:
    parser = _Parser(prog="detgain", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser(
        "score", help="per-image teacher/student marginals and learnability -> CSV",
        description="Score every dataset image: marginal-mAP estimate under the teacher dump, "
        "under the student dump, and their gap. CSV columns: image_id, delta_teacher, "
        "delta_student, learnability.",
        epilog=f"Input {ANNOTATION_SCHEMA}; {RESULTS_SCHEMA}.",
    )
    p.add_argument("--gt", required=True, help="COCO annotation JSON")
    p.add_argument("--teacher", required=True, help="teacher detection-results JSON")
    p.add_argument("--student", required=True, help="student detection-results JSON")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    p.add_argument("--prior", choices=curation.PRIOR_MODES, default="uniform")
    p.add_argument("--prior-table", default=None, help="fitted prior table JSON (for non-uniform priors)")
    p.add_argument("--stats", choices=curation.STATS_SOURCES, default="dataset")
    p.add_argument("--max-dets", type=int, default=100, help="per-image detection cap (default 100)")
    _add_common(p, threads=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser(
        "select", help="iterate seeded super-batches over a scores CSV -> JSONL",
        description="Consume a scores CSV and emit one JSON object per iteration: "
        '{"iter": i, "superbatch": [ids], "selected": [ids]}.',
        epilog="Input CSV columns: image_id, delta_teacher, delta_student, learnability.",
    )
    p.add_argument("--scores", required=True, help="CSV from `detgain score`")
    p.add_argument("--ratio", type=float, required=True, help="selection ratio in (0, 1]")
    p.add_argument("--superbatch", type=int, required=True, help="images loaded per iteration")
    p.add_argument("--iters", type=int, default=None, help="iterations (default: one epoch)")
    p.add_argument("--out", default=None, help="output JSONL path (default: stdout)")
    _add_common(p, tau=False)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser(
        "simulate", help="full curation loop over dumps -> trace + summary JSON",
        description="Run the per-iteration selection loop; prints a summary and writes the "
        "full trace as JSON behind --out. A corruption manifest enables the corrupted-image "
        "selection-rate statistics.",
        epilog=f"Input {ANNOTATION_SCHEMA}; {RESULTS_SCHEMA}; manifest JSON "
        '{"selected": [ids], "modified": [ids]} (or a bare id array).',
    )
    p.add_argument("--gt", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--superbatch", type=int, default=80)
    p.add_argument("--prior", choices=curation.PRIOR_MODES, default="uniform")
    p.add_argument("--prior-table", default=None)
    p.add_argument("--stats", choices=curation.STATS_SOURCES, default="dataset")
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--corruption-manifest", default=None, help="manifest JSON from `detgain corrupt`")
    p.add_argument("--out", default=None, help="trace JSON path")
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser(
        "exact-delta", help="brute-force marginal mAP of one image",
        description="Evaluate the dataset metric with and without the image (full "
        "recomputation) and print the difference as decimal text.",
        epilog=f"Input {ANNOTATION_SCHEMA}; {RESULTS_SCHEMA}.",
    )
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True, help="detection-results JSON")
    p.add_argument("--image-id", type=int, required=True)
    p.add_argument("--max-dets", type=int, default=100)
    _add_common(p, seed=False)
    p.set_defaults(fn=cmd_exact_delta)

    p = sub.add_parser(
        "verify-mc", help="Monte Carlo vs analytic insertion marginals",
        description="Simulate single-detection insertions into sampled score pools and "
        "tabulate the empirical mean against the analytic value per probe score.",
    )
    p.add_argument("--tp", action="store_true", help="verify TP insertion")
    p.add_argument("--fp", action="store_true", help="verify FP insertion")
    p.add_argument("--dist", default="uniform", help="uniform | beta:aTP,bTP,aFP,bFP")
    p.add_argument("--trials", type=int, default=montecarlo.DEFAULT_TRIALS)
    p.add_argument("--t", type=int, default=montecarlo.DEFAULT_TP, help="pool TP count")
    p.add_argument("--f", type=int, default=montecarlo.DEFAULT_FP, help="pool FP count")
    p.add_argument("--t-gt", type=int, default=montecarlo.DEFAULT_GT, help="ground-truth total")
    p.add_argument("--n-scores", type=int, default=10, help="probe scores in [0.01, 0.99]")
    p.add_argument("--points", type=int, default=300, help="quadrature points for non-uniform models")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", default=None)
    _add_common(p, tau=False)
    p.set_defaults(fn=cmd_verify_mc)

    p = sub.add_parser(
        "fit-prior", help="fit per-(class, threshold) Beta score priors -> JSON",
        description="Fit TP/FP Beta densities per cell from a matched dump; sparse cells "
        "fall back to the uniform prior and are flagged.",
        epilog=f"Input {ANNOTATION_SCHEMA}; {RESULTS_SCHEMA}. Output {PRIOR_SCHEMA}.",
    )
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-samples", type=int, default=10)
    p.add_argument("--max-dets", type=int, default=100)
    _add_common(p, seed=False)
    p.set_defaults(fn=cmd_fit_prior)

    p = sub.add_parser(
        "surrogate", help="fit degree-6 polynomial surrogates onto a prior table",
        description="Sample the numeric insertion marginals of every fitted cell and "
        "least-squares fit degree-6 polynomials; rewrites the table JSON with coefficients "
        "and residuals.",
        epilog=f"Input and output {PRIOR_SCHEMA}.",
    )
    p.add_argument("--priors", required=True, help="prior table JSON from fit-prior")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=priors.DEFAULT_FIT_SAMPLES)
    p.add_argument("--points", type=int, default=300)
    p.add_argument("--max-residual", type=float, default=priors.DEFAULT_RESIDUAL_LIMIT)
    _add_common(p, seed=False, tau=False)
    p.set_defaults(fn=cmd_surrogate)

    p = sub.add_parser(
        "corrupt", help="synthesize a corrupted annotation file",
        description="Apply box jittering, label swaps, deletions, and fake-box insertion "
        "to a p-fraction of images; writes a complete annotation file in the input schema, "
        "an optional manifest of affected image ids, and a report (stderr or --report).",
        epilog=f"Input and output {ANNOTATION_SCHEMA}; manifest JSON "
        '{"selected": [ids], "modified": [ids]}.',
    )
    p.add_argument("--gt", required=True)
    p.add_argument("--p", type=float, required=True, help="per-image corruption probability")
    p.add_argument("--types", default=None, help=f"comma list from {','.join(ingest.CORRUPTION_TYPES)}")
    p.add_argument("--out", required=True, help="corrupted annotation JSON path")
    p.add_argument("--manifest", default=None, help="write affected image ids as JSON")
    p.add_argument("--report", default=None, help="write the load/corruption report as JSON")
    _add_common(p, tau=False)
    p.set_defaults(fn=cmd_corrupt)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"detgain: error: {exc}", file=sys.stderr)
        return 1
    except ingest.ParseError as exc:
        print(f"detgain: parse error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"detgain: i/o error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"detgain: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
