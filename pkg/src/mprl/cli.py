"""Command-line harness.

Subcommands:

* ``run``       -- execute an experiment grid from a spec file.
* ``gradcheck`` -- verify analytic gradients against finite differences.
* ``trace``     -- train the first grid cell and dump per-epoch argmax
                   trajectories for tracked generated samples.
* ``gen-data``  -- emit the synthetic dataset files a spec describes.
* ``eval``      -- score saved query/gallery embedding files.

Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 check failure.  ``MPRL_VERBOSE=0`` silences per-cell progress lines.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import InvalidConfig, MprlError, SpecError
from .experiment import (
    build_datasets,
    parse_spec,
    run_experiment,
    run_trace,
)
from .gradcheck import DEFAULT_K_VALUES, DEFAULT_TOLERANCE, run_gradcheck
from .retrieval import evaluate, load_embeddings, pairwise_sq_euclidean, report_to_json
from .synthgen import save_dataset

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3


def _verbose() -> bool:
    return os.environ.get("MPRL_VERBOSE", "1") != "0"


def _say(message: str) -> None:
    if _verbose():
        print(message)


def cmd_run(args) -> int:
    spec = parse_spec(args.spec)
    out_dir = args.out if args.out else spec.out_dir

    def progress(result):
        _say(
            f"{result.cell.name}: rank1={result.rank1:.4f} mAP={result.mean_ap:.4f} "
            f"({result.wall_seconds:.2f}s)"
        )

    results = run_experiment(spec, out_dir=out_dir, jobs=args.jobs, progress=progress)
    _say(f"wrote {len(results)} cells and summary.csv under {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    k_values = tuple(int(v) for v in args.k.split(","))
    report = run_gradcheck(
        k_values=k_values, trials=args.trials, tolerance=args.tolerance, seed=args.seed,
    )
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"gradcheck FAILED at tolerance {args.tolerance:g}")
        return EXIT_CHECK_FAILED
    print(f"gradcheck passed at tolerance {args.tolerance:g}")
    return EXIT_OK


def cmd_trace(args) -> int:
    spec = parse_spec(args.spec)
    out_dir = args.out if args.out else spec.out_dir
    csv_path, tracked = run_trace(spec, args.samples, out_dir)
    if tracked < args.samples:
        print(
            f"warning: requested {args.samples} samples but only {tracked} generated "
            "samples exist; clipped", file=sys.stderr,
        )
    _say(f"wrote {csv_path} ({tracked} tracked samples)")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = parse_spec(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else spec.seeds[0]
    for count in spec.counts:
        real, generated = build_datasets(spec, seed, count)
        real_path = out / f"real_seed{seed}.txt"
        if not real_path.exists():
            save_dataset(real, real_path)
            _say(f"wrote {real_path}")
        if generated is not None:
            gen_path = out / f"generated_n{count}_seed{seed}.txt"
            save_dataset(generated, gen_path)
            _say(f"wrote {gen_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    queries = load_embeddings(args.query)
    gallery = load_embeddings(args.gallery)
    report = evaluate(pairwise_sq_euclidean(queries, gallery), queries.labels, gallery.labels)
    text = report_to_json(report)
    if args.out:
        Path(args.out).write_text(text)
        _say(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mprl", description="virtual-label training and evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment grid from a spec file")
    p_run.add_argument("--spec", required=True, help="spec file path")
    p_run.add_argument("--out", default=None, help="output directory (overrides spec)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--k", default=",".join(str(k) for k in DEFAULT_K_VALUES),
                        help="comma-separated class counts")
    p_grad.add_argument("--trials", type=int, default=100)
    p_grad.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_trace = sub.add_parser("trace", help="per-epoch argmax trajectories")
    p_trace.add_argument("--spec", required=True)
    p_trace.add_argument("--samples", type=int, required=True,
                         help="number of generated samples to track")
    p_trace.add_argument("--out", default=None)
    p_trace.set_defaults(func=cmd_trace)

    p_gen = sub.add_parser("gen-data", help="emit synthetic dataset files")
    p_gen.add_argument("--spec", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None,
                       help="dataset seed (default: first seed in the spec)")
    p_gen.set_defaults(func=cmd_gen_data)

    p_eval = sub.add_parser("eval", help="score query/gallery embedding files")
    p_eval.add_argument("--query", required=True)
    p_eval.add_argument("--gallery", required=True)
    p_eval.add_argument("--out", default=None, help="report path (default: stdout)")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, InvalidConfig, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MprlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
