"""Command-line front end: ``freezethaw {gen-tasks,run-hpo,eval-surrogate,compare}``.

Every command writes its fully resolved arguments to ``config.json`` in its
output directory; passing that file back through ``--config`` reruns it.
Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench_io, engine, evalkit
from .acquisition import acquisition_names, get_spec
from .config_prior import DEFAULT_RHO, M_MAX
from .surrogate import InferenceConfig
from .tasks import MAX_CONFIGS, sample_task

OUT_ENV = "FREEZETHAW_OUT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3



class UsageError(ValueError):
    pass


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed for ``(master, *parts)``; independent of run order."""
    blob = json.dumps([int(master), *[str(p) for p in parts]]).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little") >> 1


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _int_range(text: str, name: str, lo: int, hi: int) -> tuple:
    """Parse ``a``, ``a-b`` or ``a,b`` into an inclusive range within ``[lo, hi]``."""
    parts = str(text).replace(",", "-").split("-")
    try:
        vals = [int(p) for p in parts if p.strip()]
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}; expected N or A-B") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or not lo <= vals[0] <= vals[1] <= hi:
        raise UsageError(f"{name} must lie within {lo}..{hi} (got {text!r})")
    return vals[0], vals[1]


def _write_config(out: Path, args: argparse.Namespace) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n")


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else out_root() / default


# ---------------------------------------------------------------------------
# gen-tasks


def cmd_gen_tasks(args) -> int:
    if not 1 <= args.n_tasks:
        raise UsageError("--n-tasks must be >= 1")
    if not 1 <= args.n_configs <= MAX_CONFIGS:
        raise UsageError(f"--n-configs must lie within 1..{MAX_CONFIGS}")
    dims = _int_range(args.dims, "--dims", 1, M_MAX)
    b_range = _int_range(args.b_max, "--b-max", 1, 1000)
    out = _out(args, "tasks")
    _write_config(out, args)
    for k in range(args.n_tasks):
        name = f"task_{k:04d}"
        task = sample_task(
            derive_seed(args.seed, "task", k),
            args.n_configs,
            dims,
            b_range,
            task_id=name,
            rho=args.rho,
            no_hps=args.no_hps,
        )
        bench_io.write_benchmark(task, out / f"{name}.json")
    print(f"wrote {args.n_tasks} tasks to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run-hpo


def _task_files(path, flag: str) -> list:
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.json"))
        files = [f for f in files if f.name != "config.json" and not f.name.endswith(".manifest.json")]
        files += sorted(p.glob("*.csv"))
    elif p.exists():
        files = [p]
    else:
        raise UsageError(f"no such task file or directory: {p}")
    if not files:
        raise UsageError(f"no task files in {p}")
    return files


def _check_algos(names) -> None:
    known = set(engine.ALGORITHMS) | set(acquisition_names())
    for name in names:
        bare = name.split(":", 1)[1] if name.startswith("ftbo:") else name
        if name in engine.ALGORITHMS:
            continue
        try:
            get_spec(bare)
        except KeyError:
            raise UsageError(
                f"unknown algorithm {name!r}; registered: {', '.join(sorted(known))} (also ftbo:<acquisition>)"
            ) from None


def _run_one(job) -> str:
    path, algo, rep, seed, budget, cfg, eta, out = job
    bench = bench_io.load_benchmark(path)
    oracle = engine.TabularOracle.from_task(bench)
    trace = engine.run_algorithm(algo, oracle, budget, seed, cfg, eta)
    trace.meta = {"task": bench.name, "label": algo, "repetition": rep, "task_file": str(path)}
    dest = Path(out) / bench.name / algo.replace(":", "_") / f"rep{rep:03d}"
    engine.write_trace(trace, dest)
    return str(dest)


def cmd_run_hpo(args) -> int:
    algos = [a.strip() for a in args.algo.split(",") if a.strip()]
    _check_algos(algos)
    if args.budget < 1 or args.reps < 1:
        raise UsageError("--budget and --reps must be >= 1")
    if args.samples < 16:
        raise UsageError("--samples must be >= 16")
    cfg = replace(engine.HPO_INFERENCE, n_samples=args.samples)
    files = _task_files(args.task, "--task")
    out = _out(args, "hpo")
    _write_config(out, args)
    jobs = []
    for path in files:
        name = bench_io.load_benchmark(path).name
        for algo in algos:
            for rep in range(args.reps):
                seed = derive_seed(args.seed, name, algo, rep)
                jobs.append((str(path), algo, rep, seed, args.budget, cfg, args.eta, str(out)))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            done = list(pool.map(_run_one, jobs))
    else:
        done = [_run_one(j) for j in jobs]
    print(f"wrote {len(done)} traces to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval-surrogate


def cmd_eval_surrogate(args) -> int:
    if args.samples < 16:
        raise UsageError("--samples must be >= 16")
    contexts = [int(c) for c in str(args.contexts).split(",") if c.strip()]
    if not contexts or min(contexts) < 0:
        raise UsageError("--contexts needs nonnegative integers, e.g. 20,40,80")
    files = _task_files(args.tasks, "--tasks")
    tasks = [bench_io.load_benchmark(f) for f in files]
    cfg = InferenceConfig(n_samples=args.samples, seed=args.seed)
    out = _out(args, "eval")
    _write_config(out, args)
    report = evalkit.eval_prediction_quality(
        tasks, cfg, contexts, np.random.default_rng(args.seed), test_size=args.test_size
    )
    path = evalkit.write_prediction_report(report, out / "prediction_report.csv")
    for ctx, (ll, mse) in report.summary().items():
        print(f"context {ctx:4d}  median loglik {ll:8.3f}  median mse {mse:.5f}")
    if report.skipped:
        print(f"skipped {report.skipped} infeasible (task, context) pairs", file=sys.stderr)
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    if not args.traces:
        raise UsageError("--traces is required")
    root = Path(args.traces)
    files = sorted(root.rglob("*.csv"))
    files = [f for f in files if f.with_suffix(".json").exists()]
    if not files:
        raise UsageError(f"no traces under {root}")
    traces = {}
    for f in files:
        tr = engine.read_trace(f)
        key = (tr.meta.get("task", f.parent.parent.name), tr.meta.get("repetition", tr.seed), tr.meta.get("label", tr.algorithm))
        traces[key] = tr
    budget = max(t.budget for t in traces.values())
    table = evalkit.regret_table(traces, budget)
    out = _out(args, "compare")
    _write_config(out, args)
    path = evalkit.write_regret_report(table, out / "regret_rank.csv")
    ranks = evalkit.average_rank(table)
    for a in sorted(ranks):
        final = np.mean([v[-1] for k, v in table.items() if k[2] == a])
        print(f"{a:24s} final regret {final:.4f}  final rank {ranks[a][-1]:.3f}")
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freezethaw", description="Freeze-thaw hyperparameter optimisation with a Monte-Carlo learning-curve surrogate.")
    p.add_argument("--config", help="JSON file with argument values (explicit flags win)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tasks", help="sample synthetic tasks from the curve prior")
    g.add_argument("--n-tasks", type=int, default=10)
    g.add_argument("--n-configs", type=int, default=50)
    g.add_argument("--dims", default=f"1-{M_MAX}", help="dimension or range A-B within 1..10")
    g.add_argument("--b-max", default="1-1000", help="b_max or log-uniform range A-B")
    g.add_argument("--rho", type=float, default=DEFAULT_RHO)
    g.add_argument("--no-hps", action="store_true", help="curves independent of hyperparameters")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_tasks)

    r = sub.add_parser("run-hpo", help="run optimisers on tabular tasks")
    r.add_argument("--task", help="benchmark file or directory of them")
    r.add_argument("--algo", default="ifbo", help="comma-separated: ifbo, rs, hyperband, ftbo:<acq> or <acq>")
    r.add_argument("--budget", type=int, default=150)
    r.add_argument("--reps", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--samples", type=int, default=engine.HPO_INFERENCE.n_samples, help="surrogate samples S")
    r.add_argument("--eta", type=int, default=3, help="Hyperband reduction factor")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run_hpo)

    e = sub.add_parser("eval-surrogate", help="predictive log-likelihood and MSE against context size")
    e.add_argument("--tasks")
    e.add_argument("--contexts", default="20,40,80")
    e.add_argument("--samples", type=int, default=512)
    e.add_argument("--test-size", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_surrogate)

    c = sub.add_parser("compare", help="normalised regret and average rank from traces")
    c.add_argument("--traces")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(cfg) - known - {"command", "verbose"}
    if unknown:
        raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
    sub.set_defaults(**{k: v for k, v in cfg.items() if k in known})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:  # includes format and configuration errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
