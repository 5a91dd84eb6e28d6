"""Command-line experiment runner.

Verbs: `run <config>` trains one strategy across replicate seeds and writes
R.csv / metrics.json / checkpoints / logs plus a manifest; `metrics <R.csv>`
prints the metric suite for a stored matrix; `compare <manifest>...` builds
the strategies-by-metrics table (mean +/- std over seeds, best per column
flagged). Config and file-format problems exit 2 with a one-line JSON error
on stderr; runtime failures exit 1.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import config_echo, load_experiment_config, resolve_output_dir
from .datasets import default_four_domain_suite, load_dataset
from .errors import ConfigError, FileFormatError, SegclError
from .metrics import (
    METRIC_NAMES,
    cl_metrics,
    metrics_to_json,
    read_matrix_csv,
    write_matrix_csv,
    write_metrics_json,
)
from .trainer import run_sequence
from .trainer_log import StepLogger

MANIFEST_NAME = "manifest.json"


def _fail(exc, code):
    kind = type(exc).__name__
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def _load_domains(bench):
    if bench.suite_seed is not None:
        suite = default_four_domain_suite(bench.suite_seed)
        domains = [t for t, _ in suite]
        evals = [e for _, e in suite]
    else:
        domains = [load_dataset(p) for p in bench.train_paths]
        evals = [load_dataset(p) for p in bench.eval_paths]
    return domains, evals


def _benchmark_identity(bench, domains, evals):
    H, W = domains[0].image_size
    return {
        "suite_seed": bench.suite_seed,
        "train_paths": bench.train_paths,
        "eval_paths": bench.eval_paths,
        "num_domains": len(domains),
        "image_size": [int(H), int(W)],
        "num_classes": domains[0].num_classes,
        "train_sizes": [d.size for d in domains],
        "eval_sizes": [e.size for e in evals],
    }


def cmd_run(args):
    cfg = load_experiment_config(args.config)
    if args.strategy:
        from .regularization import StrategyConfig

        cfg.strategy = StrategyConfig(kind=args.strategy)
    if args.seed is not None:
        cfg.schedule.seed = args.seed
    out_root = resolve_output_dir(args.output_dir or cfg.output_dir)
    os.makedirs(out_root, exist_ok=True)

    domains, evals = _load_domains(cfg.benchmark)
    base_seed = cfg.schedule.seed
    runs = []
    per_seed_metrics = []
    for rep in range(cfg.num_seeds):
        seed = base_seed + rep
        run_dir = os.path.join(out_root, f"seed_{seed}")
        os.makedirs(run_dir, exist_ok=True)
        schedule = replace(cfg.schedule, seed=seed)
        log_path = os.path.join(run_dir, "train_log.txt")
        open(log_path, "w").close()
        with StepLogger(log_path, echo=not args.quiet) as logger:
            result = run_sequence(
                domains,
                cfg.strategy,
                schedule,
                evals,
                cfg.network,
                output_dir=run_dir,
                logger=logger,
            )
        r_csv = os.path.join(run_dir, "R.csv")
        metrics_json = os.path.join(run_dir, "metrics.json")
        write_matrix_csv(result.matrix, r_csv)
        m = cl_metrics(result.matrix)
        write_metrics_json(m, metrics_json)
        per_seed_metrics.append(m.to_dict())
        runs.append(
            {
                "seed": seed,
                "dir": os.path.relpath(run_dir, out_root),
                "r_csv": os.path.relpath(r_csv, out_root),
                "metrics_json": os.path.relpath(metrics_json, out_root),
                "train_log": os.path.relpath(log_path, out_root),
                "checkpoints": [os.path.relpath(p, out_root) for p in result.checkpoints],
            }
        )
        if not args.quiet:
            print(f"seed {seed}: " + " ".join(f"{k}={v:.4f}" for k, v in m.to_dict().items()))

    aggregate = {
        "n_seeds": cfg.num_seeds,
        "mean": {k: float(np.mean([m[k] for m in per_seed_metrics])) for k in METRIC_NAMES},
        "std": {k: float(np.std([m[k] for m in per_seed_metrics])) for k in METRIC_NAMES},
        "per_seed": per_seed_metrics,
        "dispersion": "std over replicate seeds",
    }
    with open(os.path.join(out_root, "aggregate_metrics.json"), "w") as f:
        json.dump(aggregate, f, sort_keys=True, indent=2)
        f.write("\n")

    manifest = {
        "version": 1,
        "strategy": cfg.strategy.kind,
        "benchmark": _benchmark_identity(cfg.benchmark, domains, evals),
        "seeds": [base_seed + r for r in range(cfg.num_seeds)],
        "runs": runs,
        "aggregate_metrics": "aggregate_metrics.json",
        "config": config_echo(cfg),
    }
    with open(os.path.join(out_root, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    if not args.quiet:
        print(f"wrote {os.path.join(out_root, MANIFEST_NAME)}")
    return 0


def cmd_metrics(args):
    matrix = read_matrix_csv(args.matrix_csv)
    sys.stdout.write(metrics_to_json(cl_metrics(matrix)))
    return 0


def _load_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise FileFormatError(f"cannot read manifest {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})")
    for key in ("strategy", "benchmark", "runs"):
        if key not in manifest:
            raise FileFormatError(f"{path}: manifest missing {key!r}")
    manifest["_dir"] = os.path.dirname(os.path.abspath(path))
    return manifest


def _manifest_metrics(manifest):
    from .metrics import read_metrics_json

    rows = []
    for run in manifest["runs"]:
        rows.append(read_metrics_json(os.path.join(manifest["_dir"], run["metrics_json"])).to_dict())
    return rows


def cmd_compare(args):
    manifests = [_load_manifest(p) for p in args.manifests]
    if len(manifests) < 2:
        raise ConfigError("compare", "need >= 2 runs")
    ident = manifests[0]["benchmark"]
    for m in manifests[1:]:
        if m["benchmark"] != ident:
            raise ConfigError(
                "compare",
                f"benchmark mismatch between {manifests[0]['strategy']} and {m['strategy']}",
            )

    table = []
    for m in manifests:
        per_seed = _manifest_metrics(m)
        row = {"strategy": m["strategy"], "n_seeds": len(per_seed)}
        for name in METRIC_NAMES:
            vals = [r[name] for r in per_seed]
            row[f"{name}_mean"] = float(np.mean(vals))
            row[f"{name}_std"] = float(np.std(vals))
        table.append(row)
    best = {name: max(r[f"{name}_mean"] for r in table) for name in METRIC_NAMES}

    lines = []
    header = f"{'strategy':16s}" + "".join(f"{name:>18s}" for name in METRIC_NAMES)
    lines.append(header)
    for row in table:
        cells = [f"{row['strategy']:16s}"]
        for name in METRIC_NAMES:
            mark = "*" if row[f"{name}_mean"] == best[name] else " "
            cells.append(f"{row[f'{name}_mean']:.3f}±{row[f'{name}_std']:.3f}{mark}".rjust(18))
        lines.append("".join(cells))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)

    csv_path = args.csv_out
    if csv_path:
        import csv as csvmod

        with open(csv_path, "w", newline="") as f:
            writer = csvmod.writer(f)
            cols = ["strategy", "n_seeds"]
            for name in METRIC_NAMES:
                cols += [f"{name}_mean", f"{name}_std"]
            writer.writerow(cols)
            for row in table:
                writer.writerow([row[c] if c in row else "" for c in cols])
            writer.writerow(
                ["best", ""]
                + [
                    v
                    for name in METRIC_NAMES
                    for v in (
                        next(r["strategy"] for r in table if r[f"{name}_mean"] == best[name]),
                        "",
                    )
                ]
            )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="segcl", description="continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one strategy over replicate seeds")
    p_run.add_argument("config", help="experiment config file (INI sections)")
    p_run.add_argument("--seed", type=int, default=None, help="override base seed")
    p_run.add_argument("--output-dir", default=None, help="override output directory")
    p_run.add_argument("--strategy", default=None, help="override strategy kind (defaults elsewhere)")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress output")
    p_run.set_defaults(func=cmd_run)

    p_metrics = sub.add_parser("metrics", help="print CL metrics for a stored R matrix")
    p_metrics.add_argument("matrix_csv")
    p_metrics.set_defaults(func=cmd_metrics)

    p_cmp = sub.add_parser("compare", help="compare strategy runs")
    p_cmp.add_argument("manifests", nargs="+", help="manifest.json paths or run directories")
    p_cmp.add_argument("--csv-out", default=None, help="also write the table as CSV")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileFormatError) as exc:
        return _fail(exc, 2)
    except SegclError as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
