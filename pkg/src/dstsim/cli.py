"""Command-line front end: single runs, algorithm comparisons, sweeps.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from dstsim._kernel import ConfigurationError
from dstsim.config import ALGOS, load_config
from dstsim.harness import manifest_lines, run_experiment
from dstsim.metrics import METRIC_COLUMNS, emit_csv, emit_loads_csv

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parse_seeds(raw):
    """Seed list: comma-separated integers, or `start:count` strides."""
    seeds = []
    for part in raw.split(","):
        part = part.strip()
        if ":" in part:
            start, count = part.split(":", 1)
            seeds.extend(range(int(start), int(start) + int(count)))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ConfigurationError("seeds: empty seed list")
    return seeds


def _parse_axis(raw):
    """Sweep axis `key=lo:hi` (inclusive) or `key=v1,v2,...`."""
    if "=" not in raw:
        raise ConfigurationError("axis: expected key=values")
    key, spec = raw.split("=", 1)
    key = key.strip()
    values = []
    if ":" in spec and "," not in spec:
        lo, hi = spec.split(":", 1)
        values = [str(v) for v in range(int(lo), int(hi) + 1)]
    else:
        values = [v.strip() for v in spec.split(",") if v.strip()]
    if not values:
        raise ConfigurationError("axis: empty value list")
    return key, values


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("tick,query_id,message_id,peer,action,next,ttl_remaining\n")
        for tick, qid, mid, pid, action, nxt, ttl in trace:
            fh.write(f"{tick},{qid},{mid},{pid},{action},{nxt},{ttl}\n")


def _run_one(cfg, out_dir, trace=False):
    os.makedirs(out_dir, exist_ok=True)
    result = run_experiment(cfg, trace=trace)
    emit_csv(result.series, os.path.join(out_dir, "metrics.csv"))
    if cfg.algo == "dst":
        emit_loads_csv(result.load_snapshots,
                       os.path.join(out_dir, "loads.csv"))
    _write_lines(os.path.join(out_dir, "manifest"),
                 manifest_lines(cfg, result))
    if trace:
        _write_trace(os.path.join(out_dir, "trace.log"), result.trace)
    return result


def _child_run(args):
    cfg, out_dir = args
    result = _run_one(cfg, out_dir)
    return (cfg.algo, cfg.seed, result.topology_hash,
            [[getattr(row, name) for name in METRIC_COLUMNS]
             for row in result.series])


def _run_many(plans, jobs):
    """Run (cfg, out_dir) plans, possibly in parallel; results keep plan order."""
    if jobs > 1 and len(plans) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_child_run, plans))
    return [_child_run(plan) for plan in plans]


def cmd_run(args):
    cfg = load_config(args.config, args.set)
    if args.algo:
        cfg = replace(cfg, algo=args.algo).validate()
    _run_one(cfg, args.out, trace=args.trace)
    print(f"wrote {os.path.join(args.out, 'metrics.csv')}")
    return EXIT_OK


def cmd_compare(args):
    base = load_config(args.config, args.set)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if len(algos) < 2:
        raise ConfigurationError("algos: need at least two to compare")
    for algo in algos:
        if algo not in ALGOS:
            raise ConfigurationError(f"algos: unknown algorithm {algo!r}")
    seeds = _parse_seeds(args.seeds)

    plans = []
    for algo in algos:
        for seed in seeds:
            cfg = replace(base, algo=algo, seed=seed).validate()
            plans.append((cfg, os.path.join(args.out, f"{algo}-s{seed}")))
    results = _run_many(plans, args.jobs)

    hashes = {}
    for algo, seed, topo_hash, _ in results:
        hashes.setdefault(seed, set()).add(topo_hash)
    for seed, seen in sorted(hashes.items()):
        if len(seen) != 1:
            raise RuntimeError(
                f"seed {seed}: topology diverged across algorithms")

    os.makedirs(args.out, exist_ok=True)
    joined = os.path.join(args.out, "compare.csv")
    with open(joined, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("algo", "seed") + METRIC_COLUMNS)
        for algo, seed, _, rows in results:
            for row in rows:
                writer.writerow([algo, seed] + row)
    lines = ["# comparison manifest"]
    for seed, seen in sorted(hashes.items()):
        lines.append(f"topology_hash_seed_{seed} = {next(iter(seen))}")
    _write_lines(os.path.join(args.out, "manifest"), lines)
    print(f"wrote {joined}")
    return EXIT_OK


def cmd_sweep(args):
    base = load_config(args.config, args.set)
    key, values = _parse_axis(args.axis)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for algo in algos:
        if algo not in ALGOS:
            raise ConfigurationError(f"algos: unknown algorithm {algo!r}")
    seeds = _parse_seeds(args.seeds)

    plans = []
    labels = []
    for value in values:
        for algo in algos:
            for seed in seeds:
                cfg = load_config(args.config,
                                  list(args.set) + [f"{key}={value}"])
                cfg = replace(cfg, algo=algo, seed=seed).validate()
                out = os.path.join(args.out, f"{key}{value}-{algo}-s{seed}")
                plans.append((cfg, out))
                labels.append((key, value, algo, seed))
    results = _run_many(plans, args.jobs)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("axis", "value", "algo", "seed") + METRIC_COLUMNS)
        for (k, value, _, _), (algo, seed, _, rows) in zip(labels, results):
            for row in rows:
                writer.writerow([k, value, algo, seed] + row)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dstsim",
        description="Simulate learning-driven search in unstructured "
                    "P2P networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_run.add_argument("--algo", choices=ALGOS, default=None)
    p_run.add_argument("--trace", action="store_true",
                       help="write a per-action routing trace")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare",
                           help="run several algorithms on shared seeds")
    common(p_cmp)
    p_cmp.add_argument("--algos", default="dst,aps,rw")
    p_cmp.add_argument("--seeds", default="1")
    p_cmp.set_defaults(func=cmd_compare)

    p_swp = sub.add_parser("sweep", help="sweep one config field")
    common(p_swp)
    p_swp.add_argument("--axis", required=True, metavar="KEY=LO:HI")
    p_swp.add_argument("--algos", default="dst")
    p_swp.add_argument("--seeds", default="1")
    p_swp.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
