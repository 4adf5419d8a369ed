"""Command-line harness: gen / train / eval / trace / flops / report.

Exit codes: 0 success, 1 runtime failure, 2 usage, 3 bad config,
4 missing input. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

import numpy as np

from .config import (TrainConfig, apply_overrides, default_train_config,
                     read_config, write_config)
from .errors import CheckpointError, ConfigError, DatasetError
from .evaluate import (EvalResult, compute_pss, evaluate_model, export_trace,
                       record_flops_table, reuse_matrix)
from .predicates import OperatorFootprint, footprint_slots
from .reasoner import flops_of, flops_of_fused
from .tasks import (EVAL_M, TASK_BY_NAME, TASK_NAMES, TRAIN_M, TaskId,
                    make_instance, write_instances)
from .training import (MetricsLog, load_checkpoint, run_supervised,
                       run_training, save_checkpoint)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4


class _Parser(argparse.ArgumentParser):
    """argparse that fails with a single machine-parsable line."""

    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}),
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _task_arg(name: str) -> TaskId:
    if name not in TASK_BY_NAME:
        raise ConfigError(f"unknown task {name!r}; expected one of "
                          + ", ".join(sorted(TASK_BY_NAME)))
    return TASK_BY_NAME[name]


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        config = read_config(args.config)
    else:
        algorithm = getattr(args, "algorithm", None) or "muzero"
        config = default_train_config(algorithm)
    overrides = _parse_sets(getattr(args, "set", []) or [])
    if overrides:
        config = apply_overrides(config, overrides)
    return config


# -- subcommands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    task = _task_arg(args.task)
    rng = np.random.default_rng(args.seed)
    instances = []
    for _ in range(args.n):
        seed = int(rng.integers(0, 2**63 - 1))
        instances.append(make_instance(task, args.m, seed,
                                       edge_prob=args.edge_prob,
                                       red_prob=args.red_prob,
                                       founder_prob=args.founder_prob))
    write_instances(args.out, instances)
    print(json.dumps({"written": args.n, "task": args.task, "m": args.m,
                      "path": args.out}))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    write_config(os.path.join(args.out, "config.txt"), config)
    metrics = MetricsLog(os.path.join(args.out, "metrics.jsonl"),
                         timing=args.timing)
    ckpt = os.path.join(args.out, "checkpoint.npz")
    try:
        if args.supervised:
            result = run_supervised(config, epochs=args.epochs, metrics=metrics)
            # supervised checkpoints feed eval/trace only, never resume
            save_checkpoint(ckpt, result.model, result.optimizers, config,
                            result.step, np.random.default_rng(config.seed))
        else:
            result = run_training(config, metrics=metrics, resume=args.resume,
                                  checkpoint_path=ckpt)
    finally:
        metrics.close()
    if result.history:
        with open(os.path.join(args.out, "history.json"), "w") as fh:
            json.dump(result.history, fh, indent=1)
    last = result.metrics.rows[-1] if result.metrics.rows else {}
    print(json.dumps({"steps": result.step, "checkpoint": ckpt,
                      "final": last}))
    return EXIT_OK


def _eval_sizes(task: TaskId, args) -> tuple[int, ...]:
    if args.sizes:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    else:
        sizes = EVAL_M[task]
    low = min(sizes)
    if low < TRAIN_M[task]:
        raise ConfigError(f"evaluation size {low} below training size "
                          f"{TRAIN_M[task]} for {TASK_NAMES[task]}")
    return sizes


def cmd_eval(args) -> int:
    # load the checkpoint before touching any output path: a missing
    # checkpoint must not leave a partial report behind
    model, _, _, step, _, _ = load_checkpoint(args.checkpoint)
    config = _resolve_config(args)
    tasks = ([_task_arg(t) for t in args.task] if args.task
             else list(config.tasks))
    results: list[EvalResult] = []
    for task in tasks:
        for m in _eval_sizes(task, args):
            for mode in ("planner", "full") if args.mode == "both" else (args.mode,):
                results.append(evaluate_model(model, task, m, args.n, config,
                                              seed=args.seed, mode=mode))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval.json"), "w") as fh:
        json.dump({"checkpoint": args.checkpoint, "step": step,
                   "seed": args.seed, "n_instances": args.n,
                   "results": [r.to_json() for r in results]}, fh, indent=1)
    with open(os.path.join(args.out, "accuracy.tsv"), "w") as fh:
        fh.write(record_flops_table(results) + "\n")
    with open(os.path.join(args.out, "instances.jsonl"), "w") as fh:
        for r in results:
            for i in range(len(r.accuracies)):
                fh.write(json.dumps({
                    "task": TASK_NAMES[r.task], "m": r.m, "mode": r.mode,
                    "index": i, "accuracy": round(float(r.accuracies[i]), 6),
                    "flops": int(r.flops[i]), "full_flops": int(r.full_flops[i]),
                    "footprints": [list(f) for f in r.footprints[i]],
                }) + "\n")
    print(json.dumps({"out": args.out, "rows": len(results)}))
    return EXIT_OK


def cmd_trace(args) -> int:
    model, _, _, _, _, _ = load_checkpoint(args.checkpoint)
    config = _resolve_config(args)
    tasks = ([_task_arg(t) for t in args.task] if args.task
             else list(config.tasks))
    task_footprints = {}
    for task in tasks:
        m = args.m or TRAIN_M[task]
        res = evaluate_model(model, task, m, args.n, config, seed=args.seed)
        modal, _ = Counter(res.footprints).most_common(1)[0]
        task_footprints[task] = modal
    dot, jsonl = export_trace(task_footprints, model.config.breadth)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "trace.dot"), "w") as fh:
        fh.write(dot + "\n")
    with open(os.path.join(args.out, "trace.jsonl"), "w") as fh:
        fh.write(jsonl + ("\n" if jsonl else ""))
    print(json.dumps({"out": args.out,
                      "tasks": [TASK_NAMES[t] for t in tasks]}))
    return EXIT_OK


def cmd_flops(args) -> int:
    config = _resolve_config(args)
    rc = config.reasoner_config()
    sizes = [int(s) for s in args.m.split(",")]
    slots = footprint_slots(rc.breadth)
    lines = ["m\tslot\tbranch\tflops"]
    for m in sizes:
        base = flops_of(OperatorFootprint.zeros(rc.breadth), rc, m)
        for j, (arity, branch) in enumerate(slots):
            bits = [0] * len(slots)
            bits[j] = 1
            one = flops_of(OperatorFootprint(tuple(bits)), rc, m)
            lines.append(f"{m}\ta{arity}:{branch}\t{branch}\t{one - base}")
        full = flops_of(OperatorFootprint.ones(rc.breadth), rc, m)
        lines.append(f"{m}\tlayer:all\t-\t{full}")
        lines.append(f"{m}\tpass:all\t-\t{full * rc.depth}")
        lines.append(f"{m}\tpass:fused\t-\t{flops_of_fused(rc, m) * rc.depth}")
    table = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table + "\n")
    else:
        print(table)
    return EXIT_OK


def _load_eval(run_dir: str) -> dict:
    path = os.path.join(run_dir, "eval.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no eval.json under {run_dir}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"unparsable {path}: {exc}") from exc


def cmd_report(args) -> int:
    from . import figures

    seeds = [_load_eval(d) for d in args.runs]
    # task -> size -> per-seed planner accuracy; plus flops and act freqs
    acc: dict[str, dict[int, list[float]]] = {}
    gated: dict[tuple[str, int], list[float]] = {}
    full: dict[tuple[str, int], list[float]] = {}
    freqs: dict[str, list[list[float]]] = {}
    for payload in seeds:
        for row in payload["results"]:
            task, m, mode = row["task"], row["m"], row["mode"]
            if mode == "planner":
                acc.setdefault(task, {}).setdefault(m, []).append(row["accuracy"])
                gated.setdefault((task, m), []).append(row["mean_flops"])
                freqs.setdefault(task, []).append(row["activation_frequency"])
            else:
                full.setdefault((task, m), []).append(row["mean_flops"])

    pss = {}
    for task, sizes in acc.items():
        n_seeds = min(len(v) for v in sizes.values())
        pss[task] = compute_pss([[sizes[m][i] for m in sorted(sizes)]
                                 for i in range(n_seeds)])
    mean_freqs = {TASK_BY_NAME[t]: np.mean(np.array(rows), axis=0)
                  for t, rows in freqs.items()}
    os.makedirs(args.out, exist_ok=True)

    lines = ["task\tm\tmean_accuracy\tseeds\tpss"]
    for task in sorted(acc):
        for m in sorted(acc[task]):
            vals = acc[task][m]
            lines.append(f"{task}\t{m}\t{np.mean(vals):.6f}\t{len(vals)}\t"
                         f"{pss[task]:.1f}")
    with open(os.path.join(args.out, "report_accuracy.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    lines = ["task\tm\tgated_flops\tfull_flops\tratio"]
    rows_for_fig = []
    for (task, m) in sorted(gated):
        g = float(np.mean(gated[(task, m)]))
        f = float(np.mean(full.get((task, m), [np.nan])))
        lines.append(f"{task}\t{m}\t{g:.1f}\t{f:.1f}\t{g / f:.6f}")
        rows_for_fig.append((f"{task}@{m}", g, f))
    with open(os.path.join(args.out, "report_flops.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    task_ids, reuse = reuse_matrix(mean_freqs) if mean_freqs else ([], None)
    lines = ["task_a\ttask_b\top\treuse"]
    if reuse is not None:
        breadth = (reuse.shape[2] - 1) // 3
        slots = footprint_slots(breadth)
        for i, a in enumerate(task_ids):
            for j, b in enumerate(task_ids):
                for k, (arity, branch) in enumerate(slots):
                    lines.append(f"{TASK_NAMES[a]}\t{TASK_NAMES[b]}\t"
                                 f"a{arity}:{branch}\t{reuse[i, j, k]:.6f}")
    with open(os.path.join(args.out, "report_reuse.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump({"seeds": len(args.runs), "pss": pss,
                   "accuracy": {t: {str(m): float(np.mean(v))
                                    for m, v in sizes.items()}
                                for t, sizes in acc.items()}}, fh, indent=1)

    if mean_freqs:
        k = len(next(iter(mean_freqs.values())))
        figures.activation_heatmap(mean_freqs, (k - 1) // 3,
                                   os.path.join(args.out, "activation.png"))
        figures.reuse_heatmap(task_ids, reuse,
                              os.path.join(args.out, "reuse.png"))
    if rows_for_fig:
        figures.flops_bars(rows_for_fig, os.path.join(args.out, "flops.png"))
    print(json.dumps({"out": args.out, "pss": pss}))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="key/value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override a config key (repeatable)")


def build_parser() -> _Parser:
    parser = _Parser(prog="planlogic",
                     description="planner-gated logic reasoner toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a dataset file")
    p.add_argument("--task", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-prob", type=float, default=0.3)
    p.add_argument("--red-prob", type=float, default=0.5)
    p.add_argument("--founder-prob", type=float, default=0.2)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run a training loop")
    _add_config_flags(p)
    p.add_argument("--algorithm", choices=("reinforce", "ppo", "muzero"),
                   help="defaults when no --config is given")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--supervised", action="store_true",
                   help="all-ops BCE baseline instead of RL")
    p.add_argument("--epochs", type=int, default=200,
                   help="supervised epochs")
    p.add_argument("--timing", action="store_true",
                   help="include wall-clock ms in metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", action="append",
                   help="task name (repeatable; default: config tasks)")
    p.add_argument("--sizes", help="comma-separated m values")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("planner", "full", "both"),
                   default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="export reasoning paths")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", action="append")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("flops", help="per-op cost table")
    _add_config_flags(p)
    p.add_argument("--m", default="10,20,50,100")
    p.add_argument("--out")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("report", help="aggregate seed runs")
    p.add_argument("--runs", nargs="+", required=True,
                   help="run directories containing eval.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, CheckpointError) as exc:
        print(json.dumps({"error": "missing-input", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_MISSING
    except DatasetError as exc:
        print(json.dumps({"error": "dataset", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
