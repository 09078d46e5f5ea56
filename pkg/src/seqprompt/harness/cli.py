"""Command-line entry point: ``seqprompt {run,ablate-alpha,gen-stream,inspect}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, full_preset
from .engine import ablation_fixed_alpha, run_experiment
from .stream import make_synthetic_stream, save_stream

# flag -> (section or None, field, type)
_FLAGS = {
    "--epochs": (None, "epochs", int),
    "--batch-size": (None, "batch_size", int),
    "--base-lr": (None, "base_lr", float),
    "--min-lr": (None, "min_lr", float),
    "--momentum": (None, "momentum", float),
    "--seed": (None, "seed", int),
    "--output-dir": (None, "output_dir", str),
    "--num-sessions": ("stream", "num_sessions", int),
    "--classes-per-session": ("stream", "classes_per_session", int),
    "--samples-per-class": ("stream", "samples_per_class", int),
    "--input-dim": ("stream", "input_dim", int),
    "--cluster-spread": ("stream", "cluster_spread", float),
    "--stream": ("stream", "path", str),
    "--alpha-mode": ("nka", "mode", str),
    "--alpha0": ("nka", "alpha0", float),
    "--gamma": ("nka", "gamma", float),
    "--lam": ("nka", "lam", float),
    "--theta-max": ("nka", "theta_max", float),
    "--theta-min": ("nka", "theta_min", float),
    "--sigmoid-center": ("nka", "sigmoid_center", float),
    "--sigmoid-scale": ("nka", "sigmoid_scale", float),
    "--pool-size": ("spa", "pool_size", int),
    "--prompt-length": ("spa", "prompt_length", int),
    "--proj-dim": ("head", "proj_dim", int),
    "--ridge": ("head", "ridge", float),
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", choices=["desk", "full"], default="desk")
    for flag, (_, name, typ) in _FLAGS.items():
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=typ)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else (full_preset() if args.preset == "full" else RunConfig())
    rows_per_session = cfg.spa.per_session
    for flag, (section, name, _) in _FLAGS.items():
        value = getattr(args, flag[2:].replace("-", "_"))
        if value is None:
            continue
        setattr(getattr(cfg, section) if section else cfg, name, value)
    # keep the pool partition in step with the stream length
    if cfg.spa.num_sessions != cfg.stream.num_sessions:
        cfg.spa.num_sessions = cfg.stream.num_sessions
        if args.pool_size is None:
            cfg.spa.pool_size = rows_per_session * cfg.spa.num_sessions
    return cfg


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    report = run_experiment(cfg)
    for t, acc in enumerate(report.per_session_accuracy, start=1):
        print(f"session {t}: accuracy {acc:.4f}")
    print(f"average accuracy {report.average_accuracy:.4f}  final accuracy {report.final_accuracy:.4f}")
    if cfg.output_dir:
        print(f"wrote {cfg.output_dir}/report.json")
    return 0


def cmd_ablate(args) -> int:
    cfg = config_from_args(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    rows = ablation_fixed_alpha(cfg, args.alphas, seeds=seeds, workers=args.workers)
    print(f"{'alpha':>7} {'mode':>6} {'avg':>8} {'final':>8}")
    for r in rows:
        print(f"{r['alpha']:7.3f} {r['mode']:>6} {r['average_accuracy']:8.4f} {r['final_accuracy']:8.4f}")
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(rows, indent=2))
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "mode", "average_accuracy", "final_accuracy"])
            for r in rows:
                w.writerow([r["alpha"], r["mode"], r["average_accuracy"], r["final_accuracy"]])
    return 0


def cmd_gen_stream(args) -> int:
    stream = make_synthetic_stream(
        num_sessions=args.num_sessions, K=args.classes_per_session, samples_per_class=args.samples_per_class,
        input_dim=args.input_dim, cluster_spread=args.cluster_spread, seed=args.seed,
    )
    root = save_stream(stream, args.out)
    print(f"wrote {stream.num_sessions} sessions to {root}")
    return 0


def cmd_inspect(args) -> int:
    root = Path(args.output_dir)
    report = json.loads((root / "report.json").read_text())
    print(f"average accuracy {report['average_accuracy']:.4f}  final accuracy {report['final_accuracy']:.4f}")
    for t, acc in enumerate(report["per_session_accuracy"], start=1):
        print(f"session {t}: accuracy {acc:.4f}")
    for t, trace in sorted(report["alpha_traces"].items(), key=lambda kv: int(kv[0])):
        if not trace:
            continue
        maes = [row[1] for row in trace]
        print(f"session {t}: {len(trace)} iterations, mae {min(maes):.2f}..{max(maes):.2f}, final alpha {trace[-1][2]:.4f}")
        if args.dump:
            for tau, mae, alpha in trace:
                print(f"  {tau},{mae!r},{alpha!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqprompt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full class-incremental experiment")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-alpha", help="fixed alpha vs feedback-controlled alpha")
    _add_run_flags(p)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.6, 0.7, 0.8, 0.9, 0.99, 0.999])
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-stream", help="write a synthetic session stream")
    p.add_argument("--out", required=True)
    p.add_argument("--num-sessions", type=int, default=5)
    p.add_argument("--classes-per-session", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--input-dim", type=int, default=16)
    p.add_argument("--cluster-spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_stream)

    p = sub.add_parser("inspect", help="summarise a run directory")
    p.add_argument("output_dir")
    p.add_argument("--dump", action="store_true", help="print every (tau, mae, alpha) row")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
