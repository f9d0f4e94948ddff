"""Command-line entry points: simulate, train, evaluate, report.

Every command writes a manifest (config digest, code version, seeds,
timestamps, file index) next to its outputs. Primary outputs carry no
timestamps, so re-running a command with the same config and seed reproduces
them byte for byte.

Exit codes: 0 success, 1 usage error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import csv
import gzip
import json
import os
import sys
import time

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .env import run_episode
from .metrics import (
    CarbonModel,
    carbon_estimate,
    summarize_experiment,
    write_comparison_json,
    write_ecdf_csv,
    write_pairs_csv,
)
from .policy import load_policy
from .runner import evaluate_pairs
from .trainer import train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


class CommandError(Exception):
    """Runtime fault with a user-facing message."""


def _load_cfg(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return load_config(path)
    except FileNotFoundError:
        raise CommandError(f"config file not found: {path}")
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CommandError(f"bad config {path}: {exc}")


def _load_checkpoint(path: str, cfg: ExperimentConfig, require_match: bool = True):
    if not os.path.exists(path):
        raise CommandError(f"checkpoint not found: {path}")
    try:
        params, meta = load_policy(path)
    except Exception as exc:
        raise CommandError(f"bad checkpoint {path}: {exc}")
    digest = meta.get("config_digest")
    if require_match and digest is not None and digest != cfg.digest():
        raise CommandError(
            "checkpoint config digest does not match the supplied config"
        )
    if params.obs_dim != cfg.max_degree:
        raise CommandError(
            f"checkpoint observation width {params.obs_dim} != config max degree {cfg.max_degree}"
        )
    return params


def _write_manifest(out_dir: str, command: str, cfg: ExperimentConfig,
                    seeds, files: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seeds": seeds,
        "started_unix": started,
        "finished_unix": time.time(),
        "files": sorted(files),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dump_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_cfg(args.config)
    seed = args.seed if args.seed is not None else cfg.experiment.root_seed
    params = None
    if args.checkpoint:
        params = _load_checkpoint(args.checkpoint, cfg)
    outcome = run_episode(
        cfg, seed, params,
        learning=False,
        stochastic=args.stochastic,
        keep_log=args.log,
        track_digest=True,
    )
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    files = ["report.json"]
    _dump_json(os.path.join(out_dir, "report.json"), {
        "seed": seed,
        "report": outcome.report.to_dict(),
        "reward": outcome.reward,
        "event_log_digest": outcome.digest,
    })
    save_config(cfg, os.path.join(out_dir, "config.json"))
    files.append("config.json")
    if args.log:
        log_path = os.path.join(out_dir, "events.csv.gz")
        with gzip.open(log_path, "wt", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row_kind", "fields..."])
            for row in outcome.log:
                writer.writerow([repr(x) for x in row])
        files.append("events.csv.gz")
    _write_manifest(out_dir, "simulate", cfg, [seed], files, started)
    r = outcome.report
    print(f"seed={seed} forged={r.forged} synchronized={r.synchronized} "
          f"sync_rate={r.sync_rate:.3f} sync_time_s={r.sync_time_s} "
          f"msgs_per_sync_block={r.msgs_per_sync_block}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_cfg(args.config)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    def progress(it, row):
        print(f"iter {it}: mean_reward={row['mean_reward']:.4f} "
              f"clip={row['clip_fraction']:.3f} vloss={row['value_loss']:.4f}",
              flush=True)

    try:
        result = train(
            cfg, args.iterations, out_dir=out_dir,
            workers=args.workers, resume=args.resume,
            progress=progress if not args.quiet else None,
        )
    except FloatingPointError as exc:
        raise CommandError(f"training diverged: {exc}")
    _write_manifest(out_dir, "train", cfg, [cfg.experiment.root_seed],
                    ["checkpoint.npz", "curve.csv"], started)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = _load_cfg(args.config)
    params = _load_checkpoint(args.checkpoint, cfg)
    k = args.pairs if args.pairs is not None else cfg.experiment.pairs
    if k < 2:
        raise CommandError("need at least 2 pairs")
    progress = None
    if not args.quiet:
        def progress(done, total):
            if done % 10 == 0 or done == total:
                print(f"pairs {done}/{total}", flush=True)
    pairs = evaluate_pairs(cfg, params, k, workers=args.workers,
                           stochastic=args.stochastic, progress=progress)
    summary = summarize_experiment(pairs, include_signed_rank=args.signed_rank)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    write_pairs_csv(os.path.join(out_dir, "pairs.csv"), pairs)
    write_ecdf_csv(os.path.join(out_dir, "ecdf.csv"), summary)
    write_comparison_json(os.path.join(out_dir, "comparison.json"), summary)
    _write_manifest(out_dir, "evaluate", cfg, [p.seed for p in pairs],
                    ["pairs.csv", "ecdf.csv", "comparison.json"], started)
    for name, m in summary.metrics.items():
        unit = "pp" if m.change_kind == "percentage_points" else "%"
        print(f"{name}: baseline={m.baseline_mean:.4f} treated={m.treated_mean:.4f} "
              f"change={m.change:+.2f}{unit} p={m.p_value:.4g}")
    return 0


def cmd_report(args) -> int:
    started = time.time()
    results = args.results
    comparison_path = os.path.join(results, "comparison.json")
    ecdf_path = os.path.join(results, "ecdf.csv")
    missing = [p for p in (comparison_path, ecdf_path) if not os.path.exists(p)]
    if missing:
        for p in missing:
            print(f"missing input: {p}", file=sys.stderr)
        return 2
    with open(comparison_path) as fh:
        comparison = json.load(fh)
    curves: dict[tuple[str, str], list[tuple[float, float]]] = {}
    with open(ecdf_path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault((row["metric"], row["arm"]), []).append(
                (float(row["value"]), float(row["fraction"]))
            )

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = args.out if args.out else results
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for metric in comparison["metrics"]:
        fig, ax = plt.subplots(figsize=(5, 4))
        for arm, style in (("baseline", "-"), ("treated", "--")):
            pts = curves.get((metric, arm))
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.step(xs, ys, style, where="post", label=arm)
        ax.set_xlabel(metric)
        ax.set_ylabel("cumulative fraction")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        name = f"ecdf_{metric}.svg"
        fig.savefig(os.path.join(out_dir, name), metadata={"Date": None})
        plt.close(fig)
        files.append(name)

    model = CarbonModel()
    msgs = comparison["metrics"].get("msgs_per_sync_block", {})
    saved = max(msgs.get("baseline_mean", 0.0) - msgs.get("treated_mean", 0.0), 0.0)
    carbon = {
        "per_message_gco2": model.per_message_gco2,
        "avg_block_bytes": model.avg_block_bytes,
        "per_byte_gco2": model.per_byte_gco2,
        "messages_saved_per_sync_block": saved,
        "gco2eq_saved_per_broadcast_phase": carbon_estimate(model, saved),
    }
    _dump_json(os.path.join(out_dir, "carbon.json"), carbon)
    files.append("carbon.json")
    cfg = config_from_dict(comparison.get("config", {})) if "config" in comparison else ExperimentConfig()
    _write_manifest(out_dir, "report", cfg, [], files, started)
    print(f"wrote {len(files)} files to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bppsim",
                     description="Block propagation simulator with a learned broadcast-ordering agent")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one simulation")
    p_sim.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    p_sim.add_argument("--seed", type=int, help="run seed (default: config root seed)")
    p_sim.add_argument("--checkpoint", help="policy checkpoint; omit for the baseline shuffle")
    p_sim.add_argument("--stochastic", action="store_true",
                       help="sample policy noise instead of greedy ranking")
    p_sim.add_argument("--log", action="store_true", help="write the full event log (gzip CSV)")
    p_sim.add_argument("--out", default="simulate-out", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train the ranking policy")
    p_train.add_argument("--config", help="experiment config JSON")
    p_train.add_argument("--iterations", type=int, default=100)
    p_train.add_argument("--workers", type=int, default=1)
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.add_argument("--quiet", action="store_true")
    p_train.add_argument("--out", default="train-out", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="paired baseline/treated comparison")
    p_eval.add_argument("--config", help="experiment config JSON")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--pairs", type=int, help="number of paired runs (default: config)")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--stochastic", action="store_true",
                        help="sample policy noise in the treated arm")
    p_eval.add_argument("--signed-rank", action="store_true",
                        help="also report the paired signed-rank p-value")
    p_eval.add_argument("--quiet", action="store_true")
    p_eval.add_argument("--out", default="evaluate-out", help="output directory")
    p_eval.set_defaults(func=cmd_evaluate)

    p_rep = sub.add_parser("report", help="render ECDF plots and the carbon summary")
    p_rep.add_argument("--results", required=True, help="directory with evaluate outputs")
    p_rep.add_argument("--out", help="output directory (default: results dir)")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected runtime fault
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
