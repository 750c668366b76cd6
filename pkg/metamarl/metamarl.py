"""
MetaMARL - Command-line entry point
Meta-training agents that adapt to learning peers: train, test, compare, fig3, gradcheck, dump-population
"""

import argparse
import json
import os
import subprocess
import sys
import time
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

# Load environment variables
load_dotenv()

from . import __version__
from .backend import ConfigError, MetaMarlError, RunFailure
from .backend.gradcheck import GAMES, GradCheckSuite
from .backend.meta import (
    build_game,
    compare_methods,
    meta_test,
    meta_train,
    method_label,
    resolve_population,
    run_id_for,
    variant_config,
)
from .backend.policies import dump_population
from .backend.zero_sum_analytic import run_fig3
from .utils.checkpoint import load_checkpoint, save_checkpoint
from .utils.config import ExperimentConfig, config_hash, load_config
from .utils.console import configure, get_logger
from .utils.metrics import FLOAT_FORMAT, RunMetrics, summarize_auc, write_metrics
from .utils.parallel import ParallelRunner

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3
DEFAULT_VARIANTS = ("meta_mapg", "meta_pg", "reinforce", "meta_mapg_om")

logger = get_logger("cli")


def git_commit() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out_dir: str, config: ExperimentConfig) -> str:
    path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "version": __version__,
        "git_commit": git_commit(),
        "master_seeds": list(config.seeds),
        "config_hash": config_hash(config),
        "config": config.model_dump(),
        "game_metadata": {} if config.game == "zero_sum" else dict(build_game(config).metadata),
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def checkpoint_path(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"checkpoint_seed{seed}.txt")


def cmd_train(args) -> int:
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, config)
    metrics_path = os.path.join(args.out, "metrics.csv")
    collected: List[RunMetrics] = []
    with ParallelRunner(config.workers) as runner:
        for seed in config.seeds:
            metrics = RunMetrics(run_id=run_id_for(config, seed), method=method_label(config), seed=seed)
            collected.append(metrics)
            try:
                meta, _ = meta_train(config, master_seed=seed, runner=runner, metrics=metrics)
            except MetaMarlError as e:
                write_metrics(metrics_path, [m.to_frame() for m in collected])
                with open(os.path.join(args.out, "FAILED"), "w") as f:
                    f.write(f"seed={seed}\n{type(e).__name__}: {e}\n")
                raise
            if config.game != "zero_sum":
                save_checkpoint(checkpoint_path(args.out, seed), meta, seed, config_hash(config))
    write_metrics(metrics_path, [m.to_frame() for m in collected])
    logger.info(f"wrote {metrics_path}")
    return EXIT_OK


def cmd_test(args) -> int:
    config = load_config(args.config)
    meta, header = load_checkpoint(args.checkpoint, expected_hash=config_hash(config))
    seed = int(header["master_seed"])
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    metrics = meta_test(config, meta, master_seed=seed)
    frame = metrics.to_frame()
    path = write_metrics(os.path.join(out_dir, "metrics.csv"), [frame], append=True)
    summary = summarize_auc(frame)
    for _, row in summary.iterrows():
        print(f"{row['method']}\tauc={row['mean']:.6f}\tci95={row['ci95']:.6f}\tseeds={row['n']}")
    logger.info(f"appended {len(frame)} test rows to {path}")
    return EXIT_OK


def cmd_fig3(args) -> int:
    if args.config:
        config = load_config(args.config)
        params = dict(
            n_samples=config.n_samples, alpha=config.inner_lr, beta=config.outer_lr,
            iters=config.max_iters, seed=config.seeds[0], init=config.fig3_init,
        )
    else:
        params = dict(n_samples=200, alpha=0.75, beta=0.01, iters=300, seed=0, init="mirror")
    frame = run_fig3(**params)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "fig3.csv")
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = GradCheckSuite(seed=args.seed).run(args.game)
    failed = [r for r in results if not r["success"]]
    for r in results:
        status = "ok" if r["success"] else "FAIL"
        print(f"{status:4}  {r['name']:<24} {r['seconds']:7.2f}s  {r['error']}".rstrip())
    return EXIT_GRADCHECK if failed or not results else EXIT_OK


def cmd_dump_population(args) -> int:
    config = load_config(args.config)
    game = build_game(config)
    population = resolve_population(config, game)
    path = args.out or f"population_{game.name}.tsv"
    dump_population(population, game, path)
    logger.info(f"wrote {len(population.members)} personas to {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = load_config(args.config)
    if args.workers:
        config = config.model_copy(update={"workers": args.workers})
    variants = [v for v in args.variants.split(",") if v]
    os.makedirs(args.out, exist_ok=True)
    write_manifest(args.out, config)
    start = time.perf_counter()
    with ParallelRunner(config.workers) as runner:
        collected, params = compare_methods(config, variants, runner)
    for (variant, seed), meta in params.items():
        path = os.path.join(args.out, f"checkpoint_{variant}_seed{seed}.txt")
        save_checkpoint(path, meta, seed, config_hash(variant_config(config, variant)))
    frames = [m.to_frame() for m in collected]
    write_metrics(os.path.join(args.out, "metrics.csv"), frames)
    summary = summarize_auc(pd.concat(frames, ignore_index=True))
    summary.to_csv(os.path.join(args.out, "summary.csv"), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    for _, row in summary.iterrows():
        print(f"{row['method']}\tauc={row['mean']:.6f}\tci95={row['ci95']:.6f}\tseeds={row['n']}")
    logger.info(f"compared {len(variants)} variants x {len(config.seeds)} seeds in {time.perf_counter() - start:.1f}s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamarl", description=__doc__.strip().splitlines()[1])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="meta-train and write metrics, manifest and checkpoints")
    train.add_argument("config")
    train.add_argument("--out", default="runs/latest")
    train.set_defaults(handler=cmd_train)

    test = sub.add_parser("test", help="meta-test a checkpoint against the test split")
    test.add_argument("config")
    test.add_argument("--checkpoint", required=True)
    test.add_argument("--out", default=None, help="directory of metrics.csv (checkpoint directory by default)")
    test.set_defaults(handler=cmd_test)

    fig3 = sub.add_parser("fig3", help="adaptation curves on the zero-sum analytic game")
    fig3.add_argument("--out", default="runs/fig3")
    fig3.add_argument("--config", default=None)
    fig3.set_defaults(handler=cmd_fig3)

    check = sub.add_parser("gradcheck", help="run the oracle and identity checks")
    check.add_argument("--game", choices=GAMES, default="all")
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(handler=cmd_gradcheck)

    compare = sub.add_parser("compare", help="train and test several method variants over every seed")
    compare.add_argument("config")
    compare.add_argument("--variants", default=",".join(DEFAULT_VARIANTS))
    compare.add_argument("--workers", type=int, default=0, help="pool size (config value by default)")
    compare.add_argument("--out", default="runs/compare")
    compare.set_defaults(handler=cmd_compare)

    dump = sub.add_parser("dump-population", help="write the resolved population as TSV")
    dump.add_argument("config")
    dump.add_argument("--out", default=None)
    dump.set_defaults(handler=cmd_dump_population)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure(-1 if args.quiet else args.verbose)
    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        print(f"metamarl: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as e:
        print(f"metamarl: run failed: {e} ({len(e.partial_results)} partial results)", file=sys.stderr)
        return EXIT_RUNTIME
    except (MetaMarlError, OSError) as e:
        print(f"metamarl: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
