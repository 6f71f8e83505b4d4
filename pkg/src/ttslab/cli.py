"""Command-line entry point: single runs, analysis sweeps, report aggregation.

Exit codes are a stable contract: 0 success, 1 usage or config error, 2
runtime error. Every run directory is self-describing: the resolved config
text is written next to the artifacts, and the manifest's config hash is
recomputable from it. All CSV and JSONL outputs are byte-identical across
reruns with the same config and seeds; manifest timings are the one
deliberately unstable field.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import (
    SweepResult,
    band_attenuation_sweep,
    build_model_from,
    default_budgets,
    diversity_vs_cfg,
    influence_probe,
    influence_result,
    make_prompt_set,
    reward_for,
    scaling_curves,
    sde_to_ode_sweep,
    tolerance_sweep,
    write_sweep_csv,
)
from .config import (
    ConfigError,
    comparable_hash,
    config_hash,
    config_to_text,
    load_config,
    tep_active,
)
from .outputs import (
    read_jsonl,
    read_manifest,
    write_csv,
    write_jsonl,
    write_latent_csv,
    write_manifest,
    write_pgm,
)
from .search import run_search

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

EXPERIMENTS = (
    "sde_to_ode",
    "band_attenuation",
    "influence",
    "tolerance",
    "diversity_cfg",
    "scaling",
)

DEFAULT_SEEDS = "0:200"
TOLERANCE_MAGNITUDES = (0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2)
DIVERSITY_W_VALUES = (1.0, 3.0, 5.0, 7.5)

# every file cmd_run may create, for failure cleanup
RUN_ARTIFACTS = (
    "config.txt",
    "trajectory.jsonl",
    "latent.pgm",
    "latent.pgm.minmax.json",
    "latent.csv",
    "result.jsonl",
    "manifest.json",
)


class UsageError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """Seed list syntax: 'a:b' for range(a, b), or comma-separated ints."""
    text = text.strip()
    if not text:
        return []
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return list(range(int(lo), int(hi)))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"cannot parse seed list {text!r}") from None


def _pmap(fn, items, workers: int) -> list:
    """Map preserving order; workers > 1 fans out, results are identical."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- run ---------------------------------------------------------------------


def cmd_run(args) -> Path:
    cfg = load_config(args.config, args.set)
    root_seed = cfg.seed if args.seed is None else int(args.seed)
    out_dir = Path(args.out)
    made_dir = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        model = build_model_from(cfg)
        pair = make_prompt_set(cfg.prompt, cfg.seed)[0]
        reward_fn = reward_for(cfg, model, pair)
        result = run_search(model, cfg, pair, reward_fn, root_seed)

        (out_dir / "config.txt").write_text(config_to_text(cfg))
        write_jsonl(out_dir / "trajectory.jsonl", result.events)
        sidecar = write_pgm(out_dir / "latent.pgm", result.best_latent)
        write_latent_csv(out_dir / "latent.csv", result.best_latent)
        record = {
            "strategy": cfg.search.strategy,
            "tep": tep_active(cfg),
            "root_seed": root_seed,
            "config_hash": config_hash(cfg),
            "comparable_hash": comparable_hash(cfg),
            "best_reward": result.best_reward,
            "best_index": result.best_index,
            "ndfe": result.ndfe,
            "nrfe": result.nrfe,
            "rewards": list(result.rewards),
        }
        write_jsonl(out_dir / "result.jsonl", [record])
        files = {
            "config": "config.txt",
            "trajectory_jsonl": "trajectory.jsonl",
            "latent_pgm": "latent.pgm",
            "latent_minmax": sidecar.name,
            "latent_csv": "latent.csv",
            "result": "result.jsonl",
        }
        manifest = write_manifest(
            out_dir,
            config_hash=config_hash(cfg),
            root_seed=root_seed,
            files=files,
            timings={
                "search": result.wall_time,
                "total": time.perf_counter() - started,
            },
        )
    except BaseException:
        for name in RUN_ARTIFACTS:
            (out_dir / name).unlink(missing_ok=True)
        if made_dir and not any(out_dir.iterdir()):
            out_dir.rmdir()
        raise
    print(
        f"{cfg.search.strategy} seed {root_seed}: best reward "
        f"{result.best_reward:.6f} (ndfe {result.ndfe}, nrfe {result.nrfe})"
    )
    print(f"wrote {manifest}")
    return manifest


# -- analyze -----------------------------------------------------------------


def _analysis_tables(cfg, model, prompts, args, seeds) -> dict[str, SweepResult]:
    """Compute the named experiment's sweep tables, one per output CSV.

    Each experiment is split into independent grid units so --workers can fan
    them out; units are pure and merged in grid order, making worker count
    irrelevant to the result.
    """
    pair = prompts[0]
    n_steps = cfg.sampler.n_steps
    workers = args.workers
    name = args.experiment

    if name == "sde_to_ode":
        switches = sorted({0, n_steps // 4, n_steps // 2, 3 * n_steps // 4, n_steps})
        rows = _pmap(
            lambda s: sde_to_ode_sweep(model, cfg, pair, [s], seeds).rows[0],
            switches,
            workers,
        )
        return {name: SweepResult("switch_step", tuple(rows))}

    if name == "band_attenuation":
        units = [
            (band, k * n_steps // 4, (k + 1) * n_steps // 4)
            for band in ("low", "high")
            for k in range(4)
        ]
        rows = _pmap(
            lambda u: band_attenuation_sweep(
                model, cfg, pair, u[0], range(u[1], u[2]), seeds
            ).rows[0],
            units,
            workers,
        )
        return {name: SweepResult("attenuated_steps", tuple(rows))}

    if name == "influence":
        stride = max(1, n_steps // 8)
        units = [
            (src, step)
            for src in ("spatial", "embedding", "both")
            for step in range(0, n_steps, stride)
        ]
        records = _pmap(
            lambda u: influence_probe(model, cfg, pair, u[1], u[0], seeds),
            units,
            workers,
        )
        return {name: influence_result(records)}

    if name == "tolerance":
        dims = ("timestep_window", "branch", "layer")
        tables = _pmap(
            lambda d: tolerance_sweep(
                model, cfg, pair, d, TOLERANCE_MAGNITUDES, seeds
            ),
            dims,
            workers,
        )
        return {f"tolerance_{d}": t for d, t in zip(dims, tables)}

    if name == "diversity_cfg":
        units = [
            (w, v)
            for w in DIVERSITY_W_VALUES
            for v in ("ode", "sde", "sde_tep")
        ]
        rows = _pmap(
            lambda u: diversity_vs_cfg(
                model, cfg, prompts, [u[0]], [u[1]], seeds
            ).rows[0],
            units,
            workers,
        )
        return {name: SweepResult("cfg_scale", tuple(rows))}

    # scaling
    budgets = default_budgets(cfg, args.axis)
    tables = _pmap(
        lambda b: scaling_curves(model, cfg, pair, args.axis, [b], seeds),
        budgets,
        workers,
    )
    rows = tuple(row for t in tables for row in t.rows)
    return {f"scaling_{args.axis}": SweepResult(args.axis, rows)}


def cmd_analyze(args) -> Path:
    if args.experiment not in EXPERIMENTS:
        raise UsageError(
            f"unknown experiment {args.experiment!r}; valid names: "
            + ", ".join(EXPERIMENTS)
        )
    cfg = load_config(args.config, args.set)
    seeds = parse_seeds(args.seeds)
    if not seeds:
        raise UsageError("empty seed list")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    model = build_model_from(cfg)
    prompts = make_prompt_set(cfg.prompt, cfg.seed)
    tables = _analysis_tables(cfg, model, prompts, args, seeds)
    files = {}
    for table_name, table in tables.items():
        path = write_sweep_csv(out_dir, table_name, cfg, table)
        files[table_name] = path.name
        print(f"wrote {path}")
    manifest = write_manifest(
        out_dir,
        config_hash=config_hash(cfg),
        root_seed=seeds[0],
        files=files,
        timings={"analyze": time.perf_counter() - started},
    )
    return manifest


# -- report ------------------------------------------------------------------


def _group_stats(values) -> tuple[float, object, int]:
    n = len(values)
    mean = float(np.mean(values))
    if n < 2:
        return mean, "", n
    return mean, float(np.std(values, ddof=1) / np.sqrt(n)), n


def cmd_report(args) -> Path:
    runs = []
    for d in args.dirs:
        directory = Path(d)
        # a readable manifest marks the directory as a finished run
        read_manifest(directory / "manifest.json")
        runs.extend(read_jsonl(directory / "result.jsonl"))
    if not runs:
        raise UsageError("no runs found in the given directories")
    hashes = sorted({r["comparable_hash"] for r in runs})
    if len(hashes) > 1:
        raise UsageError(
            "manifests mix incompatible configs; comparable hashes: "
            + ", ".join(hashes)
        )

    groups: dict[tuple[str, str], list] = {}
    for r in runs:
        key = (r["strategy"], "tep" if r["tep"] else "no_tep")
        groups.setdefault(key, []).append(r)
    rows = []
    for (strategy, arm), members in sorted(groups.items()):
        mean, stderr, n = _group_stats([m["best_reward"] for m in members])
        rows.append((strategy, arm, mean, stderr, n))

    if len(groups) == 2:
        (key_a, runs_a), (key_b, runs_b) = sorted(groups.items())
        by_seed_a = {r["root_seed"]: r["best_reward"] for r in runs_a}
        by_seed_b = {r["root_seed"]: r["best_reward"] for r in runs_b}
        common = sorted(set(by_seed_a) & set(by_seed_b))
        if common:
            diffs = [by_seed_a[s] - by_seed_b[s] for s in common]
            mean, stderr, n = _group_stats(diffs)
            label = f"{'/'.join(key_a)}-minus-{'/'.join(key_b)}"
            rows.append(("paired_diff", label, mean, stderr, n))

    header = ("variable", "arm", "mean", "stderr", "n")
    print(f"{'variable':<18} {'arm':<34} {'n':>4} {'mean':>14} {'stderr':>12}")
    for variable, arm, mean, stderr, n in rows:
        shown = f"{stderr:.6g}" if isinstance(stderr, float) else "-"
        print(f"{variable:<18} {arm:<34} {n:>4} {mean:>14.6g} {shown:>12}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"report_{hashes[0]}.csv"
    write_csv(path, header, rows)
    print(f"wrote {path}")
    return path


# -- argument plumbing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ttslab",
        description="Desk-scale test-time scaling laboratory for conditional "
        "diffusion sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one search strategy end to end")
    analyze_p = sub.add_parser("analyze", help="run a sweep experiment")
    report_p = sub.add_parser("report", help="aggregate run directories")

    for p in (run_p, analyze_p):
        p.add_argument("--config", default=None, help="TOML config path")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="DOTTED.PATH=VALUE",
            help="config override; repeatable, last one wins",
        )
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument(
            "--workers",
            type=int,
            default=1,
            help="parallel sweep workers (results are worker-count invariant)",
        )
    run_p.add_argument(
        "--seed", type=int, default=None, help="root seed (default: config seed)"
    )
    analyze_p.add_argument(
        "--experiment", required=True, help="one of: " + ", ".join(EXPERIMENTS)
    )
    analyze_p.add_argument(
        "--seeds",
        default=DEFAULT_SEEDS,
        help="seed list, 'a:b' range or comma separated",
    )
    analyze_p.add_argument(
        "--axis",
        default="nrfe",
        choices=("ndfe", "nrfe"),
        help="budget axis for the scaling experiment",
    )
    report_p.add_argument("dirs", nargs="+", help="run directories to aggregate")
    report_p.add_argument("--out", default="out", help="report output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            cmd_run(args)
        elif args.command == "analyze":
            cmd_analyze(args)
        else:
            cmd_report(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
