"""Command-line entry point: run, sweep, calibrate, bench."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bg_environment import calibrate_correlation
from .errors import DbsBanditError
from .harness import (
    RunConfig,
    SWEEP_AXES,
    bench_runtime,
    cumulative_regret,
    export_sweep,
    export_trials,
    run_trial,
    sweep,
    write_metadata,
)


def _parse_seeds(text: str) -> tuple[int, ...]:
    """Accept '3', '0..9' (inclusive) or '0,1,5'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in text.split(",") if part)


def _load_config(args) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    config = RunConfig.from_dict(data)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = (args.seed,)
    if getattr(args, "seeds", None):
        overrides["seeds"] = _parse_seeds(args.seeds)
    if getattr(args, "rounds", None) is not None:
        overrides["rounds"] = args.rounds
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "format", None):
        overrides["format"] = args.format
    if getattr(args, "policy", None):
        overrides["policy"] = type(config.policy).from_dict(
            {**config.policy.to_dict(), "name": args.policy}
        )
    if getattr(args, "delay", None) is not None:
        overrides["delay_batch"] = args.delay
    if overrides:
        config = RunConfig.from_dict({**config.to_dict(), **_as_dict(overrides)})
    return config


def _as_dict(overrides: dict) -> dict:
    out = dict(overrides)
    if "policy" in out:
        out["policy"] = out["policy"].to_dict()
    if "seeds" in out:
        out["seeds"] = list(out["seeds"])
    return out


def _cmd_run(args) -> int:
    config = _load_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    records = [run_trial(config, seed) for seed in config.seeds]
    suffix = "jsonl" if config.format == "jsonl" else "csv"
    trials_path = os.path.join(config.out_dir, f"trials.{suffix}")
    export_trials(records, trials_path, format=config.format)
    write_metadata(os.path.join(config.out_dir, "metadata.json"), config)
    for record in records:
        regret = cumulative_regret(record)[-1]
        print(
            f"seed={record.seed} policy={record.policy_name} "
            f"final_regret={regret:.3f} mean_arm={record.arms.mean():.2f}"
        )
    print(f"wrote {trials_path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    if args.axis in ("penalty", "epsilon"):
        values = [float(v) for v in args.values.split(",")]
    elif args.axis == "delay":
        values = [int(v) for v in args.values.split(",")]
    else:
        values = [v.strip() for v in args.values.split(",")]
    result = sweep(config, args.axis, values)
    rows_path = os.path.join(config.out_dir, "sweep_rows.csv")
    summary_path = os.path.join(config.out_dir, "sweep_summary.csv")
    export_sweep(result, rows_path, summary_path)
    write_metadata(
        os.path.join(config.out_dir, "metadata.json"),
        config,
        extra={"axis": args.axis, "values": values},
    )
    for entry in result.summary:
        print(
            f"{args.axis}={entry['value']}: final_regret="
            f"{entry['final_regret_mean']:.3f}±{entry['final_regret_sem']:.3f} "
            f"avg_arm>{result.threshold_round}={entry['avg_arm_after_threshold']:.2f}"
        )
    for (value, seed), message in result.errors.items():
        print(f"cell {args.axis}={value} seed={seed} failed: {message}", file=sys.stderr)
    print(f"wrote {rows_path} and {summary_path}")
    return 0


def _cmd_calibrate(args) -> int:
    config = _load_config(args)
    rng = np.random.default_rng(config.seeds[0])
    r, betas, oracles = calibrate_correlation(
        config.env, args.episodes, rng, return_pairs=True
    )
    print(f"pearson_r={r:.4f} over {args.episodes} episodes")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "calibration_pairs.csv")
        lines = ["mean_beta,error_index"]
        lines.extend(f"{b!r},{e!r}" for b, e in zip(betas, oracles))
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
        print(f"wrote {path}")
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args)
    names = [name.strip() for name in args.policies.split(",")]
    table = bench_runtime(config, names)
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "bench.csv")
    columns = (
        "policy",
        "median_wall_seconds",
        "mean_variance_evals",
        "mean_fit_calls",
        "mean_explore_rounds",
    )
    lines = [",".join(columns)]
    for row in table:
        lines.append(",".join(str(row[c]) for c in columns))
        print(
            f"{row['policy']}: median_wall={row['median_wall_seconds']:.3f}s "
            f"variance_evals={row['mean_variance_evals']:.0f} "
            f"fit_calls={row['mean_fit_calls']:.0f}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dbsbandit",
        description="Closed-loop bandit experiments for adaptive stimulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="single seed")
        p.add_argument("--seeds", help="seed list: '0..9' or '0,1,2'")
        p.add_argument("--rounds", type=int, help="rounds per trial")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "jsonl"), help="export format")

    run_p = sub.add_parser("run", help="run one policy over the configured seeds")
    common(run_p)
    run_p.add_argument("--policy", help="policy name override")
    run_p.add_argument("--delay", type=int, help="reward delay batch size")
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="sweep one axis across values")
    common(sweep_p)
    sweep_p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep_p.add_argument("--values", required=True, help="comma-separated values")
    sweep_p.set_defaults(func=_cmd_sweep)

    cal_p = sub.add_parser("calibrate", help="environment correlation check")
    common(cal_p)
    cal_p.add_argument("--episodes", type=int, default=200)
    cal_p.set_defaults(func=_cmd_calibrate)

    bench_p = sub.add_parser("bench", help="runtime and work-counter table")
    common(bench_p)
    bench_p.add_argument(
        "--policies",
        default="eps_neural_ts,neural_ts,neural_ucb",
        help="comma-separated policy names",
    )
    bench_p.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DbsBanditError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except OSError as exc:
        record = {"error": "OSError", "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
