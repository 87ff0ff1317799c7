"""Experiment runner: trials, regret accounting, sweeps, timing, export.

Every trial is a pure function of (configuration, seed): the seed is split
into one stream for the environment and one for the policy, so exported
results are byte-identical across repeated runs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .bandit_policies import (
    EpsNeuralTs,
    LinTs,
    LinUcb,
    NeuralEpsGreedy,
    NeuralUcb,
    Policy,
    Ucb1,
    UcbGlm,
    neural_ts,
)
from .bg_environment import (
    DelayedRewardBuffer,
    EnvConfig,
    SurrogateBgEnv,
    map_arm_to_frequency,
    periodic_controller,
)
from .errors import InvalidInputError
from .signal_core import embed_context

POLICY_NAMES = (
    "eps_neural_ts",
    "neural_ts",
    "neural_ucb",
    "neural_eps_greedy",
    "lin_ucb",
    "lin_ts",
    "ucb_glm",
    "ucb1",
    "periodic",
)

SWEEP_AXES = ("penalty", "epsilon", "algorithm", "delay")

TRIAL_CSV_COLUMNS = (
    "seed",
    "round",
    "arm",
    "frequency_hz",
    "reward",
    "mean_beta",
    "error_index",
    "explore_branch",
)


@dataclass(frozen=True)
class PolicyConfig:
    """Policy selector plus every tunable the policies accept."""

    name: str = "eps_neural_ts"
    explore_prob: float = 0.8
    explore_scale: float = 1.0
    ridge: float = 1.0
    fit_steps: int = 100
    fit_lr: float = 0.01
    greedy_decay: float = 5.0
    bonus_scale: float = 1.0
    width: int = 32
    depth: int = 3
    cov_mode: str = "auto"
    per_arm_coins: bool = False
    frequency_hz: float = 90.0

    def __post_init__(self):
        base = self.name.split(":", 1)[0]
        if base not in POLICY_NAMES:
            raise InvalidInputError(f"unknown policy {self.name!r}; pick from {POLICY_NAMES}")
        if not 0.0 <= self.explore_prob <= 1.0:
            raise InvalidInputError("explore_prob must lie in [0, 1]")
        if self.explore_scale < 0 or self.ridge <= 0:
            raise InvalidInputError("need explore_scale >= 0 and ridge > 0")
        if self.fit_steps < 1 or self.fit_lr <= 0:
            raise InvalidInputError("need fit_steps >= 1 and fit_lr > 0")
        if self.width < 1 or self.depth < 2:
            raise InvalidInputError("need width >= 1 and depth >= 2")
        if self.cov_mode not in ("auto", "full", "diagonal"):
            raise InvalidInputError("cov_mode must be auto, full or diagonal")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible run needs; validated up front."""

    policy: PolicyConfig = field(default_factory=PolicyConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    rounds: int = 100
    seeds: tuple[int, ...] = tuple(range(10))
    delay_batch: int = 1
    threshold_round: int = 50
    out_dir: str = "results"
    format: str = "csv"

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidInputError("rounds must be >= 1")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidInputError("seeds must be distinct")
        if self.delay_batch < 1:
            raise InvalidInputError("delay_batch must be >= 1")
        if not 0 <= self.threshold_round <= self.rounds:
            raise InvalidInputError("threshold_round must lie in [0, rounds]")
        if self.format not in ("csv", "jsonl"):
            raise InvalidInputError("format must be csv or jsonl")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "env": self.env.to_dict(),
            "rounds": self.rounds,
            "seeds": list(self.seeds),
            "delay_batch": self.delay_batch,
            "threshold_round": self.threshold_round,
            "out_dir": self.out_dir,
            "format": self.format,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {"policy", "env", "rounds", "seeds", "delay_batch",
                 "threshold_round", "out_dir", "format"}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "policy" in data:
            kwargs["policy"] = PolicyConfig.from_dict(data.pop("policy"))
        if "env" in data:
            kwargs["env"] = EnvConfig.from_dict(data.pop("env"))
        if "seeds" in data:
            kwargs["seeds"] = tuple(data.pop("seeds"))
        kwargs.update(data)
        return cls(**kwargs)


def build_policy(
    cfg: PolicyConfig, input_dim: int, arm_count: int, rng: np.random.Generator
) -> Policy:
    """Instantiate the configured policy, drawing any initial weights from rng."""
    name = cfg.name
    frequency = cfg.frequency_hz
    if name.startswith("periodic"):
        if ":" in name:
            frequency = float(name.split(":", 1)[1])
        return periodic_controller(frequency, arm_count=arm_count)
    common = dict(
        ridge=cfg.ridge,
        width=cfg.width,
        depth=cfg.depth,
        fit_steps=cfg.fit_steps,
        fit_lr=cfg.fit_lr,
    )
    if name == "eps_neural_ts":
        return EpsNeuralTs(
            input_dim,
            rng,
            explore_prob=cfg.explore_prob,
            explore_scale=cfg.explore_scale,
            cov_mode=cfg.cov_mode,
            per_arm_coins=cfg.per_arm_coins,
            **common,
        )
    if name == "neural_ts":
        return neural_ts(
            input_dim,
            rng,
            explore_scale=cfg.explore_scale,
            cov_mode=cfg.cov_mode,
            per_arm_coins=cfg.per_arm_coins,
            **common,
        )
    if name == "neural_ucb":
        return NeuralUcb(
            input_dim, rng, explore_scale=cfg.explore_scale, cov_mode=cfg.cov_mode, **common
        )
    if name == "neural_eps_greedy":
        return NeuralEpsGreedy(input_dim, rng, decay=cfg.greedy_decay, **common)
    if name == "lin_ucb":
        return LinUcb(input_dim, ridge=cfg.ridge, bonus_scale=cfg.bonus_scale)
    if name == "lin_ts":
        return LinTs(input_dim, ridge=cfg.ridge, explore_scale=cfg.explore_scale)
    if name == "ucb_glm":
        return UcbGlm(input_dim, ridge=cfg.ridge, bonus_scale=cfg.bonus_scale)
    if name == "ucb1":
        return Ucb1(arm_count)
    raise InvalidInputError(f"unknown policy {name!r}")


@dataclass
class TrialRecord:
    """Per-round log of one closed-loop trial plus run metadata."""

    seed: int
    policy_name: str
    rounds: np.ndarray
    arms: np.ndarray
    frequencies: np.ndarray
    rewards: np.ndarray
    mean_betas: np.ndarray
    error_indices: np.ndarray
    explore_flags: np.ndarray
    round_seconds: np.ndarray
    metadata: dict

    def __len__(self) -> int:
        return int(self.rounds.size)

    def final_regret(self) -> float:
        return float(np.sum(self.error_indices))


def run_trial(config: RunConfig, seed: int) -> TrialRecord:
    """Execute the closed loop for the configured number of rounds.

    The seed is split into independent environment and policy streams so
    that policies with different random-draw patterns see identical
    environment noise.
    """
    env_seq, policy_seq = np.random.SeedSequence(int(seed)).spawn(2)
    env_rng = np.random.default_rng(env_seq)
    policy_rng = np.random.default_rng(policy_seq)

    env = SurrogateBgEnv(config.env, env_rng)
    arm_count = config.env.arm_count
    input_dim = arm_count * config.env.beta_samples_per_window
    policy = build_policy(config.policy, input_dim, arm_count, policy_rng)
    buffer = DelayedRewardBuffer(config.delay_batch)

    n = config.rounds
    arms = np.zeros(n, dtype=np.int64)
    rewards = np.zeros(n)
    mean_betas = np.zeros(n)
    error_indices = np.zeros(n)
    explore_flags = np.zeros(n, dtype=bool)
    round_seconds = np.zeros(n)

    trial_start = time.perf_counter()
    feature = env.reset()
    for t in range(1, n + 1):
        contexts = embed_context(feature, arm_count)
        tic = time.perf_counter()
        arm = policy.select(contexts, t, policy_rng)
        observation = env.step(arm)
        batch = buffer.add(contexts.vectors[arm], observation.reward)
        if batch:
            policy.observe_batch(batch)
        round_seconds[t - 1] = time.perf_counter() - tic
        arms[t - 1] = arm
        rewards[t - 1] = observation.reward
        mean_betas[t - 1] = observation.mean_beta
        error_indices[t - 1] = observation.error_index
        explore_flags[t - 1] = policy.last_explored
        feature = observation.context
    leftovers = buffer.drain()
    if leftovers:
        policy.observe_batch(leftovers)
    total_seconds = time.perf_counter() - trial_start

    metadata = {
        "policy": config.policy.to_dict(),
        "env": config.env.to_dict(),
        "seed": int(seed),
        "rounds": n,
        "delay_batch": config.delay_batch,
        "library_version": __version__,
        "counters": policy.counters(),
        "total_seconds": total_seconds,
    }
    return TrialRecord(
        seed=int(seed),
        policy_name=policy.name,
        rounds=np.arange(1, n + 1),
        arms=arms,
        frequencies=np.asarray([map_arm_to_frequency(a, arm_count) for a in arms]),
        rewards=rewards,
        mean_betas=mean_betas,
        error_indices=error_indices,
        explore_flags=explore_flags,
        round_seconds=round_seconds,
        metadata=metadata,
    )


def cumulative_regret(record: TrialRecord) -> np.ndarray:
    """Running sum of the severity oracle; non-decreasing by construction."""
    return np.cumsum(record.error_indices)


def _apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "penalty":
        return replace(config, env=replace(config.env, penalty_coefficient=float(value)))
    if axis == "epsilon":
        return replace(config, policy=replace(config.policy, explore_prob=float(value)))
    if axis == "algorithm":
        return replace(config, policy=replace(config.policy, name=str(value)))
    if axis == "delay":
        return replace(config, delay_batch=int(value))
    raise InvalidInputError(f"unknown sweep axis {axis!r}; pick from {SWEEP_AXES}")


@dataclass
class SweepResult:
    axis: str
    values: list
    records: dict
    summary: list
    errors: dict
    threshold_round: int


def sweep(
    config: RunConfig,
    axis: str,
    values: list,
    seeds: tuple[int, ...] | None = None,
) -> SweepResult:
    """One trial per (value, seed); per-value aggregates across seeds.

    A failing cell is recorded under ``errors`` without aborting the rest.
    """
    if not values:
        raise InvalidInputError("need at least one sweep value")
    seeds = tuple(seeds) if seeds is not None else config.seeds
    records: dict = {}
    errors: dict = {}
    summary = []
    for value in values:
        cell_config = _apply_axis(config, axis, value)
        cell_records = []
        for seed in seeds:
            try:
                record = run_trial(cell_config, seed)
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                errors[(value, seed)] = f"{type(exc).__name__}: {exc}"
                continue
            records[(value, seed)] = record
            cell_records.append(record)
        if not cell_records:
            continue
        reward_curves = np.asarray([r.rewards for r in cell_records])
        regret_curves = np.asarray([cumulative_regret(r) for r in cell_records])
        threshold = config.threshold_round
        late_arms = np.asarray(
            [r.arms[threshold:].mean() for r in cell_records]
        )
        finals = regret_curves[:, -1]
        n_seeds = len(cell_records)
        sem = lambda a: float(np.std(a, ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0
        summary.append(
            {
                "axis": axis,
                "value": value,
                "seeds": n_seeds,
                "mean_reward_curve": reward_curves.mean(axis=0),
                "sem_reward_curve": (
                    reward_curves.std(axis=0, ddof=1) / np.sqrt(n_seeds)
                    if n_seeds > 1
                    else np.zeros(reward_curves.shape[1])
                ),
                "mean_regret_curve": regret_curves.mean(axis=0),
                "sem_regret_curve": (
                    regret_curves.std(axis=0, ddof=1) / np.sqrt(n_seeds)
                    if n_seeds > 1
                    else np.zeros(regret_curves.shape[1])
                ),
                "final_regret_mean": float(finals.mean()),
                "final_regret_sem": sem(finals),
                "avg_arm_after_threshold": float(late_arms.mean()),
                "avg_arm_sem": sem(late_arms),
                "mean_explore_rounds": float(
                    np.mean(
                        [r.metadata["counters"].get("explore_rounds", 0) for r in cell_records]
                    )
                ),
            }
        )
    return SweepResult(
        axis=axis,
        values=list(values),
        records=records,
        summary=summary,
        errors=errors,
        threshold_round=config.threshold_round,
    )


def bench_runtime(
    config: RunConfig, policy_names: list[str], seeds: tuple[int, ...] | None = None
) -> list[dict]:
    """Median wall time per trial plus deterministic work counters per policy."""
    seeds = tuple(seeds) if seeds is not None else config.seeds
    if len(seeds) < 3:
        raise InvalidInputError("need at least 3 seeds for a stable median")
    table = []
    for name in policy_names:
        cell_config = _apply_axis(config, "algorithm", name)
        walls, variance_evals, fit_calls, explores = [], [], [], []
        for seed in seeds:
            record = run_trial(cell_config, seed)
            walls.append(record.metadata["total_seconds"])
            counters = record.metadata["counters"]
            variance_evals.append(counters.get("variance_evals", 0))
            fit_calls.append(counters.get("fit_calls", 0))
            explores.append(counters.get("explore_rounds", 0))
        table.append(
            {
                "policy": name,
                "median_wall_seconds": float(np.median(walls)),
                "mean_variance_evals": float(np.mean(variance_evals)),
                "mean_fit_calls": float(np.mean(fit_calls)),
                "mean_explore_rounds": float(np.mean(explores)),
            }
        )
    return table


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _trial_rows(records: list[TrialRecord]):
    for record in records:
        for i in range(len(record)):
            yield {
                "seed": record.seed,
                "round": int(record.rounds[i]),
                "arm": int(record.arms[i]),
                "frequency_hz": float(record.frequencies[i]),
                "reward": float(record.rewards[i]),
                "mean_beta": float(record.mean_betas[i]),
                "error_index": float(record.error_indices[i]),
                "explore_branch": bool(record.explore_flags[i]),
            }


def export_trials(records: list[TrialRecord], path: str, format: str = "csv") -> None:
    """Write per-round rows with a fixed column order.

    Wall-clock timings are deliberately excluded so identical (config, seed)
    inputs produce byte-identical files.
    """
    if format == "csv":
        lines = [",".join(TRIAL_CSV_COLUMNS)]
        for row in _trial_rows(records):
            lines.append(",".join(_format_cell(row[c]) for c in TRIAL_CSV_COLUMNS))
        payload = "\n".join(lines) + "\n"
    elif format == "jsonl":
        lines = [
            json.dumps({c: row[c] for c in TRIAL_CSV_COLUMNS}, sort_keys=True)
            for row in _trial_rows(records)
        ]
        payload = "\n".join(lines) + ("\n" if lines else "")
    else:
        raise InvalidInputError("format must be csv or jsonl")
    _write_text(path, payload)


SWEEP_ROW_COLUMNS = ("axis", "value") + TRIAL_CSV_COLUMNS

SWEEP_SUMMARY_COLUMNS = (
    "axis",
    "value",
    "seeds",
    "final_regret_mean",
    "final_regret_sem",
    "avg_arm_after_threshold",
    "avg_arm_sem",
    "mean_explore_rounds",
)


def export_sweep(result: SweepResult, rows_path: str, summary_path: str) -> None:
    """Long-format per-round rows plus one summary line per swept value."""
    lines = [",".join(SWEEP_ROW_COLUMNS)]
    for value in result.values:
        for (cell_value, seed), record in sorted(
            ((k, v) for k, v in result.records.items() if k[0] == value),
            key=lambda item: item[0][1],
        ):
            for row in _trial_rows([record]):
                row = {"axis": result.axis, "value": cell_value, **row}
                lines.append(",".join(_format_cell(row[c]) for c in SWEEP_ROW_COLUMNS))
    _write_text(rows_path, "\n".join(lines) + "\n")

    lines = [",".join(SWEEP_SUMMARY_COLUMNS)]
    for entry in result.summary:
        lines.append(",".join(_format_cell(entry[c]) for c in SWEEP_SUMMARY_COLUMNS))
    _write_text(summary_path, "\n".join(lines) + "\n")


def write_metadata(path: str, config: RunConfig, extra: dict | None = None) -> None:
    """Sidecar with the fully resolved configuration; deterministic bytes."""
    payload = {
        "config": config.to_dict(),
        "library_version": __version__,
        "seeds": list(config.seeds),
    }
    if extra:
        payload.update(extra)
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_text(path: str, payload: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(payload)
    except OSError as exc:
        raise InvalidInputError(f"cannot write {path!r}: {exc}") from exc
