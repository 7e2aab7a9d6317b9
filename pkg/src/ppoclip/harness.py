"""Experiment harness: configs, presets, training runs and schedule comparisons.

Output layout of :func:`run` for ``out``::

    out/config.yaml              resolved configuration + metadata
    out/summary.json             per-seed and across-seed reward metrics
    out/seed_<s>/metrics.csv     one row per training iteration
    out/seed_<s>/episodes.csv    every completed training episode
    out/seed_<s>/summary.json

:func:`compare` runs one such directory per schedule under ``out/<kind>/``
and adds ``comparison.csv`` (metric x schedule grid), ``comparison.json``
and ``clip_fraction.csv`` (all metrics rows, stacked, for plotting).
"""
import csv
import dataclasses
import datetime
import json
import logging
import math
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .estimator import ClippedPPO
from .exceptions import UsageError
from .ppo import MetricsRow
from .schedules import canonical_kind

logger = logging.getLogger(__name__)

METRICS_VERSION = "ppoclip-metrics v1"
METRICS_NOTE = (
    "clip_fraction = mean over all epoch x minibatch updates of the iteration; "
    "first_clip_fraction = first minibatch of the first epoch; "
    "epsilon evaluated once per iteration at timesteps"
)
METRICS_FIELDS = [f.name for f in dataclasses.fields(MetricsRow)]
EPISODE_FIELDS = ["episode", "iteration", "timesteps", "slot", "return", "length"]
WALL_CLOCK_FIELDS = ("wall_ms",)

ESTIMATOR_DEFAULTS = ClippedPPO().get_params()
RUN_DEFAULTS = {"out": "runs/default", "n_seeds": 1, "preset": None}
DEFAULTS = {**ESTIMATOR_DEFAULTS, **RUN_DEFAULTS}

# Paper budgets and desk-scale reductions of them.
PRESETS = {
    "cartpole-paper": {"env": "cartpole", "total_timesteps": 100_000, "n_envs": 8, "rollout_len": 256},
    "pendulum-paper": {"env": "pendulum", "total_timesteps": 2_000_000, "n_envs": 8, "rollout_len": 256},
    "acrobot-paper": {"env": "acrobot", "total_timesteps": 1_000_000, "n_envs": 16, "rollout_len": 256},
    "cartpole-desk": {"env": "cartpole", "total_timesteps": 100_000, "n_envs": 8, "rollout_len": 256},
    "pendulum-desk": {"env": "pendulum", "total_timesteps": 500_000, "n_envs": 8, "rollout_len": 256},
    "acrobot-desk": {"env": "acrobot", "total_timesteps": 300_000, "n_envs": 16, "rollout_len": 256},
}


def _check_type(key, value):
    default = DEFAULTS[key]
    if key == "preset":
        if value is not None and not isinstance(value, str):
            raise UsageError(f"config key {key!r}: expected a string, got {type(value).__name__}")
        return value
    if key == "hidden_sizes":
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and v > 0 for v in value):
            raise UsageError(f"config key {key!r}: expected a list of positive integers, got {value!r}")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config key {key!r}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"config key {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise UsageError(f"config key {key!r}: expected a string, got {value!r}")
    if key == "clip_schedule":
        canonical_kind(value)
    return value


def _validated(mapping, source):
    out = {}
    for key, value in mapping.items():
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {source}.{key}")
        out[key] = _check_type(key, value)
    return out


@dataclass
class RunConfig:
    """Fully resolved settings of one training run (possibly several seeds)."""

    params: dict
    out: str = RUN_DEFAULTS["out"]
    n_seeds: int = 1
    preset: str = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise UsageError(f"n_seeds must be >= 1, got {self.n_seeds}")
        # fail early on invalid combinations
        ClippedPPO(**self.params).make_config()

    @property
    def seeds(self):
        base = self.params["seed"]
        return [base + k for k in range(self.n_seeds)]

    @property
    def schedule(self):
        return canonical_kind(self.params["clip_schedule"])

    def estimator(self, seed):
        return ClippedPPO(**{**self.params, "seed": seed})

    def replace(self, **changes):
        params = {k: changes.pop(k) if k in changes else v for k, v in self.params.items()}
        return dataclasses.replace(self, params=params, **changes)

    def to_dict(self):
        data = {**self.params, "out": str(self.out), "n_seeds": self.n_seeds, "preset": self.preset}
        data["hidden_sizes"] = list(data["hidden_sizes"])
        return data


def _metadata():
    try:
        git_hash = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5, check=True
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        git_hash = "unknown"
    return {"git_hash": git_hash, "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}


def parse_config(path=None, overrides=None):
    """Resolve defaults < preset < config file < CLI overrides.

    ``path`` is a YAML mapping (an empty file means all defaults);
    ``overrides`` maps config keys to values, ``None`` values are ignored.
    """
    file_values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        loaded = yaml.safe_load(path.read_text())
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path} must contain a mapping")
        file_values = _validated(loaded, "config")
    cli_values = _validated({k: v for k, v in (overrides or {}).items() if v is not None}, "cli")

    preset = cli_values.get("preset", file_values.get("preset"))
    preset_values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        preset_values = PRESETS[preset]

    merged = {**DEFAULTS, **preset_values, **file_values, **cli_values}
    params = {k: merged[k] for k in ESTIMATOR_DEFAULTS}
    return RunConfig(
        params=params, out=merged["out"], n_seeds=merged["n_seeds"], preset=preset, metadata=_metadata()
    )


@dataclass
class RunSummary:
    env: str
    schedule: str
    total_timesteps: int
    seeds: list
    avg_reward_all_training: list
    avg_reward_last100: list
    episodes: list

    def _stat(self, values, fn):
        arr = np.asarray(values, dtype=np.float64)
        return float(fn(arr)) if arr.size else float("nan")

    @property
    def mean_all_training(self):
        return self._stat(self.avg_reward_all_training, np.mean)

    @property
    def std_all_training(self):
        return self._stat(self.avg_reward_all_training, np.std)

    @property
    def mean_last100(self):
        return self._stat(self.avg_reward_last100, np.mean)

    @property
    def std_last100(self):
        return self._stat(self.avg_reward_last100, np.std)

    @property
    def median_last100(self):
        return self._stat(self.avg_reward_last100, np.median)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data.update(
            mean_all_training=self.mean_all_training,
            std_all_training=self.std_all_training,
            mean_last100=self.mean_last100,
            std_last100=self.std_last100,
            median_last100=self.median_last100,
        )
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**{f.name: data[f.name] for f in dataclasses.fields(cls)})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_metrics(path):
    """Rows of a metrics CSV as dicts of floats (the version line is skipped)."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


def read_episodes(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def train_seed(config, seed, seed_dir):
    """Train one seed, streaming metrics and episodes to ``seed_dir``."""
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    estimator = config.estimator(seed)
    with open(seed_dir / "metrics.csv", "w", newline="") as mfh, open(seed_dir / "episodes.csv", "w", newline="") as efh:
        mfh.write(f"# {METRICS_VERSION}; {METRICS_NOTE}\n")
        metrics = csv.writer(mfh, lineterminator="\n")
        metrics.writerow(METRICS_FIELDS)
        episodes = csv.writer(efh, lineterminator="\n")
        episodes.writerow(EPISODE_FIELDS)
        count = 0

        def stream(row, trainer):
            nonlocal count
            for timesteps, slot, ep_return, length in trainer.collector.episode_log:
                count += 1
                episodes.writerow([count, row.iteration, timesteps, slot, _fmt(ep_return), length])
            trainer.collector.episode_log.clear()
            metrics.writerow([_fmt(getattr(row, name)) for name in METRICS_FIELDS])
            mfh.flush()
            efh.flush()
            logger.info(
                "%s %s seed=%d it=%d t=%d eps=%.4f clip=%.3f last100=%.1f",
                config.params["env"], config.schedule, seed, row.iteration, row.timesteps,
                row.epsilon, row.clip_fraction, row.mean_ep_return_last100,
            )

        estimator.fit(callback=stream)
    stats = estimator.episode_stats_
    result = {
        "seed": seed,
        "avg_reward_all_training": stats.mean_all,
        "avg_reward_last100": stats.mean_recent,
        "episodes": stats.count,
        "timesteps": estimator.num_timesteps_,
    }
    _write_json(seed_dir / "summary.json", result)
    return result


def run(config):
    """Train every seed of ``config`` and write its artifacts under ``config.out``."""
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        echo = {**config.to_dict(), "metadata": config.metadata}
        (out / "config.yaml").write_text(yaml.safe_dump(echo, sort_keys=True))
    except OSError as err:
        raise UsageError(f"cannot write to output directory {out}: {err}") from err

    results = [train_seed(config, seed, out / f"seed_{seed}") for seed in config.seeds]
    summary = RunSummary(
        env=config.params["env"],
        schedule=config.schedule,
        total_timesteps=config.params["total_timesteps"],
        seeds=[r["seed"] for r in results],
        avg_reward_all_training=[r["avg_reward_all_training"] for r in results],
        avg_reward_last100=[r["avg_reward_last100"] for r in results],
        episodes=[r["episodes"] for r in results],
    )
    _write_json(out / "summary.json", summary.to_dict())
    return summary


def _comparable(config):
    data = config.to_dict()
    for key in ("clip_schedule", "out", "preset"):
        data.pop(key)
    return data


def load_summary(out):
    return RunSummary.from_dict(json.loads((Path(out) / "summary.json").read_text()))


def _existing_summary(config):
    """Summary of a finished earlier run with identical settings, else None."""
    out = Path(config.out)
    try:
        echo = yaml.safe_load((out / "config.yaml").read_text())
        summary = load_summary(out)
    except (OSError, ValueError, yaml.YAMLError):
        return None
    echo.pop("metadata", None)
    if echo != config.to_dict():
        return None
    return summary


def comparison_table(summaries):
    """Table-I shaped grid: ``{metric: {schedule: across-seed mean}}``."""
    return {
        "all training": {kind: s.mean_all_training for kind, s in summaries.items()},
        "last 100 episodes": {kind: s.mean_last100 for kind, s in summaries.items()},
    }


def write_comparison(out, summaries):
    out = Path(out)
    grid = comparison_table(summaries)
    kinds = list(summaries)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", *kinds])
        for metric, row in grid.items():
            writer.writerow([metric, *(_fmt(row[k]) for k in kinds)])
    _write_json(
        out / "comparison.json",
        {"grid": grid, "runs": {kind: s.to_dict() for kind, s in summaries.items()}},
    )
    with open(out / "clip_fraction.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["schedule", "seed", *METRICS_FIELDS])
        for kind, summary in summaries.items():
            for seed in summary.seeds:
                for row in read_metrics(out / kind / f"seed_{seed}" / "metrics.csv"):
                    writer.writerow([kind, seed, *(_fmt(row[name]) for name in METRICS_FIELDS)])
    return grid


def compare(configs, out):
    """Run (or reuse) one configuration per schedule and tabulate them.

    All configurations must agree on everything except the clip schedule.
    Runs already present with identical settings are reused, so repeating
    a comparison leaves run artifacts untouched.
    """
    configs = list(configs)
    if not configs:
        raise UsageError("compare needs at least one configuration")
    reference = _comparable(configs[0])
    kinds = []
    for config in configs:
        if _comparable(config) != reference:
            diff = sorted(k for k in reference if _comparable(config)[k] != reference[k])
            raise UsageError(f"configurations differ in non-schedule settings: {diff}")
        if config.schedule in kinds:
            raise UsageError(f"schedule {config.schedule!r} listed twice")
        kinds.append(config.schedule)

    out = Path(out)
    summaries = {}
    for config in configs:
        config = dataclasses.replace(config, out=str(out / config.schedule))
        summary = _existing_summary(config)
        if summary is None:
            summary = run(config)
        else:
            logger.info("reusing finished run in %s", config.out)
        summaries[config.schedule] = summary
    write_comparison(out, summaries)
    return summaries


def schedule_configs(config, kinds=("constant", "linear", "exp")):
    return [config.replace(clip_schedule=kind) for kind in kinds]


def tail_clip_fraction(out, kind, seed, tail=0.1):
    """Mean clip fraction over the final ``tail`` share of iterations."""
    rows = read_metrics(Path(out) / kind / f"seed_{seed}" / "metrics.csv")
    k = max(1, math.ceil(tail * len(rows)))
    return float(np.mean([r["clip_fraction"] for r in rows[-k:]]))


def strip_wall_clock(path):
    """Metrics CSV text without its wall-clock columns, for determinism checks."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = next(i for i, line in enumerate(lines) if not line.startswith("#"))
    rows = list(csv.reader(lines[header:]))
    keep = [i for i, name in enumerate(rows[0]) if name not in WALL_CLOCK_FIELDS]
    return os.linesep.join([*lines[:header], *(",".join(r[i] for i in keep) for r in rows)])
