"""Command line entry point: ``ppoclip train`` and ``ppoclip compare``."""
import argparse
import logging
import sys

from . import harness
from .exceptions import TrainingError, UsageError

# flag -> config key
COMMON_FLAGS = {
    "--env": ("env", str),
    "--clip-eps0": ("clip_eps0", float),
    "--clip-alpha": ("clip_alpha", float),
    "--total-timesteps": ("total_timesteps", int),
    "--n-envs": ("n_envs", int),
    "--rollout-len": ("rollout_len", int),
    "--n-epochs": ("n_epochs", int),
    "--batch-size": ("batch_size", int),
    "--learning-rate": ("learning_rate", float),
    "--gamma": ("gamma", float),
    "--gae-lambda": ("gae_lambda", float),
    "--vf-coef": ("vf_coef", float),
    "--ent-coef": ("ent_coef", float),
    "--max-grad-norm": ("max_grad_norm", float),
    "--seed": ("seed", int),
    "--seeds": ("n_seeds", int),
    "--out": ("out", str),
    "--preset": ("preset", str),
}


def _add_common(parser):
    parser.add_argument("--config", help="YAML config file; flags override its keys")
    for flag, (key, kind) in COMMON_FLAGS.items():
        parser.add_argument(flag, dest=key, type=kind, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="ppoclip", description="PPO with scheduled clipping range")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one schedule")
    _add_common(train)
    train.add_argument("--clip-schedule", dest="clip_schedule", choices=["constant", "linear", "exp"], default=None)

    compare = sub.add_parser("compare", help="train and tabulate several schedules")
    _add_common(compare)
    compare.add_argument(
        "--schedules", nargs="+", default=["constant", "linear", "exp"], choices=["constant", "linear", "exp"]
    )
    return parser


def _overrides(args):
    keys = [key for key, _ in COMMON_FLAGS.values()]
    if args.command == "train":
        keys.append("clip_schedule")
    return {key: getattr(args, key) for key in keys}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = harness.parse_config(args.config, _overrides(args))
        if args.command == "train":
            summary = harness.run(config)
            rows = [summary]
        else:
            summaries = harness.compare(harness.schedule_configs(config, args.schedules), config.out)
            rows = list(summaries.values())
    except (UsageError, TrainingError) as err:
        print(f"ppoclip: error: {err}", file=sys.stderr)
        return 2 if isinstance(err, UsageError) else 1
    print(f"{'schedule':<12}{'all training':>16}{'last 100':>16}")
    for s in rows:
        print(f"{s.schedule:<12}{s.mean_all_training:>16.2f}{s.mean_last100:>16.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
