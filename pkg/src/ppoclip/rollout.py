"""On-policy rollout collection, GAE and minibatch serving."""
from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import TrainingError, UsageError
from .nn import make_distribution


class EpisodeStats:
    """Returns of completed episodes: the last 100 plus a running total."""

    def __init__(self, window=100):
        self.recent = deque(maxlen=window)
        self.total = 0.0
        self.count = 0

    def add(self, episode_return):
        self.recent.append(float(episode_return))
        self.total += float(episode_return)
        self.count += 1

    @property
    def mean_recent(self):
        return float(np.mean(self.recent)) if self.recent else float("nan")

    @property
    def mean_all(self):
        return self.total / self.count if self.count else float("nan")


@dataclass
class RolloutBatch:
    """``n_envs * rollout_len`` transitions flattened in time-major order."""

    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    done_flags: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.rewards)


def compute_gae(rewards, values, done_flags, bootstrap_values, gamma=0.99, lam=0.95, timeout_values=None):
    """Generalized advantage estimates and value targets.

    Arrays are ``(T,)`` or ``(T, n_envs)``; ``bootstrap_values`` is the value
    of the state following the last step of each stream. ``done_flags[t]``
    cuts the recursion after step ``t``. ``timeout_values[t]``, when given,
    is the value of the final observation of an episode cut by a time limit
    and is credited as ``gamma * timeout_values[t]`` at that step.

    Returns ``(advantages, returns)`` with ``returns = advantages + values``.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise UsageError(f"gamma and lambda must lie in [0, 1], got {gamma}, {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(done_flags, dtype=np.float64)
    next_values = np.empty_like(values)
    next_values[:-1] = values[1:]
    next_values[-1] = bootstrap_values
    deltas = rewards + gamma * next_values * not_done - values
    if timeout_values is not None:
        deltas = deltas + gamma * np.asarray(timeout_values, dtype=np.float64)
    advantages = np.empty_like(values)
    last = np.zeros_like(values[0])
    for t in range(len(rewards) - 1, -1, -1):
        last = deltas[t] + gamma * lam * not_done[t] * last
        advantages[t] = last
    return advantages, advantages + values


def minibatches(n, batch_size, rng):
    """Shuffle ``range(n)`` and cut it into slices of ``batch_size``.

    The last slice is kept even when shorter.
    """
    if batch_size < 1 or batch_size > n:
        raise UsageError(f"minibatch size must lie in [1, {n}], got {batch_size}")
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


class RolloutCollector:
    """Runs the current policy in a vectorized environment.

    Keeps the last observation between rollouts, the global timestep count,
    episode statistics and an episode log of
    ``(timestep, slot, return, length)`` rows.
    """

    def __init__(self, vec_env, seed_obs, rng, gamma=0.99, lam=0.95):
        self.vec_env = vec_env
        self.obs = seed_obs
        self.rng = rng
        self.gamma = gamma
        self.lam = lam
        self.num_timesteps = 0
        self.stats = EpisodeStats()
        self.episode_log = []

    def collect(self, params, rollout_len):
        if rollout_len < 1:
            raise UsageError(f"rollout length must be >= 1, got {rollout_len}")
        env = self.vec_env
        n = env.num_envs
        spec = env.spec
        obs_buf = np.empty((rollout_len, n, spec.obs_dim))
        if spec.discrete:
            act_buf = np.empty((rollout_len, n), dtype=np.int64)
        else:
            act_buf = np.empty((rollout_len, n, spec.action_space.dim))
        logp_buf = np.empty((rollout_len, n))
        val_buf = np.empty((rollout_len, n))
        rew_buf = np.empty((rollout_len, n))
        done_buf = np.empty((rollout_len, n))
        timeout_buf = np.zeros((rollout_len, n))

        obs = self.obs
        for t in range(rollout_len):
            if not np.all(np.isfinite(obs)):
                raise TrainingError("non-finite observation", step=self.num_timesteps)
            dist = make_distribution(params, params.policy_net.forward(obs))
            actions = dist.sample(self.rng)
            logp = dist.log_prob(actions)
            values = params.value_net.forward(obs)[:, 0]
            if not (np.all(np.isfinite(logp)) and np.all(np.isfinite(values))):
                raise TrainingError("non-finite network output", step=self.num_timesteps)
            res = env.step(actions)
            self.num_timesteps += n
            obs_buf[t] = obs
            act_buf[t] = actions
            logp_buf[t] = logp
            val_buf[t] = values
            rew_buf[t] = res.rewards
            done = res.terminated | res.truncated
            done_buf[t] = done
            timeouts = np.flatnonzero(res.truncated & ~res.terminated)
            if timeouts.size:
                timeout_buf[t, timeouts] = params.value_net.forward(res.final_obs[timeouts])[:, 0]
            for slot, ep_return, length in env.pop_episodes():
                self.stats.add(ep_return)
                self.episode_log.append((self.num_timesteps, slot, ep_return, length))
            obs = res.obs
        self.obs = obs

        last_values = params.value_net.forward(obs)[:, 0]
        advantages, returns = compute_gae(
            rew_buf, val_buf, done_buf, last_values, self.gamma, self.lam, timeout_values=timeout_buf
        )
        size = rollout_len * n
        return RolloutBatch(
            obs=obs_buf.reshape(size, spec.obs_dim),
            actions=act_buf.reshape(size, *act_buf.shape[2:]),
            old_log_probs=logp_buf.reshape(size),
            values=val_buf.reshape(size),
            rewards=rew_buf.reshape(size),
            done_flags=done_buf.reshape(size),
            advantages=advantages.reshape(size),
            returns=returns.reshape(size),
        )
