"""Clipped-surrogate PPO updates with a scheduled clipping range."""
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import VecEnv
from .exceptions import TrainingError, UsageError
from .nn import Adam, clip_grad_norm, make_distribution, make_policy_params
from .rollout import RolloutCollector, minibatches
from .schedules import ClipSchedule, epsilon_at
from .seeding import make_rng


def ratio(new_log_probs, old_log_probs):
    with np.errstate(over="ignore"):
        r = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    if not np.all(np.isfinite(r)):
        raise TrainingError("non-finite probability ratio")
    return r


def _unclipped_selected(r, advantages, eps):
    # ties go to the unclipped branch
    return r * advantages <= np.clip(r, 1.0 - eps, 1.0 + eps) * advantages


def clipped_surrogate(r, advantages, eps):
    """Mean of ``min(r * A, clip(r, 1 - eps, 1 + eps) * A)`` (to be maximized)."""
    if eps < 0:
        raise UsageError(f"clipping range must be non-negative, got {eps}")
    r = np.asarray(r, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if r.shape != advantages.shape:
        raise UsageError("ratios and advantages differ in length")
    return float(np.mean(np.minimum(r * advantages, np.clip(r, 1.0 - eps, 1.0 + eps) * advantages)))


def surrogate_grad(r, advantages, eps):
    """Derivative of :func:`clipped_surrogate` with respect to each ratio.

    On a tie the unclipped branch is taken, so a ratio sitting exactly on
    the clip boundary still passes ``A / n``.
    """
    return np.where(_unclipped_selected(r, advantages, eps), advantages, 0.0) / len(r)


def clip_fraction(r, eps):
    """Share of samples whose ratio lies strictly outside ``[1 - eps, 1 + eps]``."""
    return float(np.mean(np.abs(np.asarray(r) - 1.0) > eps))


@dataclass
class LossReport:
    surrogate_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    clip_fraction: float
    approx_kl: float


def normalize_advantages(advantages):
    std = max(float(advantages.std()), 1e-8)
    return (advantages - advantages.mean()) / std


def total_loss(batch, idx, params, eps, vf_coef, ent_coef, normalize=True, with_grad=False):
    """Combined minimized loss on the minibatch ``idx`` of ``batch``.

    ``loss = -surrogate + vf_coef * mean((V - returns)**2) - ent_coef * mean(entropy)``.
    With ``with_grad`` the exact gradient is returned as a third element
    (a :class:`~ppoclip.nn.Grads`).
    """
    obs = batch.obs[idx]
    actions = batch.actions[idx]
    old_logp = batch.old_log_probs[idx]
    adv = batch.advantages[idx]
    if normalize and len(adv) > 1:
        adv = normalize_advantages(adv)
    returns = batch.returns[idx]
    n = len(idx)

    pol_out, pol_cache = params.policy_net.forward(obs, return_cache=True)
    val_out, val_cache = params.value_net.forward(obs, return_cache=True)
    dist = make_distribution(params, pol_out)
    new_logp = dist.log_prob(actions)
    ent = dist.entropy()
    values = val_out[:, 0]

    diff = new_logp - old_logp
    r = ratio(new_logp, old_logp)
    surrogate = clipped_surrogate(r, adv, eps)
    value_loss = float(np.mean((values - returns) ** 2))
    entropy = float(np.mean(ent))
    loss = -surrogate + vf_coef * value_loss - ent_coef * entropy
    report = LossReport(
        surrogate_loss=surrogate,
        value_loss=value_loss,
        entropy=entropy,
        total_loss=loss,
        clip_fraction=clip_fraction(r, eps),
        approx_kl=float(np.mean(-diff)),
    )
    if not math.isfinite(loss):
        raise TrainingError("non-finite loss", report=asdict(report))
    if not with_grad:
        return loss, report

    grads = params.like()
    g_logp = -surrogate_grad(r, adv, eps) * r
    g_ent = np.full(n, -ent_coef / n)
    g_out, g_log_std = dist.backward(actions, g_logp, g_ent)
    params.policy_net.backward(pol_cache, g_out, grads.policy_net)
    g_val = (2.0 * vf_coef / n) * (values - returns)
    params.value_net.backward(val_cache, g_val[:, None], grads.value_net)
    if g_log_std is not None:
        grads.log_std[...] = g_log_std
    return loss, report, grads


@dataclass
class PpoConfig:
    n_epochs: int = 10
    batch_size: int = 64
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    max_grad_norm: float = 0.5
    rollout_len: int = 256
    n_envs: int = 8
    total_timesteps: int = 100_000
    schedule: ClipSchedule = field(default_factory=ClipSchedule)
    seed: int = 0
    normalize_advantage: bool = True
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.n_epochs < 1:
            raise UsageError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.n_envs < 1 or self.rollout_len < 1:
            raise UsageError("n_envs and rollout_len must be >= 1")
        if not 1 <= self.batch_size <= self.n_envs * self.rollout_len:
            raise UsageError(
                f"batch_size must lie in [1, n_envs * rollout_len = {self.n_envs * self.rollout_len}], got {self.batch_size}"
            )
        if self.vf_coef < 0 or self.ent_coef < 0:
            raise UsageError("loss coefficients must be non-negative")
        if self.total_timesteps < 1:
            raise UsageError("total_timesteps must be >= 1")

    @property
    def steps_per_iteration(self):
        return self.n_envs * self.rollout_len


@dataclass
class MetricsRow:
    iteration: int
    timesteps: int
    epsilon: float
    clip_fraction: float
    first_clip_fraction: float
    surrogate_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    total_loss: float
    grad_norm: float
    grad_clip_fraction: float
    mean_ep_return_last100: float
    episodes_completed: int
    wall_ms: float


class PpoTrainer:
    """Owns the parameters, optimizer and environments of one training run.

    Random streams (env resets, weight init, action sampling, minibatch
    shuffles) are all derived from ``config.seed``.
    """

    def __init__(self, env_id, config):
        self.config = config
        self.vec_env = VecEnv(env_id, config.n_envs)
        obs = self.vec_env.reset(config.seed)
        self.params = make_policy_params(self.vec_env.spec, make_rng(config.seed, "init"), config.hidden)
        self.optimizer = Adam(self.params.n_params, lr=config.learning_rate)
        self.collector = RolloutCollector(
            self.vec_env, obs, make_rng(config.seed, "action"), config.gamma, config.gae_lambda
        )
        self.shuffle_rng = make_rng(config.seed, "shuffle")
        self.iteration = 0

    @property
    def num_timesteps(self):
        return self.collector.num_timesteps

    @property
    def done(self):
        return self.num_timesteps >= self.config.total_timesteps

    def train_iteration(self):
        """Collect one rollout, set the clipping range, run the epochs."""
        cfg = self.config
        if self.done:
            raise UsageError("training budget already consumed")
        start = time.perf_counter()
        batch = self.collector.collect(self.params, cfg.rollout_len)
        t = self.num_timesteps
        eps = epsilon_at(cfg.schedule, min(t, cfg.total_timesteps), cfg.total_timesteps)

        reports, norms, clipped = [], [], 0
        for epoch in range(cfg.n_epochs):
            for mb, idx in enumerate(minibatches(len(batch), cfg.batch_size, self.shuffle_rng)):
                try:
                    _, report, grads = total_loss(
                        batch, idx, self.params, eps, cfg.vf_coef, cfg.ent_coef, cfg.normalize_advantage, with_grad=True
                    )
                    norm, was_clipped = clip_grad_norm(grads.flat, cfg.max_grad_norm)
                except TrainingError as err:
                    err.context.update(iteration=self.iteration, epoch=epoch, minibatch=mb)
                    raise
                self.optimizer.step(self.params.flat, grads.flat)
                reports.append(report)
                norms.append(norm)
                clipped += was_clipped
        self.iteration += 1
        stats = self.collector.stats
        return MetricsRow(
            iteration=self.iteration,
            timesteps=t,
            epsilon=eps,
            clip_fraction=float(np.mean([r.clip_fraction for r in reports])),
            first_clip_fraction=reports[0].clip_fraction,
            surrogate_loss=float(np.mean([r.surrogate_loss for r in reports])),
            value_loss=float(np.mean([r.value_loss for r in reports])),
            entropy=float(np.mean([r.entropy for r in reports])),
            approx_kl=float(np.mean([r.approx_kl for r in reports])),
            total_loss=float(np.mean([r.total_loss for r in reports])),
            grad_norm=float(np.mean(norms)),
            grad_clip_fraction=clipped / len(reports),
            mean_ep_return_last100=stats.mean_recent,
            episodes_completed=stats.count,
            wall_ms=(time.perf_counter() - start) * 1000.0,
        )
