"""scikit-learn style front end for scheduled-clip PPO."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .envs import make_env
from .exceptions import UsageError
from .nn import make_distribution
from .ppo import PpoConfig, PpoTrainer
from .schedules import ClipSchedule


class ClippedPPO(BaseEstimator):
    """PPO agent whose clipping range follows a schedule.

    Parameters
    ----------
    env : str
        Task id: ``"cartpole"``, ``"pendulum"`` or ``"acrobot"``.
    clip_schedule : str
        ``"constant"``, ``"linear"`` or ``"exp"``.
    clip_eps0 : float
        Initial clipping range.
    clip_alpha : float
        Base of the exponential schedule.
    total_timesteps : int
        Environment steps to train for, summed over all parallel copies.
    n_envs, rollout_len : int
        Parallel environments and steps per environment per rollout.
    n_epochs, batch_size : int
        Passes over each rollout and minibatch size.
    seed : int
        Master seed for environments, weight init, sampling and shuffles.

    The remaining parameters are the usual PPO knobs (learning rate,
    discount, GAE lambda, loss coefficients, gradient-norm cap).

    Attributes
    ----------
    params_ : PolicyParams
        Trained network parameters.
    metrics_ : list of MetricsRow
        One row per training iteration.
    episode_stats_ : EpisodeStats
        Returns of all completed training episodes.
    """

    def __init__(
        self,
        env="cartpole",
        clip_schedule="constant",
        clip_eps0=0.2,
        clip_alpha=0.99,
        total_timesteps=100_000,
        n_envs=8,
        rollout_len=256,
        n_epochs=10,
        batch_size=64,
        learning_rate=3e-4,
        gamma=0.99,
        gae_lambda=0.95,
        vf_coef=0.5,
        ent_coef=0.0,
        max_grad_norm=0.5,
        normalize_advantage=True,
        hidden_sizes=(64, 64),
        seed=0,
    ):
        self.env = env
        self.clip_schedule = clip_schedule
        self.clip_eps0 = clip_eps0
        self.clip_alpha = clip_alpha
        self.total_timesteps = total_timesteps
        self.n_envs = n_envs
        self.rollout_len = rollout_len
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.vf_coef = vf_coef
        self.ent_coef = ent_coef
        self.max_grad_norm = max_grad_norm
        self.normalize_advantage = normalize_advantage
        self.hidden_sizes = hidden_sizes
        self.seed = seed

    def make_config(self):
        return PpoConfig(
            n_epochs=self.n_epochs,
            batch_size=self.batch_size,
            vf_coef=self.vf_coef,
            ent_coef=self.ent_coef,
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            learning_rate=self.learning_rate,
            max_grad_norm=self.max_grad_norm,
            rollout_len=self.rollout_len,
            n_envs=self.n_envs,
            total_timesteps=self.total_timesteps,
            schedule=ClipSchedule(self.clip_schedule, self.clip_eps0, self.clip_alpha),
            seed=self.seed,
            normalize_advantage=self.normalize_advantage,
            hidden=tuple(self.hidden_sizes),
        )

    def fit(self, X=None, y=None, callback=None):
        """Train until ``total_timesteps`` environment steps are consumed.

        ``X`` and ``y`` are ignored; the training data is generated by the
        environment. ``callback(row, trainer)`` runs after every iteration.
        """
        trainer = PpoTrainer(self.env, self.make_config())
        self.spec_ = trainer.vec_env.spec
        self.n_features_in_ = self.spec_.obs_dim
        self.metrics_ = []
        while not trainer.done:
            row = trainer.train_iteration()
            self.metrics_.append(row)
            if callback is not None:
                callback(row, trainer)
        self.params_ = trainer.params
        self.episode_stats_ = trainer.collector.stats
        self.num_timesteps_ = trainer.num_timesteps
        return self

    def _check_obs(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"X has {X.shape[1]} features, but {self.env} observations have {self.n_features_in_}")
        return X

    def _distribution(self, X):
        return make_distribution(self.params_, self.params_.policy_net.forward(X))

    def predict(self, X, deterministic=True, random_state=None):
        """Actions for a batch of observations (greedy unless ``deterministic=False``)."""
        X = self._check_obs(X)
        dist = self._distribution(X)
        if deterministic:
            return dist.mode()
        return dist.sample(np.random.default_rng(random_state))

    def predict_proba(self, X):
        """Action probabilities; discrete tasks only."""
        X = self._check_obs(X)
        if self.spec_.discrete:
            return self._distribution(X).p
        raise UsageError("predict_proba is only defined for discrete action spaces")

    def predict_value(self, X):
        X = self._check_obs(X)
        return self.params_.value_net.forward(X)[:, 0]

    def score(self, X=None, y=None, n_episodes=10, seed=0):
        """Mean return of greedy-policy episodes on a fresh environment."""
        check_is_fitted(self, "params_")
        env = make_env(self.env)
        returns = []
        for k in range(n_episodes):
            obs = env.reset(seed=seed + k)
            total = 0.0
            while True:
                res = env.step(self.predict(obs[None])[0])
                total += res.reward
                if res.terminated or res.truncated:
                    break
                obs = res.obs
            returns.append(total)
        return float(np.mean(returns))
