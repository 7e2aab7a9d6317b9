"""Classic-control tasks: CartPole, Pendulum and Acrobot.

Dynamics, constants, initial-state ranges, rewards and termination rules
follow the Gym definitions of CartPole-v1, Pendulum-v0 and Acrobot-v1; the
constants live in ``data/classic_control.ini``.

Every task exposes batched kernels (``advance``, ``observe``) operating on an
``(n, state_dim)`` array. A single environment runs them with ``n == 1`` and
:class:`VecEnv` runs them over all of its slots at once, so both paths share
exactly the same arithmetic.
"""
import configparser
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .exceptions import UsageError
from .seeding import derive_seed


def load_constants():
    """Return the constants table as ``{task: {key: float}}``."""
    parser = configparser.ConfigParser()
    text = resources.files(__package__).joinpath("data/classic_control.ini").read_text()
    parser.read_string(text)
    return {name: {k: float(v) for k, v in parser[name].items()} for name in parser.sections()}


CONSTANTS = load_constants()


@dataclass(frozen=True)
class Discrete:
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise UsageError(f"a discrete action space needs n >= 2, got {self.n}")


@dataclass(frozen=True)
class Box:
    low: tuple
    high: tuple

    def __post_init__(self):
        if len(self.low) != len(self.high) or not all(lo < hi for lo, hi in zip(self.low, self.high)):
            raise UsageError("continuous bounds need low < high elementwise")

    @property
    def dim(self):
        return len(self.low)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_space: object
    max_episode_steps: int

    @property
    def discrete(self):
        return isinstance(self.action_space, Discrete)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


class ClassicControlEnv:
    """Base class: a seedable single-instance state machine.

    Subclasses provide ``spec``, ``state_dim`` and the batched kernels
    ``sample_initial``, ``advance`` and ``observe``.
    """

    spec: EnvSpec
    state_dim: int

    def __init__(self):
        self.state = None
        self.step_count = 0
        self._rng = None
        self._done = True

    # batched kernels -----------------------------------------------------
    def sample_initial(self, rng):
        raise NotImplementedError

    def advance(self, states, actions):
        """Step ``states`` under validated ``actions``.

        Returns ``(next_states, rewards, terminated)``.
        """
        raise NotImplementedError

    def observe(self, states):
        raise NotImplementedError

    def validate_actions(self, actions, n):
        """Check and normalize a batch of ``n`` actions.

        Discrete actions must be in-range integers; continuous actions are
        clamped to the box.
        """
        space = self.spec.action_space
        if isinstance(space, Discrete):
            arr = np.asarray(actions).reshape(-1)
            if arr.shape[0] != n:
                raise UsageError(f"expected {n} actions, got {arr.shape[0]}")
            for i, a in enumerate(arr):
                if not float(a).is_integer() or not 0 <= a < space.n:
                    raise UsageError(f"invalid action {a!r} for slot {i}: expected an index in [0, {space.n})")
            return arr.astype(np.int64)
        arr = np.asarray(actions, dtype=np.float64).reshape(n, space.dim)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
            raise UsageError(f"non-finite action for slot {bad}")
        return np.clip(arr, space.low, space.high)

    # single-instance API -------------------------------------------------
    def reset(self, seed=None):
        """Start an episode; a given ``seed`` restarts the random stream."""
        if seed is not None:
            self._rng = np.random.Generator(np.random.PCG64(seed))
        elif self._rng is None:
            raise UsageError("the first reset of an environment needs a seed")
        self.state = self.sample_initial(self._rng)
        self.step_count = 0
        self._done = False
        return self.observe(self.state[None])[0]

    def step(self, action):
        if self._done:
            raise UsageError("episode is finished; call reset() before stepping")
        actions = self.validate_actions([action] if self.spec.discrete else action, 1)
        states, rewards, terminated = self.advance(self.state[None], actions)
        self.state = states[0]
        self.step_count += 1
        truncated = self.step_count >= self.spec.max_episode_steps
        self._done = bool(terminated[0]) or truncated
        return StepResult(self.observe(states)[0], float(rewards[0]), bool(terminated[0]), truncated)


class CartPole(ClassicControlEnv):
    state_dim = 4

    def __init__(self):
        super().__init__()
        c = CONSTANTS["cartpole"]
        self.c = c
        self.total_mass = c["masscart"] + c["masspole"]
        self.polemass_length = c["masspole"] * c["length"]
        self.theta_threshold = c["theta_threshold_degrees"] * 2 * math.pi / 360
        self.spec = EnvSpec("cartpole", 4, Discrete(2), int(c["max_episode_steps"]))

    def sample_initial(self, rng):
        return rng.uniform(self.c["init_low"], self.c["init_high"], size=4)

    def advance(self, states, actions):
        c = self.c
        x, x_dot, theta, theta_dot = states.T
        force = np.where(actions == 1, c["force_mag"], -c["force_mag"])
        costheta = np.cos(theta)
        sintheta = np.sin(theta)
        temp = (force + self.polemass_length * theta_dot**2 * sintheta) / self.total_mass
        thetaacc = (c["gravity"] * sintheta - costheta * temp) / (
            c["length"] * (4.0 / 3.0 - c["masspole"] * costheta**2 / self.total_mass)
        )
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        tau = c["tau"]
        new = np.stack(
            [x + tau * x_dot, x_dot + tau * xacc, theta + tau * theta_dot, theta_dot + tau * thetaacc],
            axis=1,
        )
        terminated = (np.abs(new[:, 0]) > c["x_threshold"]) | (np.abs(new[:, 2]) > self.theta_threshold)
        return new, np.ones(len(states)), terminated

    def observe(self, states):
        return states.copy()


def angle_normalize(x):
    return ((x + np.pi) % (2 * np.pi)) - np.pi


class Pendulum(ClassicControlEnv):
    state_dim = 2

    def __init__(self):
        super().__init__()
        c = CONSTANTS["pendulum"]
        self.c = c
        t = c["max_torque"]
        self.spec = EnvSpec("pendulum", 3, Box((-t,), (t,)), int(c["max_episode_steps"]))

    def sample_initial(self, rng):
        high = np.array([self.c["init_theta_high"], self.c["init_thetadot_high"]])
        return rng.uniform(-high, high)

    def advance(self, states, actions):
        c = self.c
        th, thdot = states.T
        u = actions[:, 0]
        costs = angle_normalize(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        # Pendulum-v0 ordering: angle integrates the unclipped velocity
        newthdot = thdot + (-3 * c["g"] / (2 * c["l"]) * np.sin(th + np.pi) + 3.0 / (c["m"] * c["l"] ** 2) * u) * c["dt"]
        newth = th + newthdot * c["dt"]
        newthdot = np.clip(newthdot, -c["max_speed"], c["max_speed"])
        return np.stack([newth, newthdot], axis=1), -costs, np.zeros(len(states), dtype=bool)

    def observe(self, states):
        th, thdot = states.T
        return np.stack([np.cos(th), np.sin(th), thdot], axis=1)


def wrap(x, low, high):
    """Gym's angle wrap: shift by whole periods into ``[low, high]``."""
    diff = high - low
    x = np.where(x > high, x - diff * np.ceil((x - high) / diff), x)
    return np.where(x < low, x + diff * np.ceil((low - x) / diff), x)


class Acrobot(ClassicControlEnv):
    state_dim = 4

    def __init__(self, rk4_substeps=None):
        super().__init__()
        c = CONSTANTS["acrobot"]
        self.c = c
        self.torques = np.linspace(c["torque_low"], c["torque_high"], int(c["n_actions"]))
        self.rk4_substeps = int(c["rk4_substeps"]) if rk4_substeps is None else int(rk4_substeps)
        self.spec = EnvSpec("acrobot", 6, Discrete(int(c["n_actions"])), int(c["max_episode_steps"]))

    def sample_initial(self, rng):
        return rng.uniform(self.c["init_low"], self.c["init_high"], size=4)

    def derivatives(self, s, a):
        """Time derivative of ``(theta1, theta2, dtheta1, dtheta2)`` under torque ``a``."""
        c = self.c
        m1, m2 = c["link_mass_1"], c["link_mass_2"]
        l1 = c["link_length_1"]
        lc1, lc2 = c["link_com_pos_1"], c["link_com_pos_2"]
        i1 = i2 = c["link_moi"]
        g = c["gravity"]
        theta1, theta2, dtheta1, dtheta2 = s.T
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(theta2)) + i2
        phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - np.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dtheta2**2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - np.pi / 2)
            + phi2
        )
        ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * np.sin(theta2) - phi2) / (
            m2 * lc2**2 + i2 - d2**2 / d1
        )
        ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
        return np.stack([dtheta1, dtheta2, ddtheta1, ddtheta2], axis=1)

    def integrate(self, s, a, substeps):
        """Classical fourth-order Runge-Kutta over one control interval."""
        h = self.c["dt"] / substeps
        for _ in range(substeps):
            k1 = self.derivatives(s, a)
            k2 = self.derivatives(s + h / 2.0 * k1, a)
            k3 = self.derivatives(s + h / 2.0 * k2, a)
            k4 = self.derivatives(s + h * k3, a)
            s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return s

    def advance(self, states, actions):
        c = self.c
        ns = self.integrate(states, self.torques[actions], self.rk4_substeps)
        ns[:, 0] = wrap(ns[:, 0], -np.pi, np.pi)
        ns[:, 1] = wrap(ns[:, 1], -np.pi, np.pi)
        ns[:, 2] = np.clip(ns[:, 2], -c["max_vel_1"], c["max_vel_1"])
        ns[:, 3] = np.clip(ns[:, 3], -c["max_vel_2"], c["max_vel_2"])
        terminated = -np.cos(ns[:, 0]) - np.cos(ns[:, 1] + ns[:, 0]) > 1.0
        return ns, np.where(terminated, 0.0, -1.0), terminated

    def observe(self, states):
        t1, t2, dt1, dt2 = states.T
        return np.stack([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), dt1, dt2], axis=1)


ENVS = {"cartpole": CartPole, "pendulum": Pendulum, "acrobot": Acrobot}


def make_env(env_id):
    try:
        return ENVS[env_id.lower()]()
    except KeyError:
        raise UsageError(f"unknown environment {env_id!r}; expected one of {sorted(ENVS)}") from None


@dataclass
class VecStepResult:
    obs: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_obs: np.ndarray  # last observation of a finished episode, else equal to obs


class VecEnv:
    """``n_envs`` instances of one task stepped together with auto-reset.

    Slot ``i`` draws its initial states from its own stream seeded with
    ``derive_seed(master_seed, "env", i)``. Finished episodes are appended to
    ``episodes`` as ``(slot, return, length)`` and the slot is reset in place.
    """

    def __init__(self, env_id, n_envs):
        if n_envs < 1:
            raise UsageError(f"n_envs must be >= 1, got {n_envs}")
        self.env = make_env(env_id)
        self.spec = self.env.spec
        self.num_envs = n_envs
        self.states = None
        self.episodes = []

    def reset(self, master_seed):
        self.rngs = [
            np.random.Generator(np.random.PCG64(derive_seed(master_seed, "env", i))) for i in range(self.num_envs)
        ]
        self.states = np.stack([self.env.sample_initial(rng) for rng in self.rngs])
        self.step_counts = np.zeros(self.num_envs, dtype=np.int64)
        self.returns = np.zeros(self.num_envs)
        self.episodes = []
        return self.env.observe(self.states)

    def step(self, actions):
        if self.states is None:
            raise UsageError("call reset() before step()")
        try:
            actions = self.env.validate_actions(actions, self.num_envs)
        except UsageError as err:
            raise UsageError(f"vec_step: {err}") from err
        states, rewards, terminated = self.env.advance(self.states, actions)
        self.step_counts += 1
        self.returns += rewards
        truncated = self.step_counts >= self.spec.max_episode_steps
        obs = self.env.observe(states)
        final_obs = obs.copy()
        for i in np.flatnonzero(terminated | truncated):
            self.episodes.append((int(i), float(self.returns[i]), int(self.step_counts[i])))
            states[i] = self.env.sample_initial(self.rngs[i])
            self.step_counts[i] = 0
            self.returns[i] = 0.0
            obs[i] = self.env.observe(states[i : i + 1])[0]
        self.states = states
        return VecStepResult(obs, rewards, terminated, truncated, final_obs)

    def pop_episodes(self):
        done, self.episodes = self.episodes, []
        return done


def make_vec_env(env_id, n_envs):
    return VecEnv(env_id, n_envs)
