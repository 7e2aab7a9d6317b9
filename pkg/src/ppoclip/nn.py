"""Dense networks with hand-written backprop, policy distributions and Adam.

All trainable scalars of an actor-critic live in one flat float64 vector;
layers are views into it. Gradients use an identically laid out vector, so
gradient clipping and Adam are single vectorized operations.
"""
import math

import numpy as np

from .exceptions import TrainingError, UsageError

LOG_2PI = math.log(2 * math.pi)


class Mlp:
    """Fully connected net, tanh on hidden layers and identity output.

    ``weights[i]`` has shape ``(sizes[i], sizes[i + 1])``.
    """

    def __init__(self, sizes, buffer=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise UsageError(f"invalid layer sizes {sizes!r}")
        if buffer is None:
            buffer = np.zeros(self.count_params(self.sizes))
        if buffer.shape != (self.count_params(self.sizes),):
            raise UsageError("parameter buffer does not match layer sizes")
        self.weights, self.biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(buffer[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self.biases.append(buffer[offset : offset + fan_out])
            offset += fan_out
        self.buffer = buffer

    @staticmethod
    def count_params(sizes):
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def forward(self, x, return_cache=False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise UsageError(f"expected input of shape (batch, {self.sizes[0]}), got {x.shape}")
        cache = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = np.tanh(x)
                cache.append(x)
        return (x, cache) if return_cache else x

    def backward(self, cache, grad_out, grads):
        """Write parameter gradients into ``grads`` (an Mlp of equal sizes).

        Returns the gradient with respect to the input batch.
        """
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            x = cache[i]
            np.matmul(x.T, g, out=grads.weights[i])
            np.sum(g, axis=0, out=grads.biases[i])
            g = g @ self.weights[i].T
            if i > 0:
                g *= 1.0 - x * x
        return g


class PolicyParams:
    """Separate policy and value nets plus a state-independent log-std.

    The policy net maps observations to logits (discrete) or action means
    (continuous); the value net maps observations to a scalar.
    """

    def __init__(self, obs_dim, n_outputs, continuous, hidden=(64, 64), flat=None):
        self.obs_dim = int(obs_dim)
        self.n_outputs = int(n_outputs)
        self.continuous = bool(continuous)
        self.hidden = tuple(hidden)
        policy_sizes = (self.obs_dim, *self.hidden, self.n_outputs)
        value_sizes = (self.obs_dim, *self.hidden, 1)
        n_pol = Mlp.count_params(policy_sizes)
        n_val = Mlp.count_params(value_sizes)
        n_std = self.n_outputs if self.continuous else 0
        total = n_pol + n_val + n_std
        if flat is None:
            flat = np.zeros(total)
        elif flat.shape != (total,):
            raise UsageError(f"flat parameter vector has shape {flat.shape}, expected ({total},)")
        self.flat = flat
        self.policy_net = Mlp(policy_sizes, flat[:n_pol])
        self.value_net = Mlp(value_sizes, flat[n_pol : n_pol + n_val])
        self.log_std = flat[n_pol + n_val :] if self.continuous else None

    @property
    def n_params(self):
        return self.flat.size

    def like(self, flat=None):
        """A PolicyParams with the same layout over ``flat`` (zeros by default)."""
        return PolicyParams(self.obs_dim, self.n_outputs, self.continuous, self.hidden, flat)

    def copy(self):
        return self.like(self.flat.copy())

    def named_arrays(self):
        out = {}
        for prefix, net in (("policy", self.policy_net), ("value", self.value_net)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                out[f"{prefix}.{i}.weight"] = w
                out[f"{prefix}.{i}.bias"] = b
        if self.continuous:
            out["log_std"] = self.log_std
        return out


# Grads share the PolicyParams layout.
Grads = PolicyParams


def orthogonal(shape, gain, rng):
    """Orthogonal matrix of ``shape`` scaled by ``gain`` (QR of a Gaussian)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(params, rng):
    """Orthogonal weights (gain sqrt(2) hidden, 0.01 policy head, 1 value head), zero biases and log-std."""
    params.flat[:] = 0.0
    for net, head_gain in ((params.policy_net, 0.01), (params.value_net, 1.0)):
        last = len(net.weights) - 1
        for i, w in enumerate(net.weights):
            w[...] = orthogonal(w.shape, head_gain if i == last else math.sqrt(2), rng)
    return params


def make_policy_params(spec, rng, hidden=(64, 64)):
    """Freshly initialized parameters for an environment spec."""
    if spec.discrete:
        params = PolicyParams(spec.obs_dim, spec.action_space.n, False, hidden)
    else:
        params = PolicyParams(spec.obs_dim, spec.action_space.dim, True, hidden)
    return init_params(params, rng)


# distributions -----------------------------------------------------------


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Categorical:
    def __init__(self, logits):
        self.logits = logits
        self.log_p = log_softmax(logits)
        self.p = np.exp(self.log_p)

    def log_prob(self, actions):
        return self.log_p[np.arange(len(actions)), actions]

    def entropy(self):
        return -(self.p * self.log_p).sum(axis=-1)

    def sample(self, rng):
        u = rng.random(len(self.p))
        idx = (np.cumsum(self.p, axis=-1) < u[:, None]).sum(axis=-1)
        return np.minimum(idx, self.p.shape[1] - 1)

    def mode(self):
        return self.logits.argmax(axis=-1)

    def backward(self, actions, g_logp, g_ent):
        """Gradient w.r.t. logits of ``sum(g_logp * log_prob + g_ent * entropy)``."""
        n = len(actions)
        grad = -self.p * g_logp[:, None]
        grad[np.arange(n), actions] += g_logp
        ent = self.entropy()
        grad -= g_ent[:, None] * self.p * (self.log_p + ent[:, None])
        return grad, None


class DiagGaussian:
    def __init__(self, mean, log_std):
        self.mean = mean
        self.log_std = log_std
        self.std = np.exp(log_std)

    def log_prob(self, actions):
        z = (actions - self.mean) / self.std
        return (-0.5 * z * z - self.log_std - 0.5 * LOG_2PI).sum(axis=-1)

    def entropy(self):
        per_dim = (0.5 + 0.5 * LOG_2PI + self.log_std).sum()
        return np.full(len(self.mean), per_dim)

    def sample(self, rng):
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def mode(self):
        return self.mean

    def backward(self, actions, g_logp, g_ent):
        """Gradients w.r.t. the means and the log-std vector."""
        z = (actions - self.mean) / self.std
        g_mean = g_logp[:, None] * z / self.std
        g_log_std = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0) + g_ent.sum()
        return g_mean, g_log_std


def make_distribution(params, policy_out):
    if params.continuous:
        return DiagGaussian(policy_out, params.log_std)
    return Categorical(policy_out)


def dist_logprob_entropy(policy_out, log_std, actions):
    """Log-probabilities of ``actions`` and per-sample entropies.

    ``log_std`` is ``None`` for a categorical distribution over logits.
    """
    dist = Categorical(policy_out) if log_std is None else DiagGaussian(policy_out, log_std)
    return dist.log_prob(actions), dist.entropy()


# optimization -------------------------------------------------------------


def clip_grad_norm(grad, max_norm):
    """Rescale ``grad`` in place to a global L2 norm of at most ``max_norm``.

    Returns ``(norm_before, clipped)``.
    """
    norm = float(np.sqrt(np.dot(grad, grad)))
    if not math.isfinite(norm):
        raise TrainingError("non-finite gradient norm", grad_norm=norm)
    if max_norm is not None and norm > max_norm:
        grad *= max_norm / (norm + 1e-6)
        return norm, True
    return norm, False


class Adam:
    """Bias-corrected Adam performing descent on a flat parameter vector."""

    def __init__(self, n_params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-5):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        """Update ``params`` (a flat array) in place."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def adam_step(params, grads, state):
    """Functional spelling of :meth:`Adam.step` on PolicyParams/Grads."""
    state.step(params.flat, grads.flat)
    return params


# checkpoints --------------------------------------------------------------


def save_checkpoint(path, params):
    """Write named float64 arrays (with shapes) to an ``.npz`` archive."""
    arrays = {name: np.ascontiguousarray(a) for name, a in params.named_arrays().items()}
    meta = np.array([params.obs_dim, params.n_outputs, int(params.continuous), *params.hidden], dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, __layout__=meta, **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = data["__layout__"]
        params = PolicyParams(int(meta[0]), int(meta[1]), bool(meta[2]), tuple(int(h) for h in meta[3:]))
        for name, arr in params.named_arrays().items():
            stored = data[name]
            if stored.shape != arr.shape:
                raise UsageError(f"checkpoint array {name} has shape {stored.shape}, expected {arr.shape}")
            arr[...] = stored
    return params
