import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ppoclip import (
    ClipSchedule,
    PpoConfig,
    PpoTrainer,
    RolloutBatch,
    TrainingError,
    UsageError,
    clip_fraction,
    clipped_surrogate,
    epsilon_at,
    ratio,
    total_loss,
)
from ppoclip.nn import PolicyParams, make_distribution
from ppoclip.ppo import surrogate_grad

from gradcheck import fd_check, random_config


def test_ratio_examples():
    np.testing.assert_array_equal(ratio([0.3, -1.0], [0.3, -1.0]), [1.0, 1.0])
    assert ratio([math.log(2)], [0.0])[0] == pytest.approx(2.0, abs=1e-15)
    assert ratio([0.0], [math.log(4)])[0] == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(TrainingError):
        ratio([1e4], [0.0])


def test_surrogate_examples():
    assert clipped_surrogate([1.0], [2.0], 0.2) == 2.0
    assert clipped_surrogate([1.5], [1.0], 0.2) == pytest.approx(1.2)
    assert clipped_surrogate([0.5], [-1.0], 0.2) == pytest.approx(-0.8)
    with pytest.raises(UsageError):
        clipped_surrogate([1.0], [1.0], -0.1)
    with pytest.raises(UsageError):
        clipped_surrogate([1.0, 2.0], [1.0], 0.1)


def test_surrogate_at_zero_eps_equals_mean_advantage_value():
    r = np.array([0.5, 1.5, 1.0, 2.0])
    a = np.array([1.0, -2.0, 3.0, 0.5])
    # value: min(r A, A) ; gradient only where the unclipped branch is the min
    assert clipped_surrogate(r, a, 0.0) == pytest.approx(np.mean(np.minimum(r * a, a)))
    np.testing.assert_array_equal(surrogate_grad(r, a, 0.0), np.array([1.0, -2.0, 3.0, 0.0]) / 4)


def test_clip_fraction_examples():
    assert clip_fraction([1.5, 1.0, 0.9], 0.2) == pytest.approx(1 / 3)
    assert clip_fraction([1.5, 0.1, 3.0], 10.0) == 0.0
    assert clip_fraction([1.1, 0.9, 1.0001], 0.0) == 1.0
    assert clip_fraction([1.25, 0.75], 0.25) == 0.0  # boundary counts as not clipped


ratios = arrays(np.float64, 16, elements=st.floats(0.01, 5.0))
advs = arrays(np.float64, 16, elements=st.floats(-10.0, 10.0))


@settings(max_examples=100)
@given(r=ratios, a=advs, eps=st.floats(0.0, 1.0))
def test_pessimistic_bound(r, a, eps):
    assert clipped_surrogate(r, a, eps) <= np.mean(r * a) + 0.0
    assert 0.0 <= clip_fraction(r, eps) <= 1.0


@settings(max_examples=100)
@given(r=ratios, a=advs)
def test_huge_eps_recovers_unclipped_surrogate(r, a):
    assert clipped_surrogate(r, a, 1e9) == pytest.approx(np.mean(r * a), abs=1e-12, rel=0)
    assert clip_fraction(r, 1e9) == 0.0


@pytest.mark.parametrize("eps", [0.25, 0.5])
@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_kink_subgradient_is_one_sided_derivative(eps, sign):
    # at the active kink (A > 0 at 1 + eps, A < 0 at 1 - eps) the tie picks the
    # unclipped branch: its derivative is the one-sided difference from inside
    r0 = 1.0 + sign * eps
    a = np.array([sign * 2.0])
    h = 1e-6
    step = -sign * h  # towards the interior of the clip interval
    inside = (clipped_surrogate([r0 + step], a, eps) - clipped_surrogate([r0], a, eps)) / step
    assert surrogate_grad(np.array([r0]), a, eps)[0] == pytest.approx(inside, rel=1e-6)
    assert inside == pytest.approx(a[0], rel=1e-6)


def _params_with_heads(logits, value):
    params = PolicyParams(2, len(logits), False, hidden=(3,))
    params.policy_net.biases[-1][...] = logits
    params.value_net.biases[-1][...] = value
    return params


def test_two_sample_hand_computation():
    # zero weights: logits and value come straight from the output biases
    params = _params_with_heads([0.0, math.log(3.0)], 0.3)  # p = (0.25, 0.75)
    batch = RolloutBatch(
        obs=np.ones((2, 2)),
        actions=np.array([1, 0]),
        old_log_probs=np.log([0.5, 0.5]),
        values=np.zeros(2),
        rewards=np.zeros(2),
        done_flags=np.zeros(2),
        advantages=np.array([1.0, -1.0]),
        returns=np.array([1.0, 0.0]),
    )
    loss, rep = total_loss(batch, np.arange(2), params, 0.2, 0.5, 0.01)
    # ratios 1.5 and 0.5 -> clipped terms 1.2 and -0.8
    surrogate = (1.2 + -0.8) / 2
    value_loss = (0.7**2 + 0.3**2) / 2
    entropy = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75))
    assert rep.surrogate_loss == pytest.approx(0.2, abs=1e-12)
    assert rep.value_loss == pytest.approx(0.29, abs=1e-12)
    assert rep.entropy == pytest.approx(entropy, abs=1e-12)
    assert loss == pytest.approx(-surrogate + 0.5 * value_loss - 0.01 * entropy, abs=1e-12)
    assert rep.total_loss == loss
    assert rep.clip_fraction == 1.0
    assert rep.approx_kl == pytest.approx((math.log(0.5 / 0.75) + math.log(0.5 / 0.25)) / 2, abs=1e-12)


GRAD_CONFIGS = range(24)


@pytest.mark.parametrize("seed", GRAD_CONFIGS)
@pytest.mark.parametrize("term", ["surrogate", "value", "entropy"])
def test_loss_gradients_match_finite_differences(seed, term):
    params, batch, eps, normalize = random_config(seed)
    if term == "surrogate":
        err = fd_check(params, batch, eps, 0.0, 0.0, normalize)
    else:
        batch.advantages[:] = 0.0
        c1, c2 = (1.0, 0.0) if term == "value" else (0.0, 1.0)
        err = fd_check(params, batch, eps, c1, c2, normalize)
    assert err < 1e-4


def test_boundary_samples_are_on_the_boundary():
    params, batch, eps, normalize = random_config(3)
    new = make_distribution(params, params.policy_net.forward(batch.obs[:2])).log_prob(batch.actions[:2])
    r = np.exp(new - batch.old_log_probs[:2])
    np.testing.assert_allclose(np.abs(r - 1.0), eps, atol=1e-12)


def test_term_isolation():
    params, batch, eps, _ = random_config(5)
    idx = np.arange(len(batch))
    loss, rep = total_loss(batch, idx, params, eps, 0.0, 0.0)
    assert loss == -rep.surrogate_loss
    v = params.value_net.forward(batch.obs)[:, 0]
    batch.returns[:] = v
    _, rep = total_loss(batch, idx, params, eps, 0.5, 0.0)
    assert rep.value_loss == 0.0


def test_non_finite_loss_is_training_error():
    params, batch, eps, _ = random_config(2)
    batch.returns[0] = np.inf
    with pytest.raises(TrainingError):
        total_loss(batch, np.arange(len(batch)), params, eps, 0.5, 0.0)


def small_config(**kw):
    base = dict(n_envs=2, rollout_len=32, batch_size=16, n_epochs=2, total_timesteps=192, seed=3)
    base.update(kw)
    return PpoConfig(**base)


def test_config_validation():
    with pytest.raises(UsageError):
        small_config(batch_size=65)
    with pytest.raises(UsageError):
        small_config(n_epochs=0)
    with pytest.raises(UsageError):
        small_config(ent_coef=-1.0)


def test_single_optimizer_step_per_iteration():
    trainer = PpoTrainer("cartpole", small_config(n_epochs=1, batch_size=64))
    trainer.train_iteration()
    assert trainer.optimizer.t == 1
    trainer = PpoTrainer("cartpole", small_config(n_epochs=3, batch_size=16))
    trainer.train_iteration()
    assert trainer.optimizer.t == 3 * 4


@pytest.mark.parametrize("env_id", ["cartpole", "pendulum"])
def test_zero_learning_rate_freezes_params(env_id):
    trainer = PpoTrainer(env_id, small_config(learning_rate=0.0))
    before = trainer.params.flat.copy()
    rows = [trainer.train_iteration() for _ in range(2)]
    np.testing.assert_array_equal(trainer.params.flat, before)
    assert all(row.clip_fraction == 0.0 for row in rows)


@pytest.mark.parametrize("kind", ["constant", "linear", "exp"])
def test_metrics_replay_schedule(kind):
    schedule = ClipSchedule(kind, 0.3)
    trainer = PpoTrainer("acrobot", small_config(schedule=schedule))
    rows = []
    while not trainer.done:
        rows.append(trainer.train_iteration())
    assert [r.timesteps for r in rows] == [64, 128, 192]
    for row in rows:
        assert row.epsilon == epsilon_at(schedule, row.timesteps, 192)
        assert row.first_clip_fraction == 0.0
    with pytest.raises(UsageError):
        trainer.train_iteration()


def test_training_is_deterministic():
    def rows():
        trainer = PpoTrainer("pendulum", small_config(schedule=ClipSchedule("linear")))
        out = []
        while not trainer.done:
            row = trainer.train_iteration()
            row.wall_ms = 0.0
            out.append(row)
        return out, trainer.params.flat.copy()

    (rows_a, params_a), (rows_b, params_b) = rows(), rows()
    assert [repr(r) for r in rows_a] == [repr(r) for r in rows_b]
    assert params_a.tobytes() == params_b.tobytes()
