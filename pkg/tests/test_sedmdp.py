"""Environment tests: reward factorization, sparse/dense equivalence."""

import numpy as np
import pytest

from boed.agents import RandomPolicy
from boed.models import get_model
from boed.sedmdp import SequentialDesignEnv, discounted_return, undiscounted_return


def rollout(model_id, mode, seed, T, L=100, gamma=1.0):
    model = get_model(model_id)
    env = SequentialDesignEnv(model=model, L=L, T=T, reward_mode=mode, gamma=gamma)
    rng = np.random.default_rng(seed)
    env.reset(rng)
    policy = RandomPolicy(model)
    state = policy.initial_state(1, rng)
    rewards = []
    for _ in range(T):
        d = policy.propose(state, rng)
        res = env.step(d[0])
        rewards.append(res.reward)
    return env, np.array(rewards)


@pytest.mark.parametrize("model_id,T", [("source", 10), ("ces", 5), ("prey", 4)])
def test_dense_rewards_telescope_to_g(model_id, T):
    for seed in range(5):
        env, rewards = rollout(model_id, "dense", seed, T)
        assert abs(rewards.sum() - env.g_value()) < 1e-9


@pytest.mark.parametrize("model_id,T", [("source", 6), ("prey", 3)])
def test_sparse_equals_dense_on_shared_seed(model_id, T):
    for seed in range(5):
        _, dense = rollout(model_id, "dense", seed, T)
        _, sparse = rollout(model_id, "sparse", seed, T)
        assert np.all(sparse[:-1] == 0.0)
        assert abs(sparse.sum() - dense.sum()) < 1e-12


def test_step_reward_decomposition_fields():
    # reward = log p(y|theta0,d) - lse(ell_t) + lse(ell_{t-1})
    model = get_model("source")
    env = SequentialDesignEnv(model=model, L=50, T=3, reward_mode="dense", gamma=1.0)
    rng = np.random.default_rng(0)
    env.reset(rng)
    policy = RandomPolicy(model)
    state = policy.initial_state(1, rng)
    for _ in range(3):
        res = env.step(policy.propose(state, rng)[0])
        assert abs(res.reward - (res.log_lik_theta0 - res.logsumexp_ell
                                 + res.logsumexp_ell_prev)) < 1e-12


def test_ell_recomputation_matches_incremental():
    env, _ = rollout("ces", "dense", 3, 5)
    np.testing.assert_allclose(env.recompute_ell(), env.ell, atol=1e-12, rtol=0)


def test_reset_determinism():
    model = get_model("source")
    env = SequentialDesignEnv(model=model, L=20, T=3, reward_mode="dense", gamma=1.0)
    env.reset(np.random.default_rng(7))
    theta_a = env.theta0.copy()
    env.reset(np.random.default_rng(7))
    np.testing.assert_array_equal(theta_a, env.theta0)


def test_step_after_done_raises():
    env, _ = rollout("source", "dense", 1, 2)
    with pytest.raises(RuntimeError):
        env.step(np.zeros(2))


def test_design_validated():
    model = get_model("source")
    env = SequentialDesignEnv(model=model, L=10, T=2, reward_mode="dense", gamma=1.0)
    env.reset(np.random.default_rng(0))
    with pytest.raises(ValueError):
        env.step(np.array([5.0, 0.0]))


def test_invalid_construction():
    model = get_model("source")
    with pytest.raises(ValueError):
        SequentialDesignEnv(model=model, L=10, T=2, reward_mode="banana", gamma=1.0)
    with pytest.raises(ValueError):
        SequentialDesignEnv(model=model, L=10, T=2, reward_mode="dense", gamma=1.5)
    with pytest.raises(ValueError):
        SequentialDesignEnv(model=model, L=0, T=2, reward_mode="dense", gamma=0.5)


def test_returns_helpers():
    r = np.array([1.0, 2.0, 4.0])
    assert undiscounted_return(r) == 7.0
    assert discounted_return(r, 0.5) == pytest.approx(1.0 + 1.0 + 1.0)
    assert discounted_return(r, 1.0) == pytest.approx(7.0)


def test_g_value_capped():
    for seed in range(3):
        env, _ = rollout("source", "dense", seed, 4, L=30)
        assert env.g_value() <= np.log(31) + 1e-12
