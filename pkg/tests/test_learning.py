import numpy as np
import pytest

from metamarl.backend import LearningError
from metamarl.backend.learning import (
    GaeConfig,
    LinearFeatureBaseline,
    batch_gae,
    collect_batch,
    cross_fitted_baseline,
    discounted_return,
    gae_advantages,
    inner_loop_update,
    linear_baseline,
    policy_gradient_estimate,
    returns_to_go,
    rollout_chain,
    step_lr,
)
from metamarl.backend.games import make_ipd
from metamarl.backend.oracle import exact_inner_update, exact_policy_gradient
from metamarl.backend.policies import PolicyNodes, PolicyParams
from metamarl.backend.tape import Tape


def test_collect_batch_shapes_and_rewards(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    batch = collect_batch(ipd, joint, K=6, H=4, rng=rng)
    assert batch.size == 6 and batch.horizon == 4 and batch.n_agents == 2
    assert batch.states().shape == (6, 5)
    assert batch.rewards().shape == (6, 4, 2)
    np.testing.assert_allclose(batch.weights, 1 / 6)
    assert np.all(batch.states()[:, 0] == 0)
    for traj in batch.trajectories:
        for t in range(traj.horizon):
            np.testing.assert_allclose(traj.rewards[t], ipd.reward(traj.joint_actions[t]))
            assert traj.states[t + 1] == 1 + traj.joint_actions[t] @ ipd.state_weights


def test_collect_batch_is_seed_deterministic(rps, joint_factory):
    joint = joint_factory(rps, np.random.default_rng(0))
    a = collect_batch(rps, joint, 5, 6, np.random.default_rng(42))
    b = collect_batch(rps, joint, 5, 6, np.random.default_rng(42))
    np.testing.assert_array_equal(a.actions(), b.actions())


def test_collect_batch_validation(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    with pytest.raises(LearningError):
        collect_batch(ipd, joint[:1], 2, 2, rng)
    with pytest.raises(LearningError):
        collect_batch(ipd, joint, 0, 2, rng)
    with pytest.raises(LearningError):
        collect_batch(ipd, joint, 2, 0, rng)
    with pytest.raises(LearningError):
        collect_batch(ipd, joint, 2, 2, rng, record_tape=True)


def test_exact_batch_weights_sum_to_one(ipd, rng, joint_factory):
    batch = collect_batch(ipd, joint_factory(ipd, rng), K=1, H=2, rng=None, exact=True)
    assert batch.exact
    assert batch.size == 16
    assert batch.weights.sum() == pytest.approx(1.0)


def test_returns_to_go():
    rewards = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(returns_to_go(rewards, 0.5), [[1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3]])


def test_gae_limits(rng):
    rewards = rng.normal(size=(3, 5))
    values = np.concatenate([rng.normal(size=(3, 5)), np.zeros((3, 1))], axis=1)
    gamma = 0.9
    full = batch_gae(rewards, values, GaeConfig(gamma=gamma, lam=1.0))
    np.testing.assert_allclose(full, returns_to_go(rewards, gamma) - values[:, :-1], atol=1e-12)
    td = batch_gae(rewards, values, GaeConfig(gamma=gamma, lam=0.0))
    np.testing.assert_allclose(td, rewards + gamma * values[:, 1:] - values[:, :-1], atol=1e-12)


def test_gae_single_trajectory(ipd, rng, joint_factory):
    batch = collect_batch(ipd, joint_factory(ipd, rng), 1, 4, rng)
    traj = batch.trajectories[0]
    adv = gae_advantages(traj, np.zeros(5), GaeConfig(gamma=0.8, lam=1.0), agent=1)
    np.testing.assert_allclose(adv, returns_to_go(traj.rewards[:, 1], 0.8))
    with pytest.raises(LearningError):
        gae_advantages(traj, np.zeros(4), GaeConfig())


def test_gae_config_ranges():
    with pytest.raises(LearningError):
        GaeConfig(gamma=1.0)
    with pytest.raises(LearningError):
        GaeConfig(lam=1.5)


def test_linear_baseline_recovers_constant_targets(ipd, rng, joint_factory):
    batch = collect_batch(ipd, joint_factory(ipd, rng), 8, 5, rng)
    model = LinearFeatureBaseline(ipd.n_states, 5)
    states = batch.states()[:, :-1]
    model.fit(states, np.full(states.shape, 2.5), batch.weights)
    np.testing.assert_allclose(model.predict(states), 2.5, atol=1e-4)


def test_unfitted_baseline_predicts_zero():
    model = LinearFeatureBaseline(5, 3)
    np.testing.assert_array_equal(model.predict(np.zeros((2, 3), dtype=int)), 0.0)


def test_cross_fitted_baseline_shapes(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    single = collect_batch(ipd, joint, 1, 3, rng)
    np.testing.assert_array_equal(cross_fitted_baseline(single, 0, 0.9), 0.0)
    batch = collect_batch(ipd, joint, 6, 3, rng)
    assert cross_fitted_baseline(batch, 0, 0.9).shape == (6, 3)
    exact = collect_batch(ipd, joint, 1, 2, None, exact=True)
    np.testing.assert_allclose(cross_fitted_baseline(exact, 1, 0.9), linear_baseline(exact, 1, 0.9))


def test_exact_policy_gradient_matches_oracle(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    batch = collect_batch(ipd, joint, 1, 3, None, exact=True)
    for agent in (0, 1):
        np.testing.assert_allclose(
            policy_gradient_estimate(batch, agent, 0.96),
            exact_policy_gradient(ipd, joint, 3, 0.96, agent),
            atol=1e-10,
        )


def test_exact_chain_follows_exact_updates(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    chain = rollout_chain(ipd, joint, L=2, K=1, H=2, inner_lrs=[0.5, 0.5], rng=None, exact=True)
    expected = joint
    for ell in (1, 2):
        expected = exact_inner_update(ipd, expected, 0.5, 2, 0.96)
        for got, want in zip(chain.steps[ell].params, expected):
            np.testing.assert_allclose(got.logits, want.logits, atol=1e-10)


def test_on_tape_update_matches_numeric_update(rps, joint_factory):
    joint = joint_factory(rps, np.random.default_rng(2))
    tape = Tape()
    nodes = [PolicyNodes.from_params(tape, p) for p in joint]
    batch = collect_batch(rps, joint, 6, 3, np.random.default_rng(7), record_tape=True, nodes=nodes)
    numeric = inner_loop_update(joint, batch, [0.3, 0.7], gamma=0.9)
    taped = inner_loop_update(nodes, batch, [0.3, 0.7], on_tape=True, gamma=0.9)
    for a, b in zip(numeric, taped):
        np.testing.assert_allclose(b.values().logits, a.logits, atol=1e-10)


def test_inner_update_subset_of_agents(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    batch = collect_batch(ipd, joint, 4, 3, rng)
    out = inner_loop_update(joint, batch, [1.0, 1.0], agents=[1])
    np.testing.assert_array_equal(out[0].logits, joint[0].logits)
    assert not np.allclose(out[1].logits, joint[1].logits)


def test_inner_update_requires_recorded_batch(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    tape = Tape()
    nodes = [PolicyNodes.from_params(tape, p) for p in joint]
    batch = collect_batch(ipd, joint, 2, 2, rng)
    with pytest.raises(LearningError):
        inner_loop_update(nodes, batch, [1.0, 1.0], on_tape=True)
    with pytest.raises(LearningError):
        inner_loop_update(joint, batch, [1.0])


def test_rollout_chain_structure(ipd, rng, joint_factory):
    chain = rollout_chain(ipd, joint_factory(ipd, rng), L=3, K=4, H=3, inner_lrs=[1.0, 1.0], rng=rng, on_tape=True)
    assert chain.length == 3
    assert chain.on_tape
    assert len(chain.steps) == 4
    assert all(step.batch.recorded for step in chain.steps)
    with pytest.raises(LearningError):
        rollout_chain(ipd, joint_factory(ipd, rng), L=0, K=4, H=3, inner_lrs=[1.0, 1.0], rng=rng)


def test_step_lr_schedule():
    assert step_lr(0.5, 3) == 0.5
    assert step_lr([0.1, 0.2], 1) == 0.2


def test_discounted_return_examples():
    from metamarl.backend.learning import Trajectory

    ones = Trajectory(states=np.zeros(4, dtype=int), joint_actions=np.zeros((3, 2), dtype=int), rewards=np.ones((3, 2)))
    assert discounted_return(ones, 0.5, 0) == pytest.approx(1.75)
    assert discounted_return(ones, 0.0, 1, from_t=1) == 1.0
    coop = Trajectory(
        states=np.array([0, 1, 1]), joint_actions=np.zeros((2, 2), dtype=int), rewards=np.full((2, 2), 0.5)
    )
    assert discounted_return(coop, 0.96, 0) == pytest.approx(0.98)


def test_zero_learning_rate_is_identity(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    batch = collect_batch(ipd, joint, 4, 3, rng)
    for before, after in zip(joint, inner_loop_update(joint, batch, [0.0, 0.0])):
        np.testing.assert_array_equal(before.logits, after.logits)


def test_peer_update_depends_on_meta_agent(ipd, rng, joint_factory):
    from metamarl.backend.tape import grad

    chain = rollout_chain(ipd, joint_factory(ipd, rng), 1, 6, 3, [1.0, 1.0], rng, on_tape=True)
    peer_next = chain.steps[1].nodes[1]
    meta_handles = chain.steps[0].nodes[0].handles
    total = chain.tape.sum([x for row in peer_next.logits for x in row])
    assert np.any(np.array(grad(total, meta_handles)) != 0.0)


def test_reward_shift_leaves_exact_gradient(ipd, rng, joint_factory):
    joint = joint_factory(ipd, rng)
    batch = collect_batch(ipd, joint, 1, 3, None, exact=True)
    shifted = batch.rewards() + 2.5
    for agent in (0, 1):
        np.testing.assert_allclose(
            policy_gradient_estimate(batch, agent, 0.9, shifted),
            policy_gradient_estimate(batch, agent, 0.9),
            atol=1e-10,
        )


def test_chain_is_recomputable(rps, joint_factory):
    joint = joint_factory(rps, np.random.default_rng(1))
    chain = rollout_chain(rps, joint, 2, 5, 3, [0.4, 0.4], np.random.default_rng(2), gamma=0.9)
    for ell in range(chain.length):
        step = chain.steps[ell]
        replay = inner_loop_update(step.params, step.batch, [0.4, 0.4], gamma=0.9)
        for a, b in zip(replay, chain.steps[ell + 1].params):
            np.testing.assert_array_equal(a.logits, b.logits)
    again = rollout_chain(rps, joint, 2, 5, 3, [0.4, 0.4], np.random.default_rng(2), gamma=0.9)
    for a, b in zip(chain.steps, again.steps):
        np.testing.assert_array_equal(a.batch.actions(), b.batch.actions())


@pytest.mark.slow
def test_inner_estimator_is_unbiased():
    game = make_ipd(1)
    rng = np.random.default_rng(0)
    joint = [PolicyParams(j, rng.normal(size=(game.n_states, 2))) for j in range(2)]
    exact = exact_policy_gradient(game, joint, 1, 0.96, 0)[0]
    samples = np.array([policy_gradient_estimate(collect_batch(game, joint, 4, 1, rng), 0, 0.96)[0] for _ in range(20_000)])
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    assert np.all(np.abs(samples.mean(axis=0) - exact) <= 3 * se + 1e-12)


def test_discounted_return_bounds():
    from metamarl.backend.learning import Trajectory

    traj = Trajectory(states=np.zeros(3, dtype=int), joint_actions=np.zeros((2, 2), dtype=int), rewards=np.ones((2, 2)))
    assert discounted_return(traj, 0.5, 0, from_t=2) == 0.0
    with pytest.raises(LearningError):
        discounted_return(traj, 0.5, 0, from_t=3)
