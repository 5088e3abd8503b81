import itertools
import math
import random

import numpy as np
import pytest

from rankfit.errors import ConfigError, InvalidOrdering, NumericalError
from rankfit.grpo import (
    GrpoConfig,
    PLPolicy,
    evaluate_mean_reward,
    greedy_ndcg4,
    grpo_step,
    kl_exact,
    kl_sampled,
    make_policy,
    match_features,
    pl_log_prob,
    sample_group,
    surrogate,
    surrogate_grad,
    group_step_probs,
    train,
    window_reward,
)
from rankfit.metrics import RewardGroup, group_advantages
from rankfit.synthetic import SyntheticConfig, generate
from rankfit.windows import PipelineConfig, build_all_windows

from conftest import make_window
from oracles import central_difference_grad


def onehot_policy(theta=None):
    """Features are one-hot on the candidate's index within the window."""

    def fn(window, cid):
        v = np.zeros(4)
        v[window.candidate_ids.index(cid)] = 1.0
        return v

    names = [f"cand_{i}" for i in range(4)]
    if theta is None:
        theta = np.zeros(4)
    return PLPolicy(np.asarray(theta, dtype=float), fn, names)


def independent_pl_probs(scores):
    """Plain-math Plackett-Luce distribution over all permutations."""
    probs = {}
    for perm in itertools.permutations(range(len(scores))):
        p = 1.0
        remaining = list(range(len(scores)))
        for chosen in perm:
            exps = [math.exp(scores[i]) for i in remaining]
            p *= math.exp(scores[chosen]) / sum(exps)
            remaining.remove(chosen)
        probs[perm] = p
    return probs


class TestPlLogProb:
    def test_uniform_policy_is_one_over_24(self):
        policy = onehot_policy()
        window = make_window()
        logp = pl_log_prob(policy, window, window.presented_ids())
        assert logp == pytest.approx(math.log(1 / 24), abs=1e-12)

    def test_dominant_score_first_step(self):
        window = make_window(gold_slot=1)
        policy = onehot_policy()
        # put weight 10 on the candidate presented first
        first_id = window.presented_ids()[0]
        theta = np.zeros(4)
        theta[window.candidate_ids.index(first_id)] = 10.0
        policy = onehot_policy(theta)
        ordering = window.presented_ids()
        logp = pl_log_prob(policy, window, ordering)
        first_step = math.log(math.exp(10) / (math.exp(10) + 3))
        assert first_step == pytest.approx(-1.36194e-4, rel=1e-3)
        # remaining three candidates are uniform: log(1/3!) for the tail
        assert logp == pytest.approx(first_step + math.log(1 / 6), abs=1e-9)

    def test_normalization_random_theta(self):
        rng = np.random.default_rng(0)
        window = make_window()
        ids = window.presented_ids()
        for _ in range(20):
            policy = onehot_policy(rng.normal(0, 2, size=4))
            total = sum(
                math.exp(pl_log_prob(policy, window, perm))
                for perm in itertools.permutations(ids)
            )
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_matches_independent_enumeration(self):
        rng = np.random.default_rng(1)
        window = make_window()
        ids = window.presented_ids()
        policy = onehot_policy(rng.normal(0, 1.5, size=4))
        scores = policy.scores(window)
        reference = independent_pl_probs(list(scores))
        for perm_idx, expected in reference.items():
            ordering = tuple(ids[i] for i in perm_idx)
            assert math.exp(pl_log_prob(policy, window, ordering)) == pytest.approx(
                expected, rel=1e-9
            )

    def test_nonpermutation_rejected(self):
        policy = onehot_policy()
        window = make_window()
        ids = window.presented_ids()
        with pytest.raises(InvalidOrdering):
            pl_log_prob(policy, window, (ids[0], ids[0], ids[1], ids[2]))
        with pytest.raises(InvalidOrdering):
            pl_log_prob(policy, window, ids[:3])

    def test_always_nonpositive(self):
        rng = np.random.default_rng(2)
        window = make_window()
        ids = list(window.presented_ids())
        for _ in range(50):
            policy = onehot_policy(rng.normal(0, 3, size=4))
            perm = list(ids)
            rng.shuffle(perm)
            assert pl_log_prob(policy, window, tuple(perm)) <= 0.0


class TestWindowReward:
    def test_rearank_gold_to_top(self):
        window = make_window(gold_slot=3)  # ndcg_old = 0.5
        ids = window.presented_ids()
        gold_first = (window.gold_id,) + tuple(i for i in ids if i != window.gold_id)
        assert window_reward(window, gold_first) == pytest.approx(1.0)

    def test_rearank_unchanged_is_zero(self):
        window = make_window(gold_slot=3)
        assert window_reward(window, window.presented_ids()) == pytest.approx(0.0)

    def test_rearank_gold_already_first_is_zero(self):
        window = make_window(gold_slot=1)
        ids = window.presented_ids()
        demoted = (ids[1], ids[0], ids[2], ids[3])
        assert window_reward(window, demoted) == 0.0
        assert window_reward(window, ids) == 0.0

    def test_rankr1_binary(self):
        window = make_window(gold_slot=2)
        ids = window.presented_ids()
        gold_first = (window.gold_id,) + tuple(i for i in ids if i != window.gold_id)
        assert window_reward(window, gold_first, "rankr1") == 1.0
        assert window_reward(window, ids, "rankr1") == 0.0


class TestSampleGroup:
    def test_advantages_standardized(self):
        policy = onehot_policy()
        window = make_window(gold_slot=2)
        cfg = GrpoConfig(rng_seed=0)
        group = sample_group(policy, window, cfg, random.Random(0))
        assert len(group.samples) == cfg.group_size
        if any(a != 0 for a in group.advantages):
            assert sum(group.advantages) == pytest.approx(0.0, abs=1e-9)

    def test_oracle_policy_zero_variance(self):
        window = make_window(gold_slot=2)
        theta = np.zeros(4)
        theta[window.candidate_ids.index(window.gold_id)] = 50.0
        policy = onehot_policy(theta)
        group = sample_group(policy, window, GrpoConfig(), random.Random(1))
        assert all(r == 1.0 for r in group.rewards)
        assert group.advantages == [0.0] * len(group.samples)

    def test_seeded_determinism(self):
        policy = onehot_policy(np.array([0.5, -0.2, 0.1, 0.0]))
        window = make_window(gold_slot=4)
        a = sample_group(policy, window, GrpoConfig(), random.Random(7))
        b = sample_group(policy, window, GrpoConfig(), random.Random(7))
        assert a.samples == b.samples
        assert a.advantages == b.advantages


class TestKl:
    def test_exact_zero_at_ref(self):
        policy = onehot_policy(np.array([0.3, -0.7, 0.2, 0.1]))
        ref = policy.clone()
        window = make_window()
        value, grad = kl_exact(policy, ref, window)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_exact_nonnegative_and_matches_independent_sum(self):
        rng = np.random.default_rng(3)
        window = make_window()
        for _ in range(10):
            policy = onehot_policy(rng.normal(0, 1, size=4))
            ref = onehot_policy(rng.normal(0, 1, size=4))
            value, _ = kl_exact(policy, ref, window)
            assert value >= -1e-12
            p = independent_pl_probs(list(policy.scores(window)))
            q = independent_pl_probs(list(ref.scores(window)))
            expected = sum(p[k] * math.log(p[k] / q[k]) for k in p)
            assert value == pytest.approx(expected, rel=1e-9)

    def test_sampled_estimator_tracks_exact(self):
        policy = onehot_policy(np.array([1.0, 0.0, -0.5, 0.2]))
        ref = onehot_policy(np.array([0.0, 0.0, 0.0, 0.0]))
        window = make_window()
        ids = window.presented_ids()
        rng = random.Random(5)
        feats = policy.features(window)
        scores = feats @ policy.theta
        from rankfit.grpo import _sample_perm

        orderings = [
            tuple(ids[i] for i in _sample_perm(scores, rng)) for _ in range(4000)
        ]
        sampled_value, _ = kl_sampled(policy, ref, window, orderings)
        exact_value, _ = kl_exact(policy, ref, window)
        assert sampled_value == pytest.approx(exact_value, abs=0.05)


def random_triple(rng):
    """A random (policy, window, group) for gradient checking."""
    window = make_window(
        window_id=f"gc/{rng.integers(10**6)}", gold_slot=int(rng.integers(1, 5))
    )
    theta = rng.normal(0, 1.0, size=4)
    policy = onehot_policy(theta)
    ids = window.presented_ids()
    samples = []
    for _ in range(8):
        perm = list(ids)
        rng.shuffle(perm)
        ordering = tuple(perm)
        samples.append((ordering, window_reward(window, ordering)))
    advantages = group_advantages([r for _, r in samples])
    group = RewardGroup(window_id=window.window_id, samples=samples, advantages=advantages)
    return policy, window, group


class TestGradientCorrectness:
    @pytest.mark.parametrize("kl_mode,beta", [("exact", 0.0), ("exact", 0.05), ("sampled", 0.05)])
    def test_analytic_matches_central_differences(self, kl_mode, beta):
        rng = np.random.default_rng(42)
        cfg = GrpoConfig(beta=beta, kl_mode=kl_mode, rng_seed=0)
        worst = 0.0
        for _ in range(100):
            policy, window, group = random_triple(rng)
            ref = onehot_policy(rng.normal(0, 1.0, size=4))
            denoms = group_step_probs(policy, window, group)

            def value_at(theta_list):
                probe = onehot_policy(np.asarray(theta_list))
                return surrogate(probe, ref, window, group, cfg, denoms)

            _, grad, _ = surrogate_grad(policy, ref, window, group, cfg, denoms=denoms)
            fd = np.asarray(central_difference_grad(value_at, list(policy.theta), h=1e-5))
            rel_err = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-10)
            worst = max(worst, rel_err)
        assert worst < 1e-4

    def test_offpolicy_ratio_gradient_also_matches(self):
        # denominators frozen from a different parameter point than the probe
        rng = np.random.default_rng(7)
        cfg = GrpoConfig(beta=0.01, kl_mode="exact")
        policy, window, group = random_triple(rng)
        sampler = onehot_policy(rng.normal(0, 1.0, size=4))
        denoms = group_step_probs(sampler, window, group)
        ref = onehot_policy(rng.normal(0, 1.0, size=4))

        def value_at(theta_list):
            probe = onehot_policy(np.asarray(theta_list))
            return surrogate(probe, ref, window, group, cfg, denoms)

        _, grad, _ = surrogate_grad(policy, ref, window, group, cfg, denoms=denoms)
        fd = np.asarray(central_difference_grad(value_at, list(policy.theta), h=1e-5))
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-10) < 1e-4


class TestGrpoStep:
    def test_gold_weight_increases_when_gold_first_has_positive_advantage(self):
        window = make_window(gold_slot=2)
        policy = onehot_policy()
        ref = policy.clone()
        cfg = GrpoConfig(beta=0.0, rng_seed=0)
        ids = window.presented_ids()
        gold = window.gold_id
        others = [i for i in ids if i != gold]
        orderings = [
            (gold, *others),
            (others[0], gold, *others[1:]),
            (others[1], *[i for i in ids if i not in (others[1],)]),
            tuple(reversed(ids)),
        ]
        rewards = [window_reward(window, o) for o in orderings]
        assert rewards[0] == 1.0 and max(rewards[1:]) < 1.0
        group = RewardGroup(
            window_id=window.window_id,
            samples=list(zip(orderings, rewards)),
            advantages=group_advantages(rewards),
        )
        _, grad, _ = surrogate_grad(policy, ref, window, group, cfg)
        gold_idx = window.candidate_ids.index(gold)
        assert grad[gold_idx] > 0
        updated = policy.theta + 0.1 * grad
        assert updated[gold_idx] > policy.theta[gold_idx]

    def test_zero_advantages_update_is_minus_lr_beta_klgrad(self):
        window = make_window(gold_slot=1)
        policy = onehot_policy(np.array([0.4, -0.1, 0.0, 0.3]))
        ref = onehot_policy(np.array([0.0, 0.1, 0.0, -0.2]))
        cfg = GrpoConfig(beta=0.5, kl_mode="exact")
        ids = window.presented_ids()
        orderings = [tuple(ids), tuple(reversed(ids))]
        group = RewardGroup(
            window_id=window.window_id,
            samples=[(o, 0.3) for o in orderings],
            advantages=[0.0, 0.0],
        )
        _, grad, _ = surrogate_grad(policy, ref, window, group, cfg)
        _, kl_grad = kl_exact(policy, ref, window)
        assert np.allclose(grad, -cfg.beta * kl_grad, atol=1e-12)

    def test_zero_advantages_at_ref_is_no_op(self):
        window = make_window(gold_slot=1)
        policy = onehot_policy(np.array([0.4, -0.1, 0.0, 0.3]))
        ref = policy.clone()
        cfg = GrpoConfig(beta=0.5, kl_mode="exact")
        ids = window.presented_ids()
        group = RewardGroup(
            window_id=window.window_id,
            samples=[(tuple(ids), 1.0), (tuple(reversed(ids)), 1.0)],
            advantages=[0.0, 0.0],
        )
        _, grad, _ = surrogate_grad(policy, ref, window, group, cfg)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_empty_batch_rejected(self):
        policy = onehot_policy()
        with pytest.raises(ConfigError):
            grpo_step(policy, policy.clone(), [], GrpoConfig())

    def test_nonfinite_gradient_names_window(self):
        window = make_window(window_id="j1/bad", gold_slot=2)

        def fn(w, cid):
            return np.array([np.inf, 1.0])

        policy = PLPolicy(np.zeros(2), fn, ["a", "b"])
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericalError) as exc_info:
                grpo_step(policy, policy.clone(), [window], GrpoConfig(learning_rate=0.1))
        assert "j1/bad" in str(exc_info.value)

    def test_step_runs_and_reports(self):
        windows = [make_window(window_id=f"j1/w{i}", gold_slot=(i % 4) + 1) for i in range(4)]
        policy = onehot_policy()
        new_policy, stats = grpo_step(
            policy, policy.clone(), windows, GrpoConfig(learning_rate=1.0, rng_seed=0)
        )
        assert np.isfinite(stats.mean_reward)
        assert stats.kl >= -1e-12
        assert stats.grad_norm >= 0


class TestTraining:
    def _windows(self, n_jobs=40, seed=11):
        docs, labels, pools = generate(
            SyntheticConfig(n_jobs=n_jobs, n_background=200, seed=seed)
        )
        windows, _ = build_all_windows(pools, PipelineConfig(rng_seed=seed))
        return docs, windows

    def test_deterministic_given_seed(self):
        docs, windows = self._windows(n_jobs=10)
        fn, names = match_features(docs)
        cfg = GrpoConfig(learning_rate=2.0, batch_size=8, epochs=1, rng_seed=3)
        a = train(make_policy(fn, names), windows, cfg)
        b = train(make_policy(fn, names), windows, cfg)
        assert np.array_equal(a.policy.theta, b.policy.theta)
        assert a.curve == b.curve

    def test_informative_task_improves(self):
        docs, windows = self._windows()
        fn, names = match_features(docs)
        cfg = GrpoConfig(learning_rate=4.0, batch_size=16, rng_seed=0)
        policy = make_policy(fn, names)
        before = evaluate_mean_reward(policy, windows, cfg, "init")
        result = train(policy, windows, cfg)
        after = evaluate_mean_reward(result.policy, windows, cfg, "final")
        assert after > before + 0.1
        assert greedy_ndcg4(result.policy, windows) > greedy_ndcg4(result.ref, windows)

    def test_reference_frozen_at_init(self):
        docs, windows = self._windows(n_jobs=10)
        fn, names = match_features(docs)
        policy = make_policy(fn, names)
        init_theta = policy.theta.copy()
        result = train(policy, windows, GrpoConfig(learning_rate=2.0, epochs=1, rng_seed=0))
        assert np.array_equal(result.ref.theta, init_theta)

    def test_large_beta_pins_policy_to_ref(self):
        docs, windows = self._windows(n_jobs=25, seed=13)
        windows = windows[:100]
        fn, names = match_features(docs)
        # plain ascent on beta*KL is only stable for lr*beta*Fisher < 2, so the
        # regularization sweep runs at a small step size
        disps = {}
        for beta in (0.0, 1.0, 1000.0):
            cfg = GrpoConfig(learning_rate=0.02, batch_size=16, beta=beta, rng_seed=0)
            result = train(make_policy(fn, names), windows, cfg)
            disps[beta] = float(np.linalg.norm(result.policy.theta - result.ref.theta))
        assert disps[1000.0] < 0.01
        assert disps[1000.0] < disps[1.0] < disps[0.0]
