"""Desk-scale group-relative policy optimization over ranking windows.

Full-scale training optimizes an LLM; this module verifies the same objective
numerically with a policy small enough to check by brute force: a
Plackett-Luce distribution over orderings of a 4-candidate window. The policy
scores each candidate as theta . features(window, candidate) and builds an
ordering by sequential softmax selections over the remaining candidates, so
every permutation has a tractable likelihood (24 terms for k=4).

Training follows the group-relative recipe: sample a group of orderings per
window, score each with the relative-nDCG-improvement reward (or the binary
top-1 reward), standardize rewards within the group into advantages, and
ascend the advantage-weighted likelihood-ratio surrogate minus a KL penalty
toward the frozen reference policy. Each of the k-1 nontrivial selection
steps plays the role of one token, and length normalization divides by k-1.
The ratio's denominator is the sampling-time probability held constant, so
on-policy the ratio is 1 and its gradient is the score function.

KL comes in two estimators: "exact" enumerates all k! orderings (the default;
exactly zero with zero gradient at theta = theta_ref), and "sampled" is the
standard per-sample log-ratio average over the group.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Document
from .errors import ConfigError, InvalidOrdering, NumericalError
from .metrics import RewardGroup, group_advantages, ndcg, rankr1_reward, rearank_reward
from .seeding import child_rng
from .synthetic import match_score
from .windows import Window

REWARD_MODES = ("rearank", "rankr1")
KL_MODES = ("exact", "sampled")

FeatureFn = Callable[[Window, str], np.ndarray]


@dataclass
class PLPolicy:
    """Plackett-Luce listwise policy: softmax over remaining candidates per step."""

    theta: np.ndarray
    feature_fn: FeatureFn
    feature_names: list[str]

    def features(self, window: Window) -> np.ndarray:
        """Feature matrix (k x d) for the window's presented candidates."""
        return np.stack(
            [np.asarray(self.feature_fn(window, cid), dtype=float) for cid in window.presented_ids()]
        )

    def scores(self, window: Window) -> np.ndarray:
        return self.features(window) @ self.theta

    def clone(self) -> "PLPolicy":
        return PLPolicy(self.theta.copy(), self.feature_fn, list(self.feature_names))


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 32
    beta: float = 0.01
    learning_rate: float = 1e-6  # recorded full-scale default; desk runs override upward
    epochs: int = 2
    batch_size: int = 16
    reward: str = "rearank"
    kl_mode: str = "exact"
    rng_seed: int = 0

    def __post_init__(self):
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.reward not in REWARD_MODES:
            raise ConfigError(f"reward must be one of {REWARD_MODES}")
        if self.kl_mode not in KL_MODES:
            raise ConfigError(f"kl_mode must be one of {KL_MODES}")


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _perm_indices(window: Window, ordering: Sequence[str]) -> list[int]:
    ids = window.presented_ids()
    if sorted(ordering) != sorted(ids):
        raise InvalidOrdering(
            f"ordering {ordering!r} is not a permutation of window {window.window_id}"
        )
    index = {cid: i for i, cid in enumerate(ids)}
    return [index[cid] for cid in ordering]


def _logprob_terms(scores: np.ndarray, feats: np.ndarray, perm: Sequence[int]):
    """Per-step (prob, grad-of-log-prob) for the k-1 nontrivial selections."""
    remaining = list(range(len(scores)))
    probs: list[float] = []
    grads: list[np.ndarray] = []
    for chosen in perm[:-1]:
        window_scores = scores[remaining]
        p = _softmax(window_scores)
        pos = remaining.index(chosen)
        probs.append(float(p[pos]))
        grads.append(feats[chosen] - p @ feats[remaining])
        remaining.pop(pos)
    return probs, grads


def _logprob(scores: np.ndarray, perm: Sequence[int]) -> float:
    remaining = list(range(len(scores)))
    total = 0.0
    for chosen in perm[:-1]:
        window_scores = scores[remaining]
        lse = window_scores.max() + math.log(np.exp(window_scores - window_scores.max()).sum())
        total += float(scores[chosen]) - lse
        remaining.remove(chosen)
    return total


def pl_log_prob(policy: PLPolicy, window: Window, ordering: Sequence[str]) -> float:
    """Log-likelihood of an ordering under the policy; always <= 0."""
    perm = _perm_indices(window, ordering)
    return _logprob(policy.scores(window), perm)


def pl_log_prob_grad(policy: PLPolicy, window: Window, ordering: Sequence[str]) -> tuple[float, np.ndarray]:
    perm = _perm_indices(window, ordering)
    feats = policy.features(window)
    scores = feats @ policy.theta
    probs, grads = _logprob_terms(scores, feats, perm)
    logp = sum(math.log(p) for p in probs)
    return logp, np.sum(grads, axis=0)


def _sample_perm(scores: np.ndarray, rng: random.Random) -> tuple[int, ...]:
    remaining = list(range(len(scores)))
    perm: list[int] = []
    while len(remaining) > 1:
        probs = _softmax(scores[remaining])
        x = rng.random()
        cum = 0.0
        pick = len(remaining) - 1
        for idx, p in enumerate(probs):
            cum += p
            if x < cum:
                pick = idx
                break
        perm.append(remaining.pop(pick))
    perm.append(remaining[0])
    return tuple(perm)


# ---------------------------------------------------------------------------
# Rewards and sampling
# ---------------------------------------------------------------------------


def window_reward(window: Window, ordering: Sequence[str], mode: str = "rearank") -> float:
    """Reward of an ordering: relative nDCG improvement, or binary top-1.

    The rearank mode takes nDCG_old from the window's presented order and uses
    nDCG_max = 1, which is exact because the window holds a single positive.
    """
    if mode == "rankr1":
        return rankr1_reward(ordering[0], window.gold_id, list(ordering))
    k = len(ordering)
    rels_new = [1 if cid == window.gold_id else 0 for cid in ordering]
    rels_old = [1 if cid == window.gold_id else 0 for cid in window.presented_ids()]
    return rearank_reward(ndcg(rels_old, k), ndcg(rels_new, k), 1.0)


def sample_group(policy: PLPolicy, window: Window, cfg: GrpoConfig, rng: random.Random) -> RewardGroup:
    """Sample ``group_size`` orderings, score them, and standardize advantages."""
    feats = policy.features(window)
    scores = feats @ policy.theta
    ids = window.presented_ids()
    samples: list[tuple[tuple[str, ...], float]] = []
    for _ in range(cfg.group_size):
        perm = _sample_perm(scores, rng)
        ordering = tuple(ids[i] for i in perm)
        samples.append((ordering, window_reward(window, ordering, cfg.reward)))
    advantages = group_advantages([reward for _, reward in samples])
    return RewardGroup(window_id=window.window_id, samples=samples, advantages=advantages)


# ---------------------------------------------------------------------------
# KL estimators
# ---------------------------------------------------------------------------


def kl_exact(policy: PLPolicy, ref: PLPolicy, window: Window) -> tuple[float, np.ndarray]:
    """KL(pi_theta || pi_ref) over all k! orderings, with its exact gradient.

    d/dtheta sum_perm p (log p - log ref) = sum_perm p grad_logp (diff + 1);
    the +1 keeps the gradient exact for the value as computed (the sum of
    p * grad_logp vanishes analytically over the full enumeration).
    """
    feats = policy.features(window)
    scores = feats @ policy.theta
    ref_scores = ref.scores(window)
    value = 0.0
    grad = np.zeros_like(policy.theta)
    for perm in itertools.permutations(range(len(scores))):
        probs, grads = _logprob_terms(scores, feats, perm)
        logp = sum(math.log(p) for p in probs)
        diff = logp - _logprob(ref_scores, perm)
        p = math.exp(logp)
        value += p * diff
        grad += p * (diff + 1.0) * np.sum(grads, axis=0)
    return value, grad


def kl_sampled(
    policy: PLPolicy, ref: PLPolicy, window: Window, orderings: Sequence[Sequence[str]]
) -> tuple[float, np.ndarray]:
    """Per-sample log-ratio estimator averaged over the group, as a function of theta."""
    total = 0.0
    grad = np.zeros_like(policy.theta)
    ref_scores = ref.scores(window)
    for ordering in orderings:
        perm = _perm_indices(window, ordering)
        logp, g = pl_log_prob_grad(policy, window, ordering)
        total += logp - _logprob(ref_scores, perm)
        grad += g
    n = len(orderings)
    return total / n, grad / n


# ---------------------------------------------------------------------------
# Surrogate objective
# ---------------------------------------------------------------------------


def group_step_probs(policy: PLPolicy, window: Window, group: RewardGroup) -> list[list[float]]:
    """Per-sample selection-step probabilities under ``policy`` (ratio denominators)."""
    feats = policy.features(window)
    scores = feats @ policy.theta
    out = []
    for ordering, _ in group.samples:
        perm = _perm_indices(window, ordering)
        probs, _ = _logprob_terms(scores, feats, perm)
        out.append(probs)
    return out


def surrogate(
    policy: PLPolicy,
    ref: PLPolicy,
    window: Window,
    group: RewardGroup,
    cfg: GrpoConfig,
    denoms: list[list[float]],
) -> float:
    """Value of the maximized objective for one window, given a frozen group.

    (1/|G|) sum_i adv_i * (1/(k-1)) sum_t pi_theta(step)/denom - beta * KL.
    ``denoms`` holds the sampling-time step probabilities.
    """
    feats = policy.features(window)
    scores = feats @ policy.theta
    k = len(window.candidate_ids)
    pg = 0.0
    for (ordering, _), adv, denom in zip(group.samples, group.advantages, denoms):
        perm = _perm_indices(window, ordering)
        probs, _ = _logprob_terms(scores, feats, perm)
        pg += adv * sum(p / d for p, d in zip(probs, denom)) / (k - 1)
    pg /= len(group.samples)
    kl, _ = _kl(policy, ref, window, group, cfg)
    return pg - cfg.beta * kl


def _kl(policy, ref, window, group, cfg) -> tuple[float, np.ndarray]:
    if cfg.kl_mode == "exact":
        return kl_exact(policy, ref, window)
    return kl_sampled(policy, ref, window, [o for o, _ in group.samples])


def surrogate_grad(
    policy: PLPolicy,
    ref: PLPolicy,
    window: Window,
    group: RewardGroup,
    cfg: GrpoConfig,
    denoms: list[list[float]] | None = None,
) -> tuple[float, np.ndarray, float]:
    """(value, gradient, kl) of the surrogate for one window.

    With ``denoms`` omitted the call is on-policy: denominators equal the
    current step probabilities, every ratio is 1, and the policy-gradient part
    reduces to the advantage-weighted score function.
    """
    feats = policy.features(window)
    scores = feats @ policy.theta
    k = len(window.candidate_ids)
    if denoms is None:
        denoms = group_step_probs(policy, window, group)
    value = 0.0
    grad = np.zeros_like(policy.theta)
    for (ordering, _), adv, denom in zip(group.samples, group.advantages, denoms):
        perm = _perm_indices(window, ordering)
        probs, grads = _logprob_terms(scores, feats, perm)
        ratios = [p / d for p, d in zip(probs, denom)]
        value += adv * sum(ratios) / (k - 1)
        step_grad = np.sum([r * g for r, g in zip(ratios, grads)], axis=0)
        grad += adv * step_grad / (k - 1)
    n = len(group.samples)
    value /= n
    grad /= n
    kl, kl_grad = _kl(policy, ref, window, group, cfg)
    return value - cfg.beta * kl, grad - cfg.beta * kl_grad, kl


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class StepStats:
    mean_reward: float
    kl: float
    grad_norm: float


@dataclass
class CurvePoint:
    step: int
    mean_reward: float
    kl: float
    grad_norm: float
    eval_ndcg4: float


@dataclass
class TrainResult:
    policy: PLPolicy
    ref: PLPolicy
    curve: list[CurvePoint] = field(default_factory=list)


def grpo_step(
    policy: PLPolicy,
    ref: PLPolicy,
    batch: Sequence[Window],
    cfg: GrpoConfig,
    seed_ctx: str = "",
) -> tuple[PLPolicy, StepStats]:
    """One gradient-ascent step over a mini-batch of windows.

    Groups are sampled with per-window child seeds so the result does not
    depend on iteration order or parallelism. Raises NumericalError naming the
    offending window if any per-window gradient is non-finite.
    """
    if not batch:
        raise ConfigError("grpo_step requires a non-empty batch")
    grad_total = np.zeros_like(policy.theta)
    rewards: list[float] = []
    kls: list[float] = []
    for window in batch:
        rng = child_rng(cfg.rng_seed, f"group:{seed_ctx}:{window.window_id}")
        group = sample_group(policy, window, cfg, rng)
        _, grad, kl = surrogate_grad(policy, ref, window, group, cfg)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient", window_id=window.window_id)
        grad_total += grad
        kls.append(kl)
        rewards.extend(group.rewards)
    grad_mean = grad_total / len(batch)
    new_policy = PLPolicy(policy.theta + cfg.learning_rate * grad_mean, policy.feature_fn, policy.feature_names)
    stats = StepStats(
        mean_reward=float(np.mean(rewards)),
        kl=float(np.mean(kls)),
        grad_norm=float(np.linalg.norm(grad_mean)),
    )
    return new_policy, stats


def greedy_ndcg4(policy: PLPolicy, windows: Sequence[Window]) -> float:
    """Mean nDCG@4 when each window is ranked greedily by policy score."""
    total = 0.0
    for window in windows:
        scores = policy.scores(window)
        order = np.argsort(-scores, kind="stable")
        ids = window.presented_ids()
        rels = [1 if ids[i] == window.gold_id else 0 for i in order]
        total += ndcg(rels, len(ids))
    return total / len(windows)


def evaluate_mean_reward(
    policy: PLPolicy,
    windows: Sequence[Window],
    cfg: GrpoConfig,
    seed_tag: str,
    samples_per_window: int = 8,
) -> float:
    """Monte-Carlo estimate of the expected reward under the policy."""
    total = 0.0
    count = 0
    for window in windows:
        feats = policy.features(window)
        scores = feats @ policy.theta
        ids = window.presented_ids()
        rng = child_rng(cfg.rng_seed, f"eval:{seed_tag}:{window.window_id}")
        for _ in range(samples_per_window):
            perm = _sample_perm(scores, rng)
            ordering = tuple(ids[i] for i in perm)
            total += window_reward(window, ordering, cfg.reward)
            count += 1
    return total / count


def train(policy: PLPolicy, windows: Sequence[Window], cfg: GrpoConfig) -> TrainResult:
    """Run the full training loop: shuffled mini-batches for cfg.epochs epochs.

    The reference policy is frozen at initialization. Deterministic given
    cfg.rng_seed.
    """
    if not windows:
        raise ConfigError("train requires at least one window")
    ref = policy.clone()
    curve: list[CurvePoint] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = list(range(len(windows)))
        child_rng(cfg.rng_seed, f"shuffle:{epoch}").shuffle(order)
        for lo in range(0, len(order), cfg.batch_size):
            batch = [windows[i] for i in order[lo : lo + cfg.batch_size]]
            policy, stats = grpo_step(policy, ref, batch, cfg, seed_ctx=f"e{epoch}")
            step += 1
            curve.append(
                CurvePoint(
                    step=step,
                    mean_reward=stats.mean_reward,
                    kl=stats.kl,
                    grad_norm=stats.grad_norm,
                    eval_ndcg4=greedy_ndcg4(policy, windows),
                )
            )
    return TrainResult(policy=policy, ref=ref, curve=curve)


# ---------------------------------------------------------------------------
# Feature functions and persistence
# ---------------------------------------------------------------------------


def match_features(corpus: Mapping[str, Document]) -> tuple[FeatureFn, list[str]]:
    """Informative features: the candidate's required-skill coverage plus a bias."""
    cache: dict[tuple[str, str], float] = {}

    def fn(window: Window, cid: str) -> np.ndarray:
        key = (window.job_id, cid)
        if key not in cache:
            cache[key] = match_score(corpus[window.job_id], corpus[cid])
        return np.array([cache[key], 1.0])

    return fn, ["skill_overlap", "bias"]


def noise_features(seed: int, dim: int = 2) -> tuple[FeatureFn, list[str]]:
    """Pure-noise features, independent of the gold label; the null task."""

    def fn(window: Window, cid: str) -> np.ndarray:
        rng = child_rng(seed, f"feat:{window.window_id}:{cid}")
        return np.array([rng.gauss(0.0, 1.0) for _ in range(dim)])

    return fn, [f"noise_{i}" for i in range(dim)]


def make_policy(feature_fn: FeatureFn, feature_names: Sequence[str]) -> PLPolicy:
    return PLPolicy(np.zeros(len(feature_names)), feature_fn, list(feature_names))


def save_policy(policy: PLPolicy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"theta": [float(x) for x in policy.theta], "feature_names": policy.feature_names},
            fh,
        )
        fh.write("\n")


def write_curve(curve: Sequence[CurvePoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_reward", "kl", "grad_norm", "eval_ndcg4"])
        for point in curve:
            writer.writerow(
                [point.step, point.mean_reward, point.kl, point.grad_norm, point.eval_ndcg4]
            )
