"""Multi-pass sliding-window re-ranking over a top-N retrieval pool.

One pass walks a window of size k from the bottom of the list to the top with
stride s (the final window is clamped to start at rank 1), asking the ranker
to re-order each window in place; the whole pass repeats for t iterations so
strong candidates can travel more than one window per run. The window
schedule is a pure function of (N, k, s) and independent of ranker behavior.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import fmean
from typing import Mapping, Sequence

from .core import Document, RankedPool
from .errors import ConfigError
from .metrics import ndcg, recall_at_k
from .ranker import Ranker, RankRequest, SamplingParams


@dataclass(frozen=True)
class EngineConfig:
    window_size: int = 4
    stride: int = 2
    iterations: int = 2
    pool_size: int = 20

    def __post_init__(self):
        if not 1 <= self.stride < self.window_size <= self.pool_size:
            raise ConfigError(
                f"need 1 <= stride < window_size <= pool_size, got "
                f"s={self.stride}, k={self.window_size}, N={self.pool_size}"
            )
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")

    def as_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "stride": self.stride,
            "iterations": self.iterations,
            "pool_size": self.pool_size,
        }


def window_starts(pool_size: int, window_size: int, stride: int) -> list[int]:
    """1-based window start ranks for one pass, bottom-up.

    Starts at N-k+1 and moves up by the stride; the last window is clamped to
    rank 1 (it may overlap its predecessor by more than k-s).
    """
    starts = []
    start = pool_size - window_size + 1
    while start >= 1:
        starts.append(start)
        if start == 1:
            break
        start = max(1, start - stride)
    return starts


def comparisons_per_pass(pool_size: int, window_size: int, stride: int) -> int:
    """Analytic number of ranker calls per pass: 1 + ceil((N - k) / s)."""
    return 1 + math.ceil((pool_size - window_size) / stride)


@dataclass
class WindowCall:
    iteration: int
    start: int
    before: list[str]
    after: list[str]
    raw_text: str
    repaired: bool
    degraded: bool


@dataclass
class RerankTrace:
    job_id: str
    initial: tuple[str, ...]
    final: tuple[str, ...]
    calls: list[WindowCall] = field(default_factory=list)
    windows_per_pass: int = 0

    @property
    def degraded_calls(self) -> int:
        return sum(1 for call in self.calls if call.degraded)


def _is_permutation(ordering: Sequence[int], k: int) -> bool:
    return len(ordering) == k and set(ordering) == set(range(1, k + 1))


def rerank_pool(
    pool: RankedPool,
    ranker: Ranker,
    cfg: EngineConfig,
    corpus: Mapping[str, Document],
    sampling: SamplingParams | None = None,
) -> RerankTrace:
    """Run t sliding-window passes over one pool and trace every ranker call.

    The final ordering is always a permutation of the initial one: a ranker
    response that is somehow not a full permutation of 1..k is discarded in
    favor of the identity window and flagged degraded.
    """
    if len(pool.candidates) != cfg.pool_size:
        raise ConfigError(
            f"pool {pool.job_id!r} has {len(pool.candidates)} candidates, "
            f"engine configured for {cfg.pool_size}"
        )
    try:
        job_doc = corpus[pool.job_id]
    except KeyError:
        raise ConfigError(f"job {pool.job_id!r} missing from corpus") from None

    sampling = sampling if sampling is not None else SamplingParams()
    k = cfg.window_size
    starts = window_starts(cfg.pool_size, k, cfg.stride)
    order = list(pool.candidates)
    calls: list[WindowCall] = []

    for iteration in range(1, cfg.iterations + 1):
        for start in starts:
            lo = start - 1
            window_ids = order[lo : lo + k]
            req = RankRequest(
                job=job_doc,
                candidates=tuple(
                    (slot, corpus[cid]) for slot, cid in enumerate(window_ids, start=1)
                ),
                request_id=f"{pool.job_id}:it{iteration}:s{start}",
                sampling=sampling,
            )
            resp = ranker(req)
            ordering = resp.ordering
            degraded = resp.degraded
            if not _is_permutation(ordering, k):
                ordering = list(range(1, k + 1))
                degraded = True
            new_ids = [window_ids[slot - 1] for slot in ordering]
            order[lo : lo + k] = new_ids
            calls.append(
                WindowCall(
                    iteration=iteration,
                    start=start,
                    before=window_ids,
                    after=new_ids,
                    raw_text=resp.raw_text,
                    repaired=resp.repaired,
                    degraded=degraded,
                )
            )

    return RerankTrace(
        job_id=pool.job_id,
        initial=pool.candidates,
        final=tuple(order),
        calls=calls,
        windows_per_pass=len(starts),
    )


def evaluate_run(
    pools: Sequence[RankedPool],
    ranker: Ranker,
    cfg: EngineConfig,
    corpus: Mapping[str, Document],
    metric_k: int = 10,
    max_workers: int = 1,
    collect_traces: bool = False,
):
    """Re-rank every pool and report nDCG@k / Recall@k before and after.

    Pools without a single accepted candidate cannot be scored and are
    excluded (their job ids are reported). Jobs run in parallel up to
    ``max_workers``; rows are merged deterministically by job id.
    """
    scored = [p for p in pools if p.accepted_ids]
    excluded = [p.job_id for p in pools if not p.accepted_ids]

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
            traces = list(pool_exec.map(lambda p: rerank_pool(p, ranker, cfg, corpus), scored))
    else:
        traces = [rerank_pool(p, ranker, cfg, corpus) for p in scored]

    per_job = []
    for pool, trace in sorted(zip(scored, traces), key=lambda pair: pair[0].job_id):
        rels_before = pool.relevance()
        rels_after = pool.relevance(trace.final)
        per_job.append(
            {
                "job_id": pool.job_id,
                f"ndcg{metric_k}_before": ndcg(rels_before, metric_k),
                f"ndcg{metric_k}_after": ndcg(rels_after, metric_k),
                f"recall{metric_k}_before": recall_at_k(rels_before, metric_k),
                f"recall{metric_k}_after": recall_at_k(rels_after, metric_k),
                "degraded_calls": trace.degraded_calls,
            }
        )

    def macro(key: str) -> float:
        return fmean(row[key] for row in per_job) if per_job else 0.0

    nb, na = macro(f"ndcg{metric_k}_before"), macro(f"ndcg{metric_k}_after")
    rb, ra = macro(f"recall{metric_k}_before"), macro(f"recall{metric_k}_after")
    report = {
        "config": cfg.as_dict(),
        "per_job": per_job,
        "macro": {
            f"ndcg{metric_k}_before": nb,
            f"ndcg{metric_k}_after": na,
            f"recall{metric_k}_before": rb,
            f"recall{metric_k}_after": ra,
            "average_before": (nb + rb) / 2,
            "average_after": (na + ra) / 2,
            "jobs_evaluated": len(per_job),
            "jobs_excluded": len(excluded),
            "degraded_calls": sum(row["degraded_calls"] for row in per_job),
        },
        "excluded": sorted(excluded),
    }
    if collect_traces:
        return report, traces
    return report


def ablate(
    pools: Sequence[RankedPool],
    ranker: Ranker,
    grid: Sequence[tuple[int, int, int]],
    corpus: Mapping[str, Document],
    metric_k: int = 10,
    pool_size: int = 20,
    max_workers: int = 1,
):
    """Evaluate a (k, s, t) grid; invalid points are rejected, the rest still run.

    Returns (rows, rejected) where each row carries the setting, macro
    metrics, and the analytic comparisons-per-pass count.
    """
    rows, rejected = [], []
    for k, s, t in grid:
        try:
            cfg = EngineConfig(window_size=k, stride=s, iterations=t, pool_size=pool_size)
        except ConfigError as exc:
            rejected.append({"setting": {"k": k, "s": s, "t": t}, "error": str(exc)})
            continue
        report = evaluate_run(pools, ranker, cfg, corpus, metric_k=metric_k, max_workers=max_workers)
        rows.append(
            {
                "setting": {"k": k, "s": s, "t": t},
                f"ndcg{metric_k}": report["macro"][f"ndcg{metric_k}_after"],
                f"recall{metric_k}": report["macro"][f"recall{metric_k}_after"],
                "comparisons_per_iter": comparisons_per_pass(pool_size, k, s),
            }
        )
    return rows, rejected
