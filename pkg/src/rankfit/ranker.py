"""Ranker surface: listwise prompts, answer parsing and repair, rankers.

A ranker is any callable taking a RankRequest and returning a RankResponse
whose ordering is a full permutation of the request's slot indices. Four
implementations ship here:

* LlmRanker        -- chat-completions HTTP client with retries; degrades to
                      the identity ordering rather than losing candidates.
* OracleRanker     -- accepted candidates first, stable otherwise.
* NoisyOracleRanker-- oracle, but demotes the top positive with probability
                      p_flip; seeded per request id so concurrency does not
                      perturb determinism.
* IdentityRanker   -- returns slots unchanged (the no-op baseline).

The answer protocol is a bracketed chain inside answer tags, e.g.
``<answer> [2] > [3] > [1] > [4] </answer>``. Parsing takes the LAST answer
block (reasoning may quote the format), then repairs imperfect chains instead
of rejecting them: out-of-range slots are dropped, duplicates keep their first
occurrence, and missing slots are appended in ascending order.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import requests

from .core import Document, render_document
from .errors import ConfigError, MalformedAnswer
from .seeding import child_rng

log = logging.getLogger(__name__)

SYSTEM_TEMPLATE = (
    "You are an expert technical recruiter that can rank resumes based on their "
    "matching degree to the job description. You first analyze each resume "
    "individually, then compare them systematically, and finally provide the "
    "ranking. The most relevant resumes should be listed first. The output format "
    "should be <answer> {slots} </answer>, e.g., <answer> [X] > [Y] > [Z] > [T] </answer>."
)

DEFAULT_INSTRUCTIONS = """\
Carefully verify that each candidate meets ALL of the following mandatory criteria when explicitly stated in the job description:
- Education: Required degree level and relevant major.
- Certifications & Licenses: Mandatory professional qualifications (e.g., physician's license, CPA).
- Technical Skills: Required tools, technologies, and hands-on expertise.
- Age Restrictions: Explicit age limits where legally applicable.
- Legal & Identity Requirements: Work authorization, residency, or practice-license constraints.
- Physical Fitness: Explicit physical or medical requirements.
- Work Conditions: Shift patterns, on-site presence, travel, or relocation requirements.
Critical Rule: The more explicitly stated mandatory criteria a candidate fails to meet, the less matching they are to the job."""

USER_TEMPLATE = """\
{instructions}

Resumes:
{resumes_section}

Please rank these resumes according to their matching degree to the JOB DESCRIPTION: [{job_description}].

Follow these steps exactly:
1. First, think to summarize the job description and analyze EACH resume briefly: Evaluate how well it matches the job description and mandatory criteria.
2. Then, think to COMPARE the resumes and determine which candidates are better fits and why.
3. Finally, within <answer> tags, provide ONLY the final ranking of the resumes from best to worst fit using their numerical identifiers in the format: [X] > [Y] > [Z] > [T]."""

JUDGE_QUESTION = (
    "Is this window's accepted candidate clearly the best fit? "
    "Answer with <answer> yes </answer> or <answer> no </answer>."
)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    top_k: int | None = None
    max_tokens: int = 4096


# Sampling used when probing window difficulty (multiple stochastic trials).
ANNOTATION_SAMPLING = SamplingParams(temperature=0.6, top_p=0.95, top_k=20)


@dataclass(frozen=True)
class RankRequest:
    """One listwise ranking call: a job plus slot-numbered candidate documents."""

    job: Document
    candidates: tuple[tuple[int, Document], ...]
    request_id: str = ""
    instructions: str | None = None
    hint: str | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        slots = [slot for slot, _ in self.candidates]
        if len(slots) < 2 or slots != list(range(1, len(slots) + 1)):
            raise ConfigError(f"candidate slots must be 1..k with k >= 2, got {slots}")

    @property
    def k(self) -> int:
        return len(self.candidates)


@dataclass
class RankResponse:
    raw_text: str
    ordering: list[int]
    repaired: bool = False
    latency_ms: float = 0.0
    retry_count: int = 0
    degraded: bool = False


Ranker = Callable[[RankRequest], RankResponse]


def build_prompt(req: RankRequest) -> tuple[str, str]:
    """Render the (system, user) prompt pair for a ranking request.

    Deterministic: the same request always yields identical strings. The
    request's hint, when present, is appended to the instructions block.
    """
    slots_format = " > ".join("[]" for _ in range(req.k))
    system = SYSTEM_TEMPLATE.format(slots=slots_format)
    instructions = req.instructions if req.instructions is not None else DEFAULT_INSTRUCTIONS
    if req.hint:
        instructions = f"{instructions}\nHint: {req.hint}"
    resumes_section = "\n\n".join(
        f"Resume [{slot}]: {render_document(doc)}" for slot, doc in req.candidates
    )
    user = USER_TEMPLATE.format(
        instructions=instructions,
        resumes_section=resumes_section,
        job_description=render_document(req.job),
    )
    return system, user


_ANSWER_BLOCK = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)
_SLOT = re.compile(r"\[\s*(\d+)\s*\]")


def format_answer(ordering: list[int]) -> str:
    """The canonical answer string for an ordering, round-trippable by parse_answer."""
    chain = " > ".join(f"[{slot}]" for slot in ordering)
    return f"<answer> {chain} </answer>"


def parse_answer(raw: str, k: int) -> tuple[list[int], bool]:
    """Extract an ordering over 1..k from the LAST answer block of ``raw``.

    Returns (ordering, repaired). ``repaired`` is True when any repair rule
    fired: out-of-range slot dropped, duplicate dropped, or missing slots
    appended in ascending order. Raises MalformedAnswer when there is no
    answer block or the block contains no in-range slot at all.
    """
    blocks = _ANSWER_BLOCK.findall(raw or "")
    if not blocks:
        raise MalformedAnswer("no <answer> block found")
    found = [int(m) for m in _SLOT.findall(blocks[-1])]
    if not found:
        raise MalformedAnswer("answer block contains no slot identifiers")
    repaired = False
    seen: set[int] = set()
    ordering: list[int] = []
    for slot in found:
        if not 1 <= slot <= k or slot in seen:
            repaired = True
            continue
        seen.add(slot)
        ordering.append(slot)
    if not ordering:
        raise MalformedAnswer("answer block contains no in-range slot identifiers")
    if len(ordering) < k:
        repaired = True
        ordering.extend(slot for slot in range(1, k + 1) if slot not in seen)
    return ordering, repaired


def parse_judge_answer(raw: str) -> bool:
    """Parse a yes/no verdict from the last answer block."""
    blocks = _ANSWER_BLOCK.findall(raw or "")
    if not blocks:
        raise MalformedAnswer("no <answer> block found")
    verdict = blocks[-1].strip().lower()
    if verdict not in ("yes", "no"):
        raise MalformedAnswer(f"judge answer must be yes or no, got {verdict!r}")
    return verdict == "yes"


def build_judge_prompt(
    job: Document, candidates: tuple[tuple[int, Document], ...], gold_slot: int
) -> tuple[str, str]:
    """Prompt asking whether the accepted candidate is clearly the best fit."""
    system = (
        "You are an expert technical recruiter assessing the quality of a labeled "
        "training example. Answer strictly with <answer> yes </answer> or <answer> no </answer>."
    )
    resumes_section = "\n\n".join(
        f"Resume [{slot}]: {render_document(doc)}" for slot, doc in candidates
    )
    user = (
        f"JOB DESCRIPTION: [{render_document(job)}]\n\n"
        f"Resumes:\n{resumes_section}\n\n"
        f"The accepted candidate is Resume [{gold_slot}]. {JUDGE_QUESTION}"
    )
    return system, user


# ---------------------------------------------------------------------------
# Reference rankers
# ---------------------------------------------------------------------------


class IdentityRanker:
    """Returns candidates in their presented order."""

    def __call__(self, req: RankRequest) -> RankResponse:
        ordering = list(range(1, req.k + 1))
        return RankResponse(raw_text=format_answer(ordering), ordering=ordering)


class OracleRanker:
    """Accepted candidates first, stable within each class by slot order."""

    def __init__(self, accepted: Mapping[str, frozenset[str]]):
        self._accepted = accepted

    def _oracle_ordering(self, req: RankRequest) -> tuple[list[int], bool]:
        acc = self._accepted.get(req.job.id, frozenset())
        positives = [slot for slot, doc in req.candidates if doc.id in acc]
        negatives = [slot for slot, doc in req.candidates if doc.id not in acc]
        return positives + negatives, bool(positives)

    def __call__(self, req: RankRequest) -> RankResponse:
        ordering, _ = self._oracle_ordering(req)
        return RankResponse(raw_text=format_answer(ordering), ordering=ordering)


class NoisyOracleRanker(OracleRanker):
    """Oracle whose top positive is demoted with probability ``p_flip``.

    When the flip fires, the leading positive swaps places with a uniformly
    chosen other position, so at p_flip=1 the gold is never ranked first.
    Each request draws from a child generator seeded by (seed, request_id).
    """

    def __init__(self, accepted: Mapping[str, frozenset[str]], p_flip: float, seed: int = 0):
        super().__init__(accepted)
        if not 0.0 <= p_flip <= 1.0:
            raise ConfigError(f"p_flip must be in [0, 1], got {p_flip}")
        self._p_flip = p_flip
        self._seed = seed

    def __call__(self, req: RankRequest) -> RankResponse:
        ordering, has_positive = self._oracle_ordering(req)
        rng = child_rng(self._seed, req.request_id)
        if has_positive and self._p_flip > 0 and rng.random() < self._p_flip:
            j = rng.randrange(1, len(ordering))
            ordering[0], ordering[j] = ordering[j], ordering[0]
        return RankResponse(raw_text=format_answer(ordering), ordering=ordering)


# ---------------------------------------------------------------------------
# HTTP transport
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointConfig:
    """Chat-completions endpoint settings; the API key is read from the environment."""

    base_url: str
    model: str
    api_key_env: str | None = None
    max_retries: int = 3
    timeout_s: float = 60.0
    max_concurrency: int = 4
    retry_backoff_s: float = 0.5


class TransportFailure(Exception):
    """Internal: one chat-completion attempt failed in a retryable way."""


def _requests_post(url, json=None, headers=None, timeout=None):
    return requests.post(url, json=json, headers=headers, timeout=timeout)


class ChatCompletionsClient:
    """Single-attempt POST /v1/chat/completions caller with a concurrency cap.

    Authentication problems raise ConfigError (fatal); any other failure
    raises TransportFailure so callers can drive their own retry loops.
    """

    def __init__(self, cfg: EndpointConfig, post=None):
        self.cfg = cfg
        self._post = post or _requests_post
        self._gate = threading.BoundedSemaphore(cfg.max_concurrency)
        self._api_key = None
        if cfg.api_key_env:
            self._api_key = os.environ.get(cfg.api_key_env)
            if not self._api_key:
                raise ConfigError(
                    f"API key environment variable {cfg.api_key_env!r} is not set"
                )

    def complete_once(self, system: str, user: str, sampling: SamplingParams) -> str:
        payload = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = self.cfg.base_url.rstrip("/") + "/v1/chat/completions"
        try:
            with self._gate:
                resp = self._post(url, json=payload, headers=headers, timeout=self.cfg.timeout_s)
        except requests.RequestException as exc:
            raise TransportFailure(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise ConfigError(f"endpoint authentication failed (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            raise TransportFailure(f"HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportFailure(f"malformed response body: {exc}") from exc

    def backoff(self, attempt: int) -> None:
        if attempt and self.cfg.retry_backoff_s:
            time.sleep(self.cfg.retry_backoff_s * 2 ** (attempt - 1))


class LlmRanker:
    """Ranker backed by a chat-completions endpoint.

    Transport errors and malformed answers are retried up to ``max_retries``
    attempts; a request that still fails returns the identity ordering flagged
    degraded (re-ranking must never lose candidates). Only authentication
    problems are fatal.
    """

    def __init__(self, cfg: EndpointConfig, post=None):
        self._client = ChatCompletionsClient(cfg, post)
        self._cfg = cfg

    def __call__(self, req: RankRequest) -> RankResponse:
        system, user = build_prompt(req)
        started = time.perf_counter()
        last_error: Exception | None = None
        for attempt in range(self._cfg.max_retries):
            self._client.backoff(attempt)
            try:
                content = self._client.complete_once(system, user, req.sampling)
                ordering, repaired = parse_answer(content, req.k)
            except (TransportFailure, MalformedAnswer) as exc:
                last_error = exc
                continue
            return RankResponse(
                raw_text=content,
                ordering=ordering,
                repaired=repaired,
                latency_ms=(time.perf_counter() - started) * 1000.0,
                retry_count=attempt,
            )
        log.warning(
            "ranker degraded to identity for request %r after %d attempts: %s",
            req.request_id,
            self._cfg.max_retries,
            last_error,
        )
        return RankResponse(
            raw_text="",
            ordering=list(range(1, req.k + 1)),
            repaired=True,
            latency_ms=(time.perf_counter() - started) * 1000.0,
            retry_count=self._cfg.max_retries - 1,
            degraded=True,
        )
