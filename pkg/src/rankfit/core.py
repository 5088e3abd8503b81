"""Domain types and line-delimited JSON persistence.

Documents (resumes and job posts), binary interaction labels, and retrieval
pools are all stored as one JSON record per line:

    corpus.jsonl  {"id": str, "kind": "resume"|"job", "fields": [[name, text], ...]}
    labels.jsonl  {"job_id": str, "resume_id": str, "y": 0|1}
    pools.jsonl   {"job_id": str, "candidates": [str, ...]}

Corpora and pools are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DuplicateId,
    EmptyPool,
    MalformedRecord,
    UnknownDocument,
)

KIND_RESUME = "resume"
KIND_JOB = "job"
_KINDS = (KIND_RESUME, KIND_JOB)

ACCEPTED = "accepted"
REJECTED = "rejected"
UNLABELED = "unlabeled"

# Hiragana/katakana, CJK ideograph blocks (incl. extension A and compat).
_CJK = re.compile(r"[぀-ヿ㐀-䶿一-鿿豈-﫿]")


def estimate_tokens(text: str) -> int:
    """Deterministic token estimate: whitespace-split words plus one per CJK codepoint.

    Informational only; real tokenizers will disagree on exact counts.
    """
    cjk = len(_CJK.findall(text))
    words = len(_CJK.sub(" ", text).split())
    return words + cjk


@dataclass(frozen=True)
class Document:
    """A resume or job post: an opaque id plus an ordered list of named text fields.

    Field order is preserved because prompt rendering is order-sensitive.
    """

    id: str
    kind: str
    fields: tuple[tuple[str, str], ...]

    @property
    def token_estimate(self) -> int:
        return estimate_tokens(render_document(self))


@dataclass(frozen=True)
class Label:
    job_id: str
    resume_id: str
    y: int


@dataclass(frozen=True)
class RankedPool:
    """One job's retrieved top-N candidate ids in rank order, with labels.

    ``labels`` maps every candidate id to accepted/rejected/unlabeled;
    unlabeled candidates are treated as negatives downstream.
    """

    job_id: str
    candidates: tuple[str, ...]
    labels: Mapping[str, str] = field(default_factory=dict)

    def relevance(self, ids: Sequence[str] | None = None) -> list[int]:
        """Binary relevance vector for ``ids`` (default: retrieval order)."""
        if ids is None:
            ids = self.candidates
        return [1 if self.labels.get(cid) == ACCEPTED else 0 for cid in ids]

    @property
    def accepted_ids(self) -> frozenset[str]:
        return frozenset(cid for cid, lab in self.labels.items() if lab == ACCEPTED)


def render_document(doc: Document) -> str:
    """Render a document as "## field\\nvalue" blocks separated by one blank line.

    Deterministic and order-preserving; a document with zero fields renders
    to the empty string.
    """
    return "\n\n".join(f"## {name}\n{text}" for name, text in doc.fields)


def accepted_by_job(labels: Iterable[Label]) -> dict[str, frozenset[str]]:
    """Index labels into {job_id: accepted resume ids}, for the reference rankers."""
    acc: dict[str, set[str]] = {}
    for lab in labels:
        if lab.y == 1:
            acc.setdefault(lab.job_id, set()).add(lab.resume_id)
    return {job: frozenset(ids) for job, ids in acc.items()}


# ---------------------------------------------------------------------------
# jsonl plumbing
# ---------------------------------------------------------------------------


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(rec, dict):
                raise MalformedRecord("record is not an object", line=lineno)
            yield lineno, rec


def write_jsonl(records: Iterable[Mapping], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


def _parse_document(rec: dict, lineno: int) -> Document:
    doc_id = rec.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        raise MalformedRecord("missing or empty 'id'", line=lineno)
    kind = rec.get("kind")
    if kind not in _KINDS:
        raise MalformedRecord(f"'kind' must be one of {_KINDS}, got {kind!r}", line=lineno)
    raw_fields = rec.get("fields")
    if not isinstance(raw_fields, list):
        raise MalformedRecord("missing 'fields' list", line=lineno)
    fields = []
    for item in raw_fields:
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 2
            or not all(isinstance(part, str) for part in item)
        ):
            raise MalformedRecord(
                "each field must be a [name, text] pair of strings", line=lineno
            )
        fields.append((item[0], item[1]))
    return Document(id=doc_id, kind=kind, fields=tuple(fields))


def load_corpus(path: str | Path, kind: str | None = None) -> dict[str, Document]:
    """Load documents keyed by id, optionally keeping only one kind.

    Raises MalformedRecord (with line number) on schema violations and
    DuplicateId when an id repeats within the file.
    """
    docs: dict[str, Document] = {}
    for lineno, rec in iter_jsonl(path):
        doc = _parse_document(rec, lineno)
        if doc.id in docs:
            raise DuplicateId(f"duplicate document id {doc.id!r} (line {lineno})")
        docs[doc.id] = doc
    if kind is not None:
        return {i: d for i, d in docs.items() if d.kind == kind}
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    write_jsonl(
        (
            {"id": d.id, "kind": d.kind, "fields": [[n, t] for n, t in d.fields]}
            for d in docs
        ),
        path,
    )


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def load_labels(path: str | Path) -> list[Label]:
    labels: list[Label] = []
    seen: set[tuple[str, str]] = set()
    for lineno, rec in iter_jsonl(path):
        job_id, resume_id, y = rec.get("job_id"), rec.get("resume_id"), rec.get("y")
        if not isinstance(job_id, str) or not isinstance(resume_id, str):
            raise MalformedRecord("label needs string 'job_id' and 'resume_id'", line=lineno)
        if y not in (0, 1):
            raise MalformedRecord(f"'y' must be 0 or 1, got {y!r}", line=lineno)
        key = (job_id, resume_id)
        if key in seen:
            raise DuplicateId(f"duplicate label for pair {key} (line {lineno})")
        seen.add(key)
        labels.append(Label(job_id=job_id, resume_id=resume_id, y=y))
    return labels


def write_labels(labels: Iterable[Label], path: str | Path) -> None:
    write_jsonl(
        ({"job_id": l.job_id, "resume_id": l.resume_id, "y": l.y} for l in labels),
        path,
    )


# ---------------------------------------------------------------------------
# pools
# ---------------------------------------------------------------------------


def load_pools(
    path: str | Path,
    labels: Iterable[Label],
    resume_ids: Iterable[str] | None = None,
) -> list[RankedPool]:
    """Load retrieval pools and join interaction labels onto them.

    Candidates absent from the label table are marked unlabeled. When
    ``resume_ids`` is given, every candidate must resolve against it
    (UnknownDocument otherwise). A pool with no candidates raises EmptyPool.
    """
    by_pair = {(l.job_id, l.resume_id): l.y for l in labels}
    known = frozenset(resume_ids) if resume_ids is not None else None
    pools: list[RankedPool] = []
    for lineno, rec in iter_jsonl(path):
        job_id = rec.get("job_id")
        candidates = rec.get("candidates")
        if not isinstance(job_id, str) or not isinstance(candidates, list):
            raise MalformedRecord("pool needs 'job_id' and 'candidates'", line=lineno)
        if not candidates:
            raise EmptyPool(f"pool for job {job_id!r} has no candidates (line {lineno})")
        if len(set(candidates)) != len(candidates):
            raise MalformedRecord(
                f"pool for job {job_id!r} contains duplicate candidates", line=lineno
            )
        if known is not None:
            for cid in candidates:
                if cid not in known:
                    raise UnknownDocument(
                        f"pool for job {job_id!r} references unknown resume {cid!r}"
                    )
        pool_labels = {}
        for cid in candidates:
            y = by_pair.get((job_id, cid))
            if y == 1:
                pool_labels[cid] = ACCEPTED
            elif y == 0:
                pool_labels[cid] = REJECTED
            else:
                pool_labels[cid] = UNLABELED
        pools.append(
            RankedPool(job_id=job_id, candidates=tuple(candidates), labels=pool_labels)
        )
    return pools


def write_pools(pools: Iterable[RankedPool], path: str | Path) -> None:
    write_jsonl(
        ({"job_id": p.job_id, "candidates": list(p.candidates)} for p in pools),
        path,
    )
