"""Two-stage candidate filtering: similarity ranking to a top-10 shortlist,
then human (or automatic top-1 fallback) selection of the single best
meaning-preserving adversary.

Annotations live in an append-only JSON-lines journal reduced with
latest-wins semantics, so concurrent annotators and crash recovery are safe.
"""

from __future__ import annotations

import datetime as dt
import json
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Dataset, Example
from .errors import CurationError
from .perturb import PerturbationKind, PerturbedCandidate

SHORTLIST_SIZE = 10

REJECT_ALL = "reject"


class EmbedClient(Protocol):
    def embed(self, texts: list[str]) -> list[list[float]]: ...


@dataclass(frozen=True)
class CandidateSet:
    """An example's shortlist for one strategy, ranked by similarity."""

    id: str
    original: Example
    kind: PerturbationKind
    ranked: tuple[PerturbedCandidate, ...]

    def __post_init__(self):
        if len(self.ranked) > SHORTLIST_SIZE:
            raise CurationError(f"candidate set {self.id}: more than {SHORTLIST_SIZE} ranked")


def candidate_set_id(example_id: str, kind: PerturbationKind) -> str:
    return f"{example_id}--{kind.value}"


def rank_candidates(
    original: Example,
    candidates: Sequence[PerturbedCandidate],
    embed_client: EmbedClient,
) -> CandidateSet:
    """Score candidates by cosine similarity to the original and keep the top 10.

    Embeddings are unit vectors, so cosine is a plain dot product. Ties break
    by seed ascending.
    """
    if not candidates:
        raise CurationError(f"no candidates to rank for {original.id}")
    vectors = embed_client.embed([original.nl] + [c.text for c in candidates])
    ref = vectors[0]
    scored = []
    for cand, vec in zip(candidates, vectors[1:]):
        sim = sum(a * b for a, b in zip(ref, vec))
        scored.append(replace(cand, similarity=sim))
    scored.sort(key=lambda c: (-c.similarity, c.seed))
    return CandidateSet(
        id=candidate_set_id(original.id, candidates[0].kind),
        original=original,
        kind=candidates[0].kind,
        ranked=tuple(scored[:SHORTLIST_SIZE]),
    )


def auto_select(candidate_set: CandidateSet) -> PerturbedCandidate:
    """Unattended fallback for the human step: take the top-ranked candidate."""
    if not candidate_set.ranked:
        raise CurationError(f"candidate set {candidate_set.id} is empty")
    return candidate_set.ranked[0]


@dataclass(frozen=True)
class AnnotationRecord:
    """A reviewer's decision: a chosen shortlist index, or reject-all."""

    candidate_set_id: str
    decision: int | str  # index into ranked, or REJECT_ALL
    annotator: str
    timestamp: str  # UTC ISO-8601

    @staticmethod
    def now(candidate_set_id: str, decision: int | str, annotator: str) -> "AnnotationRecord":
        return AnnotationRecord(
            candidate_set_id=candidate_set_id,
            decision=decision,
            annotator=annotator,
            timestamp=dt.datetime.now(dt.timezone.utc).isoformat(),
        )


class AnnotationStore:
    """Append-only annotation journal over a collection of candidate sets.

    The journal file survives crashes: reloading replays appends in order and
    reduces to the same latest-wins view. Appends are serialized through a
    single lock so concurrent HTTP handlers cannot interleave writes.
    """

    def __init__(self, candidate_sets: Iterable[CandidateSet], journal_path: str | Path):
        self.sets: dict[str, CandidateSet] = {}
        for cs in candidate_sets:
            if cs.id in self.sets:
                raise CurationError(f"duplicate candidate set id {cs.id}")
            self.sets[cs.id] = cs
        self.journal_path = Path(journal_path)
        self._lock = threading.Lock()
        self._latest: dict[str, AnnotationRecord] = {}
        if self.journal_path.is_file():
            with self.journal_path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = _record_from_json(json.loads(line))
                        self._latest[rec.candidate_set_id] = rec

    def validate(self, record: AnnotationRecord) -> None:
        cs = self.sets.get(record.candidate_set_id)
        if cs is None:
            raise CurationError(f"unknown candidate set id {record.candidate_set_id!r}")
        if record.decision == REJECT_ALL:
            return
        if not isinstance(record.decision, int) or isinstance(record.decision, bool):
            raise CurationError(f"decision must be an index or {REJECT_ALL!r}")
        if not 0 <= record.decision < len(cs.ranked):
            raise CurationError(
                f"decision index {record.decision} out of range for "
                f"{record.candidate_set_id} ({len(cs.ranked)} candidates)"
            )

    def record_annotation(self, record: AnnotationRecord) -> None:
        """Validate, durably append, and fold into the latest-wins view."""
        self.validate(record)
        with self._lock:
            with self.journal_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(_record_to_json(record), ensure_ascii=False) + "\n")
                fh.flush()
            self._latest[record.candidate_set_id] = record

    def latest(self, candidate_set_id: str) -> AnnotationRecord | None:
        return self._latest.get(candidate_set_id)

    def sets_for_kind(self, kind: PerturbationKind) -> list[CandidateSet]:
        return [cs for cs in self.sets.values() if cs.kind == kind]

    def next_unannotated(self, kind: PerturbationKind | None = None) -> CandidateSet | None:
        for cs in self.sets.values():
            if kind is not None and cs.kind != kind:
                continue
            if cs.id not in self._latest:
                return cs
        return None

    def progress(self) -> dict[str, dict[str, int]]:
        """Per-kind counters: total sets, annotated, and rejected-all."""
        out: dict[str, dict[str, int]] = {}
        for cs in self.sets.values():
            bucket = out.setdefault(
                cs.kind.value, {"total": 0, "annotated": 0, "rejected": 0}
            )
            bucket["total"] += 1
            rec = self._latest.get(cs.id)
            if rec is not None:
                bucket["annotated"] += 1
                if rec.decision == REJECT_ALL:
                    bucket["rejected"] += 1
        return out


class SelectionPolicy(str, Enum):
    HUMAN_REQUIRED = "human-required"
    AUTO_FALLBACK = "auto-fallback"


@dataclass(frozen=True)
class RobustnessEvalSet:
    """Curated perturbed utterances paired with the original gold SQL."""

    kind: PerturbationKind
    entries: tuple[tuple[str, str, str], ...]  # (example_id, perturbed text, gold sql)

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise CurationError("duplicate example ids in eval set")


def build_eval_set(
    dataset: Dataset,
    kind: PerturbationKind,
    store: AnnotationStore,
    policy: SelectionPolicy = SelectionPolicy.AUTO_FALLBACK,
) -> tuple[RobustnessEvalSet, list[str]]:
    """One curated entry per test example; returns the set plus omitted ids.

    Every test example must have a candidate set for `kind`. Under
    HUMAN_REQUIRED, unannotated sets abort with the missing ids; under
    AUTO_FALLBACK they fall back to the top-ranked candidate. Reject-all
    decisions omit the example and report it.
    """
    test = dataset.split("test")
    missing_sets = [
        candidate_set_id(ex.id, kind)
        for ex in test
        if candidate_set_id(ex.id, kind) not in store.sets
    ]
    if missing_sets:
        raise CurationError(
            f"no candidate sets for {len(missing_sets)} test example(s): "
            + ", ".join(missing_sets[:5])
            + ("..." if len(missing_sets) > 5 else "")
        )
    if policy is SelectionPolicy.HUMAN_REQUIRED:
        unannotated = [
            candidate_set_id(ex.id, kind)
            for ex in test
            if store.latest(candidate_set_id(ex.id, kind)) is None
        ]
        if unannotated:
            raise CurationError(
                "annotations missing for: " + ", ".join(unannotated)
            )
    entries = []
    omitted = []
    for ex in test:
        cs = store.sets[candidate_set_id(ex.id, kind)]
        rec = store.latest(cs.id)
        if rec is None:
            chosen = auto_select(cs)
        elif rec.decision == REJECT_ALL:
            omitted.append(ex.id)
            continue
        else:
            chosen = cs.ranked[rec.decision]
        entries.append((ex.id, chosen.text, ex.gold_sql))
    return RobustnessEvalSet(kind=kind, entries=tuple(entries)), omitted


# --- serialization -----------------------------------------------------------


def _record_to_json(rec: AnnotationRecord) -> dict:
    return {
        "candidate_set_id": rec.candidate_set_id,
        "decision": rec.decision,
        "annotator": rec.annotator,
        "timestamp": rec.timestamp,
    }


def _record_from_json(doc: dict) -> AnnotationRecord:
    return AnnotationRecord(
        candidate_set_id=doc["candidate_set_id"],
        decision=doc["decision"],
        annotator=doc["annotator"],
        timestamp=doc["timestamp"],
    )


def candidate_set_to_json(cs: CandidateSet) -> dict:
    return {
        "id": cs.id,
        "kind": cs.kind.value,
        "original": {
            "id": cs.original.id,
            "nl": cs.original.nl,
            "gold_sql": cs.original.gold_sql,
            "split": cs.original.split,
        },
        "ranked": [
            {
                "original_id": c.original_id,
                "kind": c.kind.value,
                "text": c.text,
                "seed": c.seed,
                "similarity": c.similarity,
            }
            for c in cs.ranked
        ],
    }


def candidate_set_from_json(doc: dict) -> CandidateSet:
    orig = doc["original"]
    return CandidateSet(
        id=doc["id"],
        kind=PerturbationKind(doc["kind"]),
        original=Example(
            id=orig["id"], nl=orig["nl"], gold_sql=orig["gold_sql"], split=orig["split"]
        ),
        ranked=tuple(
            PerturbedCandidate(
                original_id=c["original_id"],
                kind=PerturbationKind(c["kind"]),
                text=c["text"],
                seed=c["seed"],
                similarity=c.get("similarity"),
            )
            for c in doc["ranked"]
        ),
    )


def save_candidate_sets(sets: Iterable[CandidateSet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for cs in sets:
            fh.write(json.dumps(candidate_set_to_json(cs), ensure_ascii=False) + "\n")


def load_candidate_sets(path: str | Path) -> list[CandidateSet]:
    sets = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                sets.append(candidate_set_from_json(json.loads(line)))
    return sets


def save_eval_set(eval_set: RobustnessEvalSet, path: str | Path) -> None:
    """Export as JSON-lines: {example_id, kind, text, gold_sql}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for example_id, text, gold_sql in eval_set.entries:
            fh.write(
                json.dumps(
                    {
                        "example_id": example_id,
                        "kind": eval_set.kind.value,
                        "text": text,
                        "gold_sql": gold_sql,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_eval_set(path: str | Path) -> RobustnessEvalSet:
    entries = []
    kind = None
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            kind = PerturbationKind(doc["kind"])
            entries.append((doc["example_id"], doc["text"], doc["gold_sql"]))
    if kind is None:
        raise CurationError(f"eval set file {path} is empty")
    return RobustnessEvalSet(kind=kind, entries=tuple(entries))
