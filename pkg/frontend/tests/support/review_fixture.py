"""Fixture review service for the UI integration test.

`serve --journal J` starts the real annotation API over two deterministic
candidate sets and prints `PORT <n>` once ready.
`check --journal J` rebuilds the same sets, reduces the journal, and prints
the resulting eval set plus journal stats as JSON for the test to assert on.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

from sqlrobust.corpus import Dataset, Example
from sqlrobust.curate import (
    AnnotationStore,
    CandidateSet,
    SelectionPolicy,
    build_eval_set,
    candidate_set_id,
)
from sqlrobust.curate_service import create_app
from sqlrobust.perturb import PerturbationKind, PerturbedCandidate

KIND = PerturbationKind.RD


def fixture_examples() -> list[Example]:
    return [
        Example(
            id="geo0",
            nl="what can you tell me about the population of missouri",
            gold_sql="SELECT population FROM state WHERE name = 'missouri'",
            split="test",
        ),
        Example(
            id="geo1",
            nl="which rivers run through texas",
            gold_sql="SELECT name FROM river WHERE state_name = 'texas'",
            split="test",
        ),
    ]


def fixture_sets() -> list[CandidateSet]:
    sets = []
    for ex in fixture_examples():
        ranked = tuple(
            PerturbedCandidate(
                original_id=ex.id,
                kind=KIND,
                text=f"{ex.nl} (deletion variant {i})",
                seed=i,
                similarity=round(0.99 - 0.01 * i, 4),
            )
            for i in range(10)
        )
        sets.append(
            CandidateSet(
                id=candidate_set_id(ex.id, KIND), original=ex, kind=KIND, ranked=ranked
            )
        )
    return sets


def cmd_serve(journal: Path, ui_dir: Path | None):
    import uvicorn

    store = AnnotationStore(fixture_sets(), journal)
    app = create_app(store, ui_dir=ui_dir if ui_dir and ui_dir.is_dir() else None)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    print(f"PORT {port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="error")


def cmd_check(journal: Path):
    store = AnnotationStore(fixture_sets(), journal)
    dataset = Dataset(name="fixture", examples=tuple(fixture_examples()))
    eval_set, omitted = build_eval_set(dataset, KIND, store, SelectionPolicy.AUTO_FALLBACK)
    journal_lines = (
        len([l for l in journal.read_text().splitlines() if l.strip()])
        if journal.is_file()
        else 0
    )
    print(
        json.dumps(
            {
                "entries": [
                    {"example_id": e[0], "text": e[1], "gold_sql": e[2]}
                    for e in eval_set.entries
                ],
                "omitted": omitted,
                "journal_lines": journal_lines,
                "latest_decisions": {
                    cs_id: store.latest(cs_id).decision
                    for cs_id in store.sets
                    if store.latest(cs_id) is not None
                },
            }
        )
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("command", choices=["serve", "check"])
    parser.add_argument("--journal", required=True, type=Path)
    parser.add_argument("--ui-dir", type=Path, default=None)
    args = parser.parse_args()
    if args.command == "serve":
        cmd_serve(args.journal, args.ui_dir)
    else:
        cmd_check(args.journal)


if __name__ == "__main__":
    sys.exit(main())
