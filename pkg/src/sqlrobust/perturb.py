"""Adversarial perturbation strategies for NL utterances.

Five word-level strategies (TB typos, RD deletion, RS swap, CS mask-based
substitution, CI mask-based insertion) and two sentence-level ones (RB full
rewrite, DB fixed distraction suffix). Every randomized strategy is
deterministic given (utterance, seed); edits are spliced into the original
string by character offsets so untouched regions stay byte-identical.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

from .corpus import Example
from .errors import PerturbError


class PerturbationKind(str, Enum):
    TB = "TB"  # typo-based character bugs
    RD = "RD"  # random word deletion
    RS = "RS"  # random word swap
    CS = "CS"  # context-aware substitution via masked LM
    CI = "CI"  # context-aware insertion via masked LM
    RB = "RB"  # full-sentence rewrite via paraphraser
    DB = "DB"  # distraction suffix

    @property
    def word_level(self) -> bool:
        return self in (self.TB, self.RD, self.RS, self.CS, self.CI)


WORD_LEVEL_KINDS = tuple(k for k in PerturbationKind if k.word_level)
SENTENCE_LEVEL_KINDS = (PerturbationKind.RB, PerturbationKind.DB)

# Appended verbatim by the DB strategy, separated by a single space.
DISTRACTION_SUFFIX = (
    "who is who; what is what; when is when; which is which; where is where"
)

MASK_TOKEN = "[MASK]"

# Closed-class words never picked for typo injection while at least two
# informative words are available. Deliberately excludes "the": determiners of
# three letters stay fair game for typos.
TYPO_STOPWORDS = frozenset(
    "a an of in on at to is are am be as by or and but not was were do did has have had it".split()
)

# Visually confusable glyph pairs; substitution replaces every occurrence of
# the chosen character, e.g. tell -> te11.
GLYPH_MAP = {
    "l": "1", "1": "l",
    "o": "0", "0": "o",
    "a": "@", "@": "a",
    "s": "5", "5": "s",
    "e": "3", "3": "e",
}

QWERTY_NEIGHBORS = {
    "q": "wa", "w": "qes", "e": "wrd", "r": "etf", "t": "ryg", "y": "tuh",
    "u": "yij", "i": "uok", "o": "ipl", "p": "ol",
    "a": "qsz", "s": "awdx", "d": "sefc", "f": "drgv", "g": "fthb",
    "h": "gyjn", "j": "hukm", "k": "jil", "l": "kop",
    "z": "asx", "x": "zsdc", "c": "xdfv", "v": "cfgb", "b": "vghn",
    "n": "bhjm", "m": "njk",
}


@dataclass(frozen=True)
class WordToken:
    """A whitespace-delimited word with its character offsets."""

    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class PerturbedCandidate:
    """One adversarial rewrite of an utterance."""

    original_id: str
    kind: PerturbationKind
    text: str
    seed: int = 0
    similarity: float | None = None

    def __post_init__(self):
        if not self.text:
            raise PerturbError("perturbed text must be non-empty")


class MaskFillClient(Protocol):
    def mask_fill(self, text: str, k: int) -> list[tuple[str, float]]: ...


class ParaphraseClient(Protocol):
    def paraphrase(self, text: str) -> str: ...


def tokenize(text: str) -> list[WordToken]:
    """Split on whitespace; punctuation stays attached to its word."""
    tokens = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        tokens.append(WordToken(surface=text[i:j], start=i, end=j))
        i = j
    return tokens


def _splice(text: str, edits: Sequence[tuple[int, int, str]]) -> str:
    """Replace [start, end) spans with new strings; spans must not overlap."""
    out = []
    pos = 0
    for start, end, repl in sorted(edits):
        out.append(text[pos:start])
        out.append(repl)
        pos = end
    out.append(text[pos:])
    return "".join(out)


# --- TB: typo bugs ----------------------------------------------------------


def _typo_eligible_indices(tokens: list[WordToken]) -> list[int]:
    informative = [
        i
        for i, t in enumerate(tokens)
        if len(t.surface) >= 3 and t.surface.lower() not in TYPO_STOPWORDS
    ]
    if len(informative) >= 2:
        return informative
    widened = [i for i, t in enumerate(tokens) if len(t.surface) >= 2]
    return widened


def _typo_edit_families(word: str) -> list[str]:
    families = []
    if len(word) >= 2:
        families.append("space")
    if len(word) >= 3:
        families.append("delete")
    if any(word[i] != word[i + 1] for i in range(1, len(word) - 2)):
        families.append("swap")
    if any(c in GLYPH_MAP for c in word):
        families.append("glyph")
    if any(c in QWERTY_NEIGHBORS for c in word):
        families.append("keyboard")
    return families


def _apply_typo(word: str, rng: random.Random) -> str:
    family = rng.choice(_typo_edit_families(word))
    if family == "space":
        pos = rng.randrange(1, len(word))
        return word[:pos] + " " + word[pos:]
    if family == "delete":
        pos = rng.randrange(1, len(word) - 1)
        return word[:pos] + word[pos + 1 :]
    if family == "swap":
        pairs = [i for i in range(1, len(word) - 2) if word[i] != word[i + 1]]
        i = rng.choice(pairs)
        return word[:i] + word[i + 1] + word[i] + word[i + 2 :]
    if family == "glyph":
        chars = sorted({c for c in word if c in GLYPH_MAP})
        c = rng.choice(chars)
        return word.replace(c, GLYPH_MAP[c])
    # keyboard-adjacent substitution
    positions = [i for i, c in enumerate(word) if c in QWERTY_NEIGHBORS]
    pos = rng.choice(positions)
    neighbor = rng.choice(QWERTY_NEIGHBORS[word[pos]])
    return word[:pos] + neighbor + word[pos + 1 :]


def perturb_typo(nl: str, seed: int, original_id: str = "") -> PerturbedCandidate:
    """Inject one character-level bug into each of two distinct words."""
    tokens = tokenize(nl)
    eligible = _typo_eligible_indices(tokens)
    if len(eligible) < 2:
        raise PerturbError(
            f"typo strategy needs at least 2 eligible words, found {len(eligible)}"
        )
    rng = random.Random(seed)
    chosen = rng.sample(eligible, 2)
    edits = []
    for idx in sorted(chosen):
        tok = tokens[idx]
        edits.append((tok.start, tok.end, _apply_typo(tok.surface, rng)))
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.TB,
        text=_splice(nl, edits),
        seed=seed,
    )


# --- RD: random deletion ----------------------------------------------------


def perturb_random_delete(nl: str, seed: int, original_id: str = "") -> PerturbedCandidate:
    """Delete two uniformly chosen words; whitespace renormalizes to single spaces."""
    tokens = tokenize(nl)
    if len(tokens) < 3:
        raise PerturbError(
            f"deletion needs at least 3 words, found {len(tokens)}"
        )
    rng = random.Random(seed)
    drop = set(rng.sample(range(len(tokens)), 2))
    kept = [t.surface for i, t in enumerate(tokens) if i not in drop]
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.RD,
        text=" ".join(kept),
        seed=seed,
    )


# --- RS: random swap --------------------------------------------------------


def perturb_random_swap(nl: str, seed: int, original_id: str = "") -> PerturbedCandidate:
    """Exchange two word positions with differing surfaces."""
    tokens = tokenize(nl)
    pairs = [
        (i, j)
        for i in range(len(tokens))
        for j in range(i + 1, len(tokens))
        if tokens[i].surface != tokens[j].surface
    ]
    if not pairs:
        raise PerturbError("no swappable pair: all word surfaces identical")
    rng = random.Random(seed)
    i, j = rng.choice(pairs)
    edits = [
        (tokens[i].start, tokens[i].end, tokens[j].surface),
        (tokens[j].start, tokens[j].end, tokens[i].surface),
    ]
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.RS,
        text=_splice(nl, edits),
        seed=seed,
    )


# --- CS: context-aware substitution ----------------------------------------


def _best_fill(fills: list[tuple[str, float]], forbid: str | None) -> str | None:
    """Highest-probability single-word fill, optionally differing from `forbid`."""
    for fill, _prob in fills:
        word = fill.strip()
        if not word or any(ch.isspace() for ch in word):
            continue
        if forbid is not None and word.lower() == forbid.lower():
            continue
        return word
    return None


def perturb_context_substitute(
    nl: str,
    seed: int,
    mask_client: MaskFillClient,
    original_id: str = "",
    top_k: int = 10,
) -> PerturbedCandidate:
    """Replace two uniformly chosen words with contextual mask fills.

    Masks are filled one at a time, so the second request sees the first
    edit. A word whose every fill echoes it back is skipped in favor of the
    next seeded choice.
    """
    tokens = tokenize(nl)
    if len(tokens) < 2:
        raise PerturbError("substitution needs at least 2 words")
    rng = random.Random(seed)
    order = rng.sample(range(len(tokens)), len(tokens))
    text = nl
    replaced = 0
    for idx in order:
        current = tokenize(text)
        tok = current[idx]
        masked = _splice(text, [(tok.start, tok.end, MASK_TOKEN)])
        fills = mask_client.mask_fill(masked, top_k)
        word = _best_fill(fills, forbid=tok.surface)
        if word is None:
            continue
        text = _splice(text, [(tok.start, tok.end, word)])
        replaced += 1
        if replaced == 2:
            break
    if replaced < 2:
        raise PerturbError(
            "mask fills exhausted: could not find 2 words with non-echo fills"
        )
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.CS,
        text=text,
        seed=seed,
    )


# --- CI: context-aware insertion --------------------------------------------


def _insert_at_boundary(text: str, tokens: list[WordToken], boundary: int, word: str) -> str:
    if boundary == 0:
        return word + " " + text
    if boundary == len(tokens):
        return text + " " + word
    start = tokens[boundary].start
    return text[:start] + word + " " + text[start:]


def perturb_context_insert(
    nl: str,
    seed: int,
    mask_client: MaskFillClient,
    original_id: str = "",
    top_k: int = 10,
) -> PerturbedCandidate:
    """Insert the top mask fill at two word boundaries, chosen sequentially."""
    rng = random.Random(seed)
    text = nl
    for _ in range(2):
        tokens = tokenize(text)
        boundary = rng.randint(0, len(tokens))
        masked = _insert_at_boundary(text, tokens, boundary, MASK_TOKEN)
        fills = mask_client.mask_fill(masked, top_k)
        word = _best_fill(fills, forbid=None)
        if word is None:
            raise PerturbError("mask endpoint returned no usable single-word fill")
        text = _insert_at_boundary(text, tokens, boundary, word)
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.CI,
        text=text,
        seed=seed,
    )


# --- RB: full rewrite --------------------------------------------------------


def perturb_rewrite(
    nl: str, paraphrase_client: ParaphraseClient, original_id: str = "", seed: int = 0
) -> PerturbedCandidate:
    """Paraphrase the whole utterance; the client is treated as a black box."""
    text = paraphrase_client.paraphrase(nl).strip()
    if not text:
        raise PerturbError("paraphrase endpoint returned an empty rewrite")
    return PerturbedCandidate(
        original_id=original_id, kind=PerturbationKind.RB, text=text, seed=seed
    )


# --- DB: distraction suffix --------------------------------------------------


def perturb_distract(nl: str, original_id: str = "", seed: int = 0) -> PerturbedCandidate:
    """Append the fixed interrogation suffix; fully deterministic."""
    return PerturbedCandidate(
        original_id=original_id,
        kind=PerturbationKind.DB,
        text=nl + " " + DISTRACTION_SUFFIX,
        seed=seed,
    )


# --- candidate generation ----------------------------------------------------


@dataclass(frozen=True)
class SeedFailure:
    seed: int
    error: str


@dataclass(frozen=True)
class GenerationResult:
    """Deduplicated candidates in seed order, plus per-seed failures."""

    candidates: tuple[PerturbedCandidate, ...]
    failures: tuple[SeedFailure, ...] = ()


def perturb_one(
    kind: PerturbationKind,
    nl: str,
    seed: int,
    original_id: str = "",
    mask_client: MaskFillClient | None = None,
    paraphrase_client: ParaphraseClient | None = None,
) -> PerturbedCandidate:
    """Apply a single strategy by kind."""
    if kind is PerturbationKind.TB:
        return perturb_typo(nl, seed, original_id)
    if kind is PerturbationKind.RD:
        return perturb_random_delete(nl, seed, original_id)
    if kind is PerturbationKind.RS:
        return perturb_random_swap(nl, seed, original_id)
    if kind is PerturbationKind.CS:
        if mask_client is None:
            raise PerturbError("CS needs a mask-fill client")
        return perturb_context_substitute(nl, seed, mask_client, original_id)
    if kind is PerturbationKind.CI:
        if mask_client is None:
            raise PerturbError("CI needs a mask-fill client")
        return perturb_context_insert(nl, seed, mask_client, original_id)
    if kind is PerturbationKind.RB:
        if paraphrase_client is None:
            raise PerturbError("RB needs a paraphrase client")
        return perturb_rewrite(nl, paraphrase_client, original_id, seed)
    if kind is PerturbationKind.DB:
        return perturb_distract(nl, original_id, seed)
    raise PerturbError(f"unknown perturbation kind {kind!r}")


def generate_candidates(
    example: Example,
    kind: PerturbationKind,
    n: int = 20,
    seed: int = 0,
    mask_client: MaskFillClient | None = None,
    paraphrase_client: ParaphraseClient | None = None,
) -> GenerationResult:
    """Run a strategy under seeds seed..seed+n-1, collapsing duplicate texts.

    Per-seed errors are collected rather than aborting the batch; if no seed
    succeeds at all, the first error is raised.
    """
    if n < 1:
        raise PerturbError("candidate count must be >= 1")
    candidates: list[PerturbedCandidate] = []
    seen_texts: set[str] = set()
    failures: list[SeedFailure] = []
    first_error: PerturbError | None = None
    for s in range(seed, seed + n):
        try:
            cand = perturb_one(
                kind,
                example.nl,
                s,
                original_id=example.id,
                mask_client=mask_client,
                paraphrase_client=paraphrase_client,
            )
        except PerturbError as exc:
            failures.append(SeedFailure(seed=s, error=str(exc)))
            if first_error is None:
                first_error = exc
            continue
        if cand.text not in seen_texts:
            seen_texts.add(cand.text)
            candidates.append(cand)
    if not candidates and first_error is not None:
        raise first_error
    return GenerationResult(candidates=tuple(candidates), failures=tuple(failures))
