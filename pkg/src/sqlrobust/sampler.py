"""Few-shot demonstration selection from the train pool.

Seven strategies: uniform random, lowest zero-shot confidence,
diversity-clustered (edit-distance medoids, TF-IDF or contextual-embedding
k-means), and sequence-perplexity extremes in both directions. Every strategy
is deterministic given (pool, N, seed, clients).
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Example, Schema
from .errors import SamplingError
from .prompt import DemoSet, PromptConfig, assemble, serialize_schema
from .llm_gateway import CompletionRequest, Gateway


class SamplingStrategy(str, Enum):
    RANDOM = "Random"
    CONFIDENCE = "Confidence"
    CLUSTER_ED = "ClusterED"
    CLUSTER_TFIDF = "ClusterTFIDF"
    CLUSTER_CWE = "ClusterCWE"
    PPL_ASC = "PPLAsc"
    PPL_DESC = "PPLDesc"


class FeatureKind(str, Enum):
    ED = "ED"
    TFIDF = "TFIDF"
    CWE = "CWE"


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray  # shape (pool, dims)
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.labels):
            raise SamplingError("feature matrix must have one row per label")


@dataclass(frozen=True)
class DistanceMatrix:
    matrix: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(self.labels):
            raise SamplingError("distance matrix must be square with one label per row")
        if np.any(np.diag(m) != 0):
            raise SamplingError("distance matrix diagonal must be zero")
        if np.any(m < 0) or not np.allclose(m, m.T):
            raise SamplingError("distance matrix must be symmetric and nonnegative")


def _check_n(pool: Sequence, n: int):
    if n < 0:
        raise SamplingError("N must be >= 0")
    if n > len(pool):
        raise SamplingError(f"cannot select {n} from a pool of {len(pool)}")


# --- random -------------------------------------------------------------------


def sample_random(pool: Sequence[Example], n: int, seed: int) -> list[Example]:
    """Uniform without replacement; output follows pool order."""
    _check_n(pool, n)
    rng = random.Random(seed)
    indices = sorted(rng.sample(range(len(pool)), n))
    return [pool[i] for i in indices]


# --- confidence ----------------------------------------------------------------


def zero_shot_confidence(
    gateway: Gateway, schema_text: str, cfg: PromptConfig, nl: str
) -> float:
    """Mean per-token logprob of the zero-shot generation; -inf when empty."""
    prompt = assemble(schema_text, cfg, DemoSet(), nl)
    response = gateway.complete(
        CompletionRequest(prompt=prompt.text, logprobs=0)
    )
    if not response.token_logprobs:
        return float("-inf")
    probs = [lp for _, lp in response.token_logprobs]
    return sum(probs) / len(probs)


def sample_confidence(
    pool: Sequence[Example],
    n: int,
    gateway: Gateway,
    schema: Schema,
    cfg: PromptConfig,
) -> list[Example]:
    """The N pool utterances the zero-shot parser is least confident about.

    Output is ordered by confidence ascending; ties fall back to pool order.
    """
    _check_n(pool, n)
    schema_text = serialize_schema(schema, cfg.rows_limit)
    scored = [
        (zero_shot_confidence(gateway, schema_text, cfg, ex.nl), i)
        for i, ex in enumerate(pool)
    ]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [pool[i] for _, i in scored[:n]]


# --- features and distances -----------------------------------------------------


def tfidf_features(pool: Sequence[Example]) -> FeatureMatrix:
    """Raw-count TF times smoothed IDF (ln((1+D)/(1+df)) + 1), rows L2-normalized."""
    if not pool:
        raise SamplingError("tfidf over an empty pool")
    docs = [ex.nl.lower().split() for ex in pool]
    vocabulary = sorted({tok for doc in docs for tok in doc})
    index = {tok: i for i, tok in enumerate(vocabulary)}
    d = len(docs)
    df = np.zeros(len(vocabulary))
    for doc in docs:
        for tok in set(doc):
            df[index[tok]] += 1
    idf = np.log((1 + d) / (1 + df)) + 1.0
    rows = np.zeros((d, len(vocabulary)))
    for r, doc in enumerate(docs):
        for tok in doc:
            rows[r, index[tok]] += 1.0
    rows *= idf
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    rows /= norms
    return FeatureMatrix(rows=rows, labels=tuple(ex.id for ex in pool))


def edit_distance(a: str, b: str) -> int:
    """Character-level Levenshtein distance with unit costs."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,  # delete
                    current[j - 1] + 1,  # insert
                    previous[j - 1] + (ca != cb),  # substitute
                )
            )
        previous = current
    return previous[-1]


def edit_distance_matrix(pool: Sequence[Example]) -> DistanceMatrix:
    n = len(pool)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = edit_distance(pool[i].nl, pool[j].nl)
    return DistanceMatrix(matrix=m, labels=tuple(ex.id for ex in pool))


# --- clustering -----------------------------------------------------------------


def _kmeanspp_init(rows: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = [rows[rng.integers(len(rows))]]
    for _ in range(1, n):
        d2 = np.min(
            [np.sum((rows - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total == 0:
            idx = int(rng.integers(len(rows)))
        else:
            idx = int(rng.choice(len(rows), p=d2 / total))
        centers.append(rows[idx])
    return np.array(centers)


def kmeans(
    features: FeatureMatrix, n: int, seed: int, max_iters: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's iteration with k-means++ seeding; returns (assignments, centroids).

    Convergence means a stable assignment vector. A cluster left empty is
    reseeded with the point farthest from its current centroid.
    """
    rows = features.rows
    if n < 1:
        raise SamplingError("kmeans needs N >= 1")
    if n > len(rows):
        raise SamplingError(f"kmeans with N={n} over {len(rows)} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(rows, n, rng)
    previous = None
    for _ in range(max_iters):
        distances = np.linalg.norm(rows[:, None, :] - centroids[None, :, :], axis=2)
        assignments = distances.argmin(axis=1)
        for cluster in range(n):
            if not np.any(assignments == cluster):
                own = distances[np.arange(len(rows)), assignments]
                centroids[cluster] = rows[int(own.argmax())]
                distances = np.linalg.norm(
                    rows[:, None, :] - centroids[None, :, :], axis=2
                )
                assignments = distances.argmin(axis=1)
        if previous is not None and np.array_equal(assignments, previous):
            break
        previous = assignments
        centroids = np.array(
            [
                rows[assignments == cluster].mean(axis=0)
                if np.any(assignments == cluster)
                else centroids[cluster]
                for cluster in range(n)
            ]
        )
    return assignments, centroids


_KMEDOIDS_EXACT_LIMIT = 5000  # candidate medoid sets; C(8,3)=56, C(50,3)=19600


def kmedoids(distances: DistanceMatrix, n: int, seed: int) -> list[int]:
    """Minimum-cost medoid selection over a precomputed distance matrix.

    Small search spaces (at most _KMEDOIDS_EXACT_LIMIT candidate sets) are
    solved exactly by enumeration; larger ones run PAM-style swap descent
    from a seeded start, applying the single (medoid, non-medoid) swap that
    most lowers total assignment cost until no swap strictly improves it.
    Swap descent alone can park in a local optimum, which is why tiny
    instances take the exact path.
    """
    m = distances.matrix
    size = len(m)
    if n < 1:
        raise SamplingError("kmedoids needs N >= 1")
    if n > size:
        raise SamplingError(f"kmedoids with N={n} over {size} points")

    def cost(candidate: list[int]) -> float:
        return float(m[:, candidate].min(axis=1).sum())

    if math.comb(size, n) <= _KMEDOIDS_EXACT_LIMIT:
        best = min(itertools.combinations(range(size), n), key=lambda c: cost(list(c)))
        return list(best)

    rng = random.Random(seed)
    medoids = sorted(rng.sample(range(size), n))
    current = cost(medoids)
    improved = True
    while improved:
        improved = False
        best_cost, best_swap = current, None
        for mi, medoid in enumerate(medoids):
            for point in range(size):
                if point in medoids:
                    continue
                trial = medoids.copy()
                trial[mi] = point
                c = cost(trial)
                if c < best_cost - 1e-12:
                    best_cost, best_swap = c, (mi, point)
        if best_swap is not None:
            medoids[best_swap[0]] = best_swap[1]
            medoids.sort()
            current = best_cost
            improved = True
    return medoids


def sample_cluster(
    pool: Sequence[Example],
    n: int,
    feature_kind: FeatureKind,
    seed: int,
    gateway: Gateway | None = None,
) -> list[Example]:
    """Partition the pool into N clusters and return one representative each.

    TF-IDF and embedding features cluster with k-means (representative =
    member nearest its centroid); edit distance clusters with k-medoids
    (representatives = the medoids). Output follows pool order.
    """
    _check_n(pool, n)
    if n == 0:
        return []
    if feature_kind is FeatureKind.ED:
        dm = edit_distance_matrix(pool)
        chosen = kmedoids(dm, n, seed)
        return [pool[i] for i in sorted(chosen)]
    if feature_kind is FeatureKind.TFIDF:
        features = tfidf_features(pool)
    elif feature_kind is FeatureKind.CWE:
        if gateway is None:
            raise SamplingError("contextual-embedding clustering needs a gateway")
        vectors = gateway.embed([ex.nl for ex in pool])
        features = FeatureMatrix(
            rows=np.array(vectors), labels=tuple(ex.id for ex in pool)
        )
    else:
        raise SamplingError(f"unknown feature kind {feature_kind}")
    assignments, centroids = kmeans(features, n, seed)
    chosen = []
    for cluster in range(n):
        members = np.flatnonzero(assignments == cluster)
        dists = np.linalg.norm(features.rows[members] - centroids[cluster], axis=1)
        chosen.append(int(members[int(dists.argmin())]))
    return [pool[i] for i in sorted(chosen)]


# --- perplexity ------------------------------------------------------------------


class PplDirection(str, Enum):
    ASC = "Asc"  # selects the highest-perplexity utterances
    DESC = "Desc"  # selects the lowest-perplexity utterances


def sample_perplexity(
    pool: Sequence[Example],
    n: int,
    gateway: Gateway,
    direction: PplDirection,
) -> list[Example]:
    """Perplexity extremes: Asc takes the N highest scores, Desc the N lowest.

    The direction names are kept verbatim from the sampling scheme this
    implements, where "Asc" denotes the high-perplexity pick. Ties fall back
    to pool order; output is sorted with the direction's extreme first.
    """
    _check_n(pool, n)
    scored = [
        (gateway.sequence_perplexity(ex.nl), i) for i, ex in enumerate(pool)
    ]
    if direction is PplDirection.ASC:
        ranked = sorted(scored, key=lambda t: (-t[0], t[1]))
    else:
        ranked = sorted(scored, key=lambda t: (t[0], t[1]))
    return [pool[i] for _, i in ranked[:n]]


# --- dispatch and manifests -------------------------------------------------------


def run_strategy(
    strategy: SamplingStrategy,
    pool: Sequence[Example],
    n: int,
    seed: int,
    gateway: Gateway | None = None,
    schema: Schema | None = None,
    prompt_cfg: PromptConfig | None = None,
) -> list[Example]:
    """Select N demonstrations by strategy name."""
    if strategy is SamplingStrategy.RANDOM:
        return sample_random(pool, n, seed)
    if strategy is SamplingStrategy.CONFIDENCE:
        if gateway is None or schema is None or prompt_cfg is None:
            raise SamplingError("confidence sampling needs gateway, schema, and prompt config")
        return sample_confidence(pool, n, gateway, schema, prompt_cfg)
    if strategy is SamplingStrategy.CLUSTER_ED:
        return sample_cluster(pool, n, FeatureKind.ED, seed)
    if strategy is SamplingStrategy.CLUSTER_TFIDF:
        return sample_cluster(pool, n, FeatureKind.TFIDF, seed)
    if strategy is SamplingStrategy.CLUSTER_CWE:
        if gateway is None:
            raise SamplingError("embedding clustering needs a gateway")
        return sample_cluster(pool, n, FeatureKind.CWE, seed, gateway=gateway)
    if strategy is SamplingStrategy.PPL_ASC:
        if gateway is None:
            raise SamplingError("perplexity sampling needs a gateway")
        return sample_perplexity(pool, n, gateway, PplDirection.ASC)
    if strategy is SamplingStrategy.PPL_DESC:
        if gateway is None:
            raise SamplingError("perplexity sampling needs a gateway")
        return sample_perplexity(pool, n, gateway, PplDirection.DESC)
    raise SamplingError(f"unknown strategy {strategy}")


def write_selection_manifest(
    path: str | Path,
    strategy: SamplingStrategy,
    n: int,
    seed: int,
    selected: Sequence[Example],
    scores: dict[str, float] | None = None,
) -> None:
    """Persist an auditable record of which demonstrations a run used."""
    doc = {
        "strategy": strategy.value,
        "N": n,
        "seed": seed,
        "selected_ids": [ex.id for ex in selected],
        "scores": scores,
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
