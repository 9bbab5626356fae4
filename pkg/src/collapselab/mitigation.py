"""Mitigation strategies as pluggable training-set selectors: real-data
mixing lives in the recursion composer; this module provides synthetic
volume scaling and quality-aware filtering for text and feature populations.

The default text embedder is a hashed bag-of-n-grams with idf weighting. It
is deliberately model-free so filter scores cannot inherit the chain's own
collapse; an external-vector file can substitute model-based embeddings when
available.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document
from .errors import InsufficientPoolError, ValidationError
from .imagemetrics import FeatureRecord, mahalanobis_scores
from .seeding import derive_rng


@dataclass(frozen=True)
class EmbedderSpec:
    """Hashed bag-of-n-grams embedder: deterministic, corpus-model-free."""

    dim: int = 256
    ngram_range: tuple[int, int] = (1, 2)
    external_vector_file: str | None = None

    def __post_init__(self):
        if self.dim < 8:
            raise ValidationError("embedding dimension must be >= 8")
        lo, hi = self.ngram_range
        if not (1 <= lo <= hi):
            raise ValidationError("ngram_range must satisfy 1 <= lo <= hi")


def _filter_embedder() -> EmbedderSpec:
    # Low dimension on purpose: hash collisions pool rare n-grams into
    # shared buckets, so short documents become dense topical profiles and
    # nearest-neighbor distances measure local density rather than exact
    # rare-gram identity (which would penalize diversity itself).
    return EmbedderSpec(dim=32, ngram_range=(1, 2))


@dataclass(frozen=True)
class TextFilterConfig:
    """Quality-aware text selection.

    Synthetic samples nearest the real distribution are retained (lowest
    keep-quantile by mean k-NN cosine distance to the real pool); real
    samples most isolated from the pool's distribution modes (top
    keep-quantile by k-NN distance within the real pool) are retained,
    preserving diverse edge cases.
    """

    k: int = 10
    metric: str = "cosine"
    synthetic_keep_quantile: float = 0.75
    real_keep_quantile: float = 0.50
    embedder: EmbedderSpec = field(default_factory=_filter_embedder)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.metric != "cosine":
            raise ValidationError("only the cosine metric is supported")
        for name, q in (
            ("synthetic_keep_quantile", self.synthetic_keep_quantile),
            ("real_keep_quantile", self.real_keep_quantile),
        ):
            if not (0.0 < q <= 1.0):
                raise ValidationError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class ImageFilterConfig:
    """Exclude the lowest quality quartile of synthetic features, ranked by
    negative Mahalanobis distance in the composite quality space."""

    exclusion_quantile: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.exclusion_quantile < 1.0):
            raise ValidationError("exclusion quantile must lie in (0, 1)")


@dataclass(frozen=True)
class VolumeSchedule:
    """Per-generation synthetic volume: size = base * multiplier(t)."""

    base: int
    multipliers: tuple[float, ...] = (2.0, 3.0, 4.0, 5.0)

    def __post_init__(self):
        if self.base < 1:
            raise ValidationError("base size must be positive")
        if any(m < 1 for m in self.multipliers):
            raise ValidationError("multipliers must be >= 1")


# Standard presets: both the text protocol (base 5,000) and the image
# protocol (base 500) scale 2x..5x over generations 1-4.
TEXT_VOLUME_PRESET = VolumeSchedule(base=5000)
IMAGE_VOLUME_PRESET = VolumeSchedule(base=500)


def volume_for_generation(schedule: VolumeSchedule, t: int) -> int:
    """Synthetic training volume for generation t >= 1 (generation 0 always
    fits on real data)."""
    if t < 1:
        raise ValidationError("volume schedule applies to generations t >= 1")
    if t - 1 < len(schedule.multipliers):
        m = schedule.multipliers[t - 1]
    else:
        m = schedule.multipliers[-1]
    return int(round(schedule.base * m))


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingResult:
    vectors: np.ndarray
    empty_documents: tuple[int, ...]  # flagged zero vectors


def embed_documents(documents: Sequence, spec: EmbedderSpec | None = None) -> EmbeddingResult:
    """Deterministic unit-normalized document vectors.

    tf-idf weighted hashed n-grams; idf is computed over the documents
    passed in, so pools that must be comparable should be embedded together.
    Empty documents yield zero vectors and are flagged.
    """
    spec = spec or EmbedderSpec()
    if not documents:
        raise ValidationError("need at least one document to embed")
    if spec.external_vector_file is not None:
        return _load_external_vectors(spec, len(documents))

    lo, hi = spec.ngram_range
    dim = spec.dim
    doc_grams: list[dict[int, int]] = []
    doc_freq: dict[int, int] = {}
    for doc in documents:
        tokens = doc.tokens if isinstance(doc, Document) else tuple(str(doc).split())
        grams: dict[int, int] = {}
        for n in range(lo, hi + 1):
            for i in range(len(tokens) - n + 1):
                key = zlib.crc32(" ".join(tokens[i : i + n]).encode("utf-8")) % dim
                grams[key] = grams.get(key, 0) + 1
        doc_grams.append(grams)
        for key in grams:
            doc_freq[key] = doc_freq.get(key, 0) + 1

    n_docs = len(documents)
    idf = np.ones(dim)
    for key, df in doc_freq.items():
        idf[key] = np.log((1 + n_docs) / (1 + df)) + 1.0

    vectors = np.zeros((n_docs, dim))
    empty: list[int] = []
    for i, grams in enumerate(doc_grams):
        if not grams:
            empty.append(i)
            continue
        for key, count in grams.items():
            vectors[i, key] = count * idf[key]
        norm = np.linalg.norm(vectors[i])
        if norm > 0:
            vectors[i] /= norm
        else:
            empty.append(i)
    return EmbeddingResult(vectors=vectors, empty_documents=tuple(empty))


def _load_external_vectors(spec: EmbedderSpec, expected: int) -> EmbeddingResult:
    path = Path(spec.external_vector_file)
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if arr.shape[0] != expected:
        raise ValidationError(
            f"external vector file holds {arr.shape[0]} rows, expected {expected}"
        )
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    empty = tuple(int(i) for i in np.where(norms.ravel() == 0)[0])
    norms[norms == 0] = 1.0
    return EmbeddingResult(vectors=arr / norms, empty_documents=empty)


# ---------------------------------------------------------------------------
# k-NN distances
# ---------------------------------------------------------------------------


def knn_distance(
    queries: np.ndarray, references: np.ndarray, k: int, metric: str = "cosine"
) -> np.ndarray:
    """Mean cosine distance of each query to its k nearest references.

    Exact search; ties broken by reference index (stable sort).
    """
    if metric != "cosine":
        raise ValidationError("only the cosine metric is supported")
    q = np.asarray(queries, dtype=float)
    r = np.asarray(references, dtype=float)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ValidationError("queries and references must be 2-D with matching dims")
    if k > r.shape[0]:
        raise ValidationError(f"k={k} exceeds reference pool of {r.shape[0]}")
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    rn = np.linalg.norm(r, axis=1, keepdims=True)
    qu = np.divide(q, qn, out=np.zeros_like(q), where=qn > 0)
    ru = np.divide(r, rn, out=np.zeros_like(r), where=rn > 0)
    distances = 1.0 - qu @ ru.T  # zero vectors sit at distance 1 from everything
    distances[qn.ravel() == 0] = 1.0
    if k == r.shape[0]:
        return distances.mean(axis=1)
    # Stable sort breaks exact ties by reference index.
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(distances, nearest, axis=1).mean(axis=1)


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterDecision:
    record_id: str
    score: float
    kept: bool
    threshold: float


@dataclass(frozen=True)
class FilterLog:
    """One row per candidate: {id, score, kept, threshold}, plus the config
    repr hash the decisions were made under."""

    side: str  # "synthetic" | "real"
    decisions: tuple[FilterDecision, ...]
    config_hash: str

    def kept_ids(self) -> list[str]:
        return [d.record_id for d in self.decisions if d.kept]


def _config_hash(config) -> str:
    return f"{zlib.crc32(repr(config).encode('utf-8')):08x}"


def _keep_count(n: int, quantile: float) -> int:
    """Inclusive-on-the-keep-side quantile boundary."""
    import math

    return min(n, max(1, math.ceil(quantile * n)))


def filter_text_pools(
    synthetic_pool: Sequence[Document],
    real_pool: Sequence[Document],
    config: TextFilterConfig | None = None,
) -> tuple[list[Document], list[Document], dict[str, FilterLog]]:
    """Quality-aware selection before mixing.

    Synthetic documents are kept when their mean k-NN distance to the real
    pool falls in the lowest synthetic_keep_quantile; real documents are
    kept when their k-NN isolation (mean distance to their k nearest other
    real documents) falls in the top real_keep_quantile. Ties break by
    stable record index; every decision is logged with its score and
    threshold.
    """
    config = config or TextFilterConfig()
    if not synthetic_pool or not real_pool:
        raise ValidationError("both pools must be non-empty")
    if len(real_pool) < config.k + 1:
        raise InsufficientPoolError(
            f"real pool of {len(real_pool)} cannot support k={config.k}",
            deficit=config.k + 1 - len(real_pool),
        )
    # Shared idf space: embed both pools together.
    emb = embed_documents(list(synthetic_pool) + list(real_pool), config.embedder)
    syn_vec = emb.vectors[: len(synthetic_pool)]
    real_vec = emb.vectors[len(synthetic_pool) :]

    syn_scores = knn_distance(syn_vec, real_vec, config.k, config.metric)
    keep_syn = _keep_count(len(synthetic_pool), config.synthetic_keep_quantile)
    syn_order = np.lexsort((np.arange(len(syn_scores)), syn_scores))
    syn_kept_idx = set(int(i) for i in syn_order[:keep_syn])
    syn_threshold = float(syn_scores[syn_order[keep_syn - 1]])

    # Isolation via k+1 neighbors: the self-match contributes distance 0.
    with_self = knn_distance(real_vec, real_vec, config.k + 1, config.metric)
    real_scores = with_self * (config.k + 1) / config.k
    keep_real = _keep_count(len(real_pool), config.real_keep_quantile)
    real_order = np.lexsort((np.arange(len(real_scores)), -real_scores))
    real_kept_idx = set(int(i) for i in real_order[:keep_real])
    real_threshold = float(real_scores[real_order[keep_real - 1]])

    chash = _config_hash(config)
    syn_log = FilterLog(
        side="synthetic",
        decisions=tuple(
            FilterDecision(d.id, float(syn_scores[i]), i in syn_kept_idx, syn_threshold)
            for i, d in enumerate(synthetic_pool)
        ),
        config_hash=chash,
    )
    real_log = FilterLog(
        side="real",
        decisions=tuple(
            FilterDecision(d.id, float(real_scores[i]), i in real_kept_idx, real_threshold)
            for i, d in enumerate(real_pool)
        ),
        config_hash=chash,
    )
    kept_syn_docs = [d for i, d in enumerate(synthetic_pool) if i in syn_kept_idx]
    kept_real_docs = [d for i, d in enumerate(real_pool) if i in real_kept_idx]
    return kept_syn_docs, kept_real_docs, {"synthetic": syn_log, "real": real_log}


def filter_image_pool(
    synthetic: Sequence[FeatureRecord],
    reference: Sequence[FeatureRecord],
    config: ImageFilterConfig | None = None,
) -> tuple[list[FeatureRecord], FilterLog]:
    """Exclude the lowest-quality quantile of synthetic features (largest
    composite Mahalanobis distance from the reference population)."""
    config = config or ImageFilterConfig()
    if not synthetic:
        raise ValidationError("synthetic pool must be non-empty")
    distances = mahalanobis_scores(synthetic, reference, composite=True)
    n = len(synthetic)
    keep = _keep_count(n, 1.0 - config.exclusion_quantile)
    order = np.lexsort((np.arange(n), distances))
    kept_idx = set(int(i) for i in order[:keep])
    threshold = float(distances[order[keep - 1]])
    chash = _config_hash(config)
    log = FilterLog(
        side="synthetic",
        decisions=tuple(
            FilterDecision(f"rec-{i:06d}", float(distances[i]), i in kept_idx, threshold)
            for i in range(n)
        ),
        config_hash=chash,
    )
    return [r for i, r in enumerate(synthetic) if i in kept_idx], log


def draw_from_survivors(
    survivors: Sequence, budget: int, seed: int, tag: str = "survivor-draw"
) -> list:
    """Seeded uniform draw without replacement when survivors exceed the
    composition budget."""
    if budget > len(survivors):
        raise InsufficientPoolError(
            f"budget {budget} exceeds {len(survivors)} filtered survivors "
            f"(deficit {budget - len(survivors)})",
            deficit=budget - len(survivors),
        )
    if budget == len(survivors):
        return list(survivors)
    rng = derive_rng(seed, tag)
    idx = rng.choice(len(survivors), size=budget, replace=False)
    idx.sort()
    return [survivors[int(i)] for i in idx]
