"""Backoff n-gram text kernel with truncated nucleus decoding.

Model semantics
---------------
Counts are kept for every order 1..n. The conditional for a context is the
add-k smoothed distribution of the longest OBSERVED suffix of the context
(unseen contexts back off one order at a time down to the unigram table).
The smoothing vocabulary size V counts the surface vocabulary plus the two
sentinels, so conditionals over the full support (including sentinels) sum
to exactly 1.

Out-of-vocabulary tokens score as unseen events: they carry count 0 in every
table and therefore receive the add-k floor probability of the backed-off
context, which keeps perplexity finite on any text.

Decoding pipeline, in order: repetition penalty on already-emitted tokens,
temperature, top-k truncation, top-p (nucleus) truncation, renormalization.
The penalty follows the sign-corrected convention of the CTRL sampler: a
log-probability (always negative) is multiplied by the penalty, lowering the
score of emitted tokens. Ties among equal-probability unseen tokens at the
top-k boundary are broken by a context-keyed pseudorandom order, which
avoids systematically favoring low vocabulary indices. The begin sentinel is
masked from the sampling support; the end sentinel is a legal emission that
terminates the document.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..corpus import Corpus, Document, Provenance, tokenize
from ..errors import FitError, ValidationError
from ..seeding import derive_rng

BOS = "<s>"
EOS = "</s>"

_GREEDY_TEMPERATURE = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    """Decoding controls: temperature, top-k, top-p, length, penalty."""

    temperature: float = 0.7
    top_k: int | None = 50
    top_p: float = 0.95
    max_length: int = 128
    repetition_penalty: float = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be positive (<= 1e-6 means greedy)")
        if self.top_k is not None and self.top_k < 1:
            raise ValidationError("top_k must be >= 1 or None for unlimited")
        if not (0.0 < self.top_p <= 1.0):
            raise ValidationError("top_p must lie in (0, 1]")
        if self.max_length < 1:
            raise ValidationError("max_length must be >= 1")
        if self.repetition_penalty < 1.0:
            raise ValidationError("repetition penalty must be >= 1")


# Module defaults for unconditional and conditional generation.
UNCONDITIONAL_SAMPLER = SamplerConfig(0.7, 50, 0.95, 128, 1.0)
CONDITIONAL_SAMPLER = SamplerConfig(0.8, 50, 0.9, 128, 1.1)


@dataclass
class RunLog:
    """Collects rare decoding events (argmax fallbacks, empty-first-step)."""

    events: list[str] = field(default_factory=list)

    def record(self, message: str) -> None:
        self.events.append(message)


class NGramModel:
    """Fitted n-gram kernel. Immutable after construction; shareable."""

    def __init__(
        self,
        order: int,
        add_k: float,
        vocabulary: Sequence[str],
        counts: list[dict[int, dict[int, int]]],
        context_totals: list[dict[int, int]],
    ):
        if not (2 <= order <= 5):
            raise ValidationError(f"order must lie in [2, 5], got {order}")
        if add_k <= 0:
            raise ValidationError("add-k smoothing constant must be > 0")
        self.order = order
        self.add_k = float(add_k)
        self.id_to_token: tuple[str, ...] = tuple(vocabulary)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        nv = len(self.id_to_token)
        self.bos_id = nv
        self.eos_id = nv + 1
        self.unk_id = nv + 2  # never counted; scores as an unseen event
        self.base = nv + 3
        # Smoothing vocabulary: surface vocabulary plus both sentinels.
        self.smoothing_v = nv + 2
        # counts[o] maps context-code -> {token-id -> count} for order o+1.
        self._counts = counts
        self._totals = context_totals
        self._fill_perm: list[int] | None = None

    # -- construction helpers ------------------------------------------------

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return self.id_to_token

    def token_id(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def _fill_order(self) -> list[int]:
        """Model-intrinsic pseudorandom order over sampleable token ids,
        used to break ties among unseen tokens at the top-k boundary."""
        if self._fill_perm is None:
            ids = np.arange(self.smoothing_v)  # vocabulary + both sentinels
            ids = ids[ids != self.bos_id]
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([0xF111, len(ids)]))
            )
            self._fill_perm = [int(i) for i in rng.permutation(ids)]
        return self._fill_perm

    # -- probabilities -------------------------------------------------------

    def _encode(self, ids: Sequence[int], length: int) -> int:
        code = 0
        for t in ids[len(ids) - length :]:
            code = code * self.base + t + 1  # +1 keeps codes unique across lengths
        return code

    def _longest_observed(self, ctx_ids: Sequence[int]) -> tuple[dict[int, int], int]:
        """Successor counts and total of the longest observed context suffix."""
        max_len = min(len(ctx_ids), self.order - 1)
        for length in range(max_len, 0, -1):
            code = self._encode(ctx_ids, length)
            totals = self._totals[length]
            total = totals.get(code)
            if total:
                return self._counts[length][code], total
        return self._counts[0][0], self._totals[0][0]

    def conditional_prob(self, context: Sequence[str], token: str) -> float:
        """Smoothed P(token | context) with backoff, over the full support."""
        ctx_ids = [self.token_id(t) if t not in (BOS, EOS) else
                   (self.bos_id if t == BOS else self.eos_id) for t in context]
        w = (
            self.bos_id
            if token == BOS
            else self.eos_id
            if token == EOS
            else self.token_id(token)
        )
        successors, total = self._longest_observed(ctx_ids)
        c = successors.get(w, 0)
        return (c + self.add_k) / (total + self.add_k * self.smoothing_v)

    def next_distribution(self, context: Sequence[str]) -> dict[str, float]:
        """Full smoothed conditional over vocabulary + sentinels (sums to 1)."""
        out = {}
        for token in (*self.id_to_token, BOS, EOS):
            out[token] = self.conditional_prob(context, token)
        return out

    def log_prob_token(self, ctx_ids: Sequence[int], token_id: int) -> float:
        successors, total = self._longest_observed(ctx_ids)
        c = successors.get(token_id, 0)
        return math.log((c + self.add_k) / (total + self.add_k * self.smoothing_v))

    # -- serialization -------------------------------------------------------

    FORMAT = "collapselab-ngram/v1"

    def to_json_dict(self) -> dict:
        return {
            "format": self.FORMAT,
            "order": self.order,
            "add_k": self.add_k,
            "vocabulary": list(self.id_to_token),
            "counts": [
                {str(code): {str(t): c for t, c in succ.items()} for code, succ in table.items()}
                for table in self._counts
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "NGramModel":
        if obj.get("format") != cls.FORMAT:
            raise ValidationError(f"unsupported model container {obj.get('format')!r}")
        counts = [
            {int(code): {int(t): int(c) for t, c in succ.items()} for code, succ in table.items()}
            for table in obj["counts"]
        ]
        totals = [
            {code: sum(succ.values()) for code, succ in table.items()} for table in counts
        ]
        return cls(
            order=int(obj["order"]),
            add_k=float(obj["add_k"]),
            vocabulary=obj["vocabulary"],
            counts=counts,
            context_totals=totals,
        )


def fit_ngram(corpus: Corpus | Iterable[Document], order: int = 3, add_k: float = 0.01) -> NGramModel:
    """Fit an n-gram kernel by exhaustive counting of the tokenized corpus.

    Counts are independent of document order. Each document contributes the
    events of the padded sequence BOS^(n-1) + tokens + EOS.
    """
    docs = list(corpus)
    if not docs:
        raise FitError("cannot fit an n-gram model on an empty corpus")
    if not (2 <= order <= 5):
        raise ValidationError(f"order must lie in [2, 5], got {order}")
    if add_k <= 0:
        raise ValidationError("add-k smoothing constant must be > 0")

    vocab: set[str] = set()
    token_lists: list[tuple[str, ...]] = []
    for doc in docs:
        toks = doc.tokens if isinstance(doc, Document) else tuple(tokenize(str(doc)))
        token_lists.append(toks)
        vocab.update(toks)
    if not vocab and all(len(t) == 0 for t in token_lists):
        raise FitError("corpus contains no tokens")

    vocabulary = tuple(sorted(vocab))
    token_to_id = {t: i for i, t in enumerate(vocabulary)}
    nv = len(vocabulary)
    bos_id, eos_id = nv, nv + 1
    base = nv + 3

    counts: list[dict[int, dict[int, int]]] = [dict() for _ in range(order)]
    totals: list[dict[int, int]] = [dict() for _ in range(order)]
    counts[0][0] = {}
    totals[0][0] = 0

    uni = counts[0][0]
    for toks in token_lists:
        seq = [bos_id] * (order - 1) + [token_to_id[t] for t in toks] + [eos_id]
        # codes[L] encodes the last L tokens before the current position.
        codes = [0] * order
        for L in range(1, order):
            c = 0
            for t in seq[order - 1 - L : order - 1]:
                c = c * base + t + 1
            codes[L] = c
        for i in range(order - 1, len(seq)):
            w = seq[i]
            uni[w] = uni.get(w, 0) + 1
            totals[0][0] += 1
            for L in range(1, order):
                code = codes[L]
                table = counts[L]
                succ = table.get(code)
                if succ is None:
                    succ = table[code] = {}
                    totals[L][code] = 0
                succ[w] = succ.get(w, 0) + 1
                totals[L][code] += 1
            for L in range(order - 1, 0, -1):
                codes[L] = codes[L - 1] * base + w + 1

    return NGramModel(
        order=order,
        add_k=add_k,
        vocabulary=vocabulary,
        counts=counts,
        context_totals=totals,
    )


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def decode_distribution(
    model: NGramModel,
    context: Sequence[str],
    config: SamplerConfig,
    emitted: Sequence[str] = (),
    log: RunLog | None = None,
) -> tuple[list[str], list[float]]:
    """The post-transform sampling distribution for a context (for tests and
    introspection). Returns surviving tokens and their renormalized
    probabilities; the end sentinel appears as EOS."""
    ctx_ids = [
        model.bos_id if t == BOS else model.eos_id if t == EOS else model.token_id(t)
        for t in context
    ]
    emitted_ids = frozenset(model.token_id(t) for t in emitted)
    ids, cum = _transformed_distribution(model, tuple(ctx_ids), config, emitted_ids, log)
    probs = [cum[0]] + [cum[i] - cum[i - 1] for i in range(1, len(cum))]
    names = [
        EOS if i == model.eos_id else BOS if i == model.bos_id else model.id_to_token[i]
        for i in ids
    ]
    return names, probs


def _transformed_distribution(
    model: NGramModel,
    ctx_ids: tuple[int, ...],
    config: SamplerConfig,
    emitted_ids: frozenset[int],
    log: RunLog | None,
) -> tuple[list[int], list[float]]:
    """Apply penalty -> temperature -> top-k -> top-p -> renormalize.

    Returns candidate ids and cumulative probabilities ready for inverse-CDF
    sampling.
    """
    successors, total = model._longest_observed(ctx_ids)
    k = model.add_k
    denom = total + k * model.smoothing_v
    support = model.smoothing_v - 1  # all tokens + EOS, minus masked BOS

    top_k = config.top_k if config.top_k is not None else support
    n_cand = min(top_k, support)

    observed = sorted(
        ((w, c) for w, c in successors.items() if w != model.bos_id),
        key=lambda wc: (-wc[1], wc[0]),
    )
    taken = observed[:n_cand]
    cand_ids = [w for w, _ in taken]
    logps = [math.log((c + k) / denom) for _, c in taken]

    fills = n_cand - len(taken)
    if fills > 0:
        floor_logp = math.log(k / denom)
        seen = successors
        order_ids = model._fill_order()
        nfo = len(order_ids)
        mix = 0
        for t in ctx_ids:
            mix = (mix * 1000003 + t + 1) & 0x7FFFFFFF
        start = (mix * 2654435761) % nfo
        j = start
        while fills > 0:
            w = order_ids[j]
            j = (j + 1) % nfo
            if w in seen:
                if j == start:
                    break
                continue
            cand_ids.append(w)
            logps.append(floor_logp)
            fills -= 1
            if j == start:
                break

    if config.repetition_penalty != 1.0 and emitted_ids:
        pen = config.repetition_penalty
        for i, w in enumerate(cand_ids):
            if w in emitted_ids:
                logps[i] = logps[i] * pen  # log-probs are negative

    if config.temperature <= _GREEDY_TEMPERATURE:
        best = max(range(len(cand_ids)), key=lambda i: (logps[i], -cand_ids[i]))
        return [cand_ids[best]], [1.0]

    scores = np.asarray(logps) / config.temperature
    scores -= scores.max()
    probs = np.exp(scores)
    probs /= probs.sum()

    order = np.argsort(-probs, kind="stable")
    probs = probs[order]
    ids_sorted = [cand_ids[i] for i in order]
    cum = np.cumsum(probs)
    cut = int(np.searchsorted(cum, config.top_p, side="left"))
    if cut >= len(cum):
        cut = len(cum) - 1
    survivors = cut + 1
    if survivors < 1:  # defensive: nucleus kept nothing, fall back to argmax
        if log is not None:
            log.record(f"top-p produced empty nucleus at context {ctx_ids}; argmax fallback")
        survivors = 1
    kept = probs[:survivors]
    kept = kept / kept.sum()
    return ids_sorted[:survivors], np.cumsum(kept).tolist()


def sample_text(
    model: NGramModel,
    config: SamplerConfig,
    n_docs: int,
    seed: int,
    generation: int = 1,
    section: str = "report",
    id_prefix: str | None = None,
    log: RunLog | None = None,
) -> list[Document]:
    """Sample synthetic documents. Identical seeds give identical output.

    A document ends at the end sentinel or at max-length. If the very first
    draw is the end sentinel, the step is replaced by the most probable
    non-terminal candidate so every document carries at least one token (the
    event is recorded in the run log).
    """
    prefix = id_prefix if id_prefix is not None else f"g{generation}"
    rng = derive_rng(seed, "sample-text", generation)
    order = model.order
    id_to_token = model.id_to_token
    penalty_active = config.repetition_penalty != 1.0
    cache: dict[tuple[int, ...], tuple[list[int], list[float]]] = {}

    docs: list[Document] = []
    start_ctx = (model.bos_id,) * (order - 1)
    for i in range(n_docs):
        uniforms = rng.random(config.max_length)
        token_ids = _decode_stream(
            model, config, start_ctx, uniforms, cache, penalty_active, log
        )
        text = " ".join(id_to_token[t] for t in token_ids)
        docs.append(
            Document(
                id=f"{prefix}-{i:06d}",
                sections={section: text},
                provenance=Provenance.synthetic(generation),
                labels=frozenset(),
            )
        )
    return docs


def _decode_stream(
    model: NGramModel,
    config: SamplerConfig,
    ctx: tuple[int, ...],
    uniforms: np.ndarray,
    cache: dict,
    penalty_active: bool,
    log: RunLog | None,
) -> list[int]:
    eos = model.eos_id
    token_ids: list[int] = []
    emitted: set[int] = set()
    draws = uniforms.tolist()
    cache_get = cache.get
    for step, u in enumerate(draws):
        if penalty_active:
            ids, cum = _transformed_distribution(
                model, ctx, config, frozenset(emitted), log
            )
        else:
            entry = cache_get(ctx)
            if entry is None:
                entry = _transformed_distribution(model, ctx, config, frozenset(), log)
                cache[ctx] = entry
            ids, cum = entry
        j = bisect_right(cum, u)
        if j >= len(ids):
            j = len(ids) - 1
        w = ids[j]
        if w == eos:
            if step == 0 and not token_ids:
                non_terminal = [t for t in ids if t != eos]
                if not non_terminal:
                    if log is not None:
                        log.record("first-step distribution was pure EOS; emitting fallback token")
                    w = 0
                else:
                    if log is not None:
                        log.record("first draw was EOS; substituted most probable token")
                    w = non_terminal[0]
            else:
                break
        token_ids.append(w)
        if penalty_active:
            emitted.add(w)
        ctx = ctx[1:] + (w,)
    return token_ids


def conditional_generate(
    model: NGramModel,
    context_text: str,
    config: SamplerConfig = CONDITIONAL_SAMPLER,
    seed: int = 0,
    generation: int = 1,
    log: RunLog | None = None,
) -> str:
    """Prime the kernel state with the context tokens, then decode the target.

    The returned text excludes the context. Decoding follows the same
    transform pipeline as sample_text.
    """
    ctx_tokens = tokenize(context_text)
    if not ctx_tokens:
        raise ValidationError("conditional generation requires a non-empty context")
    ids = [model.token_id(t) for t in ctx_tokens]
    padded = [model.bos_id] * (model.order - 1) + ids
    ctx = tuple(padded[-(model.order - 1) :])
    rng = derive_rng(seed, "conditional", generation)
    uniforms = rng.random(config.max_length)
    cache: dict = {}
    token_ids = _decode_stream(
        model, config, ctx, uniforms, cache, config.repetition_penalty != 1.0, log
    )
    return " ".join(model.id_to_token[t] for t in token_ids)


def model_perplexity(model: NGramModel, texts) -> float:
    """exp of the mean negative log-probability per scored token.

    Scored tokens include the end sentinel of every document. Accepts a
    Corpus, an iterable of Documents, or an iterable of strings.
    """
    total_logp = 0.0
    n_events = 0
    order = model.order
    for item in _iter_token_lists(texts):
        ids = [model.token_id(t) for t in item]
        seq = [model.bos_id] * (order - 1) + ids + [model.eos_id]
        for i in range(order - 1, len(seq)):
            total_logp += model.log_prob_token(seq[max(0, i - order + 1) : i], seq[i])
            n_events += 1
    if n_events == 0:
        raise ValidationError("perplexity needs at least one document")
    return math.exp(-total_logp / n_events)


def _iter_token_lists(texts) -> Iterable[Sequence[str]]:
    if isinstance(texts, Corpus):
        texts = texts.documents
    for item in texts:
        if isinstance(item, Document):
            yield item.tokens
        elif isinstance(item, str):
            yield tokenize(item)
        else:
            yield tuple(item)
