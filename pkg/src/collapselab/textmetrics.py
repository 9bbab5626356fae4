"""Text-quality measurements: lexical diversity, repetition, medical-term
content, coherence, co-occurrence, clinical-vs-template content, grounding,
readability, overlap scores, and section completeness.

All metrics are pure functions over immutable inputs and permutation
invariant over document order. Repetition rates use the distinct-n-gram
denominator (fraction of distinct n-grams occurring more than once); the
serialized column names state this ("repetition_rate_distinct_nK") so every
report header carries the definition.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CONDITIONS, Corpus, Document, Lexicon, tokenize
from .errors import ValidationError
from .safety import FindingDetector, positive_findings

# ---------------------------------------------------------------------------
# Shared sentence splitting
# ---------------------------------------------------------------------------

_ABBREVIATIONS = frozenset(
    {"dr", "mr", "mrs", "ms", "prof", "st", "vs", "etc", "eg", "ie", "fig", "approx"}
)
_BOUNDARY_RE = re.compile(r"([.!?]+)(\s+)(?=[A-Z])")
_HARD_BREAK_RE = re.compile(r"\n\s*\n")


def split_sentences(text: str) -> list[str]:
    """Sentence boundaries: terminal punctuation followed by whitespace and a
    capital letter (with an abbreviation stop-list), plus hard paragraph
    breaks and end of text."""
    sentences: list[str] = []
    for block in _HARD_BREAK_RE.split(text):
        start = 0
        for m in _BOUNDARY_RE.finditer(block):
            prev_word = re.findall(r"[A-Za-z]+", block[start : m.start() + 1])
            if prev_word and prev_word[-1].lower() in _ABBREVIATIONS:
                continue
            sentences.append(block[start : m.end(1)].strip())
            start = m.end()
        tail = block[start:].strip()
        if tail:
            sentences.append(tail)
    return [s for s in sentences if s]


def _documents(corpus) -> list[Document]:
    if isinstance(corpus, Corpus):
        return list(corpus.documents)
    return list(corpus)


def _doc_text(doc) -> str:
    return doc.text if isinstance(doc, Document) else str(doc)


def _doc_tokens(doc) -> tuple[str, ...]:
    if isinstance(doc, Document):
        return doc.tokens
    return tuple(tokenize(str(doc)))


# ---------------------------------------------------------------------------
# Lexical profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LexicalReport:
    ttr: float
    total_tokens: int
    distinct_tokens: int
    vocabulary_size: int  # stopwords excluded
    repetition_rate: dict[int, float]  # distinct-n-gram denominator
    mean_length: float
    sd_length: float
    uniqueness_ratio: float
    top_opening_trigram_share: float


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def lexical_profile(
    documents, stopwords: Iterable[str] | None = None
) -> LexicalReport:
    """Pooled lexical diversity and repetition statistics.

    TTR is distinct / total over the pooled corpus (so TTR * total equals
    the distinct count exactly); vocabulary_size excludes stopwords;
    repetition_rate[n] is the fraction of distinct n-grams (within-document,
    pooled) appearing more than once; uniqueness is distinct full-document
    texts over documents.
    """
    docs = _documents(documents)
    token_lists = [_doc_tokens(d) for d in docs]
    total = sum(len(t) for t in token_lists)
    if total == 0:
        raise ValidationError("all documents are empty")
    stop = frozenset(stopwords) if stopwords is not None else frozenset()

    pooled: Counter = Counter()
    for toks in token_lists:
        pooled.update(toks)
    distinct = len(pooled)

    repetition: dict[int, float] = {}
    for n in (1, 2, 3):
        grams: Counter = Counter()
        for toks in token_lists:
            grams.update(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))
        if grams:
            repetition[n] = sum(1 for c in grams.values() if c > 1) / len(grams)
        else:
            repetition[n] = 0.0

    lengths = np.array([len(t) for t in token_lists], dtype=float)
    texts = [_doc_text(d) for d in docs]
    openings = Counter(tuple(t[:3]) for t in token_lists if len(t) >= 3)
    top_share = (
        max(openings.values()) / sum(openings.values()) if openings else 0.0
    )

    return LexicalReport(
        ttr=distinct / total,
        total_tokens=total,
        distinct_tokens=distinct,
        vocabulary_size=sum(1 for t in pooled if t not in stop),
        repetition_rate=repetition,
        mean_length=float(lengths.mean()),
        sd_length=float(lengths.std(ddof=0)),
        uniqueness_ratio=len(set(texts)) / len(texts),
        top_opening_trigram_share=top_share,
    )


# ---------------------------------------------------------------------------
# Medical term metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MedicalTermReport:
    term_density: float  # matched lexicon tokens / total tokens
    unique_terms: int
    per_category_rate: dict[str, float]  # matches per 1,000 words
    per_tier_counts: dict[str, int]
    matched_tokens: int
    total_tokens: int


def _phrase_index(lexicon: Lexicon) -> tuple[dict[str, list[tuple[str, ...]]], dict[str, list[str]]]:
    """first-token -> candidate phrases (longest first), and term -> categories."""
    by_first: dict[str, list[tuple[str, ...]]] = {}
    term_cats: dict[str, list[str]] = {}
    for cat, terms in lexicon.categories.items():
        for term in terms:
            term_cats.setdefault(term, []).append(cat)
            parts = tuple(term.split())
            bucket = by_first.setdefault(parts[0], [])
            if parts not in bucket:
                bucket.append(parts)
    for bucket in by_first.values():
        bucket.sort(key=len, reverse=True)
    return by_first, term_cats


def match_lexicon_terms(tokens: Sequence[str], lexicon: Lexicon) -> list[tuple[int, str]]:
    """Greedy whole-token matching, longest phrase wins, no overlap.

    Returns (position, term) pairs where term is the canonical
    space-joined form.
    """
    by_first, _ = _phrase_index(lexicon)
    matches: list[tuple[int, str]] = []
    i = 0
    n = len(tokens)
    while i < n:
        bucket = by_first.get(tokens[i])
        if bucket:
            for parts in bucket:
                L = len(parts)
                if i + L <= n and tuple(tokens[i : i + L]) == parts:
                    matches.append((i, " ".join(parts)))
                    i += L
                    break
            else:
                i += 1
        else:
            i += 1
    return matches


def medical_term_metrics(documents, lexicon: Lexicon) -> MedicalTermReport:
    """Lexicon-term density and frequencies; matching is whole-token,
    case-insensitive (tokens are already normalized), multiword aware with
    longest match winning."""
    docs = _documents(documents)
    _, term_cats = _phrase_index(lexicon)
    total = 0
    matched_tokens = 0
    term_hits: Counter = Counter()
    cat_hits: Counter = Counter()
    tier_hits: Counter = Counter()
    for doc in docs:
        toks = _doc_tokens(doc)
        total += len(toks)
        for _, term in match_lexicon_terms(toks, lexicon):
            term_hits[term] += 1
            matched_tokens += len(term.split())
            for cat in term_cats.get(term, ()):
                cat_hits[cat] += 1
            tier = lexicon.tiers.get(term)
            if tier is not None:
                tier_hits[tier] += 1
    if total == 0:
        raise ValidationError("all documents are empty")
    per_cat = {
        cat: 1000.0 * cat_hits.get(cat, 0) / total for cat in lexicon.categories
    }
    return MedicalTermReport(
        term_density=matched_tokens / total,
        unique_terms=len(term_hits),
        per_category_rate=per_cat,
        per_tier_counts={t: tier_hits.get(t, 0) for t in ("general", "intermediate", "specific")},
        matched_tokens=matched_tokens,
        total_tokens=total,
    )


# ---------------------------------------------------------------------------
# Coherence
# ---------------------------------------------------------------------------


def _tfidf_vectors(sentence_tokens: list[list[str]]) -> list[dict[str, float]]:
    n = len(sentence_tokens)
    df: Counter = Counter()
    for toks in sentence_tokens:
        df.update(set(toks))
    idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
    vectors = []
    for toks in sentence_tokens:
        tf = Counter(toks)
        vectors.append({t: c * idf[t] for t, c in tf.items()})
    return vectors


def _cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b[t] for t, v in a.items() if t in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def coherence_profile(documents) -> tuple[float, int, int]:
    """(score, evaluated documents, skipped single-sentence documents).

    Score is the mean cosine similarity of tf-idf vectors of adjacent
    sentence pairs; idf is computed over the sentence population of the
    evaluated set.
    """
    docs = _documents(documents)
    doc_sentences: list[list[str]] = []
    skipped = 0
    for doc in docs:
        sents = split_sentences(_doc_text(doc))
        if len(sents) >= 2:
            doc_sentences.append(sents)
        else:
            skipped += 1
    if not doc_sentences:
        raise ValidationError("no document has two or more sentences")
    all_tokens = [tokenize(s) for sents in doc_sentences for s in sents]
    vectors = _tfidf_vectors(all_tokens)
    sims: list[float] = []
    pos = 0
    for sents in doc_sentences:
        for i in range(len(sents) - 1):
            sims.append(_cosine(vectors[pos + i], vectors[pos + i + 1]))
        pos += len(sents)
    return sum(sims) / len(sims), len(doc_sentences), skipped


def coherence_score(documents) -> float:
    return coherence_profile(documents)[0]


# ---------------------------------------------------------------------------
# Condition co-occurrence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """Conditional probabilities P(col present | row present) over the fixed
    condition list. Rows with zero marginal count are flagged (NaN), never
    silently zeroed."""

    conditions: tuple[str, ...]
    matrix: tuple[tuple[float, ...], ...]  # NaN marks undefined rows
    marginal_counts: dict[str, int]
    undefined_rows: tuple[str, ...]

    def array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def probability(self, row: str, col: str) -> float:
        i = self.conditions.index(row)
        j = self.conditions.index(col)
        return self.matrix[i][j]


def cooccurrence_matrix(
    documents,
    conditions: Sequence[str] = CONDITIONS,
    detector: FindingDetector | None = None,
) -> CooccurrenceMatrix:
    """Pairwise conditionals from positive, non-negated text mentions."""
    if set(conditions) != set(CONDITIONS) or len(conditions) != len(CONDITIONS):
        raise ValidationError("condition list must be the fixed ten tracked conditions")
    docs = _documents(documents)
    conds = tuple(conditions)
    idx = {c: i for i, c in enumerate(conds)}
    joint = np.zeros((len(conds), len(conds)), dtype=float)
    marginals = np.zeros(len(conds), dtype=float)
    for doc in docs:
        present = positive_findings(doc, detector) & set(conds)
        for a in present:
            marginals[idx[a]] += 1
            for b in present:
                joint[idx[a], idx[b]] += 1
    matrix = np.full((len(conds), len(conds)), np.nan)
    undefined = []
    for i, c in enumerate(conds):
        if marginals[i] > 0:
            matrix[i] = joint[i] / marginals[i]
        else:
            undefined.append(c)
    return CooccurrenceMatrix(
        conditions=conds,
        matrix=tuple(tuple(float(v) for v in row) for row in matrix),
        marginal_counts={c: int(marginals[idx[c]]) for c in conds},
        undefined_rows=tuple(undefined),
    )


# ---------------------------------------------------------------------------
# Clinical vs template content
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContentReport:
    clinical_rate: float  # hits per 1,000 words
    template_rate: float
    ratio: float  # inf when template rate is zero
    ratio_defined: bool
    total_tokens: int


def _phrase_occurrences(tokens: Sequence[str], phrase: tuple[str, ...]) -> int:
    L = len(phrase)
    if L == 0 or len(tokens) < L:
        return 0
    return sum(1 for i in range(len(tokens) - L + 1) if tuple(tokens[i : i + L]) == phrase)


def content_ratio(documents, lexicon: Lexicon) -> ContentReport:
    """Pattern-hit rates for clinical-instruction vs template phrases,
    normalized per 1,000 words."""
    if not lexicon.clinical_patterns or not lexicon.template_patterns:
        raise ValidationError("pattern lists must be non-empty")
    docs = _documents(documents)
    clinical = [tuple(p.split()) for p in lexicon.clinical_patterns]
    template = [tuple(p.split()) for p in lexicon.template_patterns]
    total = 0
    c_hits = 0
    t_hits = 0
    for doc in docs:
        toks = _doc_tokens(doc)
        total += len(toks)
        for p in clinical:
            c_hits += _phrase_occurrences(toks, p)
        for p in template:
            t_hits += _phrase_occurrences(toks, p)
    if total == 0:
        raise ValidationError("all documents are empty")
    c_rate = 1000.0 * c_hits / total
    t_rate = 1000.0 * t_hits / total
    if t_rate > 0:
        return ContentReport(c_rate, t_rate, c_rate / t_rate, True, total)
    return ContentReport(c_rate, t_rate, math.inf, False, total)


# ---------------------------------------------------------------------------
# Grounding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundingReport:
    topic_cosine: float
    important_term_jaccard: float
    grounding_fraction: float  # NaN when the output has no medical terms
    grounding_defined: bool


def grounding_metrics(context: str, output: str, lexicon: Lexicon) -> GroundingReport:
    """Context/output agreement: tf-idf topic cosine over the evaluated pair,
    Jaccard overlap of top-decile weighted terms, and the fraction of output
    medical terms present in the context."""
    if not context.strip() or not output.strip():
        raise ValidationError("context and output must be non-empty")
    ctx_tokens = tokenize(context)
    out_tokens = tokenize(output)
    vectors = _tfidf_vectors([ctx_tokens, out_tokens])
    cos = _cosine(vectors[0], vectors[1])

    def top_decile(vec: Mapping[str, float]) -> set[str]:
        if not vec:
            return set()
        k = max(1, math.ceil(0.1 * len(vec)))
        return set(sorted(vec, key=lambda t: (-vec[t], t))[:k])

    ta = top_decile(vectors[0])
    tb = top_decile(vectors[1])
    union = ta | tb
    jaccard = len(ta & tb) / len(union) if union else 0.0

    ctx_terms = {term for _, term in match_lexicon_terms(ctx_tokens, lexicon)}
    out_terms = {term for _, term in match_lexicon_terms(out_tokens, lexicon)}
    if out_terms:
        grounding = len(out_terms & ctx_terms) / len(out_terms)
        defined = True
    else:
        grounding = math.nan
        defined = False
    return GroundingReport(cos, jaccard, grounding, defined)


# ---------------------------------------------------------------------------
# Readability
# ---------------------------------------------------------------------------

_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


def count_syllables(word: str) -> int:
    """Vowel-group counting with a silent-e rule and a minimum of one: count
    maximal [aeiouy]+ runs; subtract one for a trailing 'e' when more than
    one run exists; floor at one."""
    w = word.lower()
    groups = _VOWEL_GROUP_RE.findall(w)
    n = len(groups)
    if n > 1 and w.endswith("e"):
        n -= 1
    return max(n, 1)


def readability(document) -> float:
    """Flesch Reading Ease: 206.835 - 1.015 (words/sentences)
    - 84.6 (syllables/words)."""
    text = _doc_text(document)
    sentences = split_sentences(text)
    words = tokenize(text)
    if not sentences or not words:
        raise ValidationError("readability needs at least one sentence with words")
    syllables = sum(count_syllables(w) for w in words)
    return 206.835 - 1.015 * (len(words) / len(sentences)) - 84.6 * (syllables / len(words))


# ---------------------------------------------------------------------------
# Overlap scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapReport:
    bleu: dict[int, float]  # BLEU-1 .. BLEU-4
    rouge_l: float
    empty_candidates: int


def overlap_scores(candidates: Sequence[str], references: Sequence[str]) -> OverlapReport:
    """Corpus BLEU-1..4 (uniform weights, brevity penalty) and mean
    sentence-level ROUGE-L F-measure (beta = 1). Empty candidates score
    zero and are flagged."""
    if len(candidates) != len(references):
        raise ValidationError("candidates and references must be equal-length lists")
    if not candidates:
        raise ValidationError("need at least one pair")
    cand_tokens = [tokenize(c) for c in candidates]
    ref_tokens = [tokenize(r) for r in references]
    empty = sum(1 for t in cand_tokens if not t)

    cand_len = sum(len(t) for t in cand_tokens)
    ref_len = sum(len(t) for t in ref_tokens)
    precisions: dict[int, float] = {}
    for n in range(1, 5):
        clipped = 0
        total = 0
        for ct, rt in zip(cand_tokens, ref_tokens):
            cc = ngram_counts(ct, n)
            rc = ngram_counts(rt, n)
            clipped += sum(min(c, rc.get(g, 0)) for g, c in cc.items())
            total += max(len(ct) - n + 1, 0)
        precisions[n] = clipped / total if total > 0 else 0.0

    if cand_len == 0:
        bp = 0.0
    elif cand_len < ref_len:
        bp = math.exp(1.0 - ref_len / cand_len)
    else:
        bp = 1.0
    bleu: dict[int, float] = {}
    for n in range(1, 5):
        ps = [precisions[i] for i in range(1, n + 1)]
        if min(ps) > 0:
            bleu[n] = bp * math.exp(sum(math.log(p) for p in ps) / n)
        else:
            bleu[n] = 0.0

    rouge_values = []
    for ct, rt in zip(cand_tokens, ref_tokens):
        rouge_values.append(_rouge_l_f1(ct, rt))
    return OverlapReport(
        bleu=bleu,
        rouge_l=sum(rouge_values) / len(rouge_values),
        empty_candidates=empty,
    )


def _rouge_l_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    from .stats import lcs_length

    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Section completeness
# ---------------------------------------------------------------------------


def section_completeness(documents, schema: Sequence[str]) -> dict[str, float]:
    """Per-section fraction of documents carrying a non-empty section."""
    if not schema:
        raise ValidationError("section schema must be non-empty")
    docs = _documents(documents)
    if not docs:
        raise ValidationError("need at least one document")
    out: dict[str, float] = {}
    for name in schema:
        key = name.lower()
        hits = sum(
            1
            for d in docs
            if isinstance(d, Document) and d.sections.get(key, "").strip()
        )
        out[key] = hits / len(docs)
    return out
