"""Corpus data model, ingestion, lexicons, and the toy-population synthesizer.

Documents are immutable once constructed and safe to share across threads.
One shared token normalizer (lowercase, split on non-alphanumeric runs,
numerals kept) is used by every metric in the package so cross-generation
comparisons stay consistent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .seeding import derive_rng

_TOKEN_RE = re.compile(r"[a-z0-9]+")

AGE_MIN = 18
AGE_MAX = 100

# The ten tracked conditions, in canonical order. Co-occurrence matrices,
# toy label sampling, and the finding detector all index against this list.
CONDITIONS = (
    "pneumonia",
    "effusion",
    "edema",
    "atelectasis",
    "pneumothorax",
    "consolidation",
    "mass",
    "nodule",
    "fracture",
    "cardiomegaly",
)


def tokenize(text: str) -> list[str]:
    """Normalize text to tokens: lowercase, alphanumeric runs only."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Provenance:
    """Origin tag: real data or synthetic output of a given generation."""

    kind: str  # "real" | "synthetic"
    generation: int | None = None

    def __post_init__(self):
        if self.kind not in ("real", "synthetic"):
            raise ValidationError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "synthetic":
            if self.generation is None or self.generation < 0:
                raise ValidationError(
                    "synthetic provenance requires a generation index >= 0"
                )
        elif self.generation is not None:
            raise ValidationError("real provenance carries no generation index")

    @classmethod
    def real(cls) -> "Provenance":
        return cls("real")

    @classmethod
    def synthetic(cls, generation: int) -> "Provenance":
        return cls("synthetic", generation)

    @property
    def is_real(self) -> bool:
        return self.kind == "real"

    def __str__(self) -> str:
        if self.is_real:
            return "real"
        return f"synthetic,gen={self.generation}"

    @classmethod
    def parse(cls, text: str) -> "Provenance":
        text = text.strip().lower()
        if text == "real":
            return cls.real()
        m = re.fullmatch(r"synthetic(?:[,:]\s*(?:gen=)?(\d+))?", text)
        if m:
            if m.group(1) is None:
                raise FormatError(
                    f"synthetic provenance needs a generation index: {text!r}"
                )
            return cls.synthetic(int(m.group(1)))
        raise FormatError(f"cannot parse provenance {text!r}")


@dataclass(frozen=True)
class Demographics:
    sex: str  # "male" | "female"
    age: int

    def __post_init__(self):
        if self.sex not in ("male", "female"):
            raise ValidationError(f"sex must be male or female, got {self.sex!r}")
        if not (AGE_MIN <= self.age <= AGE_MAX):
            raise ValidationError(
                f"age {self.age} outside declared range [{AGE_MIN}, {AGE_MAX}]"
            )


class Document:
    """A provenance-tagged text record with named sections.

    Tokens are derived lazily from the concatenated section texts and cached.
    At least one section must be non-empty. Demographics are optional (file
    headers carrying them are optional).
    """

    __slots__ = ("id", "sections", "provenance", "labels", "demographics", "_tokens")

    def __init__(
        self,
        id: str,
        sections: dict[str, str],
        provenance: Provenance | None = None,
        labels: frozenset[str] | set[str] = frozenset(),
        demographics: Demographics | None = None,
    ):
        if not sections or not any(v.strip() for v in sections.values()):
            raise ValidationError(f"document {id!r} has no non-empty section")
        self.id = id
        self.sections = dict(sections)
        self.provenance = provenance if provenance is not None else Provenance.real()
        self.labels = frozenset(labels)
        self.demographics = demographics
        self._tokens: tuple[str, ...] | None = None

    @property
    def text(self) -> str:
        return "\n".join(v for v in self.sections.values() if v.strip())

    @property
    def tokens(self) -> tuple[str, ...]:
        if self._tokens is None:
            self._tokens = tuple(tokenize(self.text))
        return self._tokens

    def __repr__(self) -> str:
        return f"Document({self.id!r}, {len(self.sections)} sections, {self.provenance})"


@dataclass(frozen=True)
class Corpus:
    """An immutable collection of documents, optionally naming its split."""

    documents: tuple[Document, ...]
    split: str | None = None

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, i):
        return self.documents[i]

    def vocabulary(self) -> set[str]:
        vocab: set[str] = set()
        for doc in self.documents:
            vocab.update(doc.tokens)
        return vocab

    def token_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for doc in self.documents:
            for tok in doc.tokens:
                counts[tok] = counts.get(tok, 0) + 1
        return counts

    def total_tokens(self) -> int:
        return sum(len(doc.tokens) for doc in self.documents)


# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------

TIERS = ("general", "intermediate", "specific")


@dataclass(frozen=True)
class Lexicon:
    """Curated term lists: categories, specificity tiers, stopwords, and
    clinical-vs-template phrase patterns.

    Pattern lists fall back to the shipped versioned defaults when a lexicon
    file does not override them, so they are always non-empty.
    """

    categories: dict[str, tuple[str, ...]]
    tiers: dict[str, str] = field(default_factory=dict)
    stopwords: frozenset[str] = frozenset()
    clinical_patterns: tuple[str, ...] = ()
    template_patterns: tuple[str, ...] = ()
    version: str = "v1"

    def __post_init__(self):
        if not self.categories:
            raise ValidationError("lexicon has no categories")
        for term, tier in self.tiers.items():
            if tier not in TIERS:
                raise ValidationError(f"unknown tier {tier!r} for term {term!r}")
        if not self.clinical_patterns or not self.template_patterns:
            defaults = _default_patterns()
            object.__setattr__(
                self,
                "clinical_patterns",
                self.clinical_patterns or defaults[0],
            )
            object.__setattr__(
                self,
                "template_patterns",
                self.template_patterns or defaults[1],
            )

    def all_terms(self) -> set[str]:
        terms: set[str] = set()
        for entries in self.categories.values():
            terms.update(entries)
        return terms


def _normalize_term(raw: str) -> str:
    return " ".join(tokenize(raw))


def _data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def _default_patterns() -> tuple[tuple[str, ...], tuple[str, ...]]:
    clinical = _read_pattern_file(_data_path("clinical_instruction_patterns_v1.txt"))
    template = _read_pattern_file(_data_path("template_patterns_v1.txt"))
    return clinical, template


def _read_pattern_file(path: Path) -> tuple[str, ...]:
    lines = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(_normalize_term(line))
    return tuple(lines)


# Category names with special meaning in lexicon files.
_STOPWORD_BLOCK = "stopwords"
_CLINICAL_BLOCK = "clinical_instructions"
_TEMPLATE_BLOCK = "template_phrases"


def load_lexicon(path: str | Path) -> Lexicon:
    """Parse a lexicon file.

    Format: ``[category]`` block headers, one term per line, optional tier
    annotation ``term @tier``. The special blocks [stopwords],
    [clinical_instructions] and [template_phrases] feed the corresponding
    lexicon fields instead of term categories. A term annotated with more
    than one tier (in any category) is an error.
    """
    path = Path(path)
    categories: dict[str, list[str]] = {}
    tiers: dict[str, str] = {}
    stopwords: set[str] = set()
    clinical: list[str] = []
    template: list[str] = []
    version = "v1"
    current: str | None = None

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"version\s*[:=]?\s*(\S+)", line, re.IGNORECASE)
            if m:
                version = m.group(1)
            continue
        m = re.fullmatch(r"\[([a-zA-Z0-9_ -]+)\]", line)
        if m:
            current = m.group(1).strip().lower().replace(" ", "_")
            continue
        if current is None:
            raise FormatError(f"{path.name}:{lineno}: term before any [category] header")
        term, tier = line, None
        if "@" in line:
            term, _, tier_part = line.partition("@")
            tier = tier_part.strip().lower()
        term = _normalize_term(term)
        if not term:
            raise FormatError(f"{path.name}:{lineno}: empty term")
        if current == _STOPWORD_BLOCK:
            stopwords.add(term)
        elif current == _CLINICAL_BLOCK:
            clinical.append(term)
        elif current == _TEMPLATE_BLOCK:
            template.append(term)
        else:
            categories.setdefault(current, [])
            if term not in categories[current]:
                categories[current].append(term)
            if tier is not None:
                if tier not in TIERS:
                    raise FormatError(f"{path.name}:{lineno}: unknown tier {tier!r}")
                if term in tiers and tiers[term] != tier:
                    raise FormatError(
                        f"{path.name}:{lineno}: term {term!r} assigned to two tiers "
                        f"({tiers[term]!r} and {tier!r})"
                    )
                if term in tiers:
                    raise FormatError(
                        f"{path.name}:{lineno}: term {term!r} tier-annotated twice"
                    )
                tiers[term] = tier

    if not categories:
        raise FormatError(f"{path.name}: no term categories found")
    return Lexicon(
        categories={k: tuple(v) for k, v in categories.items()},
        tiers=tiers,
        stopwords=frozenset(stopwords),
        clinical_patterns=tuple(clinical),
        template_patterns=tuple(template),
        version=version,
    )


_DEFAULT_LEXICON: Lexicon | None = None


def default_lexicon() -> Lexicon:
    """The shipped clinical lexicon (cached)."""
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_lexicon(_data_path("lexicon_v1.txt"))
    return _DEFAULT_LEXICON


def default_stopwords() -> frozenset[str]:
    return default_lexicon().stopwords


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^([A-Za-z][A-Za-z0-9 _/\-]*):\s?(.*)$")
_HEADER_RE = re.compile(r"^#(\w+)=(.*)$")


def ingest_documents(path: str | Path, format: str = "sectioned-text") -> Corpus:
    """Load a corpus file.

    ``sectioned-text``: records separated by blank lines; sections introduced
    by ``SECTION-NAME:`` headers; optional ``#provenance=``, ``#labels=``,
    ``#sex=``, ``#age=`` and ``#id=`` header lines.

    ``line-record``: one JSON object per line with keys ``id``, ``sections``,
    ``provenance``, ``generation``, ``labels``, ``sex``, ``age``.
    """
    path = Path(path)
    if format == "sectioned-text":
        docs = _parse_sectioned(path)
    elif format == "line-record":
        docs = _parse_line_records(path)
    else:
        raise ValidationError(f"unknown corpus format {format!r}")
    if not docs:
        raise FormatError(f"{path.name}: no records found")
    return Corpus(documents=tuple(docs))


def _parse_sectioned(path: Path) -> list[Document]:
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise FormatError(f"{path.name}: empty file")
    docs: list[Document] = []
    blocks = re.split(r"\n\s*\n", text.strip())
    for idx, block in enumerate(blocks):
        try:
            docs.append(_parse_record_block(block, default_id=f"doc-{idx:06d}"))
        except (ValidationError, FormatError) as exc:
            raise FormatError(f"{path.name}: record {idx}: {exc}") from exc
    return docs


def _parse_record_block(block: str, default_id: str) -> Document:
    doc_id = default_id
    provenance = Provenance.real()
    labels: set[str] = set()
    sex: str | None = None
    age: int | None = None
    sections: dict[str, str] = {}
    current: str | None = None

    for line in block.splitlines():
        hm = _HEADER_RE.match(line.strip())
        if hm and current is None:
            key, value = hm.group(1).lower(), hm.group(2).strip()
            if key == "id":
                doc_id = value
            elif key == "provenance":
                provenance = Provenance.parse(value)
            elif key == "labels":
                labels = {t for t in (_normalize_term(v) for v in value.split(",")) if t}
            elif key == "sex":
                sex = value.lower()
            elif key == "age":
                try:
                    age = int(value)
                except ValueError:
                    raise FormatError(f"age {value!r} is not an integer")
            else:
                raise FormatError(f"unknown header #{key}=")
            continue
        sm = _SECTION_RE.match(line)
        if sm:
            current = sm.group(1).strip().lower()
            sections[current] = sm.group(2)
        elif current is not None:
            sections[current] = (sections[current] + "\n" + line).strip()
        elif line.strip():
            raise FormatError(f"text before first section header: {line.strip()[:40]!r}")

    demographics = None
    if sex is not None or age is not None:
        if sex is None or age is None:
            raise FormatError("demographics need both #sex= and #age=")
        demographics = Demographics(sex=sex, age=age)
    return Document(
        id=doc_id,
        sections=sections,
        provenance=provenance,
        labels=labels,
        demographics=demographics,
    )


def _parse_line_records(path: Path) -> list[Document]:
    import json

    docs: list[Document] = []
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path.name}: empty file")
    for idx, line in enumerate(lines):
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise FormatError("record is not an object")
            prov_text = obj.get("provenance", "real")
            if prov_text == "synthetic":
                provenance = Provenance.synthetic(int(obj["generation"]))
            else:
                provenance = Provenance.parse(str(prov_text))
            demographics = None
            if "sex" in obj or "age" in obj:
                demographics = Demographics(sex=obj["sex"], age=int(obj["age"]))
            docs.append(
                Document(
                    id=str(obj.get("id", f"doc-{idx:06d}")),
                    sections={str(k).lower(): str(v) for k, v in obj["sections"].items()},
                    provenance=provenance,
                    labels={_normalize_term(t) for t in obj.get("labels", [])},
                    demographics=demographics,
                )
            )
        except (KeyError, ValueError, ValidationError, FormatError) as exc:
            raise FormatError(f"{path.name}: record {idx}: {exc}") from exc
    return docs


def write_sectioned(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus in sectioned-text format (inverse of ingestion)."""
    path = Path(path)
    blocks = []
    for doc in corpus:
        lines = [f"#id={doc.id}", f"#provenance={doc.provenance}"]
        if doc.labels:
            lines.append("#labels=" + ",".join(sorted(doc.labels)))
        if doc.demographics is not None:
            lines.append(f"#sex={doc.demographics.sex}")
            lines.append(f"#age={doc.demographics.age}")
        for name, text in doc.sections.items():
            lines.append(f"{name}: {text}")
        blocks.append("\n".join(lines))
    path.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

_SPLIT_NAMES = ("train", "val", "test")


def split_corpus(
    corpus: Corpus,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic stratified split into (train, val, test).

    Stratification key is the sorted label multiset. Within each stratum the
    order is shuffled by a stream derived from the seed; quotas are assigned
    with a running largest-remainder carry so the global sizes are exact.
    """
    if len(fractions) != 3:
        raise ValidationError("fractions must be (train, val, test)")
    if any(f <= 0 for f in fractions):
        raise ValidationError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions sum to {sum(fractions)!r}, not 1")
    if len(corpus) < 3:
        raise ValidationError(f"corpus of {len(corpus)} documents is too small to split")

    strata: dict[tuple[str, ...], list[Document]] = {}
    for doc in corpus:
        strata.setdefault(tuple(sorted(doc.labels)), []).append(doc)

    rng = derive_rng(seed, "split")
    out: dict[str, list[Document]] = {name: [] for name in _SPLIT_NAMES}
    exact = [0.0, 0.0, 0.0]
    assigned = [0, 0, 0]
    for key in sorted(strata):
        docs = strata[key]
        order = rng.permutation(len(docs))
        shuffled = [docs[i] for i in order]
        quotas = []
        for i, f in enumerate(fractions):
            exact[i] += f * len(docs)
            quotas.append(int(exact[i] + 1e-9) - assigned[i])
        # Distribute any leftover to the splits with the largest residual debt.
        leftover = len(docs) - sum(quotas)
        while leftover > 0:
            debts = [exact[i] - (assigned[i] + quotas[i]) for i in range(3)]
            j = max(range(3), key=lambda i: (debts[i], -i))
            quotas[j] += 1
            leftover -= 1
        pos = 0
        for i, name in enumerate(_SPLIT_NAMES):
            out[name].extend(shuffled[pos : pos + quotas[i]])
            pos += quotas[i]
            assigned[i] += quotas[i]

    return tuple(
        Corpus(documents=tuple(out[name]), split=name) for name in _SPLIT_NAMES
    )  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Toy population synthesizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SectionSpec:
    name: str
    mean_tokens: float
    sd_tokens: float


DEFAULT_SECTION_SCHEMA = (
    SectionSpec("findings", 18.0, 5.0),
    SectionSpec("impression", 9.0, 3.0),
)


def default_cooccurrence_matrix() -> np.ndarray:
    """Plausible target conditionals P(col | row) over CONDITIONS.

    Unit diagonal; a few strong clinically motivated pairs, weak background
    elsewhere.
    """
    m = np.full((10, 10), 0.08)
    np.fill_diagonal(m, 1.0)
    idx = {c: i for i, c in enumerate(CONDITIONS)}
    strong = {
        ("pneumonia", "effusion"): 0.88,
        ("pneumonia", "consolidation"): 0.71,
        ("edema", "cardiomegaly"): 0.55,
        ("effusion", "atelectasis"): 0.35,
        ("mass", "nodule"): 0.25,
    }
    for (a, b), p in strong.items():
        m[idx[a], idx[b]] = p
    return m


@dataclass(frozen=True)
class ToyPopulationSpec:
    """Parameters of the seeded stand-in population.

    Documents are walks over a fixed phrase graph, mirroring the formulaic
    structure of clinical prose: a seeded inventory of multi-token phrases
    (contents drawn from the Zipf token distribution, every vocabulary type
    guaranteed at least one home), where each phrase carries a small
    weighted successor set mixing frequency-biased and uniform links. Phrase
    contents are independent of phrase usage, so token marginals follow the
    Zipf law in expectation. Set phrase_length to (1, 1) and branching to 0
    for fully i.i.d. tokens.

    Condition labels are drawn by sequential conditional sampling against
    the target co-occurrence matrix row; label names are also written into
    the last section so text-level detectors can see them.
    """

    vocabulary_size: int
    zipf_exponent: float
    document_count: int
    seed: int
    section_schema: tuple[SectionSpec, ...] = DEFAULT_SECTION_SCHEMA
    cooccurrence: np.ndarray | None = None
    male_fraction: float = 0.532
    age_mean: float = 64.6
    age_sd: float = 17.3
    label_fraction: float = 0.9  # fraction of documents carrying labels
    phrase_inventory: int | None = None  # default: 2 * vocabulary_size
    phrase_length: tuple[int, int] = (3, 6)
    branching: int = 12  # successor phrases per phrase (0 = i.i.d. phrase draws)
    successor_decay: float = 0.65  # weight slope inside a successor set
    communities: int = 16  # topical phrase communities (1 = unclustered)
    community_exponent: float = 1.1  # usage slope across communities
    entry_phrases: int = 32  # shared preamble phrases documents open with
    shared_token_fraction: float = 0.2  # head ranks shared across communities

    def __post_init__(self):
        if self.zipf_exponent <= 0:
            raise ValidationError("zipf exponent must be positive")
        if not (0.0 <= self.male_fraction <= 1.0):
            raise ValidationError("male fraction must lie in [0, 1]")
        if self.document_count <= 0:
            raise ValidationError("document count must be positive")
        lo, hi = self.phrase_length
        if not (1 <= lo <= hi):
            raise ValidationError("phrase_length must satisfy 1 <= lo <= hi")
        if self.branching < 0:
            raise ValidationError("branching must be >= 0")
        if self.communities < 1 or self.entry_phrases < 1:
            raise ValidationError("communities and entry_phrases must be >= 1")
        if self.cooccurrence is not None:
            m = np.asarray(self.cooccurrence, dtype=float)
            if m.shape != (10, 10):
                raise ValidationError("co-occurrence matrix must be 10x10")
            if (m < 0).any() or (m > 1).any():
                raise ValidationError("co-occurrence entries must lie in [0, 1]")
            if not np.allclose(np.diag(m), 1.0):
                raise ValidationError("co-occurrence diagonal must be 1")


class _PhraseGraph:
    """Seeded phrase inventory with community structure.

    Phrases are grouped into topical communities whose usage follows a mild
    power law. Successor links stay inside the community except for one
    low-weight cross-community slot, so documents carry a topical identity
    the way clinical notes do; incoherent cross-topic mixtures are rare in
    authentic data. Documents open with shared preamble phrases (core
    vocabulary boilerplate) whose successor links fan out to the content
    communities, so no single context funnels all community entries.
    """

    def __init__(self, spec: ToyPopulationSpec, rng: np.random.Generator):
        v = spec.vocabulary_size
        ranks = np.arange(1, v + 1, dtype=float)
        token_probs = ranks ** (-spec.zipf_exponent)
        token_probs /= token_probs.sum()
        self.token_probs = token_probs
        lo, hi = spec.phrase_length
        if spec.branching == 0 and (lo, hi) == (1, 1):
            # Fully i.i.d. token mode: one phrase per vocabulary type, used
            # with exactly the Zipf token probabilities.
            self.phrases = [[t] for t in range(v)]
            self.successors = None
            self.phrase_cum = np.cumsum(token_probs).tolist()
            return
        n_phrases = spec.phrase_inventory or 2 * v
        n_comm = min(spec.communities, n_phrases)
        block = n_phrases // n_comm
        n_phrases = block * n_comm  # trim to whole communities

        # Communities share a core vocabulary (general language) and own an
        # exclusive slice (specialty terminology). The slice is interleaved
        # into the head of the community-local frequency ranking so each
        # community has high-frequency signature terms, the way clinical
        # note types lean on their own terminology.
        core = max(1, min(int(round(spec.shared_token_fraction * v)), v))
        slice_size = (v - core) // n_comm if n_comm > 0 else 0
        comm_tokens: list[np.ndarray] = []
        comm_token_probs: list[np.ndarray] = []
        zipf_local = None
        for c in range(n_comm):
            lo_t = core + c * slice_size
            hi_t = core + (c + 1) * slice_size if c < n_comm - 1 else v
            core_ids = list(range(core))
            slice_ids = list(range(lo_t, hi_t))
            ids: list[int] = []
            i = j = 0
            while i < len(core_ids) or j < len(slice_ids):
                if i < len(core_ids):
                    ids.append(core_ids[i])
                    i += 1
                if j < len(slice_ids):
                    ids.append(slice_ids[j])
                    j += 1
            arr = np.asarray(ids, dtype=np.int64)
            if zipf_local is None or len(zipf_local) != len(arr):
                zipf_local = np.arange(1, len(arr) + 1, dtype=float) ** (
                    -spec.zipf_exponent
                )
                zipf_local = zipf_local / zipf_local.sum()
            comm_tokens.append(arr)
            comm_token_probs.append(zipf_local)

        lens = rng.integers(lo, hi + 1, size=n_phrases)
        self.phrases: list[list[int]] = []
        for c in range(n_comm):
            ids = comm_tokens[c]
            probs = comm_token_probs[c]
            count = int(lens[c * block : (c + 1) * block].sum())
            flat = ids[rng.choice(len(ids), size=count, p=probs)].tolist()
            pos = 0
            for L in lens[c * block : (c + 1) * block]:
                self.phrases.append(flat[pos : pos + int(L)])
                pos += int(L)
        # Guarantee every vocabulary type at least one home in its owner
        # community so the corpus tail is a property of usage, not of
        # inventory accidents.
        present = {t for ph in self.phrases for t in ph}
        for t in range(v):
            if t in present:
                continue
            owner = 0 if t < core else min((t - core) // max(slice_size, 1), n_comm - 1)
            if t < core:
                owner = int(rng.integers(0, n_comm))
            host = owner * block + int(rng.integers(0, block))
            self.phrases[host].append(int(t))

        # Popularity inside a community follows the Zipf slope over the
        # community-local index.
        local_probs = np.arange(1, block + 1, dtype=float) ** (-spec.zipf_exponent)
        local_probs /= local_probs.sum()
        comm_probs = np.arange(1, n_comm + 1, dtype=float) ** (-spec.community_exponent)
        comm_probs /= comm_probs.sum()
        global_probs = np.repeat(comm_probs / block, block) * np.tile(
            local_probs * block, n_comm
        )
        global_probs /= global_probs.sum()

        g = spec.branching
        if g > 0:
            # Shared preamble phrases: short boilerplate built from core
            # vocabulary, appended after the content inventory.
            n_entry = spec.entry_phrases
            core_probs = token_probs[:core] / token_probs[:core].sum()
            entry_lens = rng.integers(2, 5, size=n_entry)
            for L in entry_lens:
                self.phrases.append(
                    rng.choice(core, size=int(L), p=core_probs).tolist()
                )

            n_total = n_phrases + n_entry
            n_biased = max(1, g // 2)
            succ = np.empty((n_total, g), dtype=np.int64)
            for c in range(n_comm):
                base = c * block
                rows = slice(base, base + block)
                succ[rows, :n_biased] = base + rng.choice(
                    block, size=(block, n_biased), p=local_probs
                )
                if g > n_biased:
                    succ[rows, n_biased:] = base + rng.integers(
                        0, block, size=(block, g - n_biased)
                    )
            # The last content slot becomes a cross-community link; entry
            # phrases fan out over the whole content inventory.
            if g >= 2:
                succ[:n_phrases, g - 1] = rng.choice(
                    n_phrases, size=n_phrases, p=global_probs
                )
            succ[n_phrases:] = rng.choice(
                n_phrases, size=(n_entry, g), p=global_probs
            )
            slot_w = (np.arange(1, g + 1, dtype=float)) ** (-spec.successor_decay)
            self.succ_cum = np.cumsum(slot_w / slot_w.sum()).tolist()
            self.successors = succ
            self.n_entry = n_entry
            self.n_content = n_phrases
            self.entry_cum = np.cumsum(np.full(n_entry, 1.0 / n_entry)).tolist()
        else:
            self.successors = None
            self.phrase_cum = np.cumsum(global_probs).tolist()

    def start_phrase(self, u: float) -> int:
        from bisect import bisect_right

        if self.successors is None:
            return bisect_right(self.phrase_cum, u)
        return self.n_content + bisect_right(self.entry_cum, u)

    def next_phrase(self, current: int, u: float) -> int:
        from bisect import bisect_right

        if self.successors is None:
            return bisect_right(self.phrase_cum, u)
        slot = bisect_right(self.succ_cum, u)
        return int(self.successors[current, slot])


def synthesize_toy_corpus(spec: ToyPopulationSpec) -> Corpus:
    """Generate a seeded toy corpus matching the spec's population targets."""
    if spec.vocabulary_size < 10:
        raise ValidationError(
            f"vocabulary size {spec.vocabulary_size} is degenerate (need >= 10)"
        )
    rng = derive_rng(spec.seed, "toy-corpus")
    v = spec.vocabulary_size
    width = max(4, len(str(v)))
    words = [f"w{r:0{width}d}" for r in range(1, v + 1)]
    graph = _PhraseGraph(spec, rng)

    matrix = (
        np.asarray(spec.cooccurrence, dtype=float)
        if spec.cooccurrence is not None
        else default_cooccurrence_matrix()
    )

    n_docs = spec.document_count
    schema = spec.section_schema
    lengths = np.empty((n_docs, len(schema)), dtype=int)
    for j, sec in enumerate(schema):
        raw = rng.normal(sec.mean_tokens, sec.sd_tokens, size=n_docs)
        lengths[:, j] = np.maximum(1, np.rint(raw).astype(int))

    has_labels = rng.random(n_docs) < spec.label_fraction
    seed_conditions = rng.integers(0, 10, size=n_docs)
    cooccur_draws = rng.random((n_docs, 10))
    sexes = rng.random(n_docs) < spec.male_fraction
    ages = np.clip(
        np.rint(rng.normal(spec.age_mean, spec.age_sd, size=n_docs)).astype(int),
        AGE_MIN,
        AGE_MAX,
    )

    docs: list[Document] = []
    for i in range(n_docs):
        labels: set[str] = set()
        if has_labels[i]:
            s = int(seed_conditions[i])
            labels.add(CONDITIONS[s])
            for j in range(10):
                if j != s and cooccur_draws[i, j] < matrix[s, j]:
                    labels.add(CONDITIONS[j])
        sections: dict[str, str] = {}
        phrase = graph.start_phrase(float(rng.random()))
        for j, sec in enumerate(schema):
            target = int(lengths[i, j])
            sentences: list[str] = []
            n_tok = 0
            while n_tok < target:
                content = graph.phrases[phrase]
                sentences.append(" ".join(words[t] for t in content) + " .")
                n_tok += len(content)
                phrase = graph.next_phrase(phrase, float(rng.random()))
            sections[sec.name] = " ".join(sentences)
        if labels:
            mention = " . ".join(sorted(labels)) + " ."
            last = schema[-1].name
            sections[last] = (sections[last] + " " + mention).strip()
        docs.append(
            Document(
                id=f"toy-{i:06d}",
                sections=sections,
                provenance=Provenance.real(),
                labels=labels,
                demographics=Demographics(
                    sex="male" if sexes[i] else "female", age=int(ages[i])
                ),
            )
        )
    return Corpus(documents=tuple(docs))
