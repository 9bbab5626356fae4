import math

import numpy as np
import pytest

from collapselab.corpus import (
    CONDITIONS,
    Corpus,
    Demographics,
    Document,
    Lexicon,
    Provenance,
    SectionSpec,
    ToyPopulationSpec,
    default_lexicon,
    ingest_documents,
    load_lexicon,
    split_corpus,
    synthesize_toy_corpus,
    tokenize,
    write_sectioned,
)
from collapselab.errors import FormatError, ValidationError
from collapselab.stats import correlation


def test_tokenize_lowercases_and_splits_on_punctuation():
    assert tokenize("The cat, sat. X-ray 3 times!") == [
        "the", "cat", "sat", "x", "ray", "3", "times",
    ]


def test_document_requires_nonempty_section():
    with pytest.raises(ValidationError):
        Document("d0", {"findings": "   "})


def test_document_age_range_enforced():
    with pytest.raises(ValidationError):
        Demographics(sex="male", age=17)
    with pytest.raises(ValidationError):
        Demographics(sex="female", age=101)


def test_provenance_parse_roundtrip():
    assert Provenance.parse("real").is_real
    p = Provenance.parse("synthetic,gen=2")
    assert (p.kind, p.generation) == ("synthetic", 2)
    assert Provenance.parse(str(p)) == p


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def test_ingest_sectioned_single_record(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("Findings: clear lungs\nImpression: normal study\n")
    corpus = ingest_documents(path, "sectioned-text")
    assert len(corpus) == 1
    doc = corpus[0]
    assert set(doc.sections) == {"findings", "impression"}
    assert doc.provenance.is_real


def test_ingest_provenance_passthrough(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("#provenance=synthetic,gen=2\nFindings: something\n")
    corpus = ingest_documents(path, "sectioned-text")
    assert corpus[0].provenance == Provenance.synthetic(2)


def test_ingest_age_out_of_range_names_record(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text(
        "Findings: fine\n\n#sex=male\n#age=17\nFindings: second record\n"
    )
    with pytest.raises(FormatError, match="record 1"):
        ingest_documents(path, "sectioned-text")


def test_ingest_empty_file_is_error(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("   \n")
    with pytest.raises(FormatError):
        ingest_documents(path, "sectioned-text")


def test_ingest_line_record(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(
        '{"id": "r1", "sections": {"findings": "clear"}, "labels": ["pneumonia"], '
        '"sex": "male", "age": 63}\n'
        '{"sections": {"findings": "effusion seen"}, "provenance": "synthetic", "generation": 1}\n'
    )
    corpus = ingest_documents(path, "line-record")
    assert corpus[0].labels == frozenset({"pneumonia"})
    assert corpus[0].demographics == Demographics("male", 63)
    assert corpus[1].provenance == Provenance.synthetic(1)


def test_sectioned_write_ingest_roundtrip(tmp_path):
    docs = (
        Document(
            "a",
            {"findings": "clear lungs", "impression": "normal"},
            labels={"pneumonia"},
            demographics=Demographics("female", 70),
        ),
        Document("b", {"findings": "effusion"}, provenance=Provenance.synthetic(3)),
    )
    path = tmp_path / "out.txt"
    write_sectioned(Corpus(documents=docs), path)
    back = ingest_documents(path, "sectioned-text")
    assert [d.id for d in back] == ["a", "b"]
    assert back[0].labels == {"pneumonia"}
    assert back[0].demographics == Demographics("female", 70)
    assert back[1].provenance == Provenance.synthetic(3)
    assert back[0].sections == docs[0].sections


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _corpus_of(n, label_count=4):
    docs = []
    for i in range(n):
        docs.append(
            Document(
                f"d{i}",
                {"findings": f"text {i}"},
                labels={CONDITIONS[i % label_count]},
            )
        )
    return Corpus(documents=tuple(docs))


def test_split_sizes_match_paper_proportions():
    corpus = _corpus_of(790)
    train, val, test = split_corpus(corpus, (0.8, 0.1, 0.1), seed=42)
    assert (len(train), len(val), len(test)) == (632, 79, 79)


def test_split_small_exact_fractions():
    corpus = _corpus_of(10)
    train, val, test = split_corpus(corpus, (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(val), len(test)) == (8, 1, 1)


def test_split_partition_is_disjoint_and_exhaustive():
    corpus = _corpus_of(101, label_count=7)
    parts = split_corpus(corpus, (0.6, 0.2, 0.2), seed=7)
    ids = [d.id for part in parts for d in part]
    assert len(ids) == len(corpus)
    assert len(set(ids)) == len(corpus)
    assert set(ids) == {d.id for d in corpus}


def test_split_deterministic_under_seed():
    corpus = _corpus_of(53)
    a = split_corpus(corpus, (0.8, 0.1, 0.1), seed=9)
    b = split_corpus(corpus, (0.8, 0.1, 0.1), seed=9)
    for pa, pb in zip(a, b):
        assert [d.id for d in pa] == [d.id for d in pb]
    c = split_corpus(corpus, (0.8, 0.1, 0.1), seed=10)
    assert any(
        [d.id for d in pa] != [d.id for d in pc] for pa, pc in zip(a, c)
    )


def test_split_rejects_bad_fractions_and_tiny_corpus():
    corpus = _corpus_of(10)
    with pytest.raises(ValidationError):
        split_corpus(corpus, (0.8, 0.1, 0.2), seed=0)
    with pytest.raises(ValidationError):
        split_corpus(_corpus_of(2), (0.8, 0.1, 0.1), seed=0)


# ---------------------------------------------------------------------------
# Toy population
# ---------------------------------------------------------------------------


def test_toy_corpus_male_fraction_matches_baseline():
    spec = ToyPopulationSpec(
        vocabulary_size=200, zipf_exponent=1.1, document_count=5534, seed=4
    )
    corpus = synthesize_toy_corpus(spec)
    males = sum(1 for d in corpus if d.demographics.sex == "male")
    assert abs(males / len(corpus) - 0.532) < 0.02


def test_toy_corpus_degenerate_vocabulary_rejected():
    with pytest.raises(ValidationError):
        synthesize_toy_corpus(
            ToyPopulationSpec(vocabulary_size=1, zipf_exponent=1.1, document_count=5, seed=0)
        )


def test_toy_corpus_zipf_rank_ratio():
    # i.i.d. token mode isolates the marginal law: the two most frequent
    # types should differ by a factor of 2**1.1, checked by exhaustive count.
    spec = ToyPopulationSpec(
        vocabulary_size=2000,
        zipf_exponent=1.1,
        document_count=4000,
        seed=11,
        section_schema=(SectionSpec("findings", 50.0, 5.0),),
        phrase_length=(1, 1),
        branching=0,
        label_fraction=0.0,
    )
    corpus = synthesize_toy_corpus(spec)
    counts = sorted(corpus.token_counts().values(), reverse=True)
    ratio = counts[0] / counts[1]
    assert abs(ratio - 2**1.1) / 2**1.1 < 0.08


def test_toy_corpus_frequency_law_spearman():
    spec = ToyPopulationSpec(
        vocabulary_size=600, zipf_exponent=1.1, document_count=3000, seed=5,
        label_fraction=0.0,
    )
    corpus = synthesize_toy_corpus(spec)
    counts = sorted(corpus.token_counts().values(), reverse=True)
    assert len(counts) >= 500
    ranks = np.arange(1, len(counts) + 1, dtype=float)
    rho = correlation(np.log(ranks), np.log(np.asarray(counts, dtype=float)), "spearman")
    assert rho <= -0.95


def test_toy_corpus_label_cooccurrence_tracks_target_row():
    # Zero background makes pneumonia appear only as a seed condition, so
    # the empirical conditional directly reflects the target row.
    matrix = np.zeros((10, 10))
    np.fill_diagonal(matrix, 1.0)
    matrix[0, 1] = 0.88  # effusion | pneumonia
    spec = ToyPopulationSpec(
        vocabulary_size=50,
        zipf_exponent=1.1,
        document_count=8000,
        seed=3,
        cooccurrence=matrix,
        label_fraction=1.0,
    )
    corpus = synthesize_toy_corpus(spec)
    seeded = [d for d in corpus if "pneumonia" in d.labels]
    both = sum(1 for d in seeded if "effusion" in d.labels)
    assert abs(both / len(seeded) - 0.88) < 0.03


def test_toy_corpus_deterministic_replay():
    spec = ToyPopulationSpec(
        vocabulary_size=100, zipf_exponent=1.2, document_count=150, seed=8
    )
    a = synthesize_toy_corpus(spec)
    b = synthesize_toy_corpus(spec)
    assert [d.text for d in a] == [d.text for d in b]
    assert [d.labels for d in a] == [d.labels for d in b]
    assert [(d.demographics.sex, d.demographics.age) for d in a] == [
        (d.demographics.sex, d.demographics.age) for d in b
    ]


# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------


def test_lexicon_category_passthrough(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("[anatomy]\ncornea\n")
    lex = load_lexicon(path)
    assert lex.categories["anatomy"] == ("cornea",)
    # pattern lists fall back to the shipped defaults, staying non-empty
    assert lex.clinical_patterns and lex.template_patterns


def test_shipped_condition_list_is_exact():
    lex = default_lexicon()
    assert set(lex.categories["conditions"]) == set(CONDITIONS)
    assert len(lex.categories["conditions"]) == 10


def test_term_in_two_tiers_is_error(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("[anatomy]\ncornea @general\ncornea @specific\n")
    with pytest.raises(FormatError):
        load_lexicon(path)


def test_lexicon_requires_categories():
    with pytest.raises(ValidationError):
        Lexicon(categories={})
