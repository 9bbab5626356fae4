import numpy as np
import pytest

from collapselab.corpus import Document
from collapselab.errors import InsufficientPoolError, ValidationError
from collapselab.imagemetrics import COVARIANCE_FLOOR, FeatureRecord
from collapselab.mitigation import (
    EmbedderSpec,
    ImageFilterConfig,
    TextFilterConfig,
    VolumeSchedule,
    IMAGE_VOLUME_PRESET,
    TEXT_VOLUME_PRESET,
    draw_from_survivors,
    embed_documents,
    filter_image_pool,
    filter_text_pools,
    knn_distance,
    volume_for_generation,
)


def _docs(*texts):
    return [Document(f"d{i}", {"report": t}) for i, t in enumerate(texts)]


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def test_identical_documents_identical_vectors():
    docs = _docs("alpha beta gamma", "alpha beta gamma")
    emb = embed_documents(docs)
    np.testing.assert_allclose(emb.vectors[0], emb.vectors[1])
    d = knn_distance(emb.vectors[:1], emb.vectors[1:], k=1)
    assert d[0] == pytest.approx(0.0, abs=1e-12)


def test_disjoint_vocabulary_orthogonal_after_collision_check():
    import zlib

    spec = EmbedderSpec(dim=256, ngram_range=(1, 1))
    words_a = ["alpha", "beta", "gamma"]
    words_b = ["delta", "epsilon", "zeta"]
    slots_a = {zlib.crc32(w.encode()) % spec.dim for w in words_a}
    slots_b = {zlib.crc32(w.encode()) % spec.dim for w in words_b}
    assert not (slots_a & slots_b), "fixture words collide; pick different words"
    emb = embed_documents(_docs(" ".join(words_a), " ".join(words_b)), spec)
    cosine = float(emb.vectors[0] @ emb.vectors[1])
    assert cosine == pytest.approx(0.0, abs=1e-12)


def test_sentence_permutation_invariant_for_unigrams():
    spec = EmbedderSpec(dim=128, ngram_range=(1, 1))
    a = _docs("first thing happened. second thing followed.")[0]
    b = Document("p", {"report": "second thing followed. first thing happened."})
    emb = embed_documents([a, b], spec)
    np.testing.assert_allclose(emb.vectors[0], emb.vectors[1], atol=1e-12)


def test_embedding_deterministic_and_unit_norm():
    docs = _docs("some words here", "other words there", "third entry")
    e1 = embed_documents(docs)
    e2 = embed_documents(docs)
    np.testing.assert_array_equal(e1.vectors, e2.vectors)
    norms = np.linalg.norm(e1.vectors, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_empty_document_zero_vector_flagged():
    docs = [Document("e", {"report": "..."}), _docs("real words")[0]]
    emb = embed_documents(docs)
    assert emb.empty_documents == (0,)
    assert np.linalg.norm(emb.vectors[0]) == 0.0


# ---------------------------------------------------------------------------
# k-NN distances
# ---------------------------------------------------------------------------


def test_knn_identical_references_zero():
    v = np.tile(np.array([[0.6, 0.8]]), (5, 1))
    d = knn_distance(v[:1], v, k=5)
    assert d[0] == pytest.approx(0.0, abs=1e-12)


def test_knn_k_equals_reference_count_means_all():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((3, 4))
    r = rng.standard_normal((6, 4))
    d = knn_distance(q, r, k=6)
    qu = q / np.linalg.norm(q, axis=1, keepdims=True)
    ru = r / np.linalg.norm(r, axis=1, keepdims=True)
    expected = (1 - qu @ ru.T).mean(axis=1)
    np.testing.assert_allclose(d, expected, rtol=1e-12)


def test_knn_matches_bruteforce_pairwise_sort():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((4, 2))
    r = rng.standard_normal((5, 2))
    got = knn_distance(q, r, k=2)
    qu = q / np.linalg.norm(q, axis=1, keepdims=True)
    ru = r / np.linalg.norm(r, axis=1, keepdims=True)
    for i in range(4):
        dists = sorted(1 - qu[i] @ ru[j] for j in range(5))
        assert got[i] == pytest.approx(np.mean(dists[:2]), rel=1e-9)


def test_knn_k_larger_than_reference_is_error():
    with pytest.raises(ValidationError):
        knn_distance(np.zeros((1, 2)), np.ones((3, 2)), k=4)


# ---------------------------------------------------------------------------
# Text filtering
# ---------------------------------------------------------------------------


def test_filter_text_keeps_three_of_four_by_quantile():
    # Synthetic docs at graded distances from a tight real pool: three share
    # the real vocabulary increasingly diluted, one is fully off-topic.
    real = _docs(*(["medical report lungs heart clear"] * 12))
    synthetic = [
        Document("s0", {"report": "medical report lungs heart clear"}),
        Document("s1", {"report": "medical report lungs heart noise1"}),
        Document("s2", {"report": "medical report noise1 noise2 noise3"}),
        Document("s3", {"report": "offtopic words entirely unrelated stuff"}),
    ]
    kept_syn, _, logs = filter_text_pools(synthetic, real, TextFilterConfig(k=5))
    assert [d.id for d in kept_syn] == ["s0", "s1", "s2"]
    decisions = {d.record_id: d for d in logs["synthetic"].decisions}
    assert decisions["s3"].kept is False
    assert decisions["s3"].score > decisions["s2"].score


def test_filter_text_identical_real_pool_tie_break():
    real = _docs(*(["same text"] * 6))
    synthetic = _docs(*(["same text"] * 4))
    kept_syn, kept_real, logs = filter_text_pools(synthetic, real, TextFilterConfig(k=3))
    # all real centroid distances are 0; top-50% keeps ceil(3) by stable index
    assert len(kept_real) == 3
    assert [d.id for d in kept_real] == ["d0", "d1", "d2"]


def test_filter_text_log_thresholds_idempotent():
    rng = np.random.default_rng(2)
    vocab = ["w%02d" % i for i in range(30)]
    real = [
        Document(f"r{i}", {"report": " ".join(vocab[j] for j in rng.integers(0, 12, 8))})
        for i in range(20)
    ]
    synthetic = [
        Document(f"s{i}", {"report": " ".join(vocab[j] for j in rng.integers(0, 30, 8))})
        for i in range(16)
    ]
    config = TextFilterConfig(k=5)
    kept_syn, kept_real, logs = filter_text_pools(synthetic, real, config)
    # Reapplying the ORIGINAL thresholds to the survivors removes nothing.
    syn_threshold = logs["synthetic"].decisions[0].threshold
    kept_scores = {d.record_id: d.score for d in logs["synthetic"].decisions if d.kept}
    assert all(s <= syn_threshold for s in kept_scores.values())
    real_threshold = logs["real"].decisions[0].threshold
    kept_real_scores = [d.score for d in logs["real"].decisions if d.kept]
    assert all(s >= real_threshold for s in kept_real_scores)


def test_filter_text_selected_mean_distance_not_above_pool_mean():
    rng = np.random.default_rng(3)
    vocab = ["w%02d" % i for i in range(40)]
    real = [
        Document(f"r{i}", {"report": " ".join(vocab[j] for j in rng.integers(0, 15, 10))})
        for i in range(25)
    ]
    synthetic = [
        Document(f"s{i}", {"report": " ".join(vocab[j] for j in rng.integers(0, 40, 10))})
        for i in range(24)
    ]
    _, _, logs = filter_text_pools(synthetic, real, TextFilterConfig(k=8))
    scores = [d.score for d in logs["synthetic"].decisions]
    kept = [d.score for d in logs["synthetic"].decisions if d.kept]
    assert np.mean(kept) <= np.mean(scores) + 1e-12


# ---------------------------------------------------------------------------
# Image filtering
# ---------------------------------------------------------------------------


def test_filter_image_exact_survivor_count():
    rng = np.random.default_rng(4)
    ref = [FeatureRecord(tuple(v)) for v in rng.standard_normal((30, 3))]
    cands = [FeatureRecord(tuple(v)) for v in rng.standard_normal((8, 3))]
    kept, log = filter_image_pool(cands, ref, ImageFilterConfig(exclusion_quantile=0.25))
    assert len(kept) == 6
    assert sum(1 for d in log.decisions if d.kept) == 6


def test_filter_image_identical_candidates_tie_break_logged():
    rng = np.random.default_rng(5)
    ref = [FeatureRecord(tuple(v)) for v in rng.standard_normal((40, 2))]
    mean = np.mean([r.vector for r in ref], axis=0)
    cands = [FeatureRecord(tuple(mean)) for _ in range(4)]
    kept, log = filter_image_pool(cands, ref, ImageFilterConfig(exclusion_quantile=0.25))
    assert len(kept) == 3
    kept_flags = [d.kept for d in log.decisions]
    assert kept_flags == [True, True, True, False]  # stable index order


def test_filter_image_outliers_excluded_matches_hand_ranking():
    rng = np.random.default_rng(6)
    ref_arr = rng.standard_normal((60, 2))
    ref = [FeatureRecord(tuple(v)) for v in ref_arr]
    inliers = rng.standard_normal((6, 2)) * 0.5
    outliers = np.array([[9.0, 9.0], [-8.0, 7.0]])
    cands = [FeatureRecord(tuple(v)) for v in np.vstack([inliers, outliers])]
    kept, log = filter_image_pool(cands, ref, ImageFilterConfig(exclusion_quantile=0.25))
    kept_ids = {d.record_id for d in log.decisions if d.kept}
    assert "rec-000006" not in kept_ids and "rec-000007" not in kept_ids
    assert len(kept) == 6


# ---------------------------------------------------------------------------
# Volume schedule
# ---------------------------------------------------------------------------


def test_volume_text_preset_reaches_25000_at_g4():
    assert volume_for_generation(TEXT_VOLUME_PRESET, 1) == 10_000
    assert volume_for_generation(TEXT_VOLUME_PRESET, 2) == 15_000
    assert volume_for_generation(TEXT_VOLUME_PRESET, 3) == 20_000
    assert volume_for_generation(TEXT_VOLUME_PRESET, 4) == 25_000


def test_volume_constant_multiplier_is_equal_regime():
    schedule = VolumeSchedule(base=5000, multipliers=(1.0, 1.0, 1.0, 1.0))
    assert [volume_for_generation(schedule, t) for t in range(1, 5)] == [5000] * 4


def test_volume_image_preset_matches_reported_schedule():
    # 500 base scales to 1,000 / 1,500 / 2,000 / 2,500 over generations 1-4
    assert volume_for_generation(IMAGE_VOLUME_PRESET, 1) == 1000
    assert volume_for_generation(IMAGE_VOLUME_PRESET, 2) == 1500
    assert volume_for_generation(IMAGE_VOLUME_PRESET, 4) == 2500


def test_volume_generation_zero_is_error():
    with pytest.raises(ValidationError):
        volume_for_generation(TEXT_VOLUME_PRESET, 0)


def test_volume_schedule_validation():
    with pytest.raises(ValidationError):
        VolumeSchedule(base=0)
    with pytest.raises(ValidationError):
        VolumeSchedule(base=10, multipliers=(0.5,))


# ---------------------------------------------------------------------------
# Survivor draws
# ---------------------------------------------------------------------------


def test_draw_from_survivors_deficit_named():
    with pytest.raises(InsufficientPoolError) as err:
        draw_from_survivors([1, 2, 3], budget=5, seed=0)
    assert err.value.deficit == 2


def test_draw_from_survivors_deterministic_subset():
    pool = list(range(100))
    a = draw_from_survivors(pool, 10, seed=3)
    b = draw_from_survivors(pool, 10, seed=3)
    assert a == b
    assert len(set(a)) == 10
    c = draw_from_survivors(pool, 10, seed=4)
    assert a != c
