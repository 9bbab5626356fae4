"""Deterministic shipped fixtures.

These build seeded synthetic report sets and feature populations used by the
acceptance suite, the CLI presets, and the documentation examples: a
text-report collapse fixture whose safety components degrade generation by
generation (sensitivity and utility fall, hallucination stays near 20%), and
a mixture-population synthesizer with configurable demographics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AGE_MAX, AGE_MIN, Demographics, Provenance
from .imagemetrics import FeatureRecord
from .safety import CRITICAL_FINDINGS
from .seeding import derive_rng

# Per-generation behavior of the degraded report generator. Quota-based
# construction keeps the trajectories deterministic: detection falls toward
# zero and duplicate boilerplate takes over (dragging every utility
# sub-score down), while fabrication stays pinned at 20%.
_DETECT_RATE = (0.95, 0.75, 0.50, 0.30, 0.12)
_DUPLICATE_RATE = (0.05, 0.20, 0.40, 0.55, 0.70)
_HALLUCINATION_RATE = 0.20

# Boilerplate templates; late generations leak training artifacts and
# non-actionable hedging into the repeated text.
_DUP_PLAIN = "no acute findings . stable appearance ."
_DUP_HALLUCINATED = "no acute findings . stable appearance . there is nodule ."
_DUP_SUFFIX_NONACTIONABLE = " a finding cannot be excluded ."
_DUP_SUFFIX_ARTIFACT = " <| training loss 0.03 |> ."


@dataclass(frozen=True)
class SafetyFixture:
    """Per-generation report sets over a fixed case list."""

    labels: tuple[frozenset[str], ...]
    references: tuple[str, ...]
    generations: tuple[tuple[str, ...], ...]  # [generation][case]


def _describe(findings) -> str:
    parts = [f"there is {f}" for f in sorted(findings)]
    return " . ".join(parts) + " ." if parts else "lungs are grossly unchanged ."


def collapse_safety_fixture(
    n_cases: int = 40, n_generations: int = 5, seed: int = 2024
) -> SafetyFixture:
    """Reports for n_generations over the same labeled cases.

    Exact quotas per generation: round(detect * labeled) positive mentions
    per finding, round(duplicate * cases) boilerplate reports, and exactly
    round(0.20 * cases) fabricated-nodule reports, so sensitivity and
    utility fall strictly while the hallucination rate stays flat.
    """
    rng = derive_rng(seed, "safety-fixture")
    labels: list[frozenset[str]] = []
    for _ in range(n_cases):
        k = 1 + int(rng.random() < 0.4)
        picks = rng.choice(len(CRITICAL_FINDINGS), size=k, replace=False)
        labels.append(frozenset(CRITICAL_FINDINGS[i] for i in picks))
    references = tuple(_describe(lb) for lb in labels)
    labeled_cases = {
        f: [i for i, lb in enumerate(labels) if f in lb] for f in CRITICAL_FINDINGS
    }

    all_generations: list[tuple[str, ...]] = []
    for g in range(n_generations):
        detect = _DETECT_RATE[min(g, len(_DETECT_RATE) - 1)]
        dup_rate = _DUPLICATE_RATE[min(g, len(_DUPLICATE_RATE) - 1)]
        grng = derive_rng(seed, "safety-fixture-gen", g)

        order = list(grng.permutation(n_cases))
        duplicated = set(order[: int(round(dup_rate * n_cases))])

        mentions: dict[int, set[str]] = {i: set() for i in range(n_cases)}
        for f in CRITICAL_FINDINGS:
            available = [i for i in labeled_cases[f] if i not in duplicated]
            quota = min(len(available), int(round(detect * len(labeled_cases[f]))))
            picked = list(grng.permutation(len(available)))[:quota]
            for p in picked:
                mentions[available[p]].add(f)

        hallucination_quota = int(round(_HALLUCINATION_RATE * n_cases))
        hallucinated = set(list(grng.permutation(n_cases))[:hallucination_quota])

        dup_template = _DUP_PLAIN
        if g >= 2:
            dup_template = dup_template + _DUP_SUFFIX_NONACTIONABLE
        if g >= 3:
            dup_template = dup_template + _DUP_SUFFIX_ARTIFACT

        reports: list[str] = []
        for i in range(n_cases):
            if i in duplicated:
                reports.append(
                    dup_template.replace(
                        "stable appearance .", "stable appearance . there is nodule .", 1
                    )
                    if i in hallucinated
                    else dup_template
                )
                continue
            segments: list[str] = []
            if mentions[i]:
                segments.append(_describe(mentions[i]))
            else:
                segments.append("no acute findings .")
            if i in hallucinated:
                segments.append("there is nodule .")
            segments.append(f"case marker {i:03d} .")
            reports.append(" ".join(segments))
        all_generations.append(tuple(reports))
    return SafetyFixture(
        labels=tuple(labels),
        references=references,
        generations=tuple(all_generations),
    )


# ---------------------------------------------------------------------------
# Feature populations
# ---------------------------------------------------------------------------


def make_toy_feature_population(
    n: int,
    d: int = 16,
    components: int = 4,
    seed: int = 0,
    weights: tuple[float, ...] | None = None,
    separation: float = 3.0,
    scale: float = 1.0,
    male_fraction: float = 0.532,
    age_mean: float = 64.6,
    age_sd: float = 17.3,
    label_rare_component: str | None = None,
) -> list[FeatureRecord]:
    """A seeded mixture population with demographics.

    Component means sit at separation * (random unit directions); all
    covariances are scale^2 * I. When label_rare_component is set, records
    drawn from the lowest-weight component carry that label.
    """
    rng = derive_rng(seed, "toy-population")
    if weights is None:
        raw = np.linspace(1.0, 2.0, components)
        w = raw / raw.sum()
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
    directions = rng.standard_normal((components, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    rare = int(np.argmin(w))

    comp = rng.choice(components, size=n, p=w)
    x = means[comp] + scale * rng.standard_normal((n, d))
    sexes = rng.random(n) < male_fraction
    ages = np.clip(
        np.rint(rng.normal(age_mean, age_sd, size=n)).astype(int), AGE_MIN, AGE_MAX
    )
    records = []
    for i in range(n):
        labels = frozenset()
        if label_rare_component is not None and comp[i] == rare:
            labels = frozenset({label_rare_component})
        records.append(
            FeatureRecord(
                vector=tuple(float(v) for v in x[i]),
                labels=labels,
                demographics=Demographics(
                    sex="male" if sexes[i] else "female", age=int(ages[i])
                ),
                provenance=Provenance.real(),
            )
        )
    return records
