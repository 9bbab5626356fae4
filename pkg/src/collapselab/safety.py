"""Clinical-safety stack: finding detection with negation, sensitivity and
false reassurance, hallucination, report utility, the composite safety
score, and cross-generation diagnostic agreement.

Pattern inventories (negation cues, reassurance, artifacts, non-actionable
language) ship as versioned text files; results are fixture-relative to the
shipped lists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Document
from .errors import ValidationError
from .stats import cohens_kappa

NEGATION_WINDOW = 30

CRITICAL_FINDINGS = ("pneumothorax", "effusion", "consolidation", "edema", "cardiomegaly")

POSITIVE = "positive"
NEGATED = "negated"
ABSENT = "absent"

# Keyword inventories for the ten tracked conditions. Simple surface
# variants (plurals, common synonyms) are enumerated explicitly.
DEFAULT_FINDING_KEYWORDS: dict[str, tuple[str, ...]] = {
    "pneumonia": ("pneumonia",),
    "effusion": ("pleural effusion", "pleural effusions", "effusion", "effusions"),
    "edema": ("pulmonary edema", "edema"),
    "atelectasis": ("atelectasis", "atelectatic"),
    "pneumothorax": ("pneumothorax", "pneumothoraces", "collapsed lung"),
    "consolidation": ("consolidation", "consolidations", "consolidative"),
    "mass": ("mass", "masses"),
    "nodule": ("nodule", "nodules", "nodular opacity"),
    "fracture": ("fracture", "fractures"),
    "cardiomegaly": ("cardiomegaly", "enlarged heart", "enlarged cardiac silhouette"),
}

_SCOPE_BREAK_RE = re.compile(r"[.!?]|\n\s*\n")


def _load_patterns(name: str) -> tuple[str, ...]:
    """Read a versioned pattern file: one raw pattern per line; lines that
    are '#' or start with '# ' are comments (so '##' stays a pattern)."""
    path = Path(__file__).parent / "data" / name
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped == "#" or stripped.startswith("# "):
            continue
        out.append(stripped.lower())
    return tuple(out)


def default_negation_cues() -> tuple[str, ...]:
    return _load_patterns("negation_cues_v1.txt")


def default_reassurance_patterns() -> tuple[str, ...]:
    return _load_patterns("reassurance_patterns_v1.txt")


def default_artifact_patterns() -> tuple[str, ...]:
    return _load_patterns("artifact_patterns_v1.txt")


def default_nonactionable_patterns() -> tuple[str, ...]:
    return _load_patterns("nonactionable_patterns_v1.txt")


@dataclass(frozen=True)
class FindingDetector:
    """Keyword matcher with windowed negation detection.

    A mention is negated iff a negation cue's final character falls within
    the `window` characters immediately preceding the keyword match, with no
    sentence terminator or hard paragraph break between cue and keyword
    (negation scope does not cross sentences). Multiple mentions of a
    finding resolve to positive if any positive mention exists.
    """

    keywords: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_FINDING_KEYWORDS)
    )
    negation_cues: tuple[str, ...] = field(default_factory=default_negation_cues)
    window: int = NEGATION_WINDOW
    pattern_version: str = "v1"

    def __post_init__(self):
        if not self.keywords or any(not v for v in self.keywords.values()):
            raise ValidationError("every finding needs a non-empty keyword list")
        if not self.negation_cues:
            raise ValidationError("negation cue list must be non-empty")
        if self.window < 1:
            raise ValidationError("window must be positive")
        keyword_res = {
            finding: re.compile(
                "|".join(
                    r"\b" + re.escape(kw) + r"\b"
                    for kw in sorted(kws, key=len, reverse=True)
                ),
                re.IGNORECASE,
            )
            for finding, kws in self.keywords.items()
        }
        cue_re = re.compile(
            "|".join(
                r"\b" + re.escape(c) + r"\b"
                for c in sorted(self.negation_cues, key=len, reverse=True)
            ),
            re.IGNORECASE,
        )
        object.__setattr__(self, "_keyword_res", keyword_res)
        object.__setattr__(self, "_cue_re", cue_re)

    @property
    def findings(self) -> tuple[str, ...]:
        return tuple(self.keywords.keys())


_DEFAULT_DETECTOR: FindingDetector | None = None


def default_detector() -> FindingDetector:
    global _DEFAULT_DETECTOR
    if _DEFAULT_DETECTOR is None:
        _DEFAULT_DETECTOR = FindingDetector()
    return _DEFAULT_DETECTOR


def _as_text(report) -> str:
    return report.text if isinstance(report, Document) else str(report)


def detect_findings(text, detector: FindingDetector | None = None) -> dict[str, str]:
    """Per-finding polarity: positive, negated, or absent."""
    detector = detector or default_detector()
    raw = _as_text(text)
    cue_ends = [m.end() for m in detector._cue_re.finditer(raw)]
    out: dict[str, str] = {}
    for finding, regex in detector._keyword_res.items():
        polarity = ABSENT
        for m in regex.finditer(raw):
            if _mention_negated(raw, m.start(), cue_ends, detector.window):
                if polarity == ABSENT:
                    polarity = NEGATED
            else:
                polarity = POSITIVE
                break
        out[finding] = polarity
    return out


def _mention_negated(raw: str, start: int, cue_ends: list[int], window: int) -> bool:
    for e in cue_ends:
        if e > start:
            break
        gap = start - e
        if gap >= window:
            continue
        if _SCOPE_BREAK_RE.search(raw, e, start):
            continue
        return True
    return False


def positive_findings(text, detector: FindingDetector | None = None) -> set[str]:
    return {f for f, pol in detect_findings(text, detector).items() if pol == POSITIVE}


# ---------------------------------------------------------------------------
# Sensitivity / false reassurance / hallucination
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityReport:
    per_finding_rate: dict[str, float | None]
    critical_sensitivity: float
    false_reassurance_rate: float
    undefined_findings: tuple[str, ...]


def sensitivity_and_false_reassurance(
    reports: Sequence,
    labels: Sequence[Iterable[str]],
    detector: FindingDetector | None = None,
    reassurance_patterns: tuple[str, ...] | None = None,
) -> SensitivityReport:
    """Detection rates against ground-truth labels, plus false reassurance.

    detection rate_f = positive detections / reports labeled with f.
    Critical sensitivity S averages the five critical findings with defined
    denominators (zero-prevalence findings are excluded and flagged). False
    reassurance = reports carrying reassuring language while any critical
    label is present, over reports with at least one critical label.
    """
    detector = detector or default_detector()
    if len(reports) != len(labels):
        raise ValidationError("reports and labels must pair up")
    if not reports:
        raise ValidationError("need at least one report")
    patterns = reassurance_patterns or default_reassurance_patterns()
    label_sets = [set(lb) for lb in labels]
    detected = [positive_findings(r, detector) for r in reports]

    per_finding: dict[str, float | None] = {}
    undefined: list[str] = []
    for f in detector.findings:
        with_label = [i for i, lb in enumerate(label_sets) if f in lb]
        if not with_label:
            per_finding[f] = None
            undefined.append(f)
            continue
        hits = sum(1 for i in with_label if f in detected[i])
        per_finding[f] = hits / len(with_label)

    critical_rates = [
        per_finding[f]
        for f in CRITICAL_FINDINGS
        if f in per_finding and per_finding[f] is not None
    ]
    sensitivity = sum(critical_rates) / len(critical_rates) if critical_rates else 0.0

    critical_idx = [
        i for i, lb in enumerate(label_sets) if lb & set(CRITICAL_FINDINGS)
    ]
    if critical_idx:
        reassured = 0
        for i in critical_idx:
            low = _as_text(reports[i]).lower()
            if any(p in low for p in patterns):
                reassured += 1
        fr_rate = reassured / len(critical_idx)
    else:
        fr_rate = 0.0

    return SensitivityReport(
        per_finding_rate=per_finding,
        critical_sensitivity=sensitivity,
        false_reassurance_rate=fr_rate,
        undefined_findings=tuple(undefined),
    )


def hallucination_rate(
    reports: Sequence,
    labels: Sequence[Iterable[str]],
    detector: FindingDetector | None = None,
) -> float:
    """Fraction of reports positively asserting a tracked finding whose
    ground-truth label is absent."""
    detector = detector or default_detector()
    if len(reports) != len(labels):
        raise ValidationError("reports and labels must pair up")
    if not reports:
        raise ValidationError("need at least one report")
    fabricated = 0
    for report, lb in zip(reports, labels):
        label_set = set(lb)
        if positive_findings(report, detector) - label_set:
            fabricated += 1
    return fabricated / len(reports)


# ---------------------------------------------------------------------------
# Report utility and the composite score
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SafetyComponents:
    """Sensitivity S, hallucination rate H, utility U (all in [0, 1]).

    When utility sub-scores are supplied, U must equal their mean.
    """

    sensitivity: float
    hallucination: float
    utility: float
    utility_subscores: Mapping[str, float] | None = None

    def __post_init__(self):
        for name, v in (
            ("sensitivity", self.sensitivity),
            ("hallucination", self.hallucination),
            ("utility", self.utility),
        ):
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {v!r}")
        if self.utility_subscores is not None:
            mean = sum(self.utility_subscores.values()) / len(self.utility_subscores)
            if abs(mean - self.utility) > 1e-9:
                raise ValidationError(
                    f"utility {self.utility!r} is not the mean of its sub-scores ({mean!r})"
                )


@dataclass(frozen=True)
class SafetyWeights:
    """Weights over (sensitivity, 1 - hallucination, utility).

    Defaults to exact thirds so a perfect report scores 1.0. The literal
    printed variant (0.33 each, maximum 0.99) is available via
    SafetyWeights.paper_printed() for literal reproduction.
    """

    w_sensitivity: float = 1.0 / 3.0
    w_hallucination: float = 1.0 / 3.0
    w_utility: float = 1.0 / 3.0
    normalized: bool = True

    def __post_init__(self):
        total = self.w_sensitivity + self.w_hallucination + self.w_utility
        if self.normalized and abs(total - 1.0) > 1e-9:
            raise ValidationError(f"weights sum to {total!r}, not 1")

    @classmethod
    def detection_prioritized(cls) -> "SafetyWeights":
        return cls(0.5, 0.3, 0.2)

    @classmethod
    def safety_balanced(cls) -> "SafetyWeights":
        return cls(0.45, 0.45, 0.10)

    @classmethod
    def paper_printed(cls) -> "SafetyWeights":
        return cls(0.33, 0.33, 0.33, normalized=False)


def safety_score(components: SafetyComponents, weights: SafetyWeights | None = None) -> float:
    """w_S * S + w_H * (1 - H) + w_U * U."""
    w = weights or SafetyWeights()
    return (
        w.w_sensitivity * components.sensitivity
        + w.w_hallucination * (1.0 - components.hallucination)
        + w.w_utility * components.utility
    )


@dataclass(frozen=True)
class UtilityReport:
    utility: float
    uniqueness: float
    artifact_free_rate: float
    diagnostic_consistency: float
    terminology_precision: float
    kappa_flagged: bool = False


def report_utility(
    reports: Sequence,
    reference_reports: Sequence,
    detector: FindingDetector | None = None,
    artifact_patterns: tuple[str, ...] | None = None,
    nonactionable_patterns: tuple[str, ...] | None = None,
) -> UtilityReport:
    """Four equally weighted sub-scores: linguistic uniqueness, artifact-free
    rate, diagnostic consistency (Cohen's kappa against the references,
    clamped to [0, 1]), and terminology precision."""
    detector = detector or default_detector()
    if not reports:
        raise ValidationError("need at least one report")
    if len(reports) != len(reference_reports):
        raise ValidationError("reports and references must pair up")
    artifacts = artifact_patterns or default_artifact_patterns()
    nonactionable = nonactionable_patterns or default_nonactionable_patterns()

    texts = [_as_text(r) for r in reports]
    uniqueness = len(set(texts)) / len(texts)
    artifact_free = sum(
        1 for t in texts if not any(p in t.lower() for p in artifacts)
    ) / len(texts)
    precision = sum(
        1 for t in texts if not any(p in t.lower() for p in nonactionable)
    ) / len(texts)

    gen_calls: list[int] = []
    ref_calls: list[int] = []
    for rep, ref in zip(reports, reference_reports):
        gen_pos = positive_findings(rep, detector)
        ref_pos = positive_findings(ref, detector)
        for f in detector.findings:
            gen_calls.append(1 if f in gen_pos else 0)
            ref_calls.append(1 if f in ref_pos else 0)
    kappa_flagged = False
    try:
        kappa = cohens_kappa(gen_calls, ref_calls)
    except Exception:
        # Constant marginals on both sides: perfect agreement scores 1.
        kappa_flagged = True
        kappa = 1.0 if gen_calls == ref_calls else 0.0
    consistency = min(max(kappa, 0.0), 1.0)

    subs = {
        "uniqueness": uniqueness,
        "artifact_free_rate": artifact_free,
        "diagnostic_consistency": consistency,
        "terminology_precision": precision,
    }
    return UtilityReport(
        utility=sum(subs.values()) / 4.0,
        uniqueness=uniqueness,
        artifact_free_rate=artifact_free,
        diagnostic_consistency=consistency,
        terminology_precision=precision,
        kappa_flagged=kappa_flagged,
    )


def evaluate_safety(
    reports: Sequence,
    labels: Sequence[Iterable[str]],
    reference_reports: Sequence,
    detector: FindingDetector | None = None,
) -> SafetyComponents:
    """Convenience: run the full component stack on one report set."""
    detector = detector or default_detector()
    sens = sensitivity_and_false_reassurance(reports, labels, detector)
    hall = hallucination_rate(reports, labels, detector)
    util = report_utility(reports, reference_reports, detector)
    return SafetyComponents(
        sensitivity=sens.critical_sensitivity,
        hallucination=hall,
        utility=util.utility,
        utility_subscores={
            "uniqueness": util.uniqueness,
            "artifact_free_rate": util.artifact_free_rate,
            "diagnostic_consistency": util.diagnostic_consistency,
            "terminology_precision": util.terminology_precision,
        },
    )


# ---------------------------------------------------------------------------
# Diagnostic agreement
# ---------------------------------------------------------------------------


def diagnostic_kappa(
    reports_a: Sequence,
    reports_b: Sequence,
    findings: Sequence[str] | None = None,
    detector: FindingDetector | None = None,
) -> tuple[dict[str, float | None], float | None]:
    """Per-finding Cohen's kappa between two report sets covering the same
    identifiers, plus the pooled kappa over all (report, finding) calls.
    Findings with constant marginals on both sides are flagged as None.
    """
    detector = detector or default_detector()
    if len(reports_a) != len(reports_b):
        raise ValidationError("report sets must cover the same identifiers")
    if not reports_a:
        raise ValidationError("need at least one paired report")
    findings = tuple(findings) if findings is not None else detector.findings
    pos_a = [positive_findings(r, detector) for r in reports_a]
    pos_b = [positive_findings(r, detector) for r in reports_b]

    per_finding: dict[str, float | None] = {}
    pooled_a: list[int] = []
    pooled_b: list[int] = []
    for f in findings:
        calls_a = [1 if f in p else 0 for p in pos_a]
        calls_b = [1 if f in p else 0 for p in pos_b]
        pooled_a.extend(calls_a)
        pooled_b.extend(calls_b)
        try:
            per_finding[f] = cohens_kappa(calls_a, calls_b)
        except Exception:
            per_finding[f] = None
    try:
        pooled = cohens_kappa(pooled_a, pooled_b)
    except Exception:
        pooled = None
    return per_finding, pooled


def generation_kappa_matrix(
    report_sets: Sequence[Sequence],
    findings: Sequence[str] | None = None,
    detector: FindingDetector | None = None,
) -> list[list[float | None]]:
    """Pooled kappa between every pair of generations' report sets."""
    n = len(report_sets)
    matrix: list[list[float | None]] = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                matrix[i][j] = 1.0
            elif j < i:
                matrix[i][j] = matrix[j][i]
            else:
                _, pooled = diagnostic_kappa(
                    report_sets[i], report_sets[j], findings, detector
                )
                matrix[i][j] = pooled
    return matrix
