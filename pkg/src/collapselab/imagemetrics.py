"""Image-population measurements at feature-vector scale.

Populations are lists of FeatureRecord: a d-dimensional vector standing in
for a pooled deep-feature embedding, plus labels, demographics, and
provenance. All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Demographics, Provenance
from .errors import FitError, UndefinedStatisticError, ValidationError
from .seeding import derive_rng

COVARIANCE_FLOOR = 1e-6
DEFAULT_FEATURE_DIM = 16

# Bootstrap presets for the two standard analysis settings.
BOOTSTRAP_PRESET_FULL = {"n_per_condition": 5534, "iterations": 10}
BOOTSTRAP_PRESET_REDUCED = {"n_per_condition": 1384, "iterations": 10}


@dataclass(frozen=True)
class FeatureRecord:
    """One population member: feature vector + labels + demographics."""

    vector: tuple[float, ...]
    labels: frozenset[str] = frozenset()
    demographics: Demographics | None = None
    provenance: Provenance = field(default_factory=Provenance.real)

    def __post_init__(self):
        arr = np.asarray(self.vector, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("feature vector must be 1-D and non-empty")
        if not np.isfinite(arr).all():
            raise ValidationError("feature vector contains non-finite entries")
        object.__setattr__(self, "vector", tuple(float(x) for x in arr))

    @property
    def dim(self) -> int:
        return len(self.vector)


def feature_matrix(records: Sequence[FeatureRecord] | np.ndarray) -> np.ndarray:
    """Stack records into an (n, d) float array, checking dimension agreement."""
    if isinstance(records, np.ndarray):
        arr = np.asarray(records, dtype=float)
        if arr.ndim != 2:
            raise ValidationError("feature array must be 2-D")
        return arr
    if not records:
        raise ValidationError("empty feature population")
    d = records[0].dim
    for i, r in enumerate(records):
        if r.dim != d:
            raise ValidationError(f"record {i} has dimension {r.dim}, expected {d}")
    return np.array([r.vector for r in records], dtype=float)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------


def _mean_and_cov(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    cov = cov + COVARIANCE_FLOOR * np.eye(cov.shape[0])
    return mu, cov


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix via eigendecomposition,
    clipping tiny negative eigenvalues from numerical error at 0."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    a: Sequence[FeatureRecord] | np.ndarray,
    b: Sequence[FeatureRecord] | np.ndarray,
) -> float:
    """Frechet distance between Gaussian summaries of two populations.

    FD = ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the
    cross term computed as the square root of the symmetrized product
    S_a^(1/2) S_b S_a^(1/2). Symmetric in its arguments; tiny negative
    eigenvalues are clipped at zero, so the result is >= 0.
    """
    xa = feature_matrix(a)
    xb = feature_matrix(b)
    if xa.shape[1] != xb.shape[1]:
        raise ValidationError(
            f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}"
        )
    d = xa.shape[1]
    if xa.shape[0] <= d or xb.shape[0] <= d:
        raise ValidationError(
            f"need more than d={d} samples per side for a nonsingular covariance"
        )
    mu_a, cov_a = _mean_and_cov(xa)
    mu_b, cov_b = _mean_and_cov(xb)
    diff = mu_a - mu_b
    a_half = _sqrt_psd(cov_a)
    inner = _sqrt_psd(a_half @ cov_b @ a_half)
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(value, 0.0)


def bootstrap_frechet(
    real: Sequence[FeatureRecord] | np.ndarray,
    synthetic: Sequence[FeatureRecord] | np.ndarray,
    n_per_condition: int,
    iterations: int,
    seed: int,
) -> tuple[float, float]:
    """Bootstrap-resampled Frechet distance, returned as (mean, sd).

    Each iteration resamples both sides with replacement to n_per_condition.
    Deterministic under the seed; iterations use independent derived streams.
    """
    if iterations < 2:
        raise ValidationError("need at least 2 iterations for a standard deviation")
    xr = feature_matrix(real)
    xs = feature_matrix(synthetic)
    if xr.shape[0] < n_per_condition or xs.shape[0] < n_per_condition:
        raise ValidationError(
            f"pools must hold at least n_per_condition={n_per_condition} records"
        )
    values = []
    for it in range(iterations):
        rng = derive_rng(seed, "bootstrap-frechet", it)
        ra = xr[rng.integers(0, xr.shape[0], size=n_per_condition)]
        rb = xs[rng.integers(0, xs.shape[0], size=n_per_condition)]
        values.append(frechet_distance(ra, rb))
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std(ddof=1))


# ---------------------------------------------------------------------------
# Probe classifier
# ---------------------------------------------------------------------------


@dataclass
class ProbeClassifier:
    """Per-label logistic probes trained by full-batch gradient descent."""

    weights: dict[str, np.ndarray]
    biases: dict[str, float]
    loss_traces: dict[str, list[float]]
    skipped_labels: tuple[str, ...] = ()

    def probabilities(self, features, label: str) -> np.ndarray:
        if label not in self.weights:
            raise ValidationError(f"probe was not trained for label {label!r}")
        x = feature_matrix(features)
        z = x @ self.weights[label] + self.biases[label]
        return _sigmoid(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_and_grad(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy and its gradient (w, b)."""
    z = x @ w + b
    p = _sigmoid(z)
    eps = 1e-12
    loss = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    resid = (p - y) / len(y)
    return loss, x.T @ resid, float(resid.sum())


def train_probe(
    features: Sequence[FeatureRecord],
    labels: Sequence[str] | None = None,
    learning_rate: float = 0.5,
    epochs: int = 500,
    seed: int = 0,
) -> ProbeClassifier:
    """Train one logistic probe per label on binary membership targets.

    Labels with a single class present are skipped and flagged. Full-batch
    updates make the result invariant to record order.
    """
    x = feature_matrix(features)
    all_labels = labels
    if all_labels is None:
        seen: set[str] = set()
        for r in features:
            seen.update(r.labels)
        all_labels = sorted(seen)
    weights: dict[str, np.ndarray] = {}
    biases: dict[str, float] = {}
    traces: dict[str, list[float]] = {}
    skipped: list[str] = []
    for label in all_labels:
        y = np.array([1.0 if label in r.labels else 0.0 for r in features])
        if y.min() == y.max():
            skipped.append(label)
            continue
        rng = derive_rng(seed, "probe-init", label)
        w = rng.normal(0.0, 0.01, size=x.shape[1])
        b = 0.0
        trace: list[float] = []
        for _ in range(epochs):
            loss, gw, gb = logistic_loss_and_grad(w, b, x, y)
            trace.append(loss)
            w = w - learning_rate * gw
            b = b - learning_rate * gb
        weights[label] = w
        biases[label] = b
        traces[label] = trace
    return ProbeClassifier(
        weights=weights,
        biases=biases,
        loss_traces=traces,
        skipped_labels=tuple(skipped),
    )


def probe_prevalence(
    probe: ProbeClassifier,
    features: Sequence[FeatureRecord],
    threshold: float = 0.5,
) -> dict[str, dict[str, float]]:
    """Per-label mean predicted probability and strict-threshold positives."""
    out: dict[str, dict[str, float]] = {}
    for label in probe.weights:
        probs = probe.probabilities(features, label)
        out[label] = {
            "mean_probability": float(probs.mean()),
            "positive_count": int((probs > threshold).sum()),
        }
    return out


# ---------------------------------------------------------------------------
# AUROC
# ---------------------------------------------------------------------------


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative, ties 1/2.

    Equals the Mann-Whitney U statistic divided by n_pos * n_neg, computed
    from midranks.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValidationError("scores and labels must be equal-length 1-D sequences")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedStatisticError("AUROC undefined with a single class")
    ranks = _midranks(s)
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Mahalanobis quality scores
# ---------------------------------------------------------------------------


def composite_embedding(x: np.ndarray) -> np.ndarray:
    """Append the per-record coordinate variance and mean absolute first
    difference to each vector. These stand in for the intensity-variance and
    edge-content channels of a pixel-space quality embedding; at
    feature-vector scale the record's own coordinates are the only signal.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    var = x.var(axis=1, ddof=0, keepdims=True)
    if x.shape[1] >= 2:
        grad = np.abs(np.diff(x, axis=1)).mean(axis=1, keepdims=True)
    else:
        grad = np.zeros((x.shape[0], 1))
    return np.hstack([x, var, grad])


def mahalanobis_scores(
    candidates: Sequence[FeatureRecord] | np.ndarray,
    reference: Sequence[FeatureRecord] | np.ndarray,
    composite: bool = True,
) -> np.ndarray:
    """Mahalanobis distance of each candidate from the reference population,
    measured in the composite quality space (set composite=False for raw
    vectors). Reference mean/covariance carry the 1e-6 floor.
    """
    xc = feature_matrix(candidates)
    xr = feature_matrix(reference)
    if xc.shape[1] != xr.shape[1]:
        raise ValidationError("candidate/reference dimension mismatch")
    if composite:
        xc = composite_embedding(xc)
        xr = composite_embedding(xr)
    d = xr.shape[1]
    if xr.shape[0] < d + 1:
        raise ValidationError(f"reference needs at least composite-d+1={d + 1} records")
    mu = xr.mean(axis=0)
    cov = np.atleast_2d(np.cov(xr, rowvar=False, ddof=1)) + COVARIANCE_FLOOR * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FitError("reference covariance is singular even after the floor") from exc
    diff = xc - mu
    solved = np.linalg.solve(chol, diff.T)
    return np.sqrt((solved**2).sum(axis=0))


# ---------------------------------------------------------------------------
# Population file format
# ---------------------------------------------------------------------------


def save_feature_population(records: Sequence[FeatureRecord], path: str | Path) -> None:
    """Columnar numeric text format: header row names d feature columns,
    label indicator columns, and demographic/provenance columns."""
    path = Path(path)
    if not records:
        raise ValidationError("refusing to write an empty population")
    d = records[0].dim
    label_names = sorted({lb for r in records for lb in r.labels})
    header = (
        [f"f{i}" for i in range(d)]
        + [f"label:{lb}" for lb in label_names]
        + ["sex", "age", "provenance", "generation"]
    )
    lines = [",".join(header)]
    for r in records:
        row = [repr(v) for v in r.vector]
        row += ["1" if lb in r.labels else "0" for lb in label_names]
        if r.demographics is not None:
            row += [r.demographics.sex, str(r.demographics.age)]
        else:
            row += ["", ""]
        row.append(r.provenance.kind)
        row.append("" if r.provenance.generation is None else str(r.provenance.generation))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_feature_population(path: str | Path) -> list[FeatureRecord]:
    from .errors import FormatError

    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise FormatError(f"{path.name}: no records")
    header = lines[0].split(",")
    feat_idx = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
    label_idx = {h.split(":", 1)[1]: i for i, h in enumerate(header) if h.startswith("label:")}
    col = {h: i for i, h in enumerate(header)}
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            vec = tuple(float(parts[i]) for i in feat_idx)
            labels = {lb for lb, i in label_idx.items() if parts[i] == "1"}
            demographics = None
            if "sex" in col and parts[col["sex"]]:
                demographics = Demographics(parts[col["sex"]], int(parts[col["age"]]))
            if "provenance" in col and parts[col["provenance"]] == "synthetic":
                prov = Provenance.synthetic(int(parts[col["generation"]]))
            else:
                prov = Provenance.real()
            records.append(
                FeatureRecord(vec, frozenset(labels), demographics, prov)
            )
        except (ValueError, IndexError, ValidationError) as exc:
            raise FormatError(f"{path.name}:{lineno}: {exc}") from exc
    return records
