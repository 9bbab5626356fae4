"""Gaussian-mixture + attribute kernel for feature populations.

Fits by expectation-maximization with k-means++ seeded initialization and a
1e-6 identity covariance floor, so refits stay nonsingular even when sample
diversity collapses in late generations. The attribute model tracks the
empirical sex frequencies and a fixed 5-year age histogram.

Sampling accepts a temperature: 1.0 reproduces the fitted model exactly;
values below 1.0 sharpen mixture weights, scale covariances by temperature
squared, and sharpen the categorical attribute distributions by the inverse
temperature. This is the population analog of the text sampler's mode-seeking
decoding controls and is what makes feature-population chains collapse-prone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..corpus import AGE_MAX, AGE_MIN, Demographics, Provenance
from ..errors import FitError, ValidationError
from ..imagemetrics import COVARIANCE_FLOOR, FeatureRecord, feature_matrix
from ..seeding import derive_rng

# 5-year age bins over the declared range; the last bin absorbs ages 98-100.
AGE_BIN_EDGES = tuple(range(AGE_MIN, AGE_MAX + 5, 5))  # 18, 23, ..., 98, 103
N_AGE_BINS = len(AGE_BIN_EDGES) - 1

_SIMPLEX_TOL = 1e-9
_EM_MONOTONE_TOL = 1e-8


@dataclass(frozen=True)
class GaussianMixtureModel:
    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    covariances: tuple[tuple[tuple[float, ...], ...], ...]
    loglik_trace: tuple[float, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValidationError(f"mixture weights sum to {w.sum()!r}, not 1")
        if (w < 0).any():
            raise ValidationError("mixture weights must be non-negative")
        for k, cov in enumerate(self.covariances):
            c = np.asarray(cov, dtype=float)
            if not np.allclose(c, c.T, atol=1e-8):
                raise ValidationError(f"component {k} covariance is not symmetric")
            if np.linalg.eigvalsh((c + c.T) / 2).min() <= 0:
                raise ValidationError(f"component {k} covariance is not positive definite")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def weights_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def means_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=float)

    def covariances_array(self) -> np.ndarray:
        return np.asarray(self.covariances, dtype=float)

    def log_likelihood(self, x: np.ndarray) -> float:
        log_dens = _component_log_densities(
            x, self.weights_array(), self.means_array(), self.covariances_array()
        )
        return float(_logsumexp_rows(log_dens).sum())

    FORMAT = "collapselab-gmm/v1"

    def to_json_dict(self) -> dict:
        return {
            "format": self.FORMAT,
            "weights": list(self.weights),
            "means": [list(m) for m in self.means],
            "covariances": [[list(row) for row in c] for c in self.covariances],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GaussianMixtureModel":
        if obj.get("format") != cls.FORMAT:
            raise ValidationError(f"unsupported model container {obj.get('format')!r}")
        return cls(
            weights=tuple(obj["weights"]),
            means=tuple(tuple(m) for m in obj["means"]),
            covariances=tuple(tuple(tuple(r) for r in c) for c in obj["covariances"]),
        )


@dataclass(frozen=True)
class AttributeModel:
    """Sex probabilities and a 5-year-bin age histogram, both normalized."""

    male_probability: float
    age_histogram: tuple[float, ...]

    def __post_init__(self):
        if not (0.0 <= self.male_probability <= 1.0):
            raise ValidationError("male probability must lie in [0, 1]")
        h = np.asarray(self.age_histogram, dtype=float)
        if len(h) != N_AGE_BINS:
            raise ValidationError(f"age histogram needs {N_AGE_BINS} bins, got {len(h)}")
        if (h < 0).any() or abs(h.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValidationError("age histogram must be a normalized distribution")

    def histogram_array(self) -> np.ndarray:
        return np.asarray(self.age_histogram, dtype=float)


def age_bin_index(age: int) -> int:
    return min((age - AGE_MIN) // 5, N_AGE_BINS - 1)


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))).ravel()


def _component_log_densities(
    x: np.ndarray, weights: np.ndarray, means: np.ndarray, covs: np.ndarray
) -> np.ndarray:
    """log(w_k) + log N(x | mu_k, S_k) for every record and component."""
    n, d = x.shape
    m = len(weights)
    out = np.empty((n, m))
    for k in range(m):
        chol = np.linalg.cholesky(covs[k])
        diff = x - means[k]
        solved = np.linalg.solve(chol, diff.T)
        maha = (solved**2).sum(axis=0)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, k] = (
            math.log(max(weights[k], 1e-300))
            - 0.5 * (d * math.log(2 * math.pi) + log_det + maha)
        )
    return out


def _kmeans_pp_centers(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((m, x.shape[1]))
    centers[0] = x[rng.integers(0, n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for k in range(1, m):
        total = d2.sum()
        if total <= 0:
            centers[k] = x[rng.integers(0, n)]
            continue
        centers[k] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[k]) ** 2).sum(axis=1))
    return centers


def fit_population_model(
    features,
    m: int,
    tolerance: float = 1e-6,
    max_iterations: int = 200,
    seed: int = 0,
) -> tuple[GaussianMixtureModel, AttributeModel | None]:
    """EM fit of an m-component Gaussian mixture plus empirical attributes.

    The per-iteration log-likelihood trace is recorded on the model and
    asserted non-decreasing (within 1e-8). The attribute model is None when
    no record carries demographics; mixed presence is an error.
    """
    records = list(features) if not isinstance(features, np.ndarray) else None
    x = feature_matrix(records if records is not None else features)
    n, d = x.shape
    if d < 1:
        raise ValidationError("feature dimension must be >= 1")
    if m < 1:
        raise ValidationError("need at least one mixture component")
    if n < m * (d + 1):
        raise FitError(
            f"need at least m*(d+1)={m * (d + 1)} records to fit {m} components in {d}-D, got {n}"
        )
    if not np.isfinite(x).all():
        raise FitError("feature matrix contains non-finite values")

    rng = derive_rng(seed, "em-init")
    means = _kmeans_pp_centers(x, m, rng)
    global_cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=0)) + COVARIANCE_FLOOR * np.eye(d)
    covs = np.repeat(global_cov[None, :, :], m, axis=0)
    weights = np.full(m, 1.0 / m)

    trace: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iterations):
        log_dens = _component_log_densities(x, weights, means, covs)
        norm = _logsumexp_rows(log_dens)
        ll = float(norm.sum())
        if ll < prev_ll - _EM_MONOTONE_TOL:
            raise FitError(
                f"EM log-likelihood decreased ({prev_ll!r} -> {ll!r}); numerical breakdown"
            )
        trace.append(ll)
        resp = np.exp(log_dens - norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for k in range(m):
            diff = x - means[k]
            covs[k] = (resp[:, k : k + 1] * diff).T @ diff / nk[k]
            covs[k] += COVARIANCE_FLOOR * np.eye(d)
        if abs(ll - prev_ll) < tolerance:
            break
        prev_ll = ll

    gmm = GaussianMixtureModel(
        weights=tuple(float(w) for w in weights / weights.sum()),
        means=tuple(tuple(float(v) for v in mu) for mu in means),
        covariances=tuple(
            tuple(tuple(float(v) for v in row) for row in cov) for cov in covs
        ),
        loglik_trace=tuple(trace),
    )

    attrs: AttributeModel | None = None
    if records is not None and any(isinstance(r, FeatureRecord) for r in records):
        demo = [r.demographics for r in records]
        present = [dm for dm in demo if dm is not None]
        if present and len(present) != len(demo):
            raise FitError("some records carry demographics and some do not")
        if present:
            males = sum(1 for dm in present if dm.sex == "male")
            hist = np.zeros(N_AGE_BINS)
            for dm in present:
                hist[age_bin_index(dm.age)] += 1
            hist /= hist.sum()
            attrs = AttributeModel(
                male_probability=males / len(present),
                age_histogram=tuple(float(v) for v in hist),
            )
    return gmm, attrs


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 1.0:
        return p
    q = np.power(np.maximum(p, 0.0), 1.0 / temperature)
    total = q.sum()
    if total <= 0:
        return p
    return q / total


def sample_population(
    gmm: GaussianMixtureModel,
    attrs: AttributeModel | None,
    n: int,
    seed: int,
    generation: int = 1,
    temperature: float = 1.0,
) -> list[FeatureRecord]:
    """Sample n records with Synthetic provenance and sampled demographics.

    Labels are left empty; downstream probes assign them. temperature=1.0
    samples the model exactly; lower values sharpen toward the modes.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    if n == 0:
        return []
    rng = derive_rng(seed, "sample-population", generation)
    weights = _sharpen(gmm.weights_array(), temperature)
    means = gmm.means_array()
    covs = gmm.covariances_array() * (temperature**2)
    m, d = means.shape

    components = rng.choice(m, size=n, p=weights)
    x = np.empty((n, d))
    for k in range(m):
        mask = components == k
        count = int(mask.sum())
        if count:
            chol = np.linalg.cholesky(covs[k] + 1e-12 * np.eye(d))
            z = rng.standard_normal((count, d))
            x[mask] = means[k] + z @ chol.T

    sexes: list[str] | None = None
    ages: np.ndarray | None = None
    if attrs is not None:
        p_male = float(
            _sharpen(np.array([attrs.male_probability, 1 - attrs.male_probability]), temperature)[0]
        )
        sexes = ["male" if v else "female" for v in rng.random(n) < p_male]
        hist = _sharpen(attrs.histogram_array(), temperature)
        bins = rng.choice(N_AGE_BINS, size=n, p=hist)
        offsets = rng.integers(0, 5, size=n)
        ages = np.minimum(AGE_MIN + bins * 5 + offsets, AGE_MAX)

    records = []
    prov = Provenance.synthetic(generation)
    for i in range(n):
        demographics = None
        if sexes is not None and ages is not None:
            demographics = Demographics(sex=sexes[i], age=int(ages[i]))
        records.append(
            FeatureRecord(
                vector=tuple(float(v) for v in x[i]),
                labels=frozenset(),
                demographics=demographics,
                provenance=prov,
            )
        )
    return records
