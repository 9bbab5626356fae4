"""Surrogate generative kernels.

Two fit-then-sample kernels expose collapse dynamics at desk scale: a
smoothed backoff n-gram text model with truncated nucleus decoding, and a
Gaussian-mixture plus attribute model for feature populations. Both preserve
the two mechanisms that drive recursive degradation: finite-sample refitting
and mode-seeking (truncated or sharpened) sampling.
"""

from .textmodel import (
    NGramModel,
    SamplerConfig,
    RunLog,
    fit_ngram,
    sample_text,
    conditional_generate,
    model_perplexity,
    decode_distribution,
    UNCONDITIONAL_SAMPLER,
    CONDITIONAL_SAMPLER,
)
from .population import (
    GaussianMixtureModel,
    AttributeModel,
    AGE_BIN_EDGES,
    fit_population_model,
    sample_population,
)

__all__ = [
    "NGramModel",
    "SamplerConfig",
    "RunLog",
    "fit_ngram",
    "sample_text",
    "conditional_generate",
    "model_perplexity",
    "decode_distribution",
    "UNCONDITIONAL_SAMPLER",
    "CONDITIONAL_SAMPLER",
    "GaussianMixtureModel",
    "AttributeModel",
    "AGE_BIN_EDGES",
    "fit_population_model",
    "sample_population",
]
