"""collapselab: a desk-scale laboratory for recursive-training collapse.

Fit-then-sample surrogate kernels, a generation-chain engine, text and
feature-population metric suites, clinical-safety scoring, mitigation
strategies, and a reproducible experiment runner.
"""

__version__ = "0.1.0"
