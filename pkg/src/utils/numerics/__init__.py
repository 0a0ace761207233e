"""Vector math, histogram divergences and seeded random streams."""

from utils.numerics.numerics_utils import (
    as_vec64,
    as_histogram,
    l2_distance,
    squared_l2,
    cosine_similarity,
    smoothed_distribution,
    kl_divergence,
    symmetric_kl,
    jsd,
    make_rng,
)

__all__ = [
    "as_vec64",
    "as_histogram",
    "l2_distance",
    "squared_l2",
    "cosine_similarity",
    "smoothed_distribution",
    "kl_divergence",
    "symmetric_kl",
    "jsd",
    "make_rng",
]
