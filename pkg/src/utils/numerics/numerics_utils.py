"""Vector, histogram and divergence primitives shared by every other module.

Vectors are 1-D float64 numpy arrays. Histograms are 1-D int64 arrays of
per-class counts. KL and JSD use base-2 logarithms with every bin smoothed by
HISTOGRAM_EPS before normalization, so JSD lies in [0, 1] and stays finite on
disjoint supports.
"""

import zlib
from typing import Sequence, Union

import numpy as np
from scipy.stats import entropy

from utils.errors import DegenerateVectorError, DimensionError, EmptyDataError

HISTOGRAM_EPS = 1e-10
LOG_BASE = 2

Vec64 = np.ndarray
Histogram = np.ndarray
StreamKey = Union[int, str]


def as_vec64(values: Sequence[float]) -> Vec64:
    """Convert to a 1-D float64 vector, rejecting NaN/Inf."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError("vector contains NaN or Inf")
    return vec


def as_histogram(bins: Sequence[int], num_classes: int = None) -> Histogram:
    """Convert per-class counts to an int64 histogram."""
    hist = np.asarray(bins, dtype=np.int64)
    if hist.ndim != 1 or hist.size < 1:
        raise DimensionError(f"histogram must be 1-D with >= 1 bin, got shape {hist.shape}")
    if num_classes is not None and hist.size != num_classes:
        raise DimensionError(f"histogram has {hist.size} bins, expected {num_classes}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    return hist


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")


def l2_distance(a: Vec64, b: Vec64) -> float:
    """Euclidean norm of a - b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    return float(np.sqrt(np.dot(a - b, a - b)))


def squared_l2(a: Vec64, b: Vec64) -> float:
    """Squared Euclidean distance ||a - b||^2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    diff = a - b
    return float(np.dot(diff, diff))


def cosine_similarity(a: Vec64, b: Vec64) -> float:
    """Cosine of the angle between a and b, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_length(a, b)
    norm_a = float(np.sqrt(np.dot(a, a)))
    norm_b = float(np.sqrt(np.dot(b, b)))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


def smoothed_distribution(hist: Histogram) -> np.ndarray:
    """Normalize counts after adding HISTOGRAM_EPS to every bin."""
    hist = np.asarray(hist)
    if hist.sum() <= 0:
        raise EmptyDataError("histogram total must be > 0")
    smoothed = hist.astype(np.float64) + HISTOGRAM_EPS
    return smoothed / smoothed.sum()


def _check_histograms(p: Histogram, q: Histogram) -> None:
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape:
        raise DimensionError(f"class-count mismatch: {p.shape} vs {q.shape}")


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """KL(p || q) in bits on smoothed, normalized histograms."""
    _check_histograms(p, q)
    p_dist = smoothed_distribution(p)
    q_dist = smoothed_distribution(q)
    return max(0.0, float(entropy(p_dist, q_dist, base=LOG_BASE)))


def symmetric_kl(p: Histogram, q: Histogram) -> float:
    """KL(p || q) + KL(q || p)."""
    return kl_divergence(p, q) + kl_divergence(q, p)


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits; symmetric and bounded by 1."""
    _check_histograms(p, q)
    p_dist = smoothed_distribution(p)
    q_dist = smoothed_distribution(q)
    m_dist = 0.5 * (p_dist + q_dist)
    value = 0.5 * float(entropy(p_dist, m_dist, base=LOG_BASE)) + 0.5 * float(
        entropy(q_dist, m_dist, base=LOG_BASE)
    )
    return min(1.0, max(0.0, value))


def _stream_word(key: StreamKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


def make_rng(seed: int, *stream: StreamKey) -> np.random.Generator:
    """
    Seeded generator over the counter-based Philox bit generator.

    The stream path (e.g. "local", round, client_id) selects an independent
    child stream, so the same (seed, path) yields the same draws no matter
    which other streams were used before.

    Args:
        seed: 64-bit unsigned run seed
        *stream: Integer or string path components

    Returns:
        numpy Generator owned by the caller (do not share across threads)
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy_words = [int(seed)] + [_stream_word(key) for key in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy_words)))
