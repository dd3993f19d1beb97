"""Seeded sampling and numerically stable statistical primitives.

Every sampler takes an explicit :class:`RandomStream`.  A stream is a value,
not a stateful generator: calling a sampler twice with equal streams yields
equal draws.  Callers that need several independent draws derive child
streams with :meth:`RandomStream.child`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "RandomStream",
    "StepCdf",
    "empirical_cdf",
    "exponential_from_uniform",
    "log_mean_exp",
    "sample_dirichlet",
    "sample_exponential",
    "sample_gamma",
    "sample_truncated_normal",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox bit generator seeded through a
    :class:`numpy.random.SeedSequence` whose spawn key is
    ``(stream_id, *path)``.  Distinct keys give independent sequences and
    no coordination is needed between workers.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")

    def child(self, *keys: int) -> "RandomStream":
        """Independent sub-stream identified by ``keys``."""
        return RandomStream(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class StepCdf:
    """Right-continuous step cdf with jumps at ``sorted_points``."""

    sorted_points: np.ndarray
    cumulative: np.ndarray

    def __call__(self, x):
        idx = np.searchsorted(self.sorted_points, x, side="right")
        padded = np.concatenate([[0.0], self.cumulative])
        return padded[idx]


def _check_positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be positive, got {value}")


def exponential_from_uniform(u, rate):
    """Inverse-cdf transform ``-ln(1-u)/rate``."""
    _check_positive("rate", rate)
    return -np.log1p(-np.asarray(u, dtype=float)) / rate


def sample_exponential(rate, stream: RandomStream, size=None):
    """Exp(rate) draws by inversion of uniforms from ``stream``."""
    _check_positive("rate", rate)
    u = stream.generator().random(size)
    return exponential_from_uniform(u, rate)


def sample_gamma(shape, rate, stream: RandomStream, size=None):
    """Gamma draws in the rate parameterisation (mean ``shape/rate``).

    ``shape`` and ``rate`` broadcast against ``size``.
    """
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    # numpy's Generator uses Marsaglia-Tsang for standard_gamma
    return stream.generator().standard_gamma(shape, size) / rate


def sample_truncated_normal(mean, std, lower, stream: RandomStream, size=None):
    """Draws from N(mean, std^2) conditioned on exceeding ``lower``.

    Plain rejection is used while the acceptance probability is at least
    one quarter; otherwise the upper tail is inverted directly.
    """
    _check_positive("std", std)
    rng = stream.generator()
    alpha = (lower - mean) / std
    tail = float(ndtr(-alpha))
    n = 1 if size is None else int(np.prod(size))
    if tail >= 0.25:
        out = np.empty(0)
        while out.size < n:
            z = rng.standard_normal(max(2 * (n - out.size), 16))
            out = np.concatenate([out, z[z > alpha]])
        z = out[:n]
    else:
        u = rng.random(n)
        # P(Z > z) = u * P(Z > alpha)
        z = -ndtri(np.maximum(u, np.finfo(float).tiny) * tail)
        z = np.maximum(z, alpha)
    draws = mean + std * z
    if size is None:
        return float(draws[0])
    return draws.reshape(size)


def sample_dirichlet(alphas, stream: RandomStream, size=None):
    """Probability vector(s) as normalised gamma draws."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0:
        raise ValueError("alphas must be a non-empty vector")
    _check_positive("alphas", alphas)
    shape = alphas.shape if size is None else tuple(np.atleast_1d(size)) + alphas.shape
    g = stream.generator().standard_gamma(np.broadcast_to(alphas, shape))
    return g / g.sum(axis=-1, keepdims=True)


def log_mean_exp(values, scale=1.0, axis=None):
    """``scale * ln(mean(exp(values / scale)))`` without overflow.

    The maximum is factored out before exponentiating, so the result is
    finite for any finite input and any ``scale > 0``.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_mean_exp of an empty array")
    _check_positive("scale", scale)
    vmax = np.max(v, axis=axis, keepdims=True)
    s = np.mean(np.exp((v - vmax) / scale), axis=axis, keepdims=True)
    out = vmax + scale * np.log(s)
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def empirical_cdf(data) -> StepCdf:
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise ValueError("empirical cdf of empty data")
    points, counts = np.unique(data, return_counts=True)
    cumulative = np.cumsum(counts) / data.size
    cumulative[-1] = 1.0
    return StepCdf(points, cumulative)
