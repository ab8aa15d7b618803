"""Guessing distributions over reconstruction sequences of a fixed length.

Every distribution exposes exact per-sequence weights, the full weight vector
(lexicographic order, within an enumeration cap), and vectorized sampling.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .core import (
    DEFAULT_ENUM_BITS,
    CapExceeded,
    DistortionSpec,
    all_sequences,
    as_pmf,
    as_sequence,
    check_enum_cap,
    distortion_table,
    multinomial,
    type_classes,
)
from .lz import all_code_lengths, lz_code_length, lz_decode_stream, random_bits

LZ_NORMALIZER_BITS = 20


def _log2_sum_exp2(v) -> float:
    v = np.asarray(v, float)
    m = v.max()
    return float(m + np.log2(np.sum(np.exp2(v - m))))


class GuessingDistribution:
    """Base class. Subclasses define ``log2_weight`` and ``sample_many``."""

    kind = "base"
    normalized = True

    def __init__(self, n: int, alpha: int):
        if n < 1 or alpha < 1:
            raise ValueError("need n >= 1 and alpha >= 1")
        self.n = int(n)
        self.alpha = int(alpha)

    def _check(self, xhat) -> np.ndarray:
        x = as_sequence(xhat, self.alpha)
        if x.size != self.n:
            raise ValueError(f"sequence length {x.size} does not match n={self.n}")
        return x

    def log2_weight(self, xhat) -> float:
        raise NotImplementedError

    def weight(self, xhat) -> float:
        return float(2.0 ** self.log2_weight(xhat))

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        seqs = all_sequences(self.alpha, self.n, cap_bits)
        return np.exp2([self.log2_weight(s) for s in seqs])

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.weights_all())

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = self._cdf
        u = rng.random(size) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = self.sample_indices(rng, size)
        powers = self.alpha ** np.arange(self.n - 1, -1, -1, dtype=np.int64)
        return (idx[:, None] // powers[None, :]) % self.alpha

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(rng, 1)[0]

    def describe(self) -> str:
        return self.kind


class Uniform(GuessingDistribution):
    kind = "uniform"

    def log2_weight(self, xhat) -> float:
        self._check(xhat)
        return -self.n * math.log2(self.alpha)

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        check_enum_cap(self.alpha, self.n, cap_bits)
        return np.full(self.alpha**self.n, float(self.alpha) ** -self.n)

    def sample_many(self, rng, size):
        return rng.integers(0, self.alpha, size=(size, self.n))


class TiltedIid(GuessingDistribution):
    """I.i.d. guesses with per-letter law proportional to ``base ** (1 / (1 + rho))``.

    The non-universal baseline: it needs the source law and the moment order.
    """

    kind = "tilted"

    def __init__(self, n: int, base, rho: float):
        base = as_pmf(base)
        super().__init__(n, base.size)
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        t = base ** (1.0 / (1.0 + rho))
        self.letter = t / t.sum()
        self.rho = float(rho)
        with np.errstate(divide="ignore"):
            self._log_letter = np.log2(self.letter)

    def log2_weight(self, xhat) -> float:
        x = self._check(xhat)
        return float(self._log_letter[x].sum())

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        check_enum_cap(self.alpha, self.n, cap_bits)
        w = np.ones(1)
        for _ in range(self.n):
            w = np.kron(w, self.letter)
        return w

    def sample_many(self, rng, size):
        return rng.choice(self.alpha, size=(size, self.n), p=self.letter)


class TypeWeighted(GuessingDistribution):
    """Weight proportional to ``2^(-n H(type of xhat))``.

    The normalizer is summed over type classes with exact integer class sizes, so
    no enumeration of sequences is needed at any length.
    """

    kind = "type"

    def __init__(self, n: int, alpha: int):
        super().__init__(n, alpha)
        types = list(type_classes(alpha, n))
        self._types = np.array(types, dtype=np.int64)
        self._log2_unnorm = np.array([-n * _empirical_entropy(t, n) for t in types])
        log2_sizes = np.array([math.log2(multinomial(t)) for t in types])
        self._log2_class_mass = log2_sizes + self._log2_unnorm
        self.log2_normalizer = _log2_sum_exp2(self._log2_class_mass)
        self._class_probs = np.exp2(self._log2_class_mass - self.log2_normalizer)
        self._class_probs /= self._class_probs.sum()

    def log2_weight(self, xhat) -> float:
        x = self._check(xhat)
        counts = np.bincount(x, minlength=self.alpha)
        return -self.n * _empirical_entropy(counts, self.n) - self.log2_normalizer

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        seqs = all_sequences(self.alpha, self.n, cap_bits)
        counts = np.stack([(seqs == a).sum(axis=1) for a in range(self.alpha)], axis=1)
        p = counts / self.n
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.sum(np.where(p > 0, p * np.log2(p), 0.0), axis=1)
        return np.exp2(-self.n * h - self.log2_normalizer)

    def sample_many(self, rng, size):
        """Draw a type class by its total mass, then a uniform member of the class."""
        which = rng.choice(len(self._types), size=size, p=self._class_probs)
        rows = np.stack([np.repeat(np.arange(self.alpha), self._types[t]) for t in which])
        return rng.permuted(rows, axis=1)


def _empirical_entropy(counts, n) -> float:
    c = np.asarray(counts, float)
    c = c[c > 0]
    p = c / n
    return float(-np.sum(p * np.log2(p)))


class LzWeighted(GuessingDistribution):
    """Weight proportional to ``2^(-LZ(xhat))``.

    The normalizer is found by exhaustive scan when ``alpha^n`` is within
    ``2^normalizer_bits``. Beyond that ``normalized`` is False and weights are the
    unnormalized lower bounds ``2^(-LZ)``.
    """

    kind = "lz"

    def __init__(self, n: int, alpha: int, normalizer_bits: float = LZ_NORMALIZER_BITS):
        super().__init__(n, alpha)
        try:
            check_enum_cap(alpha, n, normalizer_bits)
        except CapExceeded:
            self.normalized = False
            self.log2_normalizer = 0.0
            self._lengths = None
        else:
            self._lengths = all_code_lengths(alpha, n, normalizer_bits)
            self.log2_normalizer = _log2_sum_exp2(-self._lengths.astype(float))

    def log2_weight(self, xhat) -> float:
        x = self._check(xhat)
        return -lz_code_length(x, self.alpha) - self.log2_normalizer

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        if self._lengths is None:
            raise CapExceeded("LZ normalizer not available at this length")
        return np.exp2(-self._lengths.astype(float) - self.log2_normalizer)

    def sample_stream(self, rng: np.random.Generator, truncate: bool = False):
        """Feed fair bits to the LZ decoder. Returns ``(sequence, truncated)``.

        By default the decoder restarts on bit paths that are not codewords,
        which samples the normalized law exactly at any ``n``. ``truncate``
        instead cuts such paths at ``n`` symbols and flags them (biased).
        """
        mode = "truncate" if truncate else "restart"
        return lz_decode_stream(random_bits(rng, 64), self.n, self.alpha, on_invalid=mode)

    def sample_many(self, rng, size, mode: str | None = None):
        """``mode`` is ``"exact"`` (inverse CDF over enumerated weights), ``"stream"``
        (restarting decoder) or ``"stream-truncate"``."""
        mode = mode or ("exact" if self._lengths is not None else "stream")
        if mode == "exact":
            return super().sample_many(rng, size)
        if mode not in ("stream", "stream-truncate"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        truncate = mode == "stream-truncate"
        return np.stack([self.sample_stream(rng, truncate)[0] for _ in range(size)])


class BlockLz(GuessingDistribution):
    """Independent length-``l`` blocks, each with law ``2^(-LZ(b)) / sum_b 2^(-LZ(b))``."""

    kind = "block_lz"

    def __init__(self, n: int, alpha: int, l: int):
        super().__init__(n, alpha)
        if l < 1 or n % l:
            raise ValueError(f"block length {l} must divide n={n}")
        self.l = int(l)
        lengths = all_code_lengths(alpha, l)
        self.log2_block_normalizer = _log2_sum_exp2(-lengths.astype(float))
        self.block_weights = np.exp2(-lengths.astype(float) - self.log2_block_normalizer)
        self._block_seqs = all_sequences(alpha, l)
        self._block_powers = alpha ** np.arange(l - 1, -1, -1, dtype=np.int64)

    def log2_weight(self, xhat) -> float:
        x = self._check(xhat).reshape(-1, self.l)
        return float(np.sum(np.log2(self.block_weights[x @ self._block_powers])))

    def weights_all(self, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        check_enum_cap(self.alpha, self.n, cap_bits)
        w = np.ones(1)
        for _ in range(self.n // self.l):
            w = np.kron(w, self.block_weights)
        return w

    def sample_many(self, rng, size):
        m = self.n // self.l
        idx = rng.choice(self.block_weights.size, size=(size, m), p=self.block_weights)
        return self._block_seqs[idx].reshape(size, self.n)

    def describe(self) -> str:
        return f"block_lz(l={self.l})"


def make_distribution(kind: str, n: int, alpha: int, **params) -> GuessingDistribution:
    kind = kind.lower()
    if kind == "uniform":
        return Uniform(n, alpha)
    if kind in ("type", "type_weighted"):
        return TypeWeighted(n, alpha)
    if kind in ("lz", "lz_weighted"):
        return LzWeighted(n, alpha)
    if kind in ("block_lz", "blocklz"):
        return BlockLz(n, alpha, int(params.get("l", n)))
    if kind in ("tilted", "tilted_iid"):
        return TiltedIid(n, params["base"], float(params["rho"]))
    raise ValueError(f"unknown distribution kind {kind!r}")


def ball_probabilities(dist: GuessingDistribution, xs, spec: DistortionSpec,
                       cap_bits: float = DEFAULT_ENUM_BITS, chunk: int = 64) -> np.ndarray:
    """Exact guessing-distribution mass of the distortion ball of each row of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    if xs.shape[1] != dist.n:
        raise ValueError("sequence length does not match the distribution")
    if spec.n_rec != dist.alpha:
        raise ValueError("distortion reconstruction alphabet does not match the distribution")
    w = dist.weights_all(cap_bits)
    budget = spec.budget(dist.n)
    out = np.empty(len(xs))
    for start in range(0, len(xs), chunk):
        table = distortion_table(xs[start:start + chunk], spec, cap_bits)
        out[start:start + chunk] = np.where(table <= budget, w[None, :], 0.0).sum(axis=1)
    return out


def ball_probability(dist: GuessingDistribution, x, spec: DistortionSpec,
                     cap_bits: float = DEFAULT_ENUM_BITS) -> float:
    x = as_sequence(x, spec.n_src)
    return float(ball_probabilities(dist, x[None, :], spec, cap_bits)[0])


def weight(dist: GuessingDistribution, xhat) -> float:
    return dist.weight(xhat)


def sample(dist: GuessingDistribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample(rng)
