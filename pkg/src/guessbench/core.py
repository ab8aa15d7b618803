"""Finite-alphabet foundations: sequences, pmfs, distortion balls, types, entropies.

Symbols are dense integer indices ``0..size-1``. Pmfs and channels are plain
numpy arrays validated on entry; sequences are 1-d integer arrays. All logs
are base 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence as Seq

import numpy as np

PMF_TOL = 1e-12
FLOAT_LEQ_TOL = 1e-9
DEFAULT_ENUM_BITS = 24


class CapExceeded(ValueError):
    """An exhaustive computation would exceed its configured size cap."""


@dataclass(frozen=True)
class Alphabet:
    size: int
    label: str | None = None

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValueError(f"alphabet size must be positive, got {self.size}")


def as_pmf(probs, size: int | None = None) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("pmf must be a non-empty vector")
    if size is not None and p.size != size:
        raise ValueError(f"pmf has {p.size} entries, alphabet has {size}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("pmf has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PMF_TOL * max(1, p.size):
        raise ValueError(f"pmf sums to {p.sum()!r}, not 1")
    return p


def as_channel(rows, n_in: int | None = None, n_out: int | None = None) -> np.ndarray:
    """Validate a stochastic matrix; row ``a`` is the conditional pmf given input ``a``."""
    w = np.asarray(rows, dtype=float)
    if w.ndim != 2:
        raise ValueError("channel must be a matrix")
    if n_in is not None and w.shape[0] != n_in:
        raise ValueError(f"channel has {w.shape[0]} rows, expected {n_in}")
    if n_out is not None and w.shape[1] != n_out:
        raise ValueError(f"channel has {w.shape[1]} columns, expected {n_out}")
    for r in w:
        as_pmf(r)
    return w


def as_sequence(symbols, size: int | None = None) -> np.ndarray:
    """Accepts an int iterable or a digit string such as ``"0110"``."""
    if isinstance(symbols, str):
        symbols = [int(ch, 36) for ch in symbols]
    x = np.asarray(symbols, dtype=np.int64)
    if x.ndim != 1:
        raise ValueError("sequence must be one-dimensional")
    if x.size and x.min() < 0:
        raise ValueError("negative symbol")
    if size is not None and x.size and x.max() >= size:
        raise ValueError(f"symbol {int(x.max())} out of range for alphabet of size {size}")
    return x


def seq_to_str(x) -> str:
    return "".join(np.base_repr(int(s), 36).lower() for s in x)


def _as_fraction(v: float) -> Fraction:
    return Fraction(v).limit_denominator(10**6)


@dataclass(frozen=True)
class DistortionSpec:
    """Single-letter distortion matrix ``d[x, xhat]`` and per-letter level ``level``.

    Ball membership ``d(x, xhat) <= n * level`` is decided exactly when every
    entry of ``d`` is an integer (the level is read as a rational with
    denominator at most 1e6, so ``1/6`` behaves as one sixth). Otherwise a
    1e-9 absolute slack is applied to the comparison.
    """

    d: np.ndarray
    level: float
    integer_valued: bool = field(init=False, repr=False)

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.size == 0:
            raise ValueError("distortion must be a non-empty matrix")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distortion entries must be finite and nonnegative")
        if self.level < 0 or not math.isfinite(self.level):
            raise ValueError("distortion level must be finite and nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "level", float(self.level))
        object.__setattr__(self, "integer_valued", bool(np.all(d == np.round(d))))

    @classmethod
    def hamming(cls, size: int, level: float, out_size: int | None = None) -> "DistortionSpec":
        out_size = size if out_size is None else out_size
        d = 1.0 - np.eye(size, out_size)
        return cls(d, level)

    @property
    def n_src(self) -> int:
        return self.d.shape[0]

    @property
    def n_rec(self) -> int:
        return self.d.shape[1]

    @property
    def d_max(self) -> float:
        return float(self.d.max())

    def with_level(self, level: float) -> "DistortionSpec":
        return DistortionSpec(self.d, level)

    def zero_attainable(self) -> bool:
        """Whether every source row contains a zero-distortion reconstruction."""
        return bool(np.all(self.d.min(axis=1) == 0))

    def budget(self, n: int) -> float:
        """Threshold ``t`` such that ``total <= t`` decides membership for length ``n``."""
        if self.integer_valued:
            return float(math.floor(_as_fraction(self.level) * n))
        return n * self.level + FLOAT_LEQ_TOL

    def block(self, K: int) -> "DistortionSpec":
        """Additive distortion on ``K``-blocks with per-block level ``K * level``.

        Block symbols use the lexicographic index of the tuple (first symbol most
        significant).
        """
        src = all_sequences(self.n_src, K)
        rec = all_sequences(self.n_rec, K)
        dk = np.zeros((len(src), len(rec)))
        for i in range(K):
            dk += self.d[src[:, i]][:, rec[:, i]]
        # keep the exact rational reading of the level after scaling
        level = float(_as_fraction(self.level) * K) if self.integer_valued else self.level * K
        return DistortionSpec(dk, level)


def _check_pair(x, xhat, spec: DistortionSpec):
    x = as_sequence(x, spec.n_src)
    xhat = as_sequence(xhat, spec.n_rec)
    if x.shape != xhat.shape:
        raise ValueError(f"length mismatch: {x.size} vs {xhat.size}")
    return x, xhat


def total_distortion(x, xhat, spec: DistortionSpec) -> float:
    x, xhat = _check_pair(x, xhat, spec)
    return float(spec.d[x, xhat].sum())


def in_ball(x, xhat, spec: DistortionSpec) -> bool:
    x, xhat = _check_pair(x, xhat, spec)
    return bool(spec.d[x, xhat].sum() <= spec.budget(x.size))


def check_enum_cap(alpha: int, n: int, cap_bits: float = DEFAULT_ENUM_BITS) -> None:
    if n * math.log2(max(alpha, 1)) > cap_bits + 1e-12:
        raise CapExceeded(
            f"enumerating {alpha}^{n} sequences exceeds the cap of 2^{cap_bits:g}"
        )


def all_sequences(alpha: int, n: int, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
    """Every sequence of ``alpha^n`` in lexicographic order, one per row."""
    check_enum_cap(alpha, n, cap_bits)
    idx = np.arange(alpha**n, dtype=np.int64)
    powers = alpha ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers[None, :]) % alpha).astype(np.int64)


def seq_index(seqs, alpha: int) -> np.ndarray | int:
    """Lexicographic index of a sequence (or of each row of a 2-d array)."""
    s = np.asarray(seqs, dtype=np.int64)
    n = s.shape[-1]
    powers = alpha ** np.arange(n - 1, -1, -1, dtype=np.int64)
    out = s @ powers
    return int(out) if s.ndim == 1 else out


def distortion_table(xs: np.ndarray, spec: DistortionSpec, cap_bits: float = DEFAULT_ENUM_BITS):
    """Total distortion from each row of ``xs`` to every reconstruction sequence.

    Returns an array of shape ``(len(xs), n_rec**n)`` in lexicographic order of the
    reconstruction. The block is split in two halves so each row is an outer sum
    of two small lookup vectors.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
    n = xs.shape[1]
    a = spec.n_rec
    check_enum_cap(a, n, cap_bits)
    h = n // 2
    hi = all_sequences(a, h)
    lo = all_sequences(a, n - h)
    # partial[i][p, j]: distortion of source symbol p against column i of the half table
    out = np.empty((xs.shape[0], a**n))
    for r, x in enumerate(xs):
        dh = np.zeros(len(hi))
        for i in range(h):
            dh += spec.d[x[i], hi[:, i]]
        dl = np.zeros(len(lo))
        for i in range(n - h):
            dl += spec.d[x[h + i], lo[:, i]]
        out[r] = (dh[:, None] + dl[None, :]).ravel()
    return out


def ball_mask(x, spec: DistortionSpec, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
    """Boolean indicator of the distortion ball over all reconstructions (lexicographic)."""
    x = as_sequence(x, spec.n_src)
    return distortion_table(x[None, :], spec, cap_bits)[0] <= spec.budget(x.size)


def enumerate_ball(
    x, spec: DistortionSpec, xhat_alphabet: Alphabet | int | None = None,
    cap_bits: float = DEFAULT_ENUM_BITS,
) -> Iterator[np.ndarray]:
    """Yield every member of the distortion ball of ``x`` once, in lexicographic order."""
    if xhat_alphabet is not None:
        size = xhat_alphabet.size if isinstance(xhat_alphabet, Alphabet) else int(xhat_alphabet)
        if size != spec.n_rec:
            raise ValueError("reconstruction alphabet does not match the distortion matrix")
    x = as_sequence(x, spec.n_src)
    mask = ball_mask(x, spec, cap_bits)
    seqs = all_sequences(spec.n_rec, x.size, cap_bits)
    for row in seqs[mask]:
        yield row


def empirical_type(x, size: int | None = None) -> np.ndarray:
    x = as_sequence(x, size)
    if x.size == 0:
        raise ValueError("empirical type of an empty sequence")
    size = int(x.max()) + 1 if size is None else size
    return np.bincount(x, minlength=size) / x.size


def _plogp_ratio(p: np.ndarray, q: np.ndarray) -> float:
    m = p > 0
    if np.any(q[m] <= 0):
        return math.inf
    return float(np.sum(p[m] * np.log2(p[m] / q[m])))


def entropy(q) -> float:
    q = np.asarray(q, dtype=float)
    m = q > 0
    return float(-np.sum(q[m] * np.log2(q[m])))


def divergence(q, p) -> float:
    """Relative entropy D(q||p) in bits; ``inf`` when q is not dominated by p."""
    return max(0.0, _plogp_ratio(np.asarray(q, float), np.asarray(p, float)))


def cond_divergence(q_yx, w, q_x) -> float:
    """D(q_yx || w | q_x) = sum_x q_x(x) D(q_yx(.|x) || w(.|x))."""
    q_yx = np.asarray(q_yx, float)
    w = np.asarray(w, float)
    total = 0.0
    for a, qa in enumerate(np.asarray(q_x, float)):
        if qa > 0:
            total += qa * divergence(q_yx[a], w[a])
    return total


def mutual_information(q_x, channel) -> float:
    """I(X;Y) in bits for input pmf ``q_x`` and channel rows ``channel[x]``."""
    q_x = np.asarray(q_x, float)
    channel = np.asarray(channel, float)
    joint = q_x[:, None] * channel
    q_y = joint.sum(axis=0)
    m = joint > 0
    ratio = joint[m] / (q_x[:, None] * q_y[None, :])[m]
    return max(0.0, float(np.sum(joint[m] * np.log2(ratio))))


def renyi_entropy(p, alpha: float) -> float:
    if alpha <= 0 or alpha == 1:
        raise ValueError("Renyi order must be positive and different from 1")
    p = np.asarray(p, float)
    p = p[p > 0]
    return float(math.log2(np.sum(p**alpha)) / (1.0 - alpha))


def type_classes(alpha: int, n: int) -> Iterator[tuple[int, ...]]:
    """All count vectors of length ``alpha`` summing to ``n``."""
    if alpha == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in type_classes(alpha - 1, n - first):
            yield (first,) + rest


def multinomial(counts: Seq[int]) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out
