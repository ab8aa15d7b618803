"""Sources, guessing games, finite-state guessers, K-types and moment estimation.

Randomness: trials are processed in fixed blocks of ``TRIAL_BLOCK``; block ``b``
of an experiment with seed ``s`` uses ``numpy.random.default_rng([s, b])``.
Results therefore depend only on ``(seed, trial index)`` and never on how
blocks are scheduled across threads.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    DEFAULT_ENUM_BITS,
    CapExceeded,
    DistortionSpec,
    all_sequences,
    as_channel,
    as_pmf,
    as_sequence,
    ball_mask,
    check_enum_cap,
    entropy,
    multinomial,
    seq_index,
)
from .guessdist import BlockLz, GuessingDistribution

DEFAULT_CAP = 10**7
TRIAL_BLOCK = 1024
INDEX_MODE_BITS = 20
N_BATCHES = 20
_FIRST_CHUNK = 16
_MAX_CHUNK = 1 << 14


# ---------------------------------------------------------------------------
# sources


class Source:
    kind = "source"

    def __init__(self, n: int, alpha: int):
        self.n = int(n)
        self.alpha = int(alpha)

    def law(self, n: int | None = None, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
        """Exact law over all length-``n`` sequences, lexicographic order."""
        raise NotImplementedError

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def block_marginal(self, K: int) -> np.ndarray:
        """Law of ``K`` consecutive symbols (stationary sources)."""
        return self.law(K)


class IidSource(Source):
    kind = "iid"

    def __init__(self, P, n: int):
        self.P = as_pmf(P)
        super().__init__(n, self.P.size)

    def law(self, n=None, cap_bits=DEFAULT_ENUM_BITS):
        n = self.n if n is None else n
        check_enum_cap(self.alpha, n, cap_bits)
        out = np.ones(1)
        for _ in range(n):
            out = np.kron(out, self.P)
        return out

    def sample_many(self, rng, size):
        return rng.choice(self.alpha, size=(size, self.n), p=self.P)


class MarkovSource(Source):
    """Stationary Markov chain of finite order.

    ``transition`` has one row per context of the last ``order`` symbols
    (lexicographic, oldest symbol most significant). The first ``order``
    symbols are drawn from the stationary context law.
    """

    kind = "markov"

    def __init__(self, transition, n: int, order: int = 1):
        T = as_channel(transition)
        alpha = T.shape[1]
        if order < 1 or T.shape[0] != alpha**order:
            raise ValueError(f"order-{order} chain needs {alpha}^{order} rows")
        super().__init__(n, alpha)
        self.order = int(order)
        self.T = T
        self.context_chain = self._context_chain()
        self.stationary_context = _stationary(self.context_chain)

    def _context_chain(self) -> np.ndarray:
        a, m = self.alpha, self.order
        nctx = a**m
        C = np.zeros((nctx, nctx))
        for c in range(nctx):
            for b in range(a):
                C[c, (c * a + b) % nctx] += self.T[c, b]
        return C

    @property
    def stationary(self) -> np.ndarray:
        """Stationary single-symbol law."""
        pi = self.stationary_context.reshape((self.alpha,) * self.order)
        return pi.sum(axis=tuple(range(1, self.order))) if self.order > 1 else pi

    def law(self, n=None, cap_bits=DEFAULT_ENUM_BITS):
        n = self.n if n is None else n
        check_enum_cap(self.alpha, max(n, self.order), cap_bits)
        a, m = self.alpha, self.order
        if n <= m:
            full = self.stationary_context.reshape((a,) * m)
            return full.sum(axis=tuple(range(n, m))).ravel() if n < m else full.ravel()
        law = self.stationary_context.copy()
        nctx = a**m
        for _ in range(n - m):
            ctx = np.arange(law.size) % nctx
            law = (law[:, None] * self.T[ctx]).ravel()
        return law

    def sample_many(self, rng, size):
        a, m = self.alpha, self.order
        nctx = a**m
        out = np.empty((size, self.n), dtype=np.int64)
        first = rng.choice(nctx, size=size, p=self.stationary_context)
        powers = a ** np.arange(m - 1, -1, -1)
        init = (first[:, None] // powers[None, :]) % a
        k = min(m, self.n)
        out[:, :k] = init[:, :k]
        ctx = first
        cdf = np.cumsum(self.T, axis=1)
        for i in range(m, self.n):
            u = rng.random(size)
            sym = np.minimum((u[:, None] >= cdf[ctx]).sum(axis=1), a - 1)
            out[:, i] = sym
            ctx = (ctx * a + sym) % nctx
        return out


def _stationary(C: np.ndarray) -> np.ndarray:
    n = C.shape[0]
    A = np.vstack([C.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ C - pi)) > 1e-10:
        raise ValueError("chain has no unique stationary law")
    return pi


class IndividualSource(Source):
    kind = "individual"

    def __init__(self, x, alpha: int):
        self.x = as_sequence(x, alpha)
        super().__init__(self.x.size, alpha)

    def law(self, n=None, cap_bits=DEFAULT_ENUM_BITS):
        if n not in (None, self.n):
            raise ValueError("an individual sequence has a single length")
        check_enum_cap(self.alpha, self.n, cap_bits)
        out = np.zeros(self.alpha**self.n)
        out[seq_index(self.x, self.alpha)] = 1.0
        return out

    def sample_many(self, rng, size):
        return np.broadcast_to(self.x, (size, self.n)).copy()


# ---------------------------------------------------------------------------
# games


class GameResult(NamedTuple):
    guesses: int
    truncated: bool


@dataclass
class GameRecord:
    """Per-trial guess counts of one experiment."""

    guesses: np.ndarray
    truncated: np.ndarray
    cap: int

    @property
    def capped(self) -> int:
        return int(self.truncated.sum())


def _first_hits(draw: Callable[[int], np.ndarray], hit: Callable[[np.ndarray], np.ndarray],
                trials: int, cap: int, streams: int = 1):
    """Guess counts for ``trials`` independent games sharing one draw routine.

    ``draw(k)`` returns ``k`` guesses, ``hit`` maps guesses to success flags. With
    ``streams > 1`` each round gives one query to each of ``streams`` samplers in
    turn, and the count is the total number of queries.
    """
    G = np.full(trials, cap, dtype=np.int64)
    truncated = np.ones(trials, dtype=bool)
    pending = np.arange(trials)
    used = 0
    chunk = _FIRST_CHUNK
    while pending.size and used < cap:
        rounds = min(chunk, math.ceil((cap - used) / streams))
        k = pending.size * rounds * streams
        h = np.asarray(hit(draw(k))).reshape(pending.size, rounds * streams)
        found = h.any(axis=1)
        pos = used + h.argmax(axis=1) + 1
        ok = found & (pos <= cap)
        G[pending[ok]] = pos[ok]
        truncated[pending[ok]] = False
        pending = pending[~found]
        used += rounds * streams
        chunk = min(chunk * 2, _MAX_CHUNK)
    return G, truncated


class _GuessSampler:
    """Draws guesses either as lexicographic indices or as sequences."""

    def __init__(self, dist: GuessingDistribution, rng: np.random.Generator):
        self.dist = dist
        self.rng = rng
        self.index_mode = dist.n * math.log2(dist.alpha) <= INDEX_MODE_BITS and _enumerable(dist)

    def __call__(self, k: int) -> np.ndarray:
        if self.index_mode:
            return self.dist.sample_indices(self.rng, k)
        return self.dist.sample_many(self.rng, k)


def _enumerable(dist) -> bool:
    try:
        dist._cdf
    except CapExceeded:
        return False
    return True


def _clean_hit(x, spec, sampler):
    n = x.size
    if sampler.index_mode:
        mask = ball_mask(x, spec)
        return lambda idx: mask[idx]
    budget = spec.budget(n)
    return lambda seqs: spec.d[x[None, :], seqs].sum(axis=1) <= budget


def play_clean_games(x, dist: GuessingDistribution, spec: DistortionSpec, rng: np.random.Generator,
                     trials: int, cap: int = DEFAULT_CAP) -> GameRecord:
    """``trials`` independent games against the same secret ``x``."""
    x = as_sequence(x, spec.n_src)
    _check_game(x, dist, spec)
    sampler = _GuessSampler(dist, rng)
    G, tr = _first_hits(sampler, _clean_hit(x, spec, sampler), trials, cap)
    return GameRecord(G, tr, cap)


def play_clean_game(x, dist: GuessingDistribution, spec: DistortionSpec, rng: np.random.Generator,
                    cap: int = DEFAULT_CAP) -> GameResult:
    """Draw i.i.d. guesses from ``dist`` until one lands in the ball around ``x``."""
    rec = play_clean_games(x, dist, spec, rng, 1, cap)
    return GameResult(int(rec.guesses[0]), bool(rec.truncated[0]))


def _check_game(x, dist, spec):
    if x.size != dist.n:
        raise ValueError("secret and guessing distribution differ in length")
    if spec.n_rec != dist.alpha:
        raise ValueError("guessing alphabet does not match the distortion measure")


def corrupt(seqs: np.ndarray, W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Pass each symbol through ``W`` independently (inverse CDF on the rows)."""
    cdf = np.cumsum(W, axis=1)
    u = rng.random(seqs.shape)
    out = (u[..., None] >= cdf[seqs]).sum(axis=-1)
    return np.minimum(out, W.shape[1] - 1)


def play_noisy_games(y, dist: GuessingDistribution, W, spec: DistortionSpec,
                     rng: np.random.Generator, trials: int, cap: int = DEFAULT_CAP) -> GameRecord:
    """Guesses from ``dist`` pass through ``W``; success iff the output is within ``nD`` of ``y``."""
    W = as_channel(W, dist.alpha, spec.n_src)
    y = as_sequence(y, spec.n_src)
    if y.size != dist.n or spec.n_rec != W.shape[1]:
        raise ValueError("incompatible secret, channel and distortion")
    budget = spec.budget(y.size)
    sampler = _GuessSampler(dist, rng)
    seqs_of = (lambda idx: (idx[:, None] // dist.alpha ** np.arange(dist.n - 1, -1, -1)) % dist.alpha) \
        if sampler.index_mode else (lambda s: s)

    def draw(k):
        return corrupt(seqs_of(sampler(k)), W, rng)

    def hit(out):
        return spec.d[y[None, :], out].sum(axis=1) <= budget

    G, tr = _first_hits(draw, hit, trials, cap)
    return GameRecord(G, tr, cap)


def play_noisy_game(y, dist, W, spec, rng, cap: int = DEFAULT_CAP) -> GameResult:
    rec = play_noisy_games(y, dist, W, spec, rng, 1, cap)
    return GameResult(int(rec.guesses[0]), bool(rec.truncated[0]))


def multi_guesser_queries(x, dist: GuessingDistribution, spec: DistortionSpec,
                          guessers: int, rng: np.random.Generator, cap: int = DEFAULT_CAP,
                          trials: int = 1):
    """Total queries until any of ``guessers`` independent samplers succeeds.

    Queries are interleaved round-robin; each sampler owns a generator spawned
    from ``rng``. With one guesser, ``rng`` is used directly, so the result
    equals :func:`play_clean_game` on the same generator.
    """
    if guessers < 1:
        raise ValueError("need at least one guesser")
    x = as_sequence(x, spec.n_src)
    _check_game(x, dist, spec)
    rngs = [rng] if guessers == 1 else rng.spawn(guessers)
    samplers = [_GuessSampler(dist, r) for r in rngs]
    hit = _clean_hit(x, spec, samplers[0])

    def draw(k):
        # k = trials * rounds * guessers, laid out trial-major then round-major
        per = k // guessers
        cols = [s(per) for s in samplers]
        stacked = np.stack(cols, axis=1)  # (per, guessers, ...)
        return stacked.reshape((k,) + stacked.shape[2:])

    G, tr = _first_hits(draw, hit, trials, cap, streams=guessers)
    if trials == 1:
        return GameResult(int(G[0]), bool(tr[0]))
    return GameRecord(G, tr, cap)


# ---------------------------------------------------------------------------
# finite-state guessing machines


@dataclass
class FsmGuesser:
    """Machine reading ``delta[z]`` fresh bits in state ``z``.

    With ``v`` the integer value of those bits (first bit most significant), it
    emits ``f[z][v]`` and moves to ``g[z][v]``. Every guess starts in ``z1``.
    """

    delta: list[int]
    f: list[list[int]]
    g: list[list[int]]
    z1: int = 0

    def __post_init__(self):
        S = len(self.delta)
        if len(self.f) != S or len(self.g) != S or not 0 <= self.z1 < S:
            raise ValueError("machine tables disagree on the number of states")
        for z, dz in enumerate(self.delta):
            if dz < 0 or len(self.f[z]) != 2**dz or len(self.g[z]) != 2**dz:
                raise ValueError(f"state {z}: tables must cover all 2^{dz} bit blocks")
            if any(not 0 <= t < S for t in self.g[z]):
                raise ValueError(f"state {z}: next state out of range")

    @property
    def states(self) -> int:
        return len(self.delta)

    def _dense(self):
        if not hasattr(self, "_tables"):
            width = 2 ** max(self.delta)
            f = np.zeros((self.states, width), dtype=np.int64)
            g = np.zeros((self.states, width), dtype=np.int64)
            for z in range(self.states):
                f[z, : len(self.f[z])] = self.f[z]
                g[z, : len(self.g[z])] = self.g[z]
            self._tables = (np.asarray(self.delta, dtype=np.int64), f, g)
        return self._tables


def fsm_run(F: FsmGuesser, bits, n: int) -> np.ndarray:
    """One guess of length ``n``, consuming bits from the iterable ``bits``."""
    it = iter(bits)
    z = F.z1
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = 0
        for _ in range(F.delta[z]):
            v = (v << 1) | next(it)
        out[i] = F.f[z][v]
        z = F.g[z][v]
    return out


def fsm_run_many(F: FsmGuesser, rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """``size`` independent guesses. Reading ``k`` fair bits is drawing ``v`` uniform on ``[0, 2^k)``."""
    delta, f, g = F._dense()
    z = np.full(size, F.z1, dtype=np.int64)
    out = np.empty((size, n), dtype=np.int64)
    for i in range(n):
        v = np.floor(rng.random(size) * np.exp2(delta[z])).astype(np.int64)
        out[:, i] = f[z, v]
        z = g[z, v]
    return out


def fsm_guess_games(x, F: FsmGuesser, spec: DistortionSpec, rng, trials: int,
                    cap: int = DEFAULT_CAP) -> GameRecord:
    x = as_sequence(x, spec.n_src)
    budget = spec.budget(x.size)
    G, tr = _first_hits(lambda k: fsm_run_many(F, rng, x.size, k),
                        lambda s: spec.d[x[None, :], s].sum(axis=1) <= budget, trials, cap)
    return GameRecord(G, tr, cap)


def fsm_guess_game(x, F: FsmGuesser, spec: DistortionSpec, rng, cap: int = DEFAULT_CAP) -> GameResult:
    """The clean game with the machine restarted from ``z1`` for every guess."""
    rec = fsm_guess_games(x, F, spec, rng, 1, cap)
    return GameResult(int(rec.guesses[0]), bool(rec.truncated[0]))


def quantize_law(w, bits: int) -> np.ndarray:
    """Integer counts summing to ``2^bits``, proportional to ``w`` (largest remainders).

    Every positive weight keeps at least one count when ``2^bits`` allows it.
    """
    w = np.asarray(w, float)
    total = 1 << bits
    raw = w / w.sum() * total
    counts = np.floor(raw).astype(np.int64)
    counts[(w > 0) & (counts == 0)] = 1
    short = total - counts.sum()
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    i = 0
    while short != 0:
        j = order[i % order.size]
        if short > 0:
            counts[j] += 1
            short -= 1
        elif counts[j] > 1:
            counts[j] -= 1
            short += 1
        i += 1
    return counts


def block_machine(block_law, alpha: int, l: int, precision_bits: int = 16) -> FsmGuesser:
    """Machine that emits i.i.d. length-``l`` blocks with a dyadic approximation of ``block_law``.

    At a block start it reads ``precision_bits`` bits and picks a block by
    inverse CDF over integer counts; it then spells the block out with no
    further input. Each block probability is off by less than ``2^-precision_bits``.
    """
    block_law = as_pmf(block_law, alpha**l)
    counts = quantize_law(block_law, precision_bits)
    blocks = all_sequences(alpha, l)
    chooser = np.repeat(np.arange(blocks.shape[0]), counts)
    # state 0: block start; state 1 + b * (l - 1) + (p - 1): block b, next position p
    S = 1 + blocks.shape[0] * (l - 1)

    def pos_state(b, p):
        return 0 if p == l else 1 + b * (l - 1) + (p - 1)

    delta = [precision_bits] + [0] * (S - 1)
    f = [blocks[chooser, 0].tolist()] + [None] * (S - 1)
    g = [[pos_state(int(b), 1) for b in chooser]] + [None] * (S - 1)
    for b in range(blocks.shape[0]):
        for p in range(1, l):
            z = pos_state(b, p)
            f[z] = [int(blocks[b, p])]
            g[z] = [pos_state(b, p + 1)]
    F = FsmGuesser(delta, f, g, 0)
    F.block_counts = counts
    return F


def block_lz_machine(alpha: int, l: int, precision_bits: int = 16) -> FsmGuesser:
    """Finite-state implementation of the block-LZ guessing law."""
    return block_machine(BlockLz(l, alpha, l).block_weights, alpha, l, precision_bits)


def fsm_output_law(F: FsmGuesser, n: int, alpha: int) -> np.ndarray:
    """Exact law of one guess, by enumerating every bit path the machine can read."""
    law = np.zeros(alpha**n)
    frontier = {(F.z1, 0): 1.0}  # (state, partial index) -> probability
    for _ in range(n):
        nxt: dict[tuple[int, int], float] = {}
        for (z, idx), pr in frontier.items():
            share = pr / 2 ** F.delta[z]
            for v in range(2 ** F.delta[z]):
                key = (F.g[z][v], idx * alpha + F.f[z][v])
                nxt[key] = nxt.get(key, 0.0) + share
        frontier = nxt
    for (_, idx), pr in frontier.items():
        law[idx] += pr
    return law


# ---------------------------------------------------------------------------
# moment estimation


def geometric_moment(p: float, rho: float, rel_tail: float = 1e-12) -> float:
    """``sum_k k^rho p (1-p)^(k-1)``, summed until the remaining tail is below ``rel_tail``."""
    if not 0 < p <= 1:
        raise ValueError("success probability must be in (0, 1]")
    if p == 1 or rho == 0:
        return 1.0
    q = 1.0 - p
    total = 0.0
    start = 1
    step = max(1024, int(10 / p))
    while True:
        k = np.arange(start, start + step, dtype=float)
        terms = k**rho * p * np.exp((k - 1) * math.log(q))
        total += float(terms.sum())
        last = k[-1]
        ratio = ((last + 1) / last) ** rho * q
        if ratio < 1:
            tail = terms[-1] * ratio / (1 - ratio)
            if tail <= rel_tail * total:
                return total
        start += step


@dataclass
class MomentEstimate:
    rho: float
    trials: int
    mean: float
    stderr: float
    cap: int
    capped: int
    flags: dict[str, str] = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return self.capped < self.trials


def summarize(G: np.ndarray, truncated: np.ndarray, rho: float, cap: int,
              batches: int = N_BATCHES) -> MomentEstimate:
    """Mean of ``G^rho`` with a batch-means standard error over contiguous trial batches."""
    vals = G.astype(float) ** rho
    trials = vals.size
    groups = np.array_split(vals, min(batches, trials))
    means = np.array([g.mean() for g in groups])
    se = float(means.std(ddof=1) / math.sqrt(means.size)) if means.size > 1 else math.nan
    est = MomentEstimate(rho, trials, float(vals.mean()), se, cap, int(truncated.sum()))
    if est.capped == trials:
        est.flags["unusable"] = "every trial hit the guess cap"
    elif est.capped:
        est.flags["truncated"] = f"{est.capped} trials capped at {cap}; the mean is a lower bound"
    return est


def map_trial_blocks(fn: Callable[[np.random.Generator, int, int], object], trials: int,
                     seed: int, threads: int = 1) -> list:
    """Apply ``fn(rng, start, count)`` to each fixed trial block; results in block order."""
    starts = list(range(0, trials, TRIAL_BLOCK))

    def one(b):
        start = starts[b]
        rng = np.random.default_rng([seed, b])
        return fn(rng, start, min(TRIAL_BLOCK, trials - start))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(starts))))
    return [one(b) for b in range(len(starts))]


def run_trial_blocks(fn: Callable[[np.random.Generator, int, int], GameRecord], trials: int,
                     seed: int, threads: int = 1) -> GameRecord:
    """Games over fixed trial blocks, merged in block order."""
    parts = map_trial_blocks(fn, trials, seed, threads)
    cap = parts[0].cap if parts else DEFAULT_CAP
    return GameRecord(np.concatenate([p.guesses for p in parts]),
                      np.concatenate([p.truncated for p in parts]), cap)


def simulate_games(source: Source, spec: DistortionSpec, trials: int, seed: int,
                   game: str = "clean", dist: GuessingDistribution | None = None,
                   W=None, machine: FsmGuesser | None = None, cap: int = DEFAULT_CAP,
                   threads: int = 1) -> GameRecord:
    """Per-trial guess counts, with a fresh secret from ``source`` in every trial."""
    if game not in ("clean", "noisy", "fsm"):
        raise ValueError(f"unknown game {game!r}")
    if game == "fsm" and machine is None:
        raise ValueError("the fsm game needs a machine")
    if game != "fsm" and dist is None:
        raise ValueError("a guessing distribution is required")
    if game == "noisy" and W is None:
        raise ValueError("the noisy game needs a channel")

    def block(rng, start, count):
        xs = source.sample_many(rng, count)
        G = np.empty(count, dtype=np.int64)
        tr = np.empty(count, dtype=bool)
        for t, x in enumerate(xs):
            if game == "clean":
                r = play_clean_games(x, dist, spec, rng, 1, cap)
            elif game == "noisy":
                r = play_noisy_games(x, dist, W, spec, rng, 1, cap)
            else:
                r = fsm_guess_games(x, machine, spec, rng, 1, cap)
            G[t], tr[t] = r.guesses[0], r.truncated[0]
        return GameRecord(G, tr, cap)

    return run_trial_blocks(block, trials, seed, threads)


def estimate_moment(source: Source, spec: DistortionSpec, rho: float, trials: int, seed: int,
                    game: str = "clean", dist: GuessingDistribution | None = None, W=None,
                    machine: FsmGuesser | None = None, cap: int = DEFAULT_CAP,
                    threads: int = 1) -> MomentEstimate:
    """Monte Carlo estimate of ``E[G^rho]`` with a fresh source draw per trial."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    rec = simulate_games(source, spec, trials, seed, game, dist, W, machine, cap, threads)
    return summarize(rec.guesses, rec.truncated, rho, cap)


# ---------------------------------------------------------------------------
# K-types, gaps and mixing


@dataclass(frozen=True)
class KBlockConfig:
    """Blocks of length ``K`` separated by gaps of length ``k`` over ``n`` symbols."""

    K: int
    k: int
    n: int
    D: float = 0.0
    d_max: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if self.K < 1 or self.k < 0:
            raise ValueError("need K >= 1 and k >= 0")
        if self.n % (self.K + self.k):
            raise ValueError(f"K + k = {self.K + self.k} must divide n = {self.n}")
        if self.k >= self.K:
            raise ValueError("gap length must be shorter than the block length")

    @property
    def m(self) -> int:
        return self.n // (self.K + self.k)

    @property
    def delta2(self) -> float:
        return self.k * (self.d_max - self.D) / self.K

    @property
    def D_prime(self) -> float:
        """Per-letter level left for the blocks once the gaps take worst-case distortion."""
        return self.D - self.delta2 - self.delta / self.K


def block_starts(n: int, K: int, k: int) -> np.ndarray:
    if K < 1 or k < 0 or n % (K + k):
        raise ValueError(f"K + k = {K + k} must divide n = {n}")
    return np.arange(0, n, K + k)


def blocks_of(x, K: int, k: int, alpha: int) -> np.ndarray:
    """Lexicographic indices of the ``K``-blocks of ``x``, gaps skipped."""
    x = as_sequence(x, alpha)
    starts = block_starts(x.size, K, k)
    powers = alpha ** np.arange(K - 1, -1, -1)
    return np.array([int(x[s:s + K] @ powers) for s in starts], dtype=np.int64)


def k_type(x, cfg: KBlockConfig | tuple[int, int], alpha: int = 2) -> np.ndarray:
    """Empirical law of the ``K``-blocks of ``x`` over all ``alpha^K`` blocks."""
    K, k = (cfg.K, cfg.k) if isinstance(cfg, KBlockConfig) else cfg
    b = blocks_of(x, K, k, alpha)
    return np.bincount(b, minlength=alpha**K) / b.size


def gap_oblivious_probability(x, source: Source, K: int, k: int) -> float:
    """Exact source probability of all sequences that agree with ``x`` on every ``K``-block."""
    x = as_sequence(x, source.alpha)
    n = x.size
    starts = block_starts(n, K, k)
    fixed = np.zeros(n, dtype=bool)
    for s in starts:
        fixed[s:s + K] = True
    seqs = all_sequences(source.alpha, n)
    match = np.all((seqs == x[None, :]) | ~fixed[None, :], axis=1)
    return float(source.law(n)[match].sum())


def mixing_ratio_profile(source: Source, K: int, k_list, cap_bits: float = DEFAULT_ENUM_BITS):
    """For each gap ``k``: ``max |Q(b1, b2) / (Q(b1) Q(b2)) - 1|`` over ``K``-block pairs.

    ``Q(b1, b2)`` is the exact joint law of two ``K``-blocks separated by ``k``
    symbols. This is an adjacent-block dependence proxy, not a full mixing
    coefficient.
    """
    a = source.alpha
    qk = source.law(K)
    out = {}
    for k in k_list:
        check_enum_cap(a, 2 * K + k, cap_bits)
        law = source.law(2 * K + k).reshape(a**K, a**k, a**K)
        joint = law.sum(axis=1)
        prod = np.outer(qk, qk)
        pos = prod > 0
        out[int(k)] = float(np.max(np.abs(joint[pos] / prod[pos] - 1.0))) if pos.any() else 0.0
    return out


def gap_oblivious_class_counts(alpha: int, n: int, K: int, k: int) -> dict[tuple[int, ...], tuple[int, float]]:
    """For each ``K``-type class: number of distinct gap-oblivious sets, and the block-type entropy.

    Exhaustive over ``alpha^n``. Two sequences share a gap-oblivious set iff
    their block tuples agree.
    """
    seqs = all_sequences(alpha, n)
    starts = block_starts(n, K, k)
    powers = alpha ** np.arange(K - 1, -1, -1)
    tuples = np.stack([seqs[:, s:s + K] @ powers for s in starts], axis=1)
    distinct = np.unique(tuples, axis=0)
    m = starts.size
    per_type: Counter = Counter()
    for row in distinct:
        per_type[tuple(np.bincount(row, minlength=alpha**K))] += 1
    return {tuple(int(v) for v in t): (c, max(0.0, entropy(np.asarray(t) / m)))
            for t, c in per_type.items()}


def type_class_tuple_count(counts) -> int:
    """Distinct block tuples with the given block counts (a multinomial coefficient)."""
    return multinomial(counts)
