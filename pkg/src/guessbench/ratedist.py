"""Rate-distortion solvers (Blahut-Arimoto) for single letters and K-blocks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CapExceeded, DistortionSpec, as_pmf, entropy, mutual_information

LN2 = math.log(2.0)
SLOPE_BRACKET = 50.0
MAX_EXPANSIONS = 40
SHORT_RUN = 3000
BLOCK_ALPHABET_CAP = 4096


@dataclass
class RdSolution:
    rate: float
    test_channel: np.ndarray
    output_marginal: np.ndarray
    achieved_distortion: float
    iterations: int
    slope: float = math.nan
    converged: bool = True


def _ba_fixed_slope(q_src, d, s, q0, tol, max_iter):
    """Blahut-Arimoto at slope ``s`` (nats per unit distortion).

    Returns ``(q, channel, iterations, converged)``. Stops when Blahut's upper and
    lower bounds on the Lagrangian are within ``tol`` nats. The update
    ``q <- q c^eta`` uses a small line search on ``eta`` (``eta = 1`` is plain
    Blahut-Arimoto), which keeps convergence fast when output masses vanish.
    """
    # row shift leaves the normalized channel unchanged and avoids underflow
    a = np.exp(-s * (d - d.min(axis=1, keepdims=True)))

    def objective(qv):
        return -float(np.sum(q_src * np.log(a @ qv)))

    q = q0.copy()
    fq = objective(q)
    eta = 1.0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        z = a @ q
        c = a.T @ (q_src / z)
        qc = q * c
        pos = qc > 0
        logc = np.log(np.where(pos, c, 1.0))
        gap = logc[pos].max() - np.sum(qc[pos] * logc[pos])
        if gap < tol:
            converged = True
            break
        best = None
        for e in (0.5 * eta, eta, 2.0 * eta):
            nq = q * c**e
            nq /= nq.sum()
            fn = objective(nq)
            if best is None or fn < best[0]:
                best = (fn, nq, e)
        fn, nq, eta = best
        if fn > fq:
            # fall back to the plain step, which never increases the objective
            nq = qc / qc.sum()
            fn, eta = objective(nq), 1.0
        eta = min(max(eta, 1.0), 1e4)
        q, fq = nq, fn
    z = a @ q
    channel = a * q[None, :] / z[:, None]
    return q, channel, it, converged


def _embed(q_full, support, channel_s, fallback_col, n_rec):
    channel = np.zeros((q_full.size, n_rec))
    channel[support] = channel_s
    # zero-mass source symbols get a deterministic row
    channel[~support, fallback_col] = 1.0
    return channel


def _solution(q_src, d, channel, iterations, slope, converged):
    marg = q_src @ channel
    return RdSolution(
        rate=mutual_information(q_src, channel),
        test_channel=channel,
        output_marginal=marg,
        achieved_distortion=float(np.sum(q_src[:, None] * channel * d)),
        iterations=iterations,
        slope=slope,
        converged=converged,
    )


def distortion_range(q, spec: DistortionSpec) -> tuple[float, float]:
    """``(D_min, D_max)``: smallest achievable distortion, and the level at which rate hits 0."""
    q = np.asarray(q, float)
    d_min = float(q @ spec.d.min(axis=1))
    d_max = float((q @ spec.d).min())
    return d_min, d_max


def rate_distortion(q, spec: DistortionSpec, tol: float = 1e-8, max_iter: int = 100_000) -> RdSolution:
    """R(D, q) in bits at ``D = spec.level`` via Blahut-Arimoto with slope bisection.

    The two channels bracketing the target distortion are mixed so the returned
    test channel meets the level exactly; its mutual information is the rate.
    """
    q = as_pmf(q, spec.n_src)
    D = spec.level
    support = q > 0
    qs = q[support]
    d = spec.d[support]
    n_rec = spec.n_rec
    d_min, d_max = distortion_range(qs, DistortionSpec(d, D))
    fallback = int(np.argmin(qs @ d))
    if D < d_min - 1e-12:
        raise ValueError(f"distortion {D} below the minimum achievable {d_min}")

    if D >= d_max:
        ch = np.zeros((qs.size, n_rec))
        ch[:, fallback] = 1.0
        sol = _solution(qs, d, ch, 0, 0.0, True)
        sol.rate = 0.0
    elif D <= d_min + 1e-12:
        sol = _lossless_limit(qs, d, tol, max_iter)
    else:
        sol = _bisect_slope(qs, d, D, tol, max_iter)

    full = _embed(q, support, sol.test_channel, fallback, n_rec)
    out = _solution(q, spec.d, full, sol.iterations, sol.slope, sol.converged)
    if D >= d_max:
        out.rate = 0.0
    return out


def _lossless_limit(qs, d, tol, max_iter):
    """Infinite-slope limit: channels supported on each row's minimizers."""
    allowed = (d <= d.min(axis=1, keepdims=True) + 1e-12).astype(float)
    n_rec = d.shape[1]
    q = np.full(n_rec, 1.0 / n_rec)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        z = allowed @ q
        c = allowed.T @ (qs / z)
        qc = q * c
        pos = qc > 0
        logc = np.log(c[pos])
        gap = logc.max() - np.sum(qc[pos] * logc)
        q = qc / qc.sum()
        if gap < tol:
            converged = True
            break
    z = allowed @ q
    ch = allowed * q[None, :] / z[:, None]
    return _solution(qs, d, ch, it, math.inf, converged)


def _lower_bound(qs, d, D, s, qv):
    """Blahut's lower bound on R(D) in nats from any slope and output law."""
    shift = d.min(axis=1, keepdims=True)
    a = np.exp(-s * (d - shift))
    z = a @ qv
    c = a.T @ (qs / z)
    return float(-s * D + np.sum(qs * (s * shift[:, 0] - np.log(z))) - np.log(c.max()))


def _bisect_slope(qs, d, D, tol, max_iter):
    n_rec = d.shape[1]
    uniform = np.full(n_rec, 1.0 / n_rec)
    total_it = 0
    inner_tol = tol * 1e-2
    target = tol * LN2

    def run(s, warm, cap=max_iter):
        nonlocal total_it
        qv, ch, it, conv = _ba_fixed_slope(qs, d, s, warm, inner_tol, cap)
        total_it += it
        return qv, ch, float(np.sum(qs[:, None] * ch * d)), conv

    def run_mid(s, q_lo, q_hi):
        # Near a support switch the Lagrangian is almost flat between two output
        # laws. A warm start from the correct side converges in a few steps while
        # the other crawls, so run both briefly and keep the better one.
        tries = []
        for warm in (q_lo, q_hi):
            qv, ch, dv, conv = run(s, warm, min(SHORT_RUN, max_iter))
            if conv:
                return qv, ch, dv
            tries.append((qv, ch, dv))
        return max(tries, key=lambda t: _lower_bound(qs, d, 0.0, s, t[0]))

    def mixed():
        lam = (D - d_hi) / (d_lo - d_hi) if d_lo > d_hi else 0.0
        lam = min(1.0, max(0.0, lam))
        ch = lam * ch_lo + (1.0 - lam) * ch_hi
        upper = mutual_information(qs, ch) * LN2
        q_mix = lam * q_lo + (1.0 - lam) * q_hi
        lower = max(
            _lower_bound(qs, d, D, s, qv)
            for s in (s_lo, s_hi, 0.5 * (s_lo + s_hi))
            for qv in (q_lo, q_hi, q_mix)
        )
        return ch, upper - lower

    s_lo, s_hi = 0.0, SLOPE_BRACKET
    q_lo, ch_lo, d_lo, _ = run(s_lo, uniform)
    q_hi, ch_hi, d_hi, _ = run(s_hi, uniform)
    expansions = 0
    while d_hi > D and expansions < MAX_EXPANSIONS:
        s_lo, q_lo, ch_lo, d_lo = s_hi, q_hi, ch_hi, d_hi
        s_hi *= 2.0
        q_hi, ch_hi, d_hi, _ = run(s_hi, q_hi)
        expansions += 1
    bracketed = d_hi <= D

    ch, gap = mixed()
    for _ in range(200):
        if gap <= target or s_hi - s_lo <= 1e-12 * max(1.0, s_hi):
            break
        s_mid = 0.5 * (s_lo + s_hi)
        q_mid, ch_mid, d_mid = run_mid(s_mid, q_lo, q_hi)
        if d_mid > D:
            s_lo, q_lo, ch_lo, d_lo = s_mid, q_mid, ch_mid, d_mid
        else:
            s_hi, q_hi, ch_hi, d_hi = s_mid, q_mid, ch_mid, d_mid
        ch, gap = mixed()
    ok = bracketed and gap <= target
    return _solution(qs, d, ch, total_it, 0.5 * (s_lo + s_hi), ok)


def binary_hamming_rd(p: float, D: float) -> float:
    """Closed form h(p) - h(D) for a Bernoulli(p) source under Hamming distortion."""
    if not (0 < p <= 0.5) or D < 0:
        raise ValueError("need 0 < p <= 1/2 and D >= 0")
    if D >= p:
        return 0.0
    return entropy([p, 1 - p]) - entropy([D, 1 - D])


def block_rate_distortion(
    qk, spec: DistortionSpec, K: int, tol: float = 1e-8, cap: int = BLOCK_ALPHABET_CAP,
) -> RdSolution:
    """Rate (bits per block) of a block-memoryless source with law ``qk`` on ``K``-tuples.

    Per-letter level ``spec.level`` becomes ``K * level`` on the additive block
    distortion.
    """
    if K < 1:
        raise ValueError("block length must be positive")
    if max(spec.n_src, spec.n_rec) ** K > cap:
        raise CapExceeded(f"super-alphabet of size {max(spec.n_src, spec.n_rec)}^{K} exceeds {cap}")
    qk = as_pmf(qk, spec.n_src**K)
    return rate_distortion(qk, spec.block(K), tol=tol)
