"""Guesswork exponents: clean memoryless, noisy channel, block-memoryless, finite n.

Internal optimizations work in nats; every public value is in bits per symbol.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from .core import (
    DEFAULT_ENUM_BITS,
    CapExceeded,
    DistortionSpec,
    all_sequences,
    as_channel,
    as_pmf,
    divergence,
    type_classes,
)
from .guessdist import GuessingDistribution, ball_probabilities
from .ratedist import BLOCK_ALPHABET_CAP, rate_distortion

LN2 = math.log(2.0)
GRID_STEPS = 64
NM_STARTS = 5
S_BRACKET = 50.0
S_GRID_POINTS = 41
GOLDEN_TOL = 1e-4
INNER_TOL = 1e-11
INNER_MAX_ITER = 50_000
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ExponentResult:
    value: float
    argmax_Q: np.ndarray | None
    method: str
    inner_witnesses: dict = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)

    @property
    def boundary_hit(self) -> bool:
        return "boundary" in self.flags


@dataclass(frozen=True)
class NoisySetup:
    """Source ``P`` on the channel output alphabet, channel ``W[x, y]``, distortion on ``y``."""

    P: np.ndarray
    W: np.ndarray
    spec: DistortionSpec
    rho: float

    def __post_init__(self):
        W = as_channel(self.W)
        P = as_pmf(self.P, W.shape[1])
        if self.spec.n_src != W.shape[1] or self.spec.n_rec != W.shape[1]:
            raise ValueError("distortion must be square over the channel output alphabet")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def D(self) -> float:
        return self.spec.level

    def U(self, s: float) -> np.ndarray:
        """``U_s(x, y) = sum_y' W(y'|x) exp(-s d(y, y'))``."""
        return self.W @ np.exp(-s * self.spec.d).T


def simplex_grid(dim: int, steps: int = GRID_STEPS) -> np.ndarray:
    """All pmfs with entries in multiples of ``1/steps``, in a fixed order."""
    return np.array(list(type_classes(dim, steps)), dtype=float) / steps


def _s_max(d: np.ndarray) -> float:
    pos = d[d > 0]
    return S_BRACKET / float(pos.min()) if pos.size else S_BRACKET


# ---------------------------------------------------------------------------
# generic maximizers


def _interior(v, weight=1e-3):
    """Warm start pulled off the boundary: multiplicative updates cannot revive a zero weight."""
    if v is None:
        return None
    return (1.0 - weight) * v + weight / v.size


def _golden_max(g, lo, hi, tol=GOLDEN_TOL):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    gc, ge = g(c), g(e)
    while b - a > tol:
        if gc >= ge:
            b, e, ge = e, c, gc
            c = b - _GOLDEN * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, e, ge
            e = a + _GOLDEN * (b - a)
            ge = g(e)
    return (c, gc) if gc >= ge else (e, ge)


def _maximize_over_s(g, s_max):
    """Scan ``[0, s_max]``, then golden-section around the best scan point."""
    grid = np.concatenate([[0.0], np.geomspace(s_max * 1e-4, s_max, S_GRID_POINTS - 1)])
    vals = np.array([g(s) for s in grid])
    i = int(np.argmax(vals))
    s_best, v_best = float(grid[i]), float(vals[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        s_g, v_g = _golden_max(g, lo, hi)
        if v_g > v_best:
            s_best, v_best = s_g, v_g
    return s_best, v_best, i == grid.size - 1


def _simplex_search(objective, dim, steps, starts):
    """Maximize ``objective`` over the simplex: grid scan, then Nelder-Mead.

    Grid ties keep the first point in grid order. Infeasible points return -inf.
    """
    grid = simplex_grid(dim, steps)
    vals = np.array([objective(q) for q in grid])
    if np.all(vals == -np.inf):
        raise ValueError("objective is -inf on the whole grid")
    if np.any(vals == np.inf):
        i = int(np.argmax(vals == np.inf))
        return grid[i], math.inf
    order = np.argsort(-vals, kind="stable")
    best_q, best_v = grid[order[0]], float(vals[order[0]])
    if dim == 1:
        return best_q, best_v

    def neg(y):
        q = np.append(y, 1.0 - y.sum())
        if np.any(q < 0):
            return 1e6 + float(np.sum(np.clip(-q, 0, None)))
        v = objective(q)
        return -v if np.isfinite(v) else 1e6

    h = 0.5 / steps
    for idx in order[:starts]:
        if not np.isfinite(vals[idx]):
            break
        y0 = grid[idx][:-1]
        simplex = [y0] + [y0 + h * np.eye(dim - 1)[j] * (1 if y0[j] + h <= 1 else -1)
                          for j in range(dim - 1)]
        res = minimize(neg, y0, method="Nelder-Mead",
                       options={"initial_simplex": np.array(simplex), "xatol": 1e-9,
                                "fatol": 1e-12, "maxiter": 4000})
        if -res.fun > best_v:
            y = res.x
            best_q, best_v = np.append(y, 1.0 - y.sum()), float(-res.fun)
    return np.clip(best_q, 0.0, 1.0), best_v


# ---------------------------------------------------------------------------
# clean memoryless source


def clean_exponent(P, spec: DistortionSpec, rho: float, grid: int = GRID_STEPS,
                   method: str = "primal", starts: int = NM_STARTS) -> ExponentResult:
    """``max_Q [rho R(D, Q) - D(Q || P)]`` in bits per symbol.

    ``method="primal"`` searches the simplex directly. ``method="dual"`` uses the
    saddle-point form with the identity channel.
    """
    P = as_pmf(P, spec.n_src)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho == 0 or spec.level >= spec.d.max():
        return ExponentResult(0.0, P.copy(), "primal-grid" if method == "primal" else "alt-form-1")
    if method == "dual":
        return _alt1(P, np.eye(spec.n_src), spec, rho)
    if method != "primal":
        raise ValueError(f"unknown method {method!r}")

    def objective(q):
        dv = divergence(q, P)
        if not math.isfinite(dv):
            return -math.inf
        try:
            r = rate_distortion(q, spec, tol=1e-10).rate
        except ValueError:
            return math.inf
        return rho * r - dv

    q, v = _simplex_search(objective, spec.n_src, grid, starts)
    return ExponentResult(v, q, "primal-grid")


# ---------------------------------------------------------------------------
# channel output penalty and the noisy rate function


def gamma(Qy, W, tol: float = 1e-12, max_iter: int = INNER_MAX_ITER,
          return_mixture: bool = False):
    """``min over M in conv(rows of W) of D(Qy || M)`` in bits.

    Equal to ``-H(Qy) + inf_V -sum_y Qy(y) log (V W)(y)``. Solved by the
    multiplicative (EM) update on the mixture weights ``V``.
    """
    W = as_channel(W)
    Qy = as_pmf(Qy, W.shape[1])
    v, _ = _em_mixture(Qy, W, tol, max_iter)
    M = v @ W
    val = max(0.0, divergence(Qy, M))
    return (val, v) if return_mixture else val


def _em_mixture(q, A, tol, max_iter, v0=None):
    """Maximize ``sum_y q(y) log (v A)(y)`` over the simplex. Rows of ``A`` need not sum to 1."""
    mask = q > 0
    q, A = q[mask], A[:, mask]
    v = np.full(A.shape[0], 1.0 / A.shape[0]) if v0 is None else v0.copy()
    for _ in range(max_iter):
        z = v @ A
        r = A @ (q / z)
        # log max r bounds the remaining suboptimality
        if r.max() <= 1.0 + tol:
            return v, True
        v = v * r
        v /= v.sum()
    return v, False


@lru_cache(maxsize=64)
def _rhat_program(W_bytes, W_shape, d_bytes, d_shape):
    """Convex program over the joint law ``J(y, y')`` and output mixture weights ``lam``.

    ``d`` holds only the rows of the support of ``Q_Y`` (zero rows would leave the
    mutual-information cone degenerate).
    """
    W = np.frombuffer(W_bytes).reshape(W_shape)
    d = np.frombuffer(d_bytes).reshape(d_shape)
    ns, ny = d.shape
    q = cp.Parameter(ns, pos=True)
    D = cp.Parameter(nonneg=True)
    J = cp.Variable((ns, ny), nonneg=True)
    lam = cp.Variable(W.shape[0], nonneg=True)
    q_out = cp.sum(J, axis=0)
    product = cp.reshape(q, (ns, 1), order="F") @ cp.reshape(q_out, (1, ny), order="F")
    mi = cp.sum(cp.rel_entr(J, product))
    pen = cp.sum(cp.rel_entr(q_out, lam @ W))
    cons = [cp.sum(J, axis=1) == q, cp.sum(cp.multiply(J, d)) <= D, cp.sum(lam) == 1]
    prob = cp.Problem(cp.Minimize(mi + pen), cons)
    return prob, q, D, J, lam


def rhat_w(Qy, setup: NoisySetup, method: str = "primal", return_witness: bool = False):
    """``inf over test channels Q(y'|y) with E d <= D of I(Y; Y') + Gamma(Q_Y')`` in bits.

    ``"primal"`` solves that convex program directly (exponential cone).
    ``"dual"`` evaluates ``sup_s inf_V {-sum Qy log sum_x V U_s - s D}``.
    """
    Qy = as_pmf(Qy, setup.W.shape[1])
    if method == "dual":
        return _rhat_dual(Qy, setup, return_witness)
    if method != "primal":
        raise ValueError(f"unknown method {method!r}")
    sup = Qy > 0
    W = np.ascontiguousarray(setup.W)
    d = np.ascontiguousarray(setup.spec.d[sup])
    prob, q, D, J, lam = _rhat_program(W.tobytes(), W.shape, d.tobytes(), d.shape)
    q.value = Qy[sup]
    D.value = setup.D
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"noisy rate program ended with status {prob.status}")
    val = max(0.0, float(prob.value) / LN2)
    if not return_witness:
        return val
    chan = np.full((Qy.size, Qy.size), 1.0 / Qy.size)
    chan[sup] = np.clip(J.value, 0.0, None) / Qy[sup, None]
    lam_v = np.clip(lam.value, 0.0, None)
    return val, {"test_channel": chan / chan.sum(axis=1, keepdims=True), "V": lam_v / lam_v.sum()}


def _rhat_dual(Qy, setup, return_witness):
    state = {"v": None}
    D = setup.D

    def g(s):
        U = setup.U(s)
        v, _ = _em_mixture(Qy, U, INNER_TOL, INNER_MAX_ITER, _interior(state["v"]))
        state["v"] = v
        z = v @ U
        mask = Qy > 0
        return float(-np.sum(Qy[mask] * np.log(z[mask])) - s * D), v

    def gv(s):
        return g(s)[0]

    s, val, boundary = _maximize_over_s(gv, _s_max(setup.spec.d))
    val = max(0.0, val / LN2)
    if not return_witness:
        return val
    _, v = g(s)
    return val, {"s": s, "V": v, "boundary": boundary}


# ---------------------------------------------------------------------------
# saddle-point forms for the noisy exponent


def _inner_v(P, U, rho, v0, tol=INNER_TOL, max_iter=INNER_MAX_ITER):
    """``min_V ln sum_y P(y) (sum_x V(x) U(x, y))^(-rho)`` over the simplex.

    Multiplicative update ``V <- V r^eta`` with a line search on ``eta``.
    ``rho * (max_x r_x - 1)`` bounds the relative suboptimality, by convexity.
    """
    mask = P > 0
    P, U = P[mask], U[:, mask]
    v = np.full(U.shape[0], 1.0 / U.shape[0]) if v0 is None else v0.copy()

    def f(v):
        return float(np.log(np.sum(P * (v @ U) ** (-rho))))

    fv = f(v)
    # 1/(1+rho) is the exact step when U is diagonal
    eta = 1.0 / (1.0 + rho)
    for _ in range(max_iter):
        z = v @ U
        t = P * z ** (-rho)
        r = (U @ (t / z)) / t.sum()
        if rho * (r.max() - 1.0) <= tol:
            break
        # crude line search over the exponent: best of three, then backtrack
        best = None
        for e in (0.5 * eta, eta, 2.0 * eta):
            nv = v * r**e
            nv /= nv.sum()
            fn = f(nv)
            if best is None or fn < best[0]:
                best = (fn, nv, e)
        fn, nv, eta = best
        while fn >= fv and eta > 1e-10:
            eta *= 0.25
            nv = v * r**eta
            nv /= nv.sum()
            fn = f(nv)
        if fn >= fv:
            # no strict descent left at float precision
            break
        v, fv = nv, fn
        eta = min(eta, 1e6)
    return fv, v


def _inner_m(P, W, E, rho, lam0):
    """Same inner problem over the output mixture ``M = lam @ W``, by SLSQP on ``lam``."""
    mask = P > 0
    P, E = P[mask], E[mask]
    nx = W.shape[0]

    def f(lam):
        lam = np.clip(lam, 0.0, None)
        a = E @ (lam @ W)
        return float(np.log(np.sum(P * a ** (-rho))))

    def grad(lam):
        lam = np.clip(lam, 0.0, None)
        a = E @ (lam @ W)
        t = P * a ** (-rho)
        return -rho * (W @ (E.T @ (t / a))) / t.sum()

    res = minimize(f, lam0, jac=grad, method="SLSQP", bounds=[(0.0, 1.0)] * nx,
                   constraints=[{"type": "eq", "fun": lambda l: l.sum() - 1.0,
                                 "jac": lambda l: np.ones_like(l)}],
                   options={"ftol": 1e-15, "maxiter": 500})
    lam = np.clip(res.x, 0.0, None)
    lam /= lam.sum()
    return f(lam), lam


def _alt1(P, W, spec, rho, tag="alt-form-1"):
    """``sup_s inf_V {ln sum_y P(y) [sum_x V(x) U_s(x, y)]^(-rho) - rho s D}``."""
    state = {"v": None}
    D = spec.level
    d = spec.d

    def g(s):
        U = W @ np.exp(-s * d).T
        val, v = _inner_v(P, U, rho, _interior(state["v"]))
        state["v"] = v
        return val - rho * s * D

    s, val, boundary = _maximize_over_s(g, _s_max(d))
    U = W @ np.exp(-s * d).T
    _, v = _inner_v(P, U, rho, None)
    res = ExponentResult(max(0.0, val) / LN2, None, tag, {"s": s, "V": v})
    if boundary:
        res.flags["boundary"] = f"supremum over s reached the bracket end {_s_max(d):g}"
    return res


def _alt2(P, W, spec, rho):
    """``sup_s inf_M ln sum_y P(y) [sum_y' M(y') e^{s (D - d(y, y'))}]^(-rho)``, ``M`` in conv(W)."""
    D = spec.level
    d = spec.d
    state = {"lam": np.full(W.shape[0], 1.0 / W.shape[0])}

    def g(s):
        E = np.exp(s * (D - d))
        val, lam = _inner_m(P, W, E, rho, state["lam"])
        state["lam"] = lam
        return val

    s, val, boundary = _maximize_over_s(g, _s_max(d))
    res = ExponentResult(max(0.0, val) / LN2, None, "alt-form-2",
                         {"s": s, "M": state["lam"] @ W})
    if boundary:
        res.flags["boundary"] = f"supremum over s reached the bracket end {_s_max(d):g}"
    return res


def noisy_exponent(setup: NoisySetup, method: str = "alt1", grid: int = GRID_STEPS,
                   starts: int = NM_STARTS) -> ExponentResult:
    """Best guessing exponent when guesses pass through the channel, in bits per symbol.

    ``"primal"``: ``sup_{Q_Y} [rho Rhat_W(D, Q_Y) - D(Q_Y || P)]``.
    ``"alt1"`` and ``"alt2"``: the two saddle-point forms, with inner problems over
    input weights ``V`` and output mixtures ``M`` respectively.
    """
    P, W, spec, rho = setup.P, setup.W, setup.spec, setup.rho
    if rho == 0:
        return ExponentResult(0.0, P.copy(), method)
    if method == "alt1":
        return _alt1(P, W, spec, rho)
    if method == "alt2":
        return _alt2(P, W, spec, rho)
    if method != "primal":
        raise ValueError(f"unknown method {method!r}")

    def objective(q):
        dv = divergence(q, P)
        if not math.isfinite(dv):
            return -math.inf
        return rho * rhat_w(q, setup) - dv

    q, v = _simplex_search(objective, P.size, grid, starts)
    return ExponentResult(v, q, "primal-grid")


# ---------------------------------------------------------------------------
# block-memoryless sources


def block_exponent(PK, spec: DistortionSpec, K: int, rho: float, method: str = "dual",
                   grid: int = 8, starts: int = NM_STARTS,
                   cap: int = BLOCK_ALPHABET_CAP) -> ExponentResult:
    """``(1/K) sup_{Q^K} [rho R_K(D, Q^K) - D(Q^K || P^K)]`` for the ``K``-block law ``PK``.

    ``spec`` is per letter; the block problem uses additive distortion at level
    ``K * D``. The default ``"dual"`` method is the saddle-point form over the
    super-alphabet. ``"primal"`` searches the super-simplex on a ``1/grid``
    lattice plus Nelder-Mead and is practical only for tiny super-alphabets.
    """
    if K < 1:
        raise ValueError("block length must be positive")
    size = spec.n_src**K
    if max(size, spec.n_rec**K) > cap:
        raise CapExceeded(f"super-alphabet of size {size} exceeds {cap}")
    PK = as_pmf(PK, size)
    if rho == 0 or spec.level >= spec.d.max():
        return ExponentResult(0.0, PK.copy(), "block-K", {"K": K})
    bspec = spec.block(K)
    if method == "dual":
        res = _alt1(PK, np.eye(size), bspec, rho, tag="block-K")
    elif method == "primal":
        res = clean_exponent(PK, bspec, rho, grid=grid, starts=starts)
        res.method = "block-K"
    else:
        raise ValueError(f"unknown method {method!r}")
    res.value /= K
    res.inner_witnesses["K"] = K
    return res


# ---------------------------------------------------------------------------
# exact finite-n quantities


def iid_law(P, n: int, cap_bits: float = DEFAULT_ENUM_BITS) -> np.ndarray:
    """Law of ``n`` i.i.d. letters over all sequences in lexicographic order."""
    P = as_pmf(P)
    if n * math.log2(P.size) > cap_bits:
        raise CapExceeded(f"{P.size}^{n} sequences exceed 2^{cap_bits}")
    law = np.ones(1)
    for _ in range(n):
        law = np.kron(law, P)
    return law


def channel_power(W, n: int, cap_bits: float = 16) -> np.ndarray:
    """``W`` applied letter by letter to length-``n`` sequences (lexicographic order)."""
    W = as_channel(W)
    if n * math.log2(max(W.shape)) > cap_bits:
        raise CapExceeded(f"channel power at n={n} exceeds 2^{cap_bits} rows")
    out = np.ones((1, 1))
    for _ in range(n):
        out = np.kron(out, W)
    return out


def induced_output_law(dist: GuessingDistribution, W, cap_bits: float = 16) -> np.ndarray:
    """Law of a guess after it passes through the channel."""
    return dist.weights_all() @ channel_power(W, dist.n, cap_bits)


def output_ball_probabilities(law_out, ys, spec: DistortionSpec) -> np.ndarray:
    """Mass that ``law_out`` (over output sequences) puts on the ball around each ``y``."""
    from .core import distortion_table

    ys = np.atleast_2d(ys)
    table = distortion_table(ys, spec)
    return np.where(table <= spec.budget(ys.shape[1]), law_out[None, :], 0.0).sum(axis=1)


def _log2_moment(p_src, balls, rho):
    if np.any(balls <= 0):
        return math.inf
    balls = np.minimum(balls, 1.0)
    logs = np.log2(p_src) - rho * np.log2(balls)
    m = logs.max()
    return float(m + np.log2(np.sum(np.exp2(logs - m))))


def finite_n_reference(P_source, dist: GuessingDistribution, spec: DistortionSpec, rho: float,
                       cap_bits: float = DEFAULT_ENUM_BITS) -> float:
    """``(1/n) log2 sum_x P(x) P~[S(x)]^(-rho)``: exact, by enumeration of both spaces."""
    n = dist.n
    P_source = np.asarray(P_source, float)
    if P_source.size != spec.n_src**n:
        raise ValueError("source law must cover every length-n sequence")
    if rho == 0 or spec.level >= spec.d.max():
        return 0.0
    xs = all_sequences(spec.n_src, n, cap_bits)
    keep = P_source > 0
    balls = ball_probabilities(dist, xs[keep], spec, cap_bits)
    return _log2_moment(P_source[keep], balls, rho) / n


def noisy_finite_n_reference(P_source, dist: GuessingDistribution, W, spec: DistortionSpec,
                             rho: float) -> float:
    """Finite-n counterpart for the noisy game, with the exact induced guess law."""
    n = dist.n
    if rho == 0 or spec.level >= spec.d.max():
        return 0.0
    law = induced_output_law(dist, W)
    ys = all_sequences(spec.n_src, n)
    P_source = np.asarray(P_source, float)
    keep = P_source > 0
    balls = output_ball_probabilities(law, ys[keep], spec)
    return _log2_moment(P_source[keep], balls, rho) / n
