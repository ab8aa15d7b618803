"""Acceptance criteria. Each test records one pass/fail line shown in the terminal summary."""

import contextlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from guessbench.core import DistortionSpec, all_sequences, ball_mask, empirical_type, renyi_entropy, seq_index
from guessbench.exponents import (
    NoisySetup,
    block_exponent,
    clean_exponent,
    finite_n_reference,
    induced_output_law,
    noisy_exponent,
    output_ball_probabilities,
    rhat_w,
)
from guessbench.guessdist import (
    BlockLz,
    LzWeighted,
    TypeWeighted,
    Uniform,
    ball_probability,
)
from guessbench.harness import main
from guessbench.lz import kraft_sum, lz78_parse, lz_code_lengths_for, lz_decode_stream, lz_encode
from guessbench.ratedist import binary_hamming_rd, rate_distortion
from guessbench.simulator import (
    IidSource,
    MarkovSource,
    block_lz_machine,
    fsm_guess_games,
    gap_oblivious_class_counts,
    gap_oblivious_probability,
    geometric_moment,
    mixing_ratio_profile,
    play_clean_games,
)

HAM = DistortionSpec.hamming
CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FLIP = [[0.8, 0.2], [0.2, 0.8]]


@contextlib.contextmanager
def criterion(number, title, budget_s):
    start = time.perf_counter()
    ok, note = False, ""
    try:
        yield
        ok = True
    except AssertionError as err:
        note = f" ({str(err).splitlines()[0][:100]})" if str(err) else ""
        raise
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < budget_s
        status = "PASS" if ok and within else "FAIL"
        if ok and not within:
            note = f" (over the {budget_s:g} s budget)"
        line = f"[{status}] {number:>2}. {title}: {elapsed:.1f} s{note}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    assert elapsed < budget_s, f"took {elapsed:.1f} s, budget {budget_s} s"


def test_c01_rate_distortion_oracle():
    with criterion(1, "rate-distortion vs h(p) - h(D)", 5):
        worst = 0.0
        for p in (0.1, 0.2, 0.3, 0.4, 0.5):
            for D in (0.0, p / 4, p / 2):
                got = rate_distortion([1 - p, p], HAM(2, D)).rate
                worst = max(worst, abs(got - binary_hamming_rd(p, D)))
        assert worst <= 1e-6, f"max error {worst:.2e}"


def test_c02_renyi_reduction():
    with criterion(2, "clean exponent at D=0 vs rho H_1/(1+rho)", 30):
        worst = 0.0
        for p in (0.1, 0.3):
            for rho in (0.5, 1.0, 2.0):
                got = clean_exponent([1 - p, p], HAM(2, 0.0), rho).value
                want = rho * renyi_entropy([1 - p, p], 1 / (1 + rho))
                worst = max(worst, abs(got - want))
        assert worst <= 1e-3, f"max error {worst:.2e}"


def test_c03_geometric_moments():
    with criterion(3, "simulated guesswork moments vs geometric law", 60):
        n, trials = 6, 100_000
        rng = np.random.default_rng(2024)
        kinds = [Uniform(n, 2), TypeWeighted(n, 2), LzWeighted(n, 2), BlockLz(n, 2, 3), BlockLz(n, 2, 2)]
        misses = []
        for i in range(10):
            x = rng.integers(0, 2, n)
            dist = kinds[i % len(kinds)]
            spec = HAM(2, [1 / 6, 2 / 6][i % 2])
            p = ball_probability(dist, x, spec)
            G = play_clean_games(x, dist, spec, rng, trials).guesses.astype(float)
            for rho, want in ((1.0, 1 / p), (2.0, (2 - p) / p**2)):
                vals = G**rho
                se = vals.std(ddof=1) / math.sqrt(trials)
                if abs(vals.mean() - want) > 3 * se:
                    misses.append((i, rho))
                exact = geometric_moment(p, rho)
                assert 2**-rho <= exact * p**rho <= math.gamma(rho + 1) + 1
        # 20 independent 3-sigma checks; each misses with probability about 0.003
        assert not misses, f"outside 3 standard errors: {misses}"


def test_c04_type_weighted_convergence():
    with criterion(4, "finite-n gap to the clean exponent shrinks", 600):
        spec, rho = HAM(2, 0.1), 1.0
        E = clean_exponent([0.7, 0.3], spec, rho).value

        def gap(n):
            law = IidSource([0.7, 0.3], n).law()
            return abs(finite_n_reference(law, TypeWeighted(n, 2), spec, rho) - E)

        g4, g14 = gap(4), gap(14)
        assert g14 < g4, f"gap(14)={g14:.4f} gap(4)={g4:.4f}"
        assert g14 <= 2 * math.log2(15) / 14 + 0.1, f"gap(14)={g14:.4f}"


def test_c05_noisy_forms():
    with criterion(5, "noisy exponent forms agree", 300):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = rng.uniform(0.05, 0.95)
            delta = rng.uniform(0.01, 0.3)
            D = rng.uniform(0.0, 0.3)
            rho = rng.uniform(0.3, 2.0)
            W = [[1 - delta, delta], [delta, 1 - delta]]
            setup = NoisySetup([1 - p, p], W, HAM(2, D), rho)
            a1 = noisy_exponent(setup, "alt1").value
            a2 = noisy_exponent(setup, "alt2").value
            pr = noisy_exponent(setup, "primal", grid=32).value
            tag = f"p={p:.3f} delta={delta:.3f} D={D:.3f} rho={rho:.3f}"
            assert abs(a1 - a2) <= 1e-3, f"alt1-alt2 {a1 - a2:.2e} at {tag}"
            assert abs(pr - a1) <= 5e-2, f"primal-alt1 {pr - a1:.2e} at {tag}"
            ident = NoisySetup([1 - p, p], np.eye(2), HAM(2, D), rho)
            clean = clean_exponent([1 - p, p], HAM(2, D), rho).value
            assert abs(noisy_exponent(ident, "alt1").value - clean) <= 1e-2, tag


def test_c06_noisy_ball_exponent():
    with criterion(6, "induced output ball vs noisy rate function", 300):
        n = 8
        W = [[0.9, 0.1], [0.1, 0.9]]
        spec = HAM(2, 0.1)
        law = induced_output_law(TypeWeighted(n, 2), W)
        rng = np.random.default_rng(6)
        ys = (rng.random((20, n)) < 0.3).astype(np.int64)
        balls = output_ball_probabilities(law, ys, spec)
        slack = 4 * math.log2(9) / 8 + 0.1
        worst = 0.0
        for y, q in zip(ys, balls):
            R = rhat_w(empirical_type(y, 2), NoisySetup([0.5, 0.5], W, spec, 1.0))
            worst = max(worst, abs(-math.log2(q) / n - R))
        assert worst <= slack, f"max deviation {worst:.4f} > {slack:.4f}"


def test_c07_lz_correctness():
    with criterion(7, "LZ parse, Kraft sum, round trip", 120):
        parse = lz78_parse("01101101110010111", 2)
        assert ",".join(parse.phrase_strings()) == "0,1,10,11,01,110,010,111"
        for n in range(1, 15):
            assert kraft_sum(2, n) <= 1 + 1e-12, f"Kraft sum above 1 at n={n}"
        for n in range(1, 11):
            for x in all_sequences(2, n):
                out, _ = lz_decode_stream(iter(lz_encode(x, 2)), n, 2, on_invalid="raise")
                assert np.array_equal(out, x), f"round trip failed at n={n}"


def test_c08_memory_trend():
    with criterion(8, "Markov source: LZ finite-n vs block exponents", 600):
        spec, rho = HAM(2, 0.1), 1.0
        src = MarkovSource(FLIP, 12)
        E = {K: block_exponent(src.block_marginal(K), spec, K, rho).value for K in (1, 2, 4)}
        ref = finite_n_reference(src.law(), LzWeighted(12, 2), spec, rho)
        assert abs(ref - E[4]) <= 0.5, f"finite-n {ref:.4f} vs K=4 {E[4]:.4f}"
        assert abs(E[4] - E[2]) < abs(E[2] - E[1]), f"block values {E}"


def test_c09_gap_oblivious_bounds():
    with criterion(9, "gap-oblivious sandwich and count bounds", 120):
        K = 3
        for k, n in ((1, 16), (2, 15), (4, 14)):
            src = MarkovSource(FLIP, n)
            eps = mixing_ratio_profile(src, K, [k])[k]
            qk = src.block_marginal(K)
            m = n // (K + k)
            starts = np.arange(0, m * (K + k), K + k)
            for x in src.sample_many(np.random.default_rng(k), 20):
                ratio = gap_oblivious_probability(x, src, K, k) / np.prod(
                    [qk[seq_index(x[s:s + K], 2)] for s in starts])
                assert (1 - eps) ** (m - 1) * (1 - 1e-12) <= ratio <= (1 + eps) ** (m - 1) * (1 + 1e-12)
        for K, k, n in ((2, 1, 12), (3, 1, 16)):
            eps = mixing_ratio_profile(MarkovSource(FLIP, n), K, [k])[k]
            m = n // (K + k)
            for count, H in gap_oblivious_class_counts(2, n, K, k).values():
                assert count <= (1 - eps) ** (-m + 1) * 2 ** (m * H) * (1 + 1e-12)


def test_c10_individual_sequence():
    with criterion(10, "block-LZ machine and LZ law vs LZ ball sum", 600):
        n, spec = 12, HAM(2, 1 / 6)
        x = np.array([int(c) for c in "01101101110010111"[:n]])
        inside = all_sequences(2, n)[ball_mask(x, spec)]
        ball_sum = float(np.sum(np.exp2(-lz_code_lengths_for(inside, 2).astype(float))))
        target = -math.log2(ball_sum) / n
        G = fsm_guess_games(x, block_lz_machine(2, 4), spec, np.random.default_rng(10), 100_000).guesses
        sim = math.log2(G.astype(float).mean()) / n
        assert sim <= target + 0.5, f"machine {sim:.4f} vs ball sum {target:.4f}"
        exact = math.log2(geometric_moment(ball_probability(LzWeighted(n, 2), x, spec), 1.0)) / n
        assert abs(exact - target) <= 0.5, f"LZ law {exact:.4f} vs ball sum {target:.4f}"


@pytest.mark.parametrize("config", ["simulate_type.json"])
def test_c11_reproducible_across_threads(tmp_path, config):
    with criterion(11, "simulate CSV byte-identical across thread counts", 60):
        outs = []
        for threads in (1, 2, 4):
            out = tmp_path / f"t{threads}.csv"
            assert main(["simulate", "--config", str(CONFIGS / config), "--out", str(out),
                         "--threads", str(threads)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]
