import math

import numpy as np
import pytest
from scipy import stats

from guessbench.core import DistortionSpec, all_sequences, ball_mask, seq_index
from guessbench.exponents import finite_n_reference, induced_output_law, iid_law, output_ball_probabilities
from guessbench.guessdist import BlockLz, TypeWeighted, Uniform, ball_probability
from guessbench.simulator import (
    FsmGuesser,
    IidSource,
    IndividualSource,
    KBlockConfig,
    MarkovSource,
    block_lz_machine,
    block_machine,
    estimate_moment,
    fsm_guess_game,
    fsm_guess_games,
    fsm_output_law,
    fsm_run,
    fsm_run_many,
    gap_oblivious_class_counts,
    gap_oblivious_probability,
    geometric_moment,
    k_type,
    mixing_ratio_profile,
    multi_guesser_queries,
    play_clean_game,
    play_clean_games,
    play_noisy_game,
    play_noisy_games,
    quantize_law,
    simulate_games,
    summarize,
    blocks_of,
)

HAM = DistortionSpec.hamming
FLIP = [[0.8, 0.2], [0.2, 0.8]]


# ---------------------------------------------------------------------------
# sources


def test_markov_stationary_and_law():
    src = MarkovSource([[0.9, 0.1], [0.4, 0.6]], n=6)
    pi = src.stationary
    assert np.max(np.abs(pi @ src.T - pi)) <= 1e-10
    assert pi == pytest.approx([0.8, 0.2])
    law = src.law()
    assert law.sum() == pytest.approx(1.0)
    # marginal of the first symbol is stationary
    assert law.reshape(2, -1).sum(axis=1) == pytest.approx(pi)


def test_markov_sampler_matches_law(rng):
    src = MarkovSource([[0.9, 0.1], [0.4, 0.6]], n=3)
    xs = src.sample_many(rng, 100_000)
    freq = np.bincount(seq_index(xs, 2), minlength=8) / xs.shape[0]
    law = src.law()
    assert np.all(np.abs(freq - law) <= 4 * np.sqrt(law * (1 - law) / xs.shape[0]))


def test_markov_order_two():
    T = [[0.7, 0.3], [0.2, 0.8], [0.5, 0.5], [0.1, 0.9]]
    src = MarkovSource(T, n=5, order=2)
    assert src.law().sum() == pytest.approx(1.0)
    assert src.stationary.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        MarkovSource(T, n=5, order=1)


def test_iid_and_individual_sources(rng):
    src = IidSource([0.3, 0.7], 4)
    assert np.allclose(src.law(), iid_law([0.3, 0.7], 4))
    ind = IndividualSource("0110", 2)
    assert ind.law()[seq_index(np.array([0, 1, 1, 0]), 2)] == 1.0
    assert (ind.sample_many(rng, 3) == [0, 1, 1, 0]).all()


# ---------------------------------------------------------------------------
# games


def test_full_ball_takes_one_guess(rng):
    x = [0, 1, 1, 0]
    assert play_clean_game(x, TypeWeighted(4, 2), HAM(2, 1.0), rng) == (1, False)
    assert play_noisy_game(x, Uniform(4, 2), FLIP, HAM(2, 1.0), rng) == (1, False)
    assert multi_guesser_queries(x, Uniform(4, 2), HAM(2, 1.0), 4, rng).guesses == 1
    F = block_lz_machine(2, 2)
    assert fsm_guess_game(x, F, HAM(2, 1.0), rng) == (1, False)


def _within_3se(values, target):
    se = values.std(ddof=1) / math.sqrt(values.size)
    return abs(values.mean() - target) <= 3 * se


def test_uniform_game_is_geometric(rng):
    x = np.array([0, 1, 1, 0, 1, 0])
    spec = HAM(2, 1 / 6)
    p = ball_mask(x, spec).sum() / 64
    rec = play_clean_games(x, Uniform(6, 2), spec, rng, 100_000)
    assert _within_3se(rec.guesses.astype(float), 1 / p)
    assert rec.capped == 0


def test_exact_match_mean_is_inverse_weight(rng):
    dist = TypeWeighted(5, 2)
    x = [0, 0, 0, 1, 0]
    q = dist.weight(x)
    rec = play_clean_games(x, dist, HAM(2, 0.0), rng, 50_000)
    assert _within_3se(rec.guesses.astype(float), 1 / q)


def test_sequence_mode_matches_index_mode(rng):
    # n=24 exceeds the index-mode size, so guesses are drawn as sequences
    dist = Uniform(24, 2)
    x = np.zeros(24, dtype=int)
    spec = HAM(2, 0.25)
    p = ball_probability(Uniform(24, 2), x, spec, cap_bits=24)
    rec = play_clean_games(x, dist, spec, rng, 20_000)
    assert _within_3se(rec.guesses.astype(float), 1 / p)


def test_noisy_identity_equals_clean_in_law():
    x = np.array([0, 1, 1, 0, 1, 0])
    spec = HAM(2, 1 / 6)
    dist = TypeWeighted(6, 2)
    a = play_noisy_games(x, dist, np.eye(2), spec, np.random.default_rng(1), 10_000).guesses
    b = play_clean_games(x, dist, spec, np.random.default_rng(2), 10_000).guesses
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_noisy_success_probability_exact(rng):
    n = 6
    spec = HAM(2, 1 / 6)
    dist = TypeWeighted(n, 2)
    law = induced_output_law(dist, FLIP)
    for y in (np.array([0, 0, 0, 0, 0, 0]), np.array([0, 1, 1, 0, 1, 0])):
        p = float(output_ball_probabilities(law, y[None, :], spec)[0])
        G = play_noisy_games(y, dist, FLIP, spec, rng, 50_000).guesses.astype(float)
        # the mean success probability is 1 / E[G]
        assert _within_3se(G, 1 / p)


def test_truncation_flags(rng):
    x = np.zeros(12, dtype=int)
    rec = play_clean_games(x, Uniform(12, 2), HAM(2, 0.0), rng, 200, cap=50)
    assert rec.capped > 0 and rec.guesses.max() <= 50
    est = summarize(rec.guesses, rec.truncated, 1.0, 50)
    assert "truncated" in est.flags and est.usable
    x = np.zeros(24, dtype=int)
    rec = play_clean_games(x, Uniform(24, 2), HAM(2, 0.0), rng, 100, cap=1)
    est = summarize(rec.guesses, rec.truncated, 1.0, 1)
    assert not est.usable and "unusable" in est.flags


# ---------------------------------------------------------------------------
# moments


def test_geometric_moment_closed_forms():
    for p in (0.5, 0.1, 0.01):
        assert geometric_moment(p, 1.0) == pytest.approx(1 / p, rel=1e-10)
        assert geometric_moment(p, 2.0) == pytest.approx((2 - p) / p**2, rel=1e-10)
    assert geometric_moment(1.0, 3.0) == 1.0


def test_geometric_series_bracket():
    for rho in (0.5, 1.0, 1.5, 2.0, 3.0):
        for p in np.geomspace(1e-4, 0.5, 30):
            ratio = geometric_moment(p, rho) / p**-rho
            assert 2**-rho <= ratio <= math.gamma(rho + 1) + 1


def test_estimate_moment_uniform_exact_match():
    n = 6
    spec = HAM(2, 0.0)
    src = IidSource([0.5, 0.5], n)
    est = estimate_moment(src, spec, 1.0, 20_000, seed=3, dist=Uniform(n, 2))
    assert abs(est.mean - 2**n) <= 3 * est.stderr
    est2 = estimate_moment(src, spec, 2.0, 20_000, seed=4, dist=Uniform(n, 2))
    p = 2.0**-n
    assert abs(est2.mean - (2 - p) / p**2) <= 3 * est2.stderr
    with pytest.raises(ValueError):
        estimate_moment(src, spec, 1.0, 50, seed=1, dist=Uniform(n, 2))


def test_estimate_moment_matches_finite_n_reference():
    n = 8
    spec = HAM(2, 0.1)
    dist = TypeWeighted(n, 2)
    ref = finite_n_reference(iid_law([0.7, 0.3], n), dist, spec, 1.0)
    est = estimate_moment(IidSource([0.7, 0.3], n), spec, 1.0, 40_000, seed=5, dist=dist)
    assert abs(est.mean - 2 ** (n * ref)) <= 3 * est.stderr


def test_threads_do_not_change_results():
    src = IidSource([0.7, 0.3], 8)
    kw = dict(game="clean", dist=TypeWeighted(8, 2))
    a = simulate_games(src, HAM(2, 0.125), 5000, seed=9, threads=1, **kw)
    b = simulate_games(src, HAM(2, 0.125), 5000, seed=9, threads=4, **kw)
    assert np.array_equal(a.guesses, b.guesses)
    c = simulate_games(src, HAM(2, 0.125), 5000, seed=10, threads=1, **kw)
    assert not np.array_equal(a.guesses, c.guesses)


# ---------------------------------------------------------------------------
# finite-state machines


def test_one_state_bit_machine(rng):
    F = FsmGuesser([1], [[0, 1]], [[0, 0]])
    assert fsm_run(F, iter([1, 0, 1, 1]), 4).tolist() == [1, 0, 1, 1]
    out = fsm_run_many(F, rng, 3, 80_000)
    counts = np.bincount(seq_index(out, 2), minlength=8)
    assert stats.chisquare(counts).pvalue > 0.01


def test_zero_input_machine_is_deterministic(rng):
    F = FsmGuesser([0, 0], [[1], [0]], [[1], [0]])
    assert fsm_run(F, iter([]), 5).tolist() == [1, 0, 1, 0, 1]
    assert (fsm_run_many(F, rng, 5, 10) == [1, 0, 1, 0, 1]).all()


def test_machine_validation():
    with pytest.raises(ValueError):
        FsmGuesser([1], [[0]], [[0, 0]])
    with pytest.raises(ValueError):
        FsmGuesser([0], [[0]], [[3]])


def test_block_lz_machine_law():
    F = block_lz_machine(2, 4)
    law = fsm_output_law(F, 4, 2)
    exact = BlockLz(4, 2, 4).weights_all()
    assert law.sum() == pytest.approx(1.0)
    assert np.max(np.abs(law - exact)) < 2.0**-16
    assert np.allclose(law, F.block_counts / 2**16)
    # two blocks are independent draws
    law8 = fsm_output_law(F, 8, 2)
    assert np.allclose(law8, np.kron(law, law))


def test_quantize_law():
    c = quantize_law([0.5, 0.3, 0.2, 1e-9], 8)
    assert c.sum() == 256 and c.min() >= 1


def test_machine_game_geometric(rng):
    F = FsmGuesser([1], [[0, 1]], [[0, 0]])
    x = np.array([0, 1, 1, 0, 1, 0])
    spec = HAM(2, 1 / 6)
    p = ball_mask(x, spec).sum() / 64
    G = fsm_guess_games(x, F, spec, rng, 50_000).guesses.astype(float)
    assert _within_3se(G, 1 / p)


def test_machine_restart_is_stateless(rng):
    F = block_machine(np.array([0.1, 0.2, 0.3, 0.4]), 2, 2, precision_bits=8)
    out = fsm_run_many(F, rng, 2, 40_000).reshape(20_000, 2, 2)
    first = np.bincount(seq_index(out[:, 0], 2), minlength=4)
    second = np.bincount(seq_index(out[:, 1], 2), minlength=4)
    assert stats.chi2_contingency(np.vstack([first, second])).pvalue > 0.01


def test_fsm_game_via_simulate(rng):
    F = block_lz_machine(2, 3)
    est = estimate_moment(IndividualSource("011010", 2), HAM(2, 1 / 6), 1.0, 20_000, seed=1,
                          game="fsm", machine=F)
    p = float(fsm_output_law(F, 6, 2)[ball_mask(np.array([0, 1, 1, 0, 1, 0]), HAM(2, 1 / 6))].sum())
    assert abs(est.mean - 1 / p) <= 3 * est.stderr


# ---------------------------------------------------------------------------
# multiple guessers


def test_single_guesser_matches_clean_game():
    x = np.array([0, 1, 1, 0, 1, 0])
    spec = HAM(2, 0.0)
    for seed in range(5):
        a = multi_guesser_queries(x, TypeWeighted(6, 2), spec, 1, np.random.default_rng(seed))
        b = play_clean_game(x, TypeWeighted(6, 2), spec, np.random.default_rng(seed))
        assert a == b


def test_many_guessers_pool_queries(rng):
    x = np.array([0, 1, 1, 0, 1, 0])
    spec = HAM(2, 0.0)
    rec = multi_guesser_queries(x, Uniform(6, 2), spec, 8, rng, trials=20_000)
    assert _within_3se(rec.guesses.astype(float), 64.0)


# ---------------------------------------------------------------------------
# K-types and mixing


def test_k_type_examples():
    t = k_type("010101", KBlockConfig(K=2, k=1, n=6))
    assert t.tolist() == [0, 0.5, 0.5, 0]
    assert k_type("000000", (2, 1)).tolist() == [1, 0, 0, 0]
    assert k_type("0110", (2, 0)).tolist() == [0, 0.5, 0.5, 0]
    assert blocks_of("010101", 2, 1, 2).tolist() == [1, 2]


def test_kblock_config():
    cfg = KBlockConfig(K=4, k=1, n=20, D=0.1, d_max=1.0, delta=0.05)
    assert cfg.m == 4
    assert cfg.delta2 == pytest.approx(0.9 / 4)
    assert cfg.D_prime == pytest.approx(0.1 - 0.225 - 0.0125)
    with pytest.raises(ValueError):
        KBlockConfig(K=3, k=1, n=10)
    with pytest.raises(ValueError):
        KBlockConfig(K=2, k=2, n=8)


def test_mixing_profile():
    iid = IidSource([0.3, 0.7], 8)
    assert max(mixing_ratio_profile(iid, 2, [0, 1, 2]).values()) <= 1e-12
    markov = MarkovSource(FLIP, 8)
    prof = mixing_ratio_profile(markov, 2, [0, 1, 2, 3, 4])
    vals = [prof[k] for k in range(5)]
    assert vals[0] > 0
    assert all(a > b for a, b in zip(vals, vals[1:]))
    # spectral gap of the flip chain is 0.6
    assert prof[2] / prof[1] == pytest.approx(0.6, rel=1e-9)


@pytest.mark.parametrize("k,n", [(1, 16), (2, 15), (4, 14)])
def test_gap_oblivious_sandwich(k, n):
    K = 3
    src = MarkovSource(FLIP, n)
    eps = mixing_ratio_profile(src, K, [k])[k]
    qk = src.block_marginal(K)
    m = n // (K + k)
    rng = np.random.default_rng(k)
    for x in src.sample_many(rng, 20):
        exact = gap_oblivious_probability(x, src, K, k)
        starts = np.arange(0, m * (K + k), K + k)
        prod = np.prod([qk[seq_index(x[s:s + K], 2)] for s in starts])
        ratio = exact / prod
        # the adjacent-block proxy is tight for a Markov chain, so allow roundoff
        assert (1 - eps) ** (m - 1) * (1 - 1e-12) <= ratio <= (1 + eps) ** (m - 1) * (1 + 1e-12)


def test_gap_oblivious_count_bound():
    n, K, k = 12, 2, 1
    eps = mixing_ratio_profile(MarkovSource(FLIP, n), K, [k])[k]
    m = n // (K + k)
    for counts, (count, H) in gap_oblivious_class_counts(2, n, K, k).items():
        assert count <= (1 - eps) ** (-m + 1) * 2 ** (m * H) * (1 + 1e-12)
