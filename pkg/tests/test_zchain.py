import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from frontlab import engine, zchain
from frontlab.noise import BernoulliLaw, LatticeLaw
from frontlab.zchain import (
    bernoulli_chain_sim,
    bernoulli_matrix,
    bernoulli_row,
    bernoulli_speed,
    bernoulli_stationary,
    expected_return_time,
    gap_speed_prediction,
    hitting_analysis,
    kac_residual,
    lattice_chain_sim,
    lattice_s,
    lattice_speed,
    lattice_step,
    normal_form,
    parse_q,
    sandwich_bounds,
)

from conftest import make_rng

THREE_ATOM = LatticeLaw(top=0, atoms=((0, 0.5), (-1, 0.3), (-3, 0.2)))


def two_point(q: float) -> LatticeLaw:
    return LatticeLaw(top=0, atoms=((0, 1.0 - q), (-1, q)))


# ---------------------------------------------------------------------------
# oracle: N = 2, q = 1/2 worked by hand
#
# Transition matrix rows (from counts 0, 1, 2) with success probabilities
# 3/4, 1/2, 3/4 give stationary law (1/7, 3/7, 3/7), speed 6/7, return time
# E_0 T_0 = 7, and the hitting race from 2: P(T_0 < T_2) = 1/4,
# E(T_0 | first) = 5/2, E(T_2 | first) = 3/2, E_2 T_0 = 7.


def test_hand_case_stationary_exact():
    nu = bernoulli_stationary(2, Fraction(1, 2), exact=True)
    assert nu == [Fraction(1, 7), Fraction(3, 7), Fraction(3, 7)]


def test_hand_case_speed():
    v = bernoulli_speed(2, Fraction(1, 2), exact=True)
    assert v == Fraction(6, 7)
    assert bernoulli_speed(2, 0.5) == pytest.approx(6 / 7, rel=1e-14)


def test_hand_case_return_time():
    assert expected_return_time(2, Fraction(1, 2), exact=True) == 7
    assert kac_residual(2, Fraction(1, 2), exact=True) == 0


def test_hand_case_hitting():
    r = hitting_analysis(2, Fraction(1, 2), exact=True)
    assert r.prob_bottom_first == 0.25
    assert r.mean_time_bottom_first == 2.5
    assert r.mean_time_top_first == 1.5
    assert r.mean_time_bottom == 7.0
    assert r.identity_residual == 0.0
    assert r.closed_form_at_1 == r.prob_bottom_at_1 == 0.0625
    assert r.closed_form_at_2 == r.prob_bottom_at_2 == 0.09375


# ---------------------------------------------------------------------------
# oracle: direct chain simulation of the hitting race


def mc_hitting(n, q, paths, rng):
    """Simulate the race from count n; returns (P, times_0, times_n)."""
    succ = [1 - q ** (m if m >= 1 else n) for m in range(n + 1)]
    t0, tn = [], []
    for _ in range(paths):
        m, t = n, 0
        while True:
            m = rng.binomial(n, succ[m])
            t += 1
            if m == 0:
                t0.append(t)
                break
            if m == n:
                tn.append(t)
                break
    return len(t0) / paths, np.array(t0), np.array(tn)


def test_hitting_against_chain_simulation():
    rng = make_rng(13)
    p_hat, t0, tn = mc_hitting(2, 0.5, 20_000, rng)
    r = hitting_analysis(2, 0.5)
    assert abs(p_hat - r.prob_bottom_first) < 3 * math.sqrt(0.25 * 0.75 / 20_000)
    assert abs(t0.mean() - 2.5) < 3 * t0.std(ddof=1) / math.sqrt(t0.size)
    assert abs(tn.mean() - 1.5) < 3 * tn.std(ddof=1) / math.sqrt(tn.size)


def test_hitting_mc_n3():
    rng = make_rng(19)
    r = hitting_analysis(3, 0.6)
    p_hat, _, _ = mc_hitting(3, 0.6, 40_000, rng)
    se = math.sqrt(r.prob_bottom_first * (1 - r.prob_bottom_first) / 40_000)
    assert abs(p_hat - r.prob_bottom_first) < 3 * se


# ---------------------------------------------------------------------------
# transition rows and solves


def test_bernoulli_row_is_binomial():
    for m, expo in ((0, 3), (1, 1), (2, 2), (3, 3)):
        row = bernoulli_row(3, 0.4, m)
        ref = stats.binom.pmf(np.arange(4), 3, 1.0 - 0.4 ** expo)
        np.testing.assert_allclose(row, ref, rtol=1e-12)
        assert row.sum() == pytest.approx(1.0, abs=1e-14)


def test_bernoulli_row_validation():
    with pytest.raises(ValueError):
        bernoulli_row(3, 0.5, 4)
    with pytest.raises(ValueError):
        bernoulli_row(3, 1.0, 1)


def test_stationary_solves_fixed_point():
    for n, q in ((3, 0.3), (5, 0.5), (8, 0.7)):
        nu = bernoulli_stationary(n, q)
        p = bernoulli_matrix(n, q)
        np.testing.assert_allclose(nu @ p, nu, atol=1e-13)
        assert nu.sum() == pytest.approx(1.0)
        assert np.all(nu >= -1e-15)


def test_stationary_size_cap():
    with pytest.raises(ValueError):
        bernoulli_stationary(65, 0.5)
    with pytest.raises(ValueError):
        bernoulli_stationary(0, 0.5)


def test_kac_residual_grid():
    for n in (2, 3, 4, 5):
        for q in (0.3, 0.5, 0.7):
            assert kac_residual(n, q) <= 1e-10
            assert kac_residual(n, Fraction(q).limit_denominator(10),
                                exact=True) == 0


def test_single_particle_speed():
    # N = 1: the front advances unless the single jump is 0
    assert bernoulli_speed(1, Fraction(1, 4), exact=True) == Fraction(3, 4)


def test_exact_and_float_agree():
    for n, q in ((3, 0.3), (4, 0.6), (5, 0.5)):
        v_f = bernoulli_speed(n, q)
        v_e = bernoulli_speed(n, Fraction(q).limit_denominator(10), exact=True)
        assert v_f == pytest.approx(float(v_e), rel=1e-12)


def test_chain_sim_matches_exact(rng):
    est = bernoulli_chain_sim(3, 0.5, 40_000, rng)
    assert abs(est.value - bernoulli_speed(3, 0.5)) < 3 * est.std_err
    with pytest.raises(ValueError):
        bernoulli_chain_sim(3, 0.5, 10, rng)


def test_chain_speed_matches_particle_simulation():
    # cross-module route: full N^2 particle dynamics, max front
    est = engine.estimate_speed(BernoulliLaw(p=0.5), 2, t_run=20_000,
                                rng=make_rng(37))
    assert abs(est.value - 6.0 / 7.0) < 3 * est.std_err + 1e-6


# ---------------------------------------------------------------------------
# hitting analysis: closed forms, trends, validation


def test_closed_forms_match_linear_system():
    for n in (3, 4, 5):
        for q in (0.3, 0.5, 0.6):
            r = hitting_analysis(n, q)
            assert abs(r.prob_bottom_at_1 - r.closed_form_at_1) <= 1e-10
            assert abs(r.prob_bottom_at_2 - r.closed_form_at_2) <= 1e-10


def test_conditional_means_trend_to_limits():
    # E(T_0 | T_0 first) falls toward 2, E(T_N | T_N first) toward 1
    reps = [hitting_analysis(n, Fraction(3, 5), exact=True) for n in (4, 6, 8)]
    bot = [r.mean_time_bottom_first for r in reps]
    top = [r.mean_time_top_first for r in reps]
    assert bot[0] > bot[1] > bot[2] > 2.0
    assert top[0] > top[1] > top[2] > 1.0
    for r in reps:
        assert r.identity_residual == 0.0


def test_hitting_identity_float():
    # the residual reconstructs E_N[T_0] (huge for larger n), so float
    # agreement is relative to that scale
    for n in (3, 4, 5):
        r = hitting_analysis(n, 0.5)
        assert r.identity_residual / r.mean_time_bottom < 1e-10


def test_hitting_validation():
    with pytest.raises(ValueError):
        hitting_analysis(1, 0.5)
    with pytest.raises(ValueError):
        hitting_analysis(40, 0.5)


def test_parse_q():
    assert parse_q("3/5", exact=True) == Fraction(3, 5)
    assert parse_q(0.5) == 0.5
    assert isinstance(parse_q(Fraction(1, 3), exact=True), Fraction)
    for bad in (0, 1, 1.5, "7/5"):
        with pytest.raises(ValueError):
            parse_q(bad)


# ---------------------------------------------------------------------------
# depth-count chain: landing classes


def test_lattice_s_hand_case():
    # two particles at the leader, three-atom law: classes by hand
    offsets, s = lattice_s(np.array([0, 2]), THREE_ATOM)
    np.testing.assert_array_equal(offsets, [-4, -3, -2, -1, 0])
    np.testing.assert_allclose(s, [0.0, 0.04, 0.0, 0.21, 0.75], atol=1e-15)


def test_lattice_s_telescopes_to_one():
    rng = make_rng(41)
    for _ in range(300):
        w = int(rng.integers(2, 7))
        counts = rng.integers(0, 4, size=w)
        counts[-1] = max(counts[-1], 1)
        _, s = lattice_s(counts, THREE_ATOM)
        assert abs(s.sum() - 1.0) <= 1e-12


def test_lattice_s_requires_leader():
    with pytest.raises(ValueError):
        lattice_s(np.array([2, 0]), THREE_ATOM)


def test_lattice_s_against_particle_draws():
    # oracle: place particles per the state, run raw max-plus draws, and
    # compare one particle's displacement-class frequencies
    rng = make_rng(43)
    counts = np.array([1, 0, 1, 2])  # depths -3, -1, 0, 0
    positions = np.array([-3.0, -1.0, 0.0, 0.0])
    offsets, s = lattice_s(counts, THREE_ATOM)
    m = 30_000
    lows = offsets[0]
    draws = np.empty(m)
    for r in range(m):
        noise = THREE_ATOM.sample(rng, (4, 4))
        draws[r] = engine.step_with_noise(positions, noise)[0]
    draws = np.maximum(draws, lows)  # classes lump everything below
    for k, off in enumerate(offsets):
        if s[k] == 0.0:
            assert not np.any(draws == off)
            continue
        freq = np.mean(draws == off)
        assert abs(freq - s[k]) < 4 * math.sqrt(s[k] * (1 - s[k]) / m)


def test_lattice_step_moves_leader(rng):
    counts = np.zeros(8, dtype=int)
    counts[-1] = 5
    new, phi = lattice_step(counts, THREE_ATOM, rng)
    assert new.sum() == 5
    assert new[-1] >= 1
    assert THREE_ATOM.bottom <= phi <= THREE_ATOM.top


# ---------------------------------------------------------------------------
# depth-count chain: reduction to the leader-count chain


@pytest.mark.parametrize("n,q", [(2, 0.5), (3, 0.35), (4, 0.6)])
def test_two_point_chain_equals_bernoulli_chain(n, q):
    # the window-2 depth chain must reproduce the leader-count chain rows
    # bit for bit, with counts 0 and N merged into one state
    law = two_point(q)
    states, rows, _ = zchain._lattice_chain(law, n, window=2, max_states=500)
    index = {s: i for i, s in enumerate(states)}
    assert set(states) == {(n - j, j) for j in range(1, n + 1)}

    np.testing.assert_array_equal(bernoulli_row(n, q, 0), bernoulli_row(n, q, n))
    for j in range(1, n + 1):
        brow = bernoulli_row(n, q, j)
        lrow = rows[index[(n - j, j)]]
        for k in range(1, n):
            assert lrow.get(index[(n - k, k)], 0.0) == brow[k]
        assert lrow[index[(0, n)]] == brow[n] + brow[0]


@pytest.mark.parametrize("n,q", [(2, 0.5), (3, 0.35), (4, 0.6), (5, 0.3)])
def test_two_point_speed_equals_bernoulli_speed(n, q):
    # identical transition rows, but the two stationary solves run through
    # different systems, so agreement is to solver precision only
    got = lattice_speed(two_point(q), n, window=2).value
    assert got == pytest.approx(bernoulli_speed(n, q) - 1.0, abs=1e-15)


def test_lattice_speed_single_particle():
    # N = 1: every step jumps by a fresh draw, speed = E xi = -0.9
    rep = lattice_speed(THREE_ATOM, 1)
    assert rep.value == pytest.approx(-0.9, rel=1e-12)


def test_lattice_speed_three_atom_vs_particles():
    for n, seed in ((2, 47), (3, 53)):
        rep = lattice_speed(THREE_ATOM, n)
        est = engine.estimate_speed(THREE_ATOM, n, t_run=30_000,
                                    rng=make_rng(seed))
        assert abs(est.value - rep.value) < 3 * est.std_err
        assert rep.boundary_mass <= 1e-12
        assert not rep.truncated


def test_lattice_speed_matches_chain_sim(rng):
    rep = lattice_speed(THREE_ATOM, 3)
    est = lattice_chain_sim(THREE_ATOM, 3, 40_000, rng)
    assert abs(est.value - rep.value) < 3 * est.std_err


def test_ladder_within_bounds():
    rep = lattice_speed(THREE_ATOM, 4)
    assert np.all(rep.ladder <= rep.ladder_bounds + 1e-15)
    assert np.all(np.diff(rep.ladder) <= 1e-15)  # deeper dives are rarer


def test_lattice_window_widens_for_deep_support():
    deep = LatticeLaw(top=0, atoms=((0, 0.5), (-1, 0.4), (-12, 0.1)))
    rep = lattice_speed(deep, 2, window=4)
    assert rep.window == 16
    assert rep.boundary_mass <= 1e-12 and not rep.truncated


def test_lattice_truncation_warns():
    deep = LatticeLaw(top=0, atoms=((0, 0.5), (-1, 0.4), (-12, 0.1)))
    with pytest.warns(UserWarning):
        rep = lattice_speed(deep, 2, window=4, widenings=0)
    assert rep.truncated


def test_lattice_state_cap():
    with pytest.raises(RuntimeError):
        lattice_speed(THREE_ATOM, 6, window=16, max_states=3)


def test_lattice_speed_validation():
    with pytest.raises(ValueError):
        lattice_speed(THREE_ATOM, 0)
    with pytest.raises(ValueError):
        lattice_speed(THREE_ATOM, 2, window=1)


# ---------------------------------------------------------------------------
# speed gap prediction and sandwich bounds


def test_gap_speed_prediction_formula():
    got = gap_speed_prediction(0.0, -1.0, 0.5, 3)
    assert got == pytest.approx(-(0.5 ** 9) * 8.0)
    with pytest.raises(ValueError):
        gap_speed_prediction(0.0, 1.0, 0.5, 3)
    with pytest.raises(ValueError):
        gap_speed_prediction(1.0, 0.0, 1.0, 3)


def test_normal_form_roundtrip():
    fwd, back = normal_form(2.0, -3.0)
    x = np.array([2.0, -3.0, 0.5])
    np.testing.assert_allclose(fwd(x), [0.0, -1.0, -0.3])
    np.testing.assert_allclose(back(fwd(x)), x, rtol=1e-14)
    with pytest.raises(ValueError):
        normal_form(0.0, 0.0)


def test_sandwich_brackets_two_point():
    law = two_point(0.5)
    sb = sandwich_bounds(law, 3, eps=0.1)
    # the coarse law IS the law here, so the upper bound is the exact speed
    assert sb.upper == lattice_speed(law, 3).value
    assert sb.lower < sb.upper
    est = engine.estimate_speed(law, 3, t_run=30_000, rng=make_rng(59))
    assert sb.lower - 3 * est.std_err <= est.value <= sb.upper + 3 * est.std_err


def test_sandwich_brackets_three_atom():
    sb = sandwich_bounds(THREE_ATOM, 3, eps=0.1)
    truth = lattice_speed(THREE_ATOM, 3).value
    assert sb.lower <= truth <= sb.upper
    assert sb.coarse_law.bottom == -1
    assert sb.stretched_law.top == 0


def test_sandwich_validation():
    with pytest.raises(ValueError):
        sandwich_bounds(LatticeLaw(top=1, atoms=((1, 0.5), (0, 0.5))), 2)
    with pytest.raises(ValueError):
        sandwich_bounds(THREE_ATOM, 2, eps=0.0)
    with pytest.raises(ValueError):
        sandwich_bounds(LatticeLaw(top=0, atoms=((0, 1.0),)), 2)
