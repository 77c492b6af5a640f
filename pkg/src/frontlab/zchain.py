"""Exact leader-count chains for bounded integer jumps.

With 0/1 jumps, the number of particles sitting at the running maximum is a
Markov chain on {0, ..., N}: from count m the next count is Binomial(N,
1 - q^m) (exponent N when m = 0, everyone having collapsed onto the old
leader). Its stationary law gives the front speed exactly, and hitting-time
decompositions between the full state N and the empty state 0 expose the
doubly exponential finite-N speed correction q^{N^2} 2^N.

General bounded integer jumps are handled by the depth-count chain: the state
counts particles at depths 0, -1, ..., -(W-1) behind the current leader
(depth 0 always occupied, depths below the window lumped into the bottom
slot). One offspring lands at displacement r relative to the old leader with
probability s_r = prod_w F(r - d_w)^{c_w} - prod_w F(r - 1 - d_w)^{c_w}
(d_w = source depths), the N offspring counts are multinomial over the
classes, and the state recenters on the realized maximum. Speeds come from
the stationary mean of the per-step leader displacement.

Float arithmetic dies by underflow near q^{N^2} ~ 1e-308; the ``exact`` mode
runs the same solves in rational arithmetic (exact with respect to the binary
float inputs).
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .engine import SpeedEstimate
from .noise import LatticeLaw

__all__ = [
    "bernoulli_row",
    "bernoulli_matrix",
    "bernoulli_stationary",
    "bernoulli_speed",
    "expected_return_time",
    "kac_residual",
    "HittingReport",
    "hitting_analysis",
    "bernoulli_chain_sim",
    "lattice_s",
    "lattice_step",
    "LatticeSpeedReport",
    "lattice_speed",
    "lattice_chain_sim",
    "gap_speed_prediction",
    "normal_form",
    "SandwichBounds",
    "sandwich_bounds",
    "parse_q",
]

_MAX_DENSE_N = 64
_MAX_HITTING_N = 32


def parse_q(q, exact: bool = False):
    """Coerce q to float, or to an exact Fraction ("3/5" strings allowed)."""
    if isinstance(q, Fraction):
        val = q
    elif isinstance(q, str):
        val = Fraction(q)
    else:
        val = Fraction(float(q))
    if not 0 < val < 1:
        raise ValueError(f"q must lie in (0, 1), got {q!r}")
    return val if exact else float(val)


def _multinomial_pmf(counts, probs):
    """Multinomial point mass; works for float and Fraction probabilities.

    Zero-count factors are skipped so that binomial rows and two-class
    multinomial rows run through bit-identical arithmetic.
    """
    n = sum(counts)
    coeff = math.factorial(n)
    for c in counts:
        coeff //= math.factorial(c)
    value = probs[0] - probs[0] + coeff  # 0 or Fraction(0) of matching type
    for c, p in zip(counts, probs):
        if c:
            value = value * p ** c
    return value


def bernoulli_row(n: int, q, m: int, exact: bool = False):
    """Transition row of the leader-count chain from count m.

    Success probability 1 - q^m for m >= 1, 1 - q^n for m = 0. Returns an
    (n+1)-vector over the next count, numpy in float mode, Fractions in
    exact mode.
    """
    if not 0 <= m <= n:
        raise ValueError(f"count m must lie in [0, {n}], got {m}")
    q = parse_q(q, exact)
    exp = m if m >= 1 else n
    # np.power, not q ** exp: numpy's vectorized pow differs from libm by an
    # ulp, and the depth-chain reduction is checked for bit equality
    fail = q ** exp if exact else float(np.power(q, exp))
    succ = 1 - fail
    row = [_multinomial_pmf((n - j, j), (fail, succ)) for j in range(n + 1)]
    return row if exact else np.array(row)


def bernoulli_matrix(n: int, q, exact: bool = False):
    rows = [bernoulli_row(n, q, m, exact) for m in range(n + 1)]
    return rows if exact else np.array(rows)


def _fraction_solve(a, b):
    """Gauss-Jordan over Fractions; a is n x n, b length n."""
    n = len(b)
    aug = [list(row) + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular rational system")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = aug[col][col]
        aug[col] = [x / inv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [aug[i][n] for i in range(n)]


def bernoulli_stationary(n: int, q, exact: bool = False):
    """Stationary law of the leader-count chain (dense solve, n <= 64)."""
    if n < 1:
        raise ValueError("need n >= 1")
    if n > _MAX_DENSE_N:
        raise ValueError(f"dense solve capped at n = {_MAX_DENSE_N}")
    p = bernoulli_matrix(n, q, exact)
    if exact:
        # nu (P - I) = 0 with Sum nu = 1, transposed to columns
        a = [[p[j][i] - (1 if i == j else 0) for j in range(n + 1)]
             for i in range(n + 1)]
        a[n] = [Fraction(1)] * (n + 1)
        b = [Fraction(0)] * n + [Fraction(1)]
        return _fraction_solve(a, b)
    a = p.T - np.eye(n + 1)
    a[-1] = 1.0
    b = np.zeros(n + 1)
    b[-1] = 1.0
    try:
        nu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise RuntimeError(
            f"float stationary solve failed at n={n}, q={q} "
            f"(q^(n^2) underflow?); use exact mode") from e
    return nu


def expected_return_time(n: int, q, exact: bool = False):
    """Expected first return time to count 0, by first-step analysis."""
    p = bernoulli_matrix(n, q, exact)
    if exact:
        # h_j = E_j[T_0] for j in 1..n solves (I - P_interior) h = 1
        a = [[(1 if i == j else 0) - p[i][j] for j in range(1, n + 1)]
             for i in range(1, n + 1)]
        h = _fraction_solve(a, [Fraction(1)] * n)
        return 1 + sum(p[0][j] * h[j - 1] for j in range(1, n + 1))
    a = np.eye(n) - p[1:, 1:]
    try:
        h = np.linalg.solve(a, np.ones(n))
    except np.linalg.LinAlgError as e:
        raise RuntimeError(
            f"return-time solve failed at n={n}, q={q}; use exact mode") from e
    return 1.0 + float(p[0, 1:] @ h)


def kac_residual(n: int, q, exact: bool = False):
    """|1 - v - 1/E_0[T_0]|; identically zero in exact arithmetic."""
    nu0 = bernoulli_stationary(n, q, exact)[0]
    ret = expected_return_time(n, q, exact)
    return abs(1 - (1 - nu0) - 1 / ret)


def bernoulli_speed(n: int, q, exact: bool = False):
    """Exact front speed 1 - nu(0), cross-checked against the return time."""
    nu0 = bernoulli_stationary(n, q, exact)[0]
    resid = abs(nu0 - 1 / expected_return_time(n, q, exact))
    if resid > 1e-10:
        raise RuntimeError(
            f"stationary and return-time routes disagree by {resid:g} "
            f"at n={n}, q={q}; use exact mode")
    return 1 - nu0


def bernoulli_chain_sim(n: int, q, steps: int, rng: np.random.Generator,
                        n_batches: int = 32) -> SpeedEstimate:
    """Simulated chain speed: fraction of steps whose new count is >= 1."""
    if steps < n_batches:
        raise ValueError("steps must cover the batches")
    q = parse_q(q, exact=False)
    powers = np.array([1 - q ** (m if m >= 1 else n) for m in range(n + 1)])
    m = n
    moved = np.empty(steps)
    for t in range(steps):
        m = rng.binomial(n, powers[m])
        moved[t] = 1.0 if m >= 1 else 0.0
    length = steps // n_batches
    means = moved[:length * n_batches].reshape(n_batches, length).mean(axis=1)
    return SpeedEstimate(value=float(moved.mean()),
                         std_err=float(np.std(means, ddof=1)
                                       / math.sqrt(n_batches)),
                         sigma2=float(length * np.var(means, ddof=1)),
                         n_blocks=n_batches, method="batch_means")


# ---------------------------------------------------------------------------
# hitting-time decomposition


@dataclass(frozen=True)
class HittingReport:
    n: int
    q: float
    prob_bottom_first: float        # P_N(T_0 < T_N)
    mean_time_bottom_first: float   # E_N(T_0 | T_0 < T_N)
    mean_time_top_first: float      # E_N(T_N | T_N < T_0)
    mean_time_bottom: float         # E_N(T_0)
    identity_residual: float
    prob_bottom_at_1: float
    prob_bottom_at_2: float
    closed_form_at_1: float
    closed_form_at_2: float
    ratio_to_gap_asymptotic: float       # P(T_0 < T_N) / (q^{N^2} 2^N)
    two_step_ratio_to_gap: float         # P(T_0 = 2 < T_N) / (q^{N^2} 2^N)
    exact: bool


def hitting_analysis(n: int, q, exact: bool = False) -> HittingReport:
    """First-step analysis of the race between counts 0 and N, from N.

    Solves the absorbing systems for the probability of reaching 0 before
    returning to N, the conditional mean hitting times, and the unconditional
    mean time to 0, then checks the decomposition
    E_N[T_0] = ((1-P)/P) E_N(T_N | T_N < T_0) + E_N(T_0 | T_0 < T_N)
    and the closed forms for P(T_0 = 1 < T_N) and P(T_0 = 2 < T_N).

    Both P and its two-step term are asymptotic to the gap scale
    q^{N^2} 2^N, but the full P gets there very slowly (its ratio still
    exceeds 5 at N = 6, q = 0.6, decaying only past N ~ 30); the two-step
    ratio is already within 50% by N = 4. Both ratios are reported.
    """
    if not 2 <= n <= _MAX_HITTING_N:
        raise ValueError(f"hitting analysis supports 2 <= n <= {_MAX_HITTING_N}")
    qv = parse_q(q, exact)
    p = bernoulli_matrix(n, qv, exact)
    one = Fraction(1) if exact else 1.0
    interior = range(1, n)

    if exact:
        eye = lambda i, j: Fraction(1) if i == j else Fraction(0)
        a = [[eye(i, j) - p[i][j] for j in interior] for i in interior]
        solve = _fraction_solve
        b0 = [p[i][0] for i in interior]
        bn = [p[i][n] for i in interior]
        u = solve(a, b0)
        w = solve(a, [b0[i] + sum(p[r][j] * u[j - 1] for j in interior)
                      for i, r in enumerate(interior)])
        ubar = [one - x for x in u]
        wbar = solve(a, [bn[i] + sum(p[r][j] * ubar[j - 1] for j in interior)
                         for i, r in enumerate(interior)])
        row = p[n]
        prob = row[0] + sum(row[j] * u[j - 1] for j in interior)
        t_mass = row[0] + sum(row[j] * (u[j - 1] + w[j - 1]) for j in interior)
        prob_top = row[n] + sum(row[j] * ubar[j - 1] for j in interior)
        t_top_mass = row[n] + sum(row[j] * (ubar[j - 1] + wbar[j - 1])
                                  for j in interior)
        ret = [[eye(i, j) - p[i][j] for j in range(1, n + 1)]
               for i in range(1, n + 1)]
        h = solve(ret, [one] * n)
        mean_bottom = one + sum(p[n][j] * h[j - 1] for j in range(1, n + 1))
        prob1 = row[0]
        prob2 = sum(row[j] * p[j][0] for j in interior)
    else:
        a = np.eye(n - 1) - p[1:n, 1:n]
        u = np.linalg.solve(a, p[1:n, 0])
        w = np.linalg.solve(a, p[1:n, 0] + p[1:n, 1:n] @ u)
        ubar = 1.0 - u
        wbar = np.linalg.solve(a, p[1:n, n] + p[1:n, 1:n] @ ubar)
        row = p[n]
        prob = row[0] + row[1:n] @ u
        t_mass = row[0] + row[1:n] @ (u + w)
        prob_top = row[n] + row[1:n] @ ubar
        t_top_mass = row[n] + row[1:n] @ (ubar + wbar)
        h = np.linalg.solve(np.eye(n) - p[1:, 1:], np.ones(n))
        mean_bottom = 1.0 + row[1:] @ h
        prob1 = row[0]
        prob2 = row[1:n] @ p[1:n, 0]

    mean_bottom_first = t_mass / prob
    mean_top_first = t_top_mass / prob_top
    identity = mean_bottom - ((one - prob) / prob * mean_top_first
                              + mean_bottom_first)
    closed1 = qv ** (n * n)
    closed2 = qv ** (n * n) * ((2 - qv ** n) ** n - 1 - (1 - qv ** n) ** n)
    gap = qv ** (n * n) * 2 ** n
    return HittingReport(
        n=n, q=float(qv),
        prob_bottom_first=float(prob),
        mean_time_bottom_first=float(mean_bottom_first),
        mean_time_top_first=float(mean_top_first),
        mean_time_bottom=float(mean_bottom),
        identity_residual=float(abs(identity)),
        prob_bottom_at_1=float(prob1),
        prob_bottom_at_2=float(prob2),
        closed_form_at_1=float(closed1),
        closed_form_at_2=float(closed2),
        ratio_to_gap_asymptotic=float(prob / gap),
        two_step_ratio_to_gap=float(prob2 / gap),
        exact=exact,
    )


# ---------------------------------------------------------------------------
# depth-count chain for general bounded integer jumps


def lattice_s(counts, law: LatticeLaw) -> tuple[np.ndarray, np.ndarray]:
    """Landing-class law of one offspring given the current depth counts.

    ``counts[w]`` particles sit at depth w - (W-1) behind the leader (the top
    slot, depth 0, must be occupied). Returns ``(offsets, probs)`` where
    ``offsets`` runs over the displacement classes bottom + 1 - W, ...,
    law.top relative to the current leader; mass below the lowest class is
    lumped into it. The cumulative products telescope, so probs sums to 1
    exactly up to rounding.
    """
    counts = np.asarray(counts)
    w = counts.size
    if counts[-1] < 1:
        raise ValueError("top slot (the leader) must be occupied")
    occ = np.nonzero(counts)[0]
    depths = occ - (w - 1)
    offsets = np.arange(law.bottom - (w - 1), law.top + 1)
    # cum[r] = P(one offspring displaces by <= offsets[r])
    args = offsets[:, None] - depths[None, :]
    cum = np.prod(law.cdf_int(args) ** counts[occ][None, :], axis=1)
    s = np.diff(cum, prepend=0.0)
    if s.min() < -1e-9:
        raise RuntimeError(f"class probabilities lost mass: min {s.min():g}")
    np.clip(s, 0.0, None, out=s)
    return offsets, s


def _recenter(offsets, splits, window: int) -> tuple[tuple[int, ...], int]:
    """Fold realized class counts into a depth state; returns (state, phi)."""
    hit = np.nonzero(splits)[0]
    phi = int(offsets[hit[-1]])
    state = [0] * window
    for i in hit:
        state[max(int(offsets[i]) - phi, 1 - window) + window - 1] += \
            int(splits[i])
    return tuple(state), phi


def lattice_step(counts, law: LatticeLaw,
                 rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """One multinomial transition; returns (new counts, displacement)."""
    counts = np.asarray(counts)
    offsets, s = lattice_s(counts, law)
    draw = rng.multinomial(int(counts.sum()), s / s.sum())
    state, phi = _recenter(offsets, draw, counts.size)
    return np.array(state), phi


@dataclass(frozen=True)
class LatticeSpeedReport:
    value: float
    window: int
    n_states: int
    boundary_mass: float
    ladder: np.ndarray         # stationary P(step displacement <= top - j)
    ladder_bounds: np.ndarray  # provable caps F(top - j)^N
    truncated: bool


def _lattice_chain(law: LatticeLaw, n: int, window: int, max_states: int):
    """BFS the reachable depth states from all-at-leader; sparse rows.

    Returns (states, rows, cums) where rows[i] maps successor index to
    probability and cums[i] is the cumulative landing-class law from state i
    (so cums[i][r]^n is the chance the step displacement stays <= class r).
    """
    start = (0,) * (window - 1) + (n,)
    index = {start: 0}
    states = [start]
    rows = []
    cums = []
    queue = deque([start])
    while queue:
        state = queue.popleft()
        offsets, s = lattice_s(np.array(state), law)
        cums.append(np.cumsum(s))
        support = np.nonzero(s)[0]
        row: dict[int, float] = {}
        for split in _compositions(n, len(support)):
            target, _ = _recenter(offsets[support], np.array(split), window)
            if target not in index:
                if len(states) >= max_states:
                    raise RuntimeError(
                        f"windowed state space exceeds {max_states} states")
                index[target] = len(states)
                states.append(target)
                queue.append(target)
            j = index[target]
            row[j] = row.get(j, 0.0) + _multinomial_pmf(split, s[support])
        rows.append(row)
    return states, rows, cums


def _compositions(n: int, k: int):
    """All k-tuples of nonnegative ints summing to n."""
    if k == 1:
        yield (n,)
        return
    for head in range(n + 1):
        for rest in _compositions(n - head, k - 1):
            yield (head,) + rest


def lattice_speed(law: LatticeLaw, n: int, window: int = 16,
                  max_states: int = 200_000, boundary_tol: float = 1e-12,
                  widenings: int = 3) -> LatticeSpeedReport:
    """Exact (windowed) front speed for a bounded integer jump law.

    Enumerates the reachable depth states, solves the stationary law, and
    reports the speed as the stationary mean of the per-step leader
    displacement. The window widens (doubling, up to ``widenings`` times)
    while the stationary mass touching the lumped bottom slot exceeds
    ``boundary_tol``; a warning marks reports where it still does.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if window < 2:
        raise ValueError("window must be >= 2")
    for attempt in range(widenings + 1):
        states, rows, cums = _lattice_chain(law, n, window, max_states)
        size = len(states)
        a = np.zeros((size, size))
        for i, row in enumerate(rows):
            for j, p in row.items():
                a[j, i] = p
        a -= np.eye(size)
        a[-1] = 1.0
        b = np.zeros(size)
        b[-1] = 1.0
        nu = np.linalg.solve(a, b)
        nu = np.clip(nu, 0.0, None)
        nu /= nu.sum()

        arr = np.array(states)
        boundary = float(nu[arr[:, 0] > 0].sum())
        if boundary <= boundary_tol or attempt == widenings:
            break
        window *= 2
    if boundary > boundary_tol:
        warnings.warn(f"boundary mass {boundary:g} above {boundary_tol:g} "
                      f"after widening to window {window}")

    # P(step displacement <= class r | state) = cum_r^n, so the speed is
    # top - sum over classes below top of the stationary dive probabilities
    cum_n = np.array([c ** n for c in cums])
    dive = nu @ cum_n                  # indexed by class, bottom..top
    value = law.top - float(dive[:-1].sum())
    ladder = dive[-2::-1]              # P_nu(phi <= top - j), j = 1, 2, ...
    span = ladder.size
    return LatticeSpeedReport(
        value=value, window=window, n_states=size, boundary_mass=boundary,
        ladder=ladder,
        ladder_bounds=law.cdf_int(law.top - np.arange(1, span + 1)) ** n,
        truncated=boundary > boundary_tol)


def lattice_chain_sim(law: LatticeLaw, n: int, steps: int,
                      rng: np.random.Generator, window: int = 16,
                      n_batches: int = 32) -> SpeedEstimate:
    """Simulated depth-chain speed: batch means of leader displacements."""
    if steps < n_batches:
        raise ValueError("steps must cover the batches")
    counts = np.zeros(window, dtype=int)
    counts[-1] = n
    moves = np.empty(steps)
    for t in range(steps):
        counts, phi = lattice_step(counts, law, rng)
        moves[t] = phi
    length = steps // n_batches
    means = moves[:length * n_batches].reshape(n_batches, length).mean(axis=1)
    return SpeedEstimate(value=float(moves.mean()),
                         std_err=float(np.std(means, ddof=1)
                                       / math.sqrt(n_batches)),
                         sigma2=float(length * np.var(means, ddof=1)),
                         n_blocks=n_batches, method="batch_means")


# ---------------------------------------------------------------------------
# two-sided speed bounds for general bounded laws


def gap_speed_prediction(a: float, b: float, p: float, n: int) -> float:
    """Predicted speed a - (a - b) (1-p)^(N^2) 2^N for a law with top atom a
    (mass p) and the rest of its support at or below b < a."""
    if not a > b:
        raise ValueError("need a > b")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if n < 1:
        raise ValueError("need n >= 1")
    return a - (a - b) * (1.0 - p) ** (n * n) * 2.0 ** n


def normal_form(a: float, b: float):
    """Affine maps sending (a, b) to (0, -1): x -> (x-a)/(a-b), and back."""
    if not a > b:
        raise ValueError("need a > b")
    scale = a - b

    def fwd(x):
        return (np.asarray(x, dtype=float) - a) / scale

    def back(v):
        return a + scale * np.asarray(v, dtype=float)

    return fwd, back


@dataclass(frozen=True)
class SandwichBounds:
    lower: float
    upper: float
    eps: float
    coarse_law: LatticeLaw
    stretched_law: LatticeLaw


def sandwich_bounds(law: LatticeLaw, n: int, eps: float = 0.1,
                    window: int = 16) -> SandwichBounds:
    """Exact speed bounds from the two-sided discretization of ``law``.

    ``law`` must be in normal form: top atom at 0, remaining support at or
    below -1. Coarsening every value <= -1 to -1 dominates the law from
    above; pinning each value v < 0 to (1+eps) floor(v/(1+eps)) dominates
    from below. Both auxiliary speeds are exact chain solves bracketing the
    true speed.
    """
    if law.top != 0:
        raise ValueError("law must be in normal form (top atom at 0)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    p_top = law.prob_of(0)
    if not 0 < p_top < 1:
        raise ValueError("top atom must have mass in (0, 1)")

    coarse = LatticeLaw(top=0, atoms=((0, p_top), (-1, 1.0 - p_top)))
    upper = lattice_speed(coarse, n, window=window).value

    squeezed: dict[int, float] = {}
    for v, p in law.atoms:
        if p == 0.0:
            continue
        site = 0 if v == 0 else math.floor(v / (1.0 + eps))
        squeezed[site] = squeezed.get(site, 0.0) + p
    stretched = LatticeLaw(top=0, atoms=tuple(sorted(squeezed.items())))
    lower = (1.0 + eps) * lattice_speed(stretched, n, window=window).value
    return SandwichBounds(lower=lower, upper=upper, eps=eps,
                          coarse_law=coarse, stretched_law=stretched)
