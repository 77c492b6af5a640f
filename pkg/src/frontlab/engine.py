"""Max-plus particle dynamics and front-speed estimation.

The system keeps N particles on the line; one step replaces every position by
X_i' = max_j (X_j + xi_{ij}) with an i.i.d. noise matrix xi. Front location is
any shift-covariant monotone functional of the configuration. Two speed
estimators are provided: plain batch means over a long run, and a regenerative
(renewal-block) estimator based on steps whose noise matrix lets the current
leader's column dominate every row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .noise import GumbelLaw, LatticeLaw, BernoulliLaw, NoiseLaw

__all__ = [
    "FrontFunctional",
    "MAX_FRONT",
    "MIN_FRONT",
    "lse_front",
    "order_front",
    "log_sum_exp",
    "ParticleState",
    "initial_state",
    "step",
    "step_with_noise",
    "step_gumbel_exact",
    "step_conditional",
    "is_renewal",
    "SpeedEstimate",
    "default_burn_in",
    "estimate_speed",
    "renewal_speed",
    "run_trajectory",
]


def log_sum_exp(positions: np.ndarray, rate: float = 1.0) -> float:
    """Stable m + ln(sum e^{rate (x_i - m)}) / rate, m = max(x)."""
    m = float(np.max(positions))
    return m + math.log(np.exp(rate * (positions - m)).sum()) / rate


@dataclass(frozen=True)
class FrontFunctional:
    """Shift-covariant monotone summary of a configuration.

    kind: "max", "min", "lse" (param = rate), or "order" (param = rank,
    1 = rightmost particle, N = leftmost).
    """

    kind: str
    param: float | int | None = None

    def __post_init__(self):
        if self.kind not in ("max", "min", "lse", "order"):
            raise ValueError(f"unknown front functional {self.kind!r}")
        if self.kind == "lse" and not (self.param and self.param > 0):
            raise ValueError("lse front needs a positive rate")
        if self.kind == "order" and (self.param is None or int(self.param) < 1):
            raise ValueError("order front needs a rank >= 1")

    def __call__(self, positions: np.ndarray) -> float:
        if self.kind == "max":
            return float(np.max(positions))
        if self.kind == "min":
            return float(np.min(positions))
        if self.kind == "lse":
            return log_sum_exp(positions, self.param)
        rank = int(self.param)
        if rank > positions.size:
            raise ValueError(f"rank {rank} exceeds N={positions.size}")
        return float(np.partition(positions, -rank)[-rank])

    def label(self) -> str:
        if self.kind == "lse":
            return f"lse({self.param:g})"
        if self.kind == "order":
            return f"order({int(self.param)})"
        return self.kind


MAX_FRONT = FrontFunctional("max")
MIN_FRONT = FrontFunctional("min")


def lse_front(rate: float = 1.0) -> FrontFunctional:
    return FrontFunctional("lse", float(rate))


def order_front(rank: int) -> FrontFunctional:
    return FrontFunctional("order", int(rank))


@dataclass(frozen=True)
class ParticleState:
    positions: np.ndarray
    t: int = 0
    prev_front: float = math.nan  # front of X(t-1) under the run's functional


def initial_state(n: int, positions=None) -> ParticleState:
    if positions is None:
        positions = np.zeros(n)
    positions = np.asarray(positions, dtype=float)
    if positions.shape != (n,):
        raise ValueError(f"expected {n} positions, got shape {positions.shape}")
    return ParticleState(positions=positions, t=0)


def step_with_noise(positions: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """One max-plus update with an explicit (N, N) noise matrix."""
    return (positions[None, :] + noise).max(axis=1)


def step(state: ParticleState, law: NoiseLaw, rng: np.random.Generator,
         front: FrontFunctional = MAX_FRONT) -> ParticleState:
    """One Theta(N^2) step with fresh noise."""
    n = state.positions.size
    noise = law.sample(rng, (n, n))
    return ParticleState(positions=step_with_noise(state.positions, noise),
                         t=state.t + 1,
                         prev_front=front(state.positions))


def is_renewal(noise: np.ndarray, leader: int = 0) -> bool:
    """True when the leader's column attains the max of every row.

    Ties count as attainment, so discrete noise renews at least as often as
    continuous noise (probability exactly N^-N there).
    """
    return bool(np.all(noise[:, leader] >= noise.max(axis=1)))


def step_gumbel_exact(state: ParticleState, law: GumbelLaw,
                      rng: np.random.Generator) -> ParticleState:
    """Theta(N) step, exact in law for Gumbel noise.

    Given X(t-1), the new positions are i.i.d. Gumbel shifted by the
    log-sum-exp front at the noise rate; prev_front is that front value.
    """
    phi = log_sum_exp(state.positions, law.rate)
    fresh = law.sample(rng, state.positions.size)
    return ParticleState(positions=phi + fresh, t=state.t + 1, prev_front=phi)


def step_conditional(state: ParticleState, law: NoiseLaw,
                     rng: np.random.Generator, grid_step: float = 2e-3,
                     front: FrontFunctional | None = None) -> ParticleState:
    """Theta(N log N) step for continuous laws, exact in law up to O(grid_step).

    Given X(t-1) the new positions are conditionally i.i.d. with log-CDF
    L(x) = sum_j ln F(x - X_j). The sources are binned on a uniform grid, L is
    a convolution of the bin counts with the tabulated noise log-CDF, and the
    draws come from inverse transform on the tabulated L. Discrete laws are
    rejected (interpolation would smear their atoms).
    """
    from scipy.signal import fftconvolve

    if isinstance(law, (LatticeLaw, BernoulliLaw)):
        raise TypeError("step_conditional needs a continuous noise law")
    if front is None:
        front = lse_front(getattr(law, "rate", 1.0))
    pos = state.positions
    n = pos.size
    lo, hi = float(pos.min()), float(pos.max())

    nb = int(math.ceil((hi - lo) / grid_step)) + 1
    counts = np.bincount(
        np.clip(((pos - lo) / grid_step).astype(np.int64), 0, nb - 1),
        minlength=nb).astype(float)

    # expand the evaluation window until the conditional CDF covers
    # [e^-60, 1 - 1e-12]
    pad_left, pad_right = 8.0, 16.0
    for _ in range(30):
        k = int(math.ceil((hi - lo + pad_left + pad_right) / grid_step)) + 1
        x0 = lo - pad_left
        offsets = (x0 - lo) + np.arange(-(nb - 1), k) * grid_step
        table = law.log_cdf(offsets)
        lcdf = fftconvolve(counts, table)[nb - 1:nb - 1 + k]
        if lcdf[-1] < -1e-12:
            pad_right *= 2.0
        elif lcdf[0] > -60.0:
            pad_left *= 2.0
        else:
            break
    else:
        raise RuntimeError("conditional CDF window failed to converge")

    grid = x0 + np.arange(k) * grid_step
    lcdf = np.maximum.accumulate(lcdf)  # fft fuzz can break monotonicity
    keep = (lcdf > -60.0) & (lcdf < -1e-14)
    draws = np.interp(np.log(rng.random(n)), lcdf[keep], grid[keep])
    return ParticleState(positions=draws, t=state.t + 1,
                         prev_front=front(pos))


# ---------------------------------------------------------------------------
# speed estimation


@dataclass(frozen=True)
class SpeedEstimate:
    value: float
    std_err: float
    sigma2: float       # CLT variance of one front increment
    n_blocks: int
    method: str = "batch_means"


def default_burn_in(n: int) -> int:
    # 10x the worst-case expected renewal wait N^N, capped
    return min(10 * n ** n, 10_000)


def _noise_blocks(law: NoiseLaw, n: int, steps: int, rng: np.random.Generator):
    """Yield pre-drawn (b, n, n) noise tensors covering ``steps`` steps."""
    block = max(1, min(steps, 4_000_000 // (n * n) or 1))
    done = 0
    while done < steps:
        b = min(block, steps - done)
        yield law.sample(rng, (b, n, n))
        done += b


def _run_fronts(law, n, steps, rng, front, positions):
    """Run ``steps`` full steps, returning the front value after each."""
    fronts = np.empty(steps)
    i = 0
    for noise in _noise_blocks(law, n, steps, rng):
        for t in range(noise.shape[0]):
            positions = step_with_noise(positions, noise[t])
            fronts[i] = front(positions)
            i += 1
    return fronts, positions


def estimate_speed(law: NoiseLaw, n: int, front: FrontFunctional = MAX_FRONT,
                   t_burn: int | None = None, t_run: int = 2000,
                   rng: np.random.Generator | None = None,
                   n_batches: int = 32, positions=None) -> SpeedEstimate:
    """Batch-means speed estimate over a single long run.

    Burn-in defaults to :func:`default_burn_in`. The run is cut into
    ``n_batches`` equal batches of front increments; the reported sigma2 is
    the batch-means estimate of the per-step CLT variance and std_err is the
    usual batch-means standard error of the mean increment.
    """
    if rng is None:
        rng = np.random.default_rng()
    if t_run < 100:
        raise ValueError(f"t_run must be >= 100, got {t_run}")
    if t_run < n_batches:
        raise ValueError("t_run smaller than the number of batches")
    if t_burn is None:
        t_burn = default_burn_in(n)
    state = initial_state(n, positions)
    pos = state.positions
    if t_burn:
        _, pos = _run_fronts(law, n, t_burn, rng, front, pos)
    f0 = front(pos)
    fronts, _ = _run_fronts(law, n, t_run, rng, front, pos)

    length = t_run // n_batches
    used = length * n_batches
    ends = np.concatenate(([f0], fronts[length - 1:used:length]))
    means = np.diff(ends) / length
    v_hat = (fronts[used - 1] - f0) / used
    se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    sigma2 = float(length * np.var(means, ddof=1))
    return SpeedEstimate(value=float(v_hat), std_err=se, sigma2=sigma2,
                         n_blocks=n_batches, method="batch_means")


def renewal_speed(law: NoiseLaw, n: int, front: FrontFunctional = MAX_FRONT,
                  n_renewals: int = 200,
                  rng: np.random.Generator | None = None,
                  step_budget: int = 10_000_000,
                  positions=None) -> SpeedEstimate:
    """Regenerative speed estimate from renewal blocks.

    A renewal is a step whose noise lets the current leader's column attain
    every row max; the segment before the first renewal is discarded and the
    (displacement, duration) block pairs give the ratio estimator with a
    delta-method standard error. Aborts once ``step_budget`` steps pass
    without collecting ``n_renewals`` blocks (the waiting time can be as bad
    as N^N).
    """
    if rng is None:
        rng = np.random.default_rng()
    if n_renewals < 10:
        raise ValueError("need at least 10 renewal blocks")
    state = initial_state(n, positions)
    pos = state.positions

    disp, dur = [], []
    mark_front = None
    mark_step = 0
    steps = 0
    while len(disp) < n_renewals:
        if steps >= step_budget:
            raise RuntimeError(
                f"renewal budget exhausted: {len(disp)} blocks in {steps} "
                f"steps (worst-case expected wait is N^N = {n ** n})")
        noise = law.sample(rng, (n, n))
        leader = int(np.argmax(pos))
        renew = is_renewal(noise, leader)
        pos = step_with_noise(pos, noise)
        steps += 1
        if renew:
            f = front(pos)
            if mark_front is not None:
                disp.append(f - mark_front)
                dur.append(steps - mark_step)
            mark_front = f
            mark_step = steps

    d = np.array(disp[:n_renewals])
    ell = np.array(dur[:n_renewals], dtype=float)
    v_hat = d.sum() / ell.sum()
    resid = d - v_hat * ell
    se = float(np.std(resid, ddof=1) / (ell.mean() * math.sqrt(len(d))))
    sigma2 = float(np.var(resid, ddof=1) / ell.mean())
    return SpeedEstimate(value=float(v_hat), std_err=se, sigma2=sigma2,
                         n_blocks=len(d), method="regenerative")


def run_trajectory(law: NoiseLaw, n: int, t: int,
                   rng: np.random.Generator | None = None,
                   front: FrontFunctional = MAX_FRONT,
                   positions=None) -> np.ndarray:
    """Full dynamics for t steps; rows (t, phi, max, min, gap) incl. t=0."""
    if rng is None:
        rng = np.random.default_rng()
    state = initial_state(n, positions)
    pos = state.positions
    rows = np.empty((t + 1, 5))

    def record(i, p):
        rows[i] = (i, front(p), p.max(), p.min(), p.max() - p.min())

    record(0, pos)
    i = 0
    for noise in _noise_blocks(law, n, t, rng):
        for s in range(noise.shape[0]):
            pos = step_with_noise(pos, noise[s])
            i += 1
            record(i, pos)
    return rows
