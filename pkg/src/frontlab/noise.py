"""Noise laws driving the max-plus particle dynamics.

Every law exposes i.i.d. sampling, a vectorized log-CDF, and the Gumbel
comparison index eps(x) = 1 + e^x * ln P(xi <= x), which measures how far the
law sits from a unit-rate Gumbel (eps identically 0). Laws serialize to small
JSON dicts so experiment configs are self-contained and reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1

__all__ = [
    "NoiseLaw",
    "GumbelLaw",
    "BernoulliLaw",
    "LatticeLaw",
    "SandwichedGumbelLaw",
    "SandwichReport",
    "epsilon_of",
    "check_sandwich",
    "shift_bounds_for_delta",
    "to_json",
    "from_json",
]

# exp1 switches to its asymptotic tail here; e^{-z}/z is still far from
# underflow, so the 1 - 1/z + 2/z^2 - 6/z^3 expansion is accurate to ~4e-10.
_EXP1_ASYMPTOTIC = 500.0
_EXP_CLAMP = 690.0


class NoiseLaw:
    """Interface shared by all jump laws."""

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        raise NotImplementedError

    def log_cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def epsilon(self, x) -> np.ndarray:
        """Gumbel comparison index 1 + e^x ln P(xi <= x)."""
        x = np.asarray(x, dtype=float)
        return 1.0 + np.exp(x) * self.log_cdf(x)


@dataclass(frozen=True)
class GumbelLaw(NoiseLaw):
    """Gumbel law with CDF exp(-e^{-rate (x - loc)})."""

    loc: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if not (self.rate > 0.0 and math.isfinite(self.rate)):
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not math.isfinite(self.loc):
            raise ValueError(f"loc must be finite, got {self.loc}")

    def sample(self, rng, size=None):
        return rng.gumbel(self.loc, 1.0 / self.rate, size)

    def quantile(self, u):
        # inverse CDF; note the 1/rate on the double log
        u = np.asarray(u, dtype=float)
        return self.loc - np.log(np.log(1.0 / u)) / self.rate

    def log_cdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.exp(-self.rate * (x - self.loc))


@dataclass(frozen=True)
class BernoulliLaw(NoiseLaw):
    """Jump of 1 with probability p, else 0."""

    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")

    def sample(self, rng, size=None):
        return (rng.random(size) < self.p).astype(float)

    def log_cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[x < 1.0] = math.log1p(-self.p)
        out[x < 0.0] = -np.inf
        return out


@dataclass(frozen=True)
class LatticeLaw(NoiseLaw):
    """Integer-valued jump law with finite support and top atom at ``top``.

    ``atoms`` maps value -> probability, values <= top, probabilities summing
    to 1. Laws with infinite left tails are represented by an explicit head
    plus one aggregated bottom atom (see :meth:`from_pmf`).
    """

    top: int
    atoms: tuple[tuple[int, float], ...]
    _values: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pairs = sorted((int(v), float(p)) for v, p in self.atoms)
        if len(pairs) != len({v for v, _ in pairs}):
            raise ValueError("duplicate lattice values")
        if any(p < 0.0 for _, p in pairs):
            raise ValueError("negative probability")
        total = math.fsum(p for _, p in pairs)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        vmax = max(v for v, p in pairs if p > 0.0)
        if vmax != self.top:
            raise ValueError(f"top atom is {vmax}, declared top {self.top}")
        object.__setattr__(self, "atoms", tuple(pairs))
        object.__setattr__(self, "_values", np.array([v for v, _ in pairs]))
        cum = np.cumsum([p for _, p in pairs])
        cum[-1] = 1.0
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_pmf(cls, top: int, pmf, head: int = 64) -> "LatticeLaw":
        """Build from a pmf callable on {top, top-1, ...}, aggregating the
        tail below ``head`` explicit sites into one bottom atom."""
        vals = list(range(top, top - head, -1))
        probs = [float(pmf(v)) for v in vals]
        tail = 1.0 - math.fsum(probs)
        if tail < -1e-12:
            raise ValueError("pmf head mass exceeds 1")
        pairs = [(v, p) for v, p in zip(vals, probs)]
        pairs.append((top - head, max(tail, 0.0)))
        return cls(top=top, atoms=tuple(pairs))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def probs(self) -> np.ndarray:
        return np.diff(self._cum, prepend=0.0)

    @property
    def bottom(self) -> int:
        return int(self._values[0])

    def prob_of(self, value: int) -> float:
        i = np.searchsorted(self._values, value)
        if i < len(self._values) and self._values[i] == value:
            return float(self.probs[i])
        return 0.0

    def satisfies_assumption_r(self) -> bool:
        # positive mass on the top two sites
        return self.prob_of(self.top) > 0.0 and self.prob_of(self.top - 1) > 0.0

    def cdf_int(self, i) -> np.ndarray:
        """P(xi <= i) for integer (array) i."""
        i = np.asarray(i)
        idx = np.searchsorted(self._values, i, side="right")
        return np.concatenate(([0.0], self._cum))[idx]

    def sample(self, rng, size=None):
        u = rng.random(size)
        return self._values[np.searchsorted(self._cum, u)].astype(float)

    def log_cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(self.cdf_int(np.floor(x).astype(int)))


@dataclass(frozen=True)
class SandwichedGumbelLaw(NoiseLaw):
    """Unit-rate Gumbel plus an independent bounded shift W in [lo, hi].

    ``shift_law`` is "uniform" (uniform on [lo, hi]) or "point" (atom at the
    midpoint). Degenerate intervals collapse to the point law.
    """

    lo: float
    hi: float
    shift_law: str = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("shift bounds must be finite")
        if self.lo > self.hi:
            raise ValueError(f"need lo <= hi, got ({self.lo}, {self.hi})")
        if self.shift_law not in ("uniform", "point"):
            raise ValueError(f"unknown shift_law {self.shift_law!r}")

    def _is_point(self) -> bool:
        # widths below ~1e-8 would cancel in the exp1 difference anyway
        return self.shift_law == "point" or (self.hi - self.lo) < 1e-8

    def sample(self, rng, size=None):
        g = rng.gumbel(0.0, 1.0, size)
        if self._is_point():
            return g + 0.5 * (self.lo + self.hi)
        return g + rng.uniform(self.lo, self.hi, size)

    def log_cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self._is_point():
            return -np.exp(-(x - 0.5 * (self.lo + self.hi)))
        # F(x) = (E1(e^{lo-x}) - E1(e^{hi-x})) / (hi - lo)
        w = self.hi - self.lo
        z_lo = np.exp(np.minimum(self.lo - x, _EXP_CLAMP))
        z_hi = np.exp(np.minimum(self.hi - x, _EXP_CLAMP))
        out = np.empty_like(z_lo)

        tiny = z_hi < 1e-6
        big = ~tiny & (z_lo > _EXP1_ASYMPTOTIC)
        mid = ~tiny & ~big

        # E1(a) - E1(b) = ln(b/a) - (b - a) + (b^2 - a^2)/4 + O(z^3)
        a, b = z_lo[tiny], z_hi[tiny]
        out[tiny] = np.log1p((-(b - a) + (b * b - a * a) / 4.0) / w)

        a, b = z_lo[mid], z_hi[mid]
        out[mid] = np.log(exp1(a) - exp1(b)) - math.log(w)

        # the e^{hi-x} term is smaller by e^{-(e^{w}-1) z} and drops out
        z = z_lo[big]
        corr = ((-6.0 / z + 2.0) / z - 1.0) / z  # 3-term asymptotic series
        out[big] = -z - np.log(z) + np.log1p(corr) - math.log(w)
        return out


# ---------------------------------------------------------------------------
# sandwich diagnostics


@dataclass(frozen=True)
class SandwichReport:
    eps_inf: float
    eps_sup: float
    delta_max: float
    satisfied: bool
    first_exit: float  # nan when satisfied

    def shift_bounds(self) -> tuple[float, float]:
        return shift_bounds_for_delta(self.delta_max)


def epsilon_of(law: NoiseLaw, x) -> np.ndarray:
    """Gumbel comparison index of any law (vectorized)."""
    return law.epsilon(x)


def shift_bounds_for_delta(delta: float) -> tuple[float, float]:
    """Shift interval [ln delta, ln(1 + 1/delta)] matching a band parameter."""
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    return math.log(delta), math.log1p(1.0 / delta)


def check_sandwich(law: NoiseLaw, grid=None) -> SandwichReport:
    """Test whether eps(x) stays inside some band [-1/delta, 1 - delta].

    A law passes iff eps is bounded below and bounded away from 1 above on
    the grid; delta_max is the largest admissible band parameter. The first
    grid point violating the band (eps >= 1 or eps = -inf) is reported for
    failing laws.
    """
    if grid is None:
        grid = np.linspace(-20.0, 30.0, 2001)
    grid = np.asarray(grid, dtype=float)
    eps = law.epsilon(grid)
    eps_inf = float(np.min(eps))
    eps_sup = float(np.max(eps))
    bad = (eps >= 1.0) | ~np.isfinite(eps)
    if np.any(bad):
        return SandwichReport(eps_inf, eps_sup, 0.0, False,
                              float(grid[np.argmax(bad)]))
    delta_max = 1.0 - eps_sup
    if eps_inf < 0.0:
        delta_max = min(delta_max, -1.0 / eps_inf)
    return SandwichReport(eps_inf, eps_sup, float(delta_max), True, math.nan)


# ---------------------------------------------------------------------------
# JSON serialization


def to_json(law: NoiseLaw) -> str:
    if isinstance(law, GumbelLaw):
        d = {"type": "gumbel", "a": law.loc, "lambda": law.rate}
    elif isinstance(law, BernoulliLaw):
        d = {"type": "bernoulli", "p": law.p}
    elif isinstance(law, LatticeLaw):
        d = {"type": "lattice", "k": law.top,
             "probs": [[v, p] for v, p in reversed(law.atoms)]}
    elif isinstance(law, SandwichedGumbelLaw):
        d = {"type": "sandwiched_gumbel", "c": law.lo, "d": law.hi,
             "shift_law": law.shift_law}
    else:
        raise TypeError(f"cannot serialize {type(law).__name__}")
    return json.dumps(d)


def from_json(text) -> NoiseLaw:
    """Parse a law from a JSON string or an already-decoded dict."""
    d = json.loads(text) if isinstance(text, (str, bytes)) else dict(text)
    try:
        kind = d.pop("type")
    except KeyError:
        raise ValueError("noise spec missing 'type'") from None
    try:
        if kind == "gumbel":
            return GumbelLaw(loc=float(d.pop("a", 0.0)),
                             rate=float(d.pop("lambda", 1.0)))
        if kind == "bernoulli":
            return BernoulliLaw(p=float(d.pop("p")))
        if kind == "lattice":
            atoms = tuple((int(v), float(p)) for v, p in d.pop("probs"))
            return LatticeLaw(top=int(d.pop("k")), atoms=atoms)
        if kind == "sandwiched_gumbel":
            return SandwichedGumbelLaw(lo=float(d.pop("c")),
                                       hi=float(d.pop("d")),
                                       shift_law=d.pop("shift_law", "uniform"))
    except KeyError as e:
        raise ValueError(f"noise spec missing field {e}") from None
    raise ValueError(f"unknown noise type {kind!r}")
