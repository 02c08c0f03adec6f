"""Two-candidate election model with adversarially compromised ballots.

Votes are coded ``-1`` for candidate A (the attacker's candidate), ``+1`` for
candidate B (the true expected winner) and ``0`` for a blank or discarded
ballot.  A compromised ballot carries an adversarial mark on A's bubble, so a
blank race reads as a vote for A, a vote for A stays a vote for A, and a vote
for B becomes an overvote that is discarded.

The closed-form solver finds the smallest compromised fraction ``p_c`` such
that, under the normal approximation of the observed vote margin, A wins with
probability at least ``1 - alpha``.  The Monte Carlo routines simulate
elections directly and make no use of the approximation.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from . import rng as rngmod
from .normal import norm_cdf, norm_ppf

# Slack for the probability-simplex checks.
_PROB_TOL = 1e-12
# A root of the squared quadratic must satisfy the unsquared condition to
# within this much to count as genuine.
ROOT_TOL = 1e-9


class InvalidDistribution(ValueError):
    pass


@dataclass(frozen=True)
class VoteDistribution:
    """True voter behaviour, parameterised by ``p_b`` and margin ``delta``."""

    p_b: float
    delta: float

    def __post_init__(self):
        pb, dl = self.p_b, self.delta
        if not (math.isfinite(pb) and math.isfinite(dl)):
            raise InvalidDistribution(f"non-finite parameters p_b={pb}, delta={dl}")
        if not (-_PROB_TOL <= pb <= 1 + _PROB_TOL):
            raise InvalidDistribution(f"p_b={pb} outside [0, 1]")
        if pb - dl < -_PROB_TOL:
            raise InvalidDistribution(f"p_a = p_b - delta = {pb - dl} < 0")
        if 1 - 2 * pb + dl < -_PROB_TOL:
            raise InvalidDistribution(f"p_0 = 1 - 2 p_b + delta = {1 - 2 * pb + dl} < 0")

    @property
    def p_a(self) -> float:
        return self.p_b - self.delta

    @property
    def p_0(self) -> float:
        return 1.0 - self.p_a - self.p_b

    def derived(self) -> "DerivedQuantities":
        pb, dl = self.p_b, self.delta
        return DerivedQuantities(d=1.0 + dl - pb, v0=2 * pb - dl - dl * dl, v1=pb * (1 - pb))


@dataclass(frozen=True)
class DerivedQuantities:
    """Shorthands used by the moment formulas.

    ``d`` is the drop in expected margin per compromised ballot, ``v0`` the
    variance of an honest ballot and ``v1`` the variance of a compromised one.
    """

    d: float
    v0: float
    v1: float


@dataclass(frozen=True)
class CompromiseAssessment:
    p_b: float
    delta: float
    n: int
    alpha: float
    z_value: float
    k0: float
    k1: float
    k2: float
    root_low: float
    root_high: float
    p_c_star: float
    ballots_required: int | None
    feasible: bool

    def to_dict(self) -> dict:
        return asdict(self)


class Winner(str, Enum):
    A = "A"
    B = "B"
    TIE = "tie"


@dataclass(frozen=True)
class ElectionResult:
    votes_a: int
    votes_b: int
    discarded_or_blank: int
    w_bar: float
    winner: Winner

    @property
    def n(self) -> int:
        return self.votes_a + self.votes_b + self.discarded_or_blank


def _check_pc(p_c: float) -> None:
    if not 0.0 <= p_c <= 1.0:
        raise ValueError(f"p_c={p_c} outside [0, 1]")


def true_vote_moments(dist: VoteDistribution) -> tuple[float, float]:
    """Mean and variance of an honest ballot."""
    dl = dist.delta
    return dl, 2 * dist.p_b - dl - dl * dl


def compromised_vote_moments(dist: VoteDistribution, p_c: float) -> tuple[float, float]:
    """Mean and variance of the observed vote when a fraction ``p_c`` is compromised."""
    _check_pc(p_c)
    q = dist.derived()
    mean = dist.delta - p_c * q.d
    var = (1 - p_c) * q.v0 + p_c * q.v1 + p_c * (1 - p_c) * q.d * q.d
    return mean, var


def z_value(alpha: float) -> float:
    """Critical value with P(Z <= z) = 1 - alpha (1.6449 for alpha = 0.05)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1)")
    return norm_ppf(1.0 - alpha)


def success_probability(dist: VoteDistribution, p_c: float, n: int) -> float:
    """Normal-approximation probability that candidate A wins.

    With zero variance the margin is deterministic: returns 1.0 when the mean
    is negative and 0.0 otherwise (an exact tie is a failed attack).
    """
    if n < 1:
        raise ValueError("n must be positive")
    mean, var = compromised_vote_moments(dist, p_c)
    if var <= 0.0:
        return 1.0 if mean < 0 else 0.0
    return norm_cdf(-mean / math.sqrt(var / n))


def condition_lhs(dist: VoteDistribution, p_c: float, n: int, z: float) -> float:
    """E[W] + z * sqrt(Var(W) / n); the attack target is a value <= 0.

    Evaluated from the closed-form moments without range checks on ``p_c`` so
    that candidate roots just outside [0, 1] can be tested; returns ``inf``
    where the variance formula goes negative.
    """
    q = dist.derived()
    mean = dist.delta - p_c * q.d
    var = (1 - p_c) * q.v0 + p_c * q.v1 + p_c * (1 - p_c) * q.d * q.d
    if var < 0:
        return math.inf
    return mean + z * math.sqrt(var / n)


def solve_pc_star(dist: VoteDistribution, n: int, alpha: float) -> CompromiseAssessment:
    """Smallest compromised fraction that flips the race with confidence ``1 - alpha``.

    Both roots of the squared quadratic ``k2 p^2 + k1 p + k0 = 0`` are formed
    and each is substituted back into the unsquared condition; squaring
    admits a spurious root, which fails that check.  If no genuine root lies
    in [0, 1] the assessment is marked infeasible; ``p_c_star`` then holds the
    genuine root outside the interval, or ``inf`` when there is none.
    """
    if dist.delta <= 0:
        raise InvalidDistribution(f"solver needs delta > 0 (B the expected winner), got {dist.delta}")
    if n < 1:
        raise ValueError("n must be positive")
    z = z_value(alpha)
    q = dist.derived()
    d, v0, v1, dl = q.d, q.v0, q.v1, dist.delta
    z2 = z * z
    c = v1 - v0 + d * d
    k2 = (n + z2) * d * d
    k1 = -2.0 * n * dl * d - z2 * c
    k0 = n * dl * dl - z2 * v0
    # k1^2 - 4 k2 k0 expanded so that the O(n^2) terms cancel symbolically.
    disc = z2 * (4.0 * n * d * (dl * c + d * v0 - d * dl * dl) + z2 * (c * c + 4.0 * d * d * v0))

    def assess(p_star, lo, hi, feasible):
        required = math.ceil(n * p_star) if feasible else None
        return CompromiseAssessment(
            p_b=dist.p_b, delta=dl, n=n, alpha=alpha, z_value=z, k0=k0, k1=k1, k2=k2,
            root_low=lo, root_high=hi, p_c_star=p_star,
            ballots_required=max(required, 0) if required is not None else None,
            feasible=feasible,
        )

    if disc < 0:
        return assess(math.inf, math.nan, math.nan, False)

    sq = math.sqrt(disc)
    # Numerically stable pair of roots.
    big = (-k1 + sq) / 2.0 if k1 <= 0 else (-k1 - sq) / 2.0
    r1 = big / k2
    r2 = k0 / big if big != 0 else r1
    lo, hi = min(r1, r2), max(r1, r2)

    # Already winning with no compromise (only possible for alpha > 1/2).
    if condition_lhs(dist, 0.0, n, z) <= 0.0:
        return assess(0.0, lo, hi, True)

    genuine = [r for r in (lo, hi) if abs(condition_lhs(dist, r, n, z)) <= ROOT_TOL]
    inside = [r for r in genuine if -ROOT_TOL <= r <= 1 + ROOT_TOL]
    if inside:
        return assess(min(max(min(inside), 0.0), 1.0), lo, hi, True)
    outside = [r for r in genuine if r > 1]
    return assess(min(outside) if outside else math.inf, lo, hi, False)


def sample_compromised_vote(dist: VoteDistribution, compromised: bool,
                            gen: np.random.Generator) -> int:
    """Draw one observed vote."""
    u = gen.random()
    if compromised:
        return 0 if u < dist.p_b else -1
    if u < dist.p_a:
        return -1
    if u < dist.p_a + dist.p_b:
        return 1
    return 0


def _result(votes_a: int, votes_b: int, other: int) -> ElectionResult:
    n = votes_a + votes_b + other
    w_bar = (votes_b - votes_a) / n
    if votes_a > votes_b:
        winner = Winner.A
    elif votes_b > votes_a:
        winner = Winner.B
    else:
        winner = Winner.TIE
    return ElectionResult(votes_a, votes_b, other, w_bar, winner)


def simulate_election(dist: VoteDistribution, p_c: float, n: int, seed: int) -> ElectionResult:
    """Simulate ``n`` voters one by one (vectorised), with per-voter compromise draws."""
    _check_pc(p_c)
    if n < 1:
        raise ValueError("n must be positive")
    gen = rngmod.substream(seed, rngmod.ELECTION)
    compromised = gen.random(n) < p_c
    u = gen.random(n)
    honest = np.where(u < dist.p_a, -1, np.where(u < dist.p_a + dist.p_b, 1, 0))
    # Same uniform reused: below p_b the overvote is discarded, otherwise A.
    rigged = np.where(u < dist.p_b, 0, -1)
    w = np.where(compromised, rigged, honest)
    votes_a = int(np.count_nonzero(w == -1))
    votes_b = int(np.count_nonzero(w == 1))
    return _result(votes_a, votes_b, n - votes_a - votes_b)


def outcome_probabilities(dist: VoteDistribution, p_c: float) -> np.ndarray:
    """P(W = -1), P(W = +1), P(W = 0) for one observed ballot."""
    _check_pc(p_c)
    pa, pb, p0 = dist.p_a, dist.p_b, dist.p_0
    p = np.array([
        (1 - p_c) * pa + p_c * (1 - pb),
        (1 - p_c) * pb,
        (1 - p_c) * p0 + p_c * pb,
    ])
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _trial(dist_probs: np.ndarray, n: int, seed: int, index: int) -> bool:
    gen = rngmod.substream(seed, rngmod.MC_TRIAL, index)
    votes_a, votes_b, _ = gen.multinomial(n, dist_probs)
    return votes_b < votes_a


def monte_carlo_success(dist: VoteDistribution, p_c: float, n: int, trials: int,
                        seed: int, jobs: int = 1) -> tuple[float, float]:
    """Fraction of simulated elections won by A, with a 95% normal CI half-width.

    Each trial draws the vote counts of one election from their exact
    multinomial law, using a substream keyed by ``(seed, trial)``; the result
    does not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n < 1:
        raise ValueError("n must be positive")
    probs = outcome_probabilities(dist, p_c)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            wins = sum(pool.map(lambda i: _trial(probs, n, seed, i), range(trials)))
    else:
        wins = sum(_trial(probs, n, seed, i) for i in range(trials))
    rate = wins / trials
    return rate, 1.96 * math.sqrt(rate * (1 - rate) / trials)
