"""Tail probabilities of sums of independent exponential delays.

A task that crosses a tandem of M/M/1 queues spends an exponential sojourn
with parameter ``v = mu - lambda`` at each hop, so its end-to-end delay is
hypoexponential. Rates that coincide turn the corresponding terms into
Erlang components; :func:`tail_hypoexp` handles any multiplicity pattern
through partial fractions with repeated poles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import stats

GROUP_REL_TOL = 1e-9
# Below this relative gap the 1/(v_j - v_i) factors cancel badly in floats.
NEAR_DEGENERATE_GAP = 1e-4
# Rounding error of a signed mixture is about eps * sum(|weight|); above this
# weight mass the result could be off by more than ~1e-12.
CONDITION_LIMIT = 1e4


@dataclass(frozen=True)
class RateVector:
    """Per-hop exponential parameters of one delay path.

    ``groups`` holds ``(value, multiplicity)`` pairs, sorted by multiplicity
    then value, both descending.
    """

    rates: tuple[float, ...]
    groups: tuple[tuple[float, int], ...]

    @property
    def pattern(self) -> tuple[int, ...]:
        return tuple(m for _, m in self.groups)

    @property
    def label(self) -> str:
        return "(" + ",".join(str(m) for m in self.pattern) + ")"

    @property
    def stable(self) -> bool:
        return all(v > 0 for v in self.rates)

    def __len__(self) -> int:
        return len(self.rates)


RatesLike = Union[RateVector, Sequence[float], np.ndarray]


def _rel_close(a: float, b: float, rel_tol: float) -> bool:
    return abs(a - b) <= rel_tol * max(abs(a), abs(b))


def group_rates(rates: Iterable[float], rel_tol: float = GROUP_REL_TOL) -> RateVector:
    """Merge rates that agree within ``rel_tol`` (transitively) into groups.

    Each group is represented by the mean of its members.
    """
    values = tuple(float(r) for r in rates)
    if not values:
        raise ValueError("rate list must be non-empty")
    ordered = sorted(values)
    clusters: list[list[float]] = [[ordered[0]]]
    for r in ordered[1:]:
        # on a sorted list the transitive closure only links neighbours
        if _rel_close(clusters[-1][-1], r, rel_tol):
            clusters[-1].append(r)
        else:
            clusters.append([r])
    groups = [(math.fsum(c) / len(c), len(c)) for c in clusters]
    groups.sort(key=lambda g: (g[1], g[0]), reverse=True)
    return RateVector(values, tuple(groups))


def as_rate_vector(rv: RatesLike, rel_tol: float = GROUP_REL_TOL) -> RateVector:
    if isinstance(rv, RateVector):
        return rv
    return group_rates(np.asarray(rv, dtype=float).ravel(), rel_tol)


def tail_single(v: float, theta: float) -> float:
    """P(X >= theta) for an M/M/1 sojourn with parameter ``v``.

    A non-positive ``v`` means the queue is unstable and the deadline is
    missed almost surely, so 1 is returned.
    """
    if v <= 0:
        return 1.0
    if theta <= 0:
        return 1.0
    return math.exp(-v * theta)


def erlang_tail(order: int, rate: float, theta: float) -> float:
    """Survival function of an Erlang(order, rate) variable at ``theta``."""
    x = rate * theta
    term = 1.0
    total = 1.0
    for i in range(1, order):
        term *= x / i
        total += term
    return total * math.exp(-x)


def _series_coefficients(
    pole: float, others: Sequence[tuple[float, int]], degree: int
) -> list[float]:
    """Taylor coefficients in ``u = s + pole`` of prod (v/(s+v))^m over ``others``."""
    coeffs = [1.0] + [0.0] * degree
    for v, m in others:
        d = v - pole
        scale = (v / d) ** m
        # (1 + u/d)^(-m) = sum_n C(m+n-1, n) (-1/d)^n u^n
        factor = [scale * math.comb(m + n - 1, n) * (-1.0 / d) ** n for n in range(degree + 1)]
        coeffs = [
            math.fsum(coeffs[i] * factor[n - i] for i in range(n + 1))
            for n in range(degree + 1)
        ]
    return coeffs


def erlang_mixture(rv: RateVector) -> list[tuple[float, int, float]]:
    """Expand a hypoexponential law into signed Erlang components.

    Returns ``(rate, order, weight)`` triples whose weights sum to one; the
    density is the weighted sum of Erlang(order, rate) densities.
    """
    terms = []
    for idx, (a, m) in enumerate(rv.groups):
        others = [g for j, g in enumerate(rv.groups) if j != idx]
        r = _series_coefficients(a, others, m - 1)
        for j in range(1, m + 1):
            terms.append((a, j, a ** (m - j) * r[m - j]))
    return terms


def _min_relative_gap(values: Sequence[float]) -> float:
    ordered = sorted(values)
    gap = math.inf
    for a, b in zip(ordered, ordered[1:]):
        gap = min(gap, (b - a) / max(abs(a), abs(b)))
    return gap


def tail_hypoexp(rv: RatesLike, theta: float) -> float:
    """P(sum of independent exponentials >= theta).

    Any non-positive rate marks the path unstable and yields 1. Nearly
    coincident (but ungrouped) rates, and clusters whose partial-fraction
    weights would cancel badly, are routed to :func:`tail_oracle`.
    """
    rv = as_rate_vector(rv)
    if not rv.stable:
        return 1.0
    if theta <= 0:
        return 1.0
    values = [a for a, _ in rv.groups]
    if len(values) > 1 and _min_relative_gap(values) < NEAR_DEGENERATE_GAP:
        return tail_oracle(rv, theta)
    terms = erlang_mixture(rv)
    if math.fsum(abs(w) for _, _, w in terms) > CONDITION_LIMIT:
        return tail_oracle(rv, theta)
    total = math.fsum(w * erlang_tail(order, rate, theta) for rate, order, w in terms)
    return min(1.0, max(0.0, total))


def tail_oracle(rv: RatesLike, theta: float) -> float:
    """Tail probability from the phase-type form of the delay, by uniformization.

    The delay is the absorption time of a chain that walks through the hops
    in order, with upper-bidiagonal generator ``T`` (``-v_i`` on the diagonal,
    ``v_i`` above it). Writing ``T = q (P - I)`` with ``q = max v_i`` gives

        P(X >= theta) = sum_n Poisson(n; q theta) * (e_1 P^n 1),

    a sum of non-negative terms, so there is no cancellation however close
    the rates are. The series is cut ten standard deviations (plus a margin)
    past the Poisson mean, where the neglected mass is below 1e-20.
    """
    rates = np.asarray(as_rate_vector(rv).rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("tail_oracle requires strictly positive rates")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    if theta == 0:
        return 1.0
    q = float(rates.max())
    mean = q * theta
    stay = 1.0 - rates / q  # diagonal of P
    move = rates / q  # superdiagonal of P (last entry leads to absorption)
    last = int(math.ceil(mean + 10.0 * math.sqrt(mean) + 40.0))
    weights = stats.poisson.pmf(np.arange(last + 1), mean)
    state = [1.0] + [0.0] * (rates.size - 1)
    stay, move = stay.tolist(), move.tolist()
    k = rates.size
    masses = np.empty(last + 1)
    for n in range(last + 1):
        masses[n] = math.fsum(state)
        state = [state[0] * stay[0]] + [state[i] * stay[i] + state[i - 1] * move[i - 1] for i in range(1, k)]
    survival = math.fsum(weights * masses)
    return float(min(1.0, max(0.0, survival)))


def tail_oracle_batch(rates: np.ndarray, theta: float) -> np.ndarray:
    """Row-wise uniformization tail for a ``(batch, K)`` array of positive rates.

    Same series as :func:`tail_oracle`, advanced for all rows at once.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    if np.any(rates <= 0):
        raise ValueError("tail_oracle_batch requires strictly positive rates")
    if theta < 0:
        raise ValueError("theta must be non-negative")
    out = np.ones(rates.shape[0])
    if theta == 0 or rates.shape[0] == 0:
        return out
    q = rates.max(axis=1)
    mean = q * theta
    last = int(math.ceil(np.max(mean + 10.0 * np.sqrt(mean) + 40.0)))
    weights = stats.poisson.pmf(np.arange(last + 1)[None, :], mean[:, None])
    stay = 1.0 - rates / q[:, None]
    move = rates[:, :-1] / q[:, None]
    state = np.zeros_like(rates)
    state[:, 0] = 1.0
    survival = np.zeros(rates.shape[0])
    for n in range(last + 1):
        survival += weights[:, n] * state.sum(axis=1)
        nxt = state * stay
        nxt[:, 1:] += state[:, :-1] * move
        state = nxt
    return np.clip(survival, 0.0, 1.0, out=out)


def tail_hypoexp_batch(rates: np.ndarray, theta: float) -> np.ndarray:
    """Row-wise :func:`tail_hypoexp` for a ``(batch, K)`` array of rates.

    Well-separated rows go through a vectorised distinct-pole formula and
    nearly coincident or badly conditioned rows through
    :func:`tail_oracle_batch`; rows with exact repeats use the scalar path.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    n, k = rates.shape
    out = np.ones(n)
    if theta <= 0:
        return out
    stable = np.all(rates > 0, axis=1)
    if k == 1:
        out[stable] = np.exp(-rates[stable, 0] * theta)
        return out
    srt = np.sort(rates, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gaps = np.diff(srt, axis=1) / np.abs(srt[:, 1:])
    rel_gap = np.min(gaps, axis=1)
    fast = stable & (rel_gap >= NEAR_DEGENERATE_GAP)
    # a gap the grouping keeps apart yet too small for partial fractions
    near = stable & np.any((gaps > GROUP_REL_TOL) & (gaps < NEAR_DEGENERATE_GAP), axis=1)
    if fast.any():
        v = rates[fast]
        diff = v[:, None, :] - v[:, :, None]  # diff[b, i, j] = v_j - v_i
        eye = np.eye(k, dtype=bool)
        ratio = np.where(eye, 1.0, v[:, None, :] / np.where(eye, 1.0, diff))
        weight = np.prod(ratio, axis=2)
        val = np.sum(weight * np.exp(-v * theta), axis=1)
        out[fast] = np.clip(val, 0.0, 1.0)
        near[np.flatnonzero(fast)[np.sum(np.abs(weight), axis=1) > CONDITION_LIMIT]] = True
    if near.any():
        out[near] = tail_oracle_batch(rates[near], theta)
    for i in np.flatnonzero(stable & ~fast & ~near):
        out[i] = tail_hypoexp(rates[i], theta)
    return out
