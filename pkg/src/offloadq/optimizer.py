"""Offloading-probability search.

:func:`sgs_optimize` alternates one-dimensional sub-gradient searches over
``p_ec`` and ``p_ue``. Each search probes ``current +/- step``, moves while
the objective improves, and restarts with ``step = initial_step / sqrt(k)``
until the step drops below ``step_floor``. :func:`grid_search` is the
exhaustive reference it is checked against.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Union

import numpy as np

from .model import OffloadingPolicy, SystemParams, overall_violation, tier_tails, violation_bounds

logger = logging.getLogger(__name__)

Coordinate = Literal["p_ue", "p_ec"]
Objective = Callable[[np.ndarray], np.ndarray]

_EXACT_SPAN = 256
_SPLIT = 64
# slack for rounding in the bracketing bounds
_BOUND_MARGIN = 1e-12


@dataclass(frozen=True)
class SgsConfig:
    initial_p: float = 0.5
    initial_step: float = 0.25
    step_floor: float = 1e-4
    objective_eps: float = 1e-6
    outer_eps: float = 1e-4
    max_outer_iters: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.initial_p <= 1.0:
            raise ValueError("initial_p must lie in [0, 1]")
        for name in ("initial_step", "step_floor", "objective_eps", "outer_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.initial_step <= self.step_floor:
            raise ValueError("initial_step must exceed step_floor")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")

    def step(self, k):
        return self.initial_step / np.sqrt(k)

    def last_restart(self) -> int:
        """Largest k whose step is still at least ``step_floor``."""
        k = int((self.initial_step / self.step_floor) ** 2)
        while self.step(k + 1) >= self.step_floor:
            k += 1
        while k > 1 and self.step(k) < self.step_floor:
            k -= 1
        return k


@dataclass
class OptResult:
    policy: OffloadingPolicy
    objective: float
    outer_iterations: int = 0
    converged: bool = True
    evaluations: int = 0
    trace: Optional[list[tuple[OffloadingPolicy, float]]] = field(default=None, repr=False)


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


class Slice:
    """A one-dimensional objective on [0, 1].

    ``values`` maps an array of coordinates to objective values. ``bounds``,
    when given, maps two coordinate arrays to lower/upper bounds of the
    objective over each interval between them.
    """

    def __init__(self, values: Objective, bounds: Optional[Callable] = None):
        self._values = values
        self._bounds = bounds
        self.calls = 0

    @property
    def has_bounds(self) -> bool:
        return self._bounds is not None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.calls += x.size
        return np.asarray(self._values(x), dtype=float)

    def one(self, x: float) -> float:
        return float(self(np.array([x]))[0])

    def bounds(self, xa: np.ndarray, xb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self.calls += 2 * xa.size
        return self._bounds(xa, xb)


def model_slice(params: SystemParams, fixed: OffloadingPolicy, which: Coordinate) -> Slice:
    if which == "p_ec":
        def at(x):
            return (np.full_like(x, fixed.p_ue), x)
        return Slice(
            lambda x: overall_violation(params, fixed.p_ue, x),
            lambda a, b: violation_bounds(params, at(a), at(b)),
        )
    if which == "p_ue":
        def at(x):
            return (x, np.full_like(x, fixed.p_ec))
        return Slice(
            lambda x: overall_violation(params, x, fixed.p_ec),
            lambda a, b: violation_bounds(params, at(a), at(b)),
        )
    raise ValueError(f"unknown coordinate {which!r}")


def line_search(
    f: Union[Slice, Objective], start: float, cfg: SgsConfig, exhaustive: bool = False
) -> tuple[float, int]:
    """Minimise a one-dimensional objective on [0, 1].

    Returns the final coordinate and the number of objective evaluations.

    Restart ``k`` probes ``current +/- step_k`` until the change in the
    objective falls under ``objective_eps`` or both neighbours are worse,
    then moves on to ``k + 1``. Restarts that do not move the current point
    only flip the probe direction, so runs of them are replayed from
    vectorised evaluations, or skipped wholesale where the slice's bounds
    prove no probe in the run can improve. ``exhaustive=True`` runs every
    restart one at a time; both give the same result.
    """
    obj = f if isinstance(f, Slice) else Slice(f)
    eps = cfg.objective_eps
    k_last = cfg.last_restart()
    p = _clamp(start)
    f_p = obj.one(p)
    direction = 1.0
    k = 1
    while k <= k_last:
        if exhaustive:
            direction = _inward(p, direction)
        else:
            hit = _next_move(obj, p, f_p, direction, k, k_last, cfg)
            if hit is None:
                break
            k, direction = hit
        step = float(cfg.step(k))
        cand = _clamp(p + direction * step)
        p, f_p, direction = _probe(obj, p, f_p, cand, obj.one(cand), step, eps)
        k += 1
    return p, obj.calls


def _inward(p: float, direction: float) -> float:
    # boundary lock: a probe past the boundary would land on p itself
    if (direction > 0 and p >= 1.0) or (direction < 0 and p <= 0.0):
        return -direction
    return direction


_STAG, _WORSE, _BETTER, _UNKNOWN = 0, 1, 2, 3


def _replay(direction: float, first: int, second: int) -> Optional[float]:
    """Direction after a restart that does not move, or None if it moves."""
    if first == _STAG:
        return direction
    if first == _WORSE and second in (_STAG, _WORSE):
        return -direction
    return None


def _next_move(obj: Slice, p, f_p, direction, k, k_last, cfg):
    """First restart ``>= k`` that moves the current point, with its direction.

    Returns ``(k, direction)`` or None when no remaining restart moves.
    """
    eps = cfg.objective_eps
    at_boundary = p <= 0.0 or p >= 1.0
    state = {"d": _inward(p, direction)}

    def exact(a: int, b: int):
        ks = np.arange(a, b + 1, dtype=float)
        steps = cfg.step(ks)
        sides = {}
        for sign in (1.0, -1.0):
            diff = obj(np.clip(p + sign * steps, 0.0, 1.0)) - f_p
            sides[sign] = np.where(np.abs(diff) < eps, _STAG, np.where(diff > 0, _WORSE, _BETTER))
        d = state["d"]
        for i in range(ks.size):
            first = sides[d][i]
            second = _STAG if at_boundary else sides[-d][i]
            nxt = _replay(d, first, second)
            if nxt is None:
                return int(ks[i]), d
            d = d if at_boundary else nxt
        state["d"] = d
        return None

    def classify(lo, hi):
        limit = eps - _BOUND_MARGIN
        cls = np.full(lo.shape, _UNKNOWN)
        cls[(hi - f_p < limit) & (f_p - lo < limit)] = _STAG
        cls[lo - f_p >= eps + _BOUND_MARGIN] = _WORSE
        return cls

    def bounded(a: int, b: int):
        if b - a < _EXACT_SPAN:
            return exact(a, b)
        # pieces of roughly equal step width
        s_edges = np.linspace(cfg.step(a), cfg.step(b), _SPLIT + 1)[1:-1]
        cuts = np.unique(np.ceil((cfg.initial_step / s_edges) ** 2).astype(np.int64))
        cuts = cuts[(cuts > a) & (cuts <= b)]
        if cuts.size == 0:
            cuts = np.array([(a + b + 1) // 2])
        starts = np.concatenate([[a], cuts])
        ends = np.concatenate([cuts - 1, [b]])
        s_hi, s_lo = cfg.step(starts.astype(float)), cfg.step(ends.astype(float))
        classes = {}
        for sign in ((state["d"],) if at_boundary else (1.0, -1.0)):
            lo, hi = obj.bounds(np.clip(p + sign * s_hi, 0.0, 1.0), np.clip(p + sign * s_lo, 0.0, 1.0))
            classes[sign] = classify(lo, hi)
        for i in range(starts.size):
            d = state["d"]
            first = classes[d][i]
            second = _STAG if at_boundary else classes[-d][i]
            nxt = _replay(d, first, second)
            if nxt is None:
                found = bounded(int(starts[i]), int(ends[i]))
                if found is not None:
                    return found
                continue
            if at_boundary or first == _STAG:
                continue
            count = int(ends[i] - starts[i] + 1)
            if second == _STAG:
                state["d"] = -d
            elif count % 2:
                state["d"] = -d
        return None

    def chunked(a: int, b: int):
        size = 16
        while a <= b:
            hi = min(a + size - 1, b)
            found = exact(a, hi)
            if found is not None:
                return found
            a = hi + 1
            size = min(size * 2, 1 << 18)
        return None

    return bounded(k, k_last) if obj.has_bounds else chunked(k, k_last)


def _probe(
    obj: Slice, p: float, f_p: float, cand: float, f_c: float, step: float, eps: float
) -> tuple[float, float, float]:
    """One probing pass at a fixed step size.

    Stops on stagnation, or once both neighbours of ``p`` are worse.
    """
    flipped = False
    while True:
        if abs(f_c - f_p) < eps:
            break
        if f_p < f_c:
            if flipped:
                break
            flipped = True
            cand = _clamp(p - step) if p < cand else _clamp(p + step)
        else:
            prev, p, f_p = p, cand, f_c
            flipped = False
            cand = _clamp(p - step) if p < prev else _clamp(p + step)
        f_c = obj.one(cand)
    direction = 1.0 if cand >= p else -1.0
    return p, f_p, direction


def coordinate_search(
    params: SystemParams, fixed: OffloadingPolicy, which: Coordinate, cfg: SgsConfig = SgsConfig()
) -> float:
    """Optimise one coordinate of ``fixed`` holding the other constant."""
    value, _ = line_search(model_slice(params, fixed, which), getattr(fixed, which), cfg)
    return value


def sgs_optimize(
    params: SystemParams,
    cfg: SgsConfig = SgsConfig(),
    start: Optional[OffloadingPolicy] = None,
    keep_trace: bool = False,
) -> OptResult:
    """Alternate p_ec / p_ue searches until neither coordinate moves."""
    policy = start or OffloadingPolicy(cfg.initial_p, cfg.initial_p)
    trace: list[tuple[OffloadingPolicy, float]] = []
    evaluations = 0
    converged = False
    iters = 0
    best = (tier_tails(params, policy).p_overall, policy)
    while iters < cfg.max_outer_iters:
        iters += 1
        old = policy
        p_ec, n_ec = line_search(model_slice(params, policy, "p_ec"), policy.p_ec, cfg)
        policy = OffloadingPolicy(policy.p_ue, p_ec)
        p_ue, n_ue = line_search(model_slice(params, policy, "p_ue"), policy.p_ue, cfg)
        policy = OffloadingPolicy(p_ue, policy.p_ec)
        evaluations += n_ec + n_ue
        value = tier_tails(params, policy).p_overall
        if value < best[0]:
            best = (value, policy)
        if keep_trace:
            trace.append((policy, value))
        logger.debug("sgs outer %d: %s -> %.9f", iters, policy, value)
        if abs(old.p_ue - policy.p_ue) < cfg.outer_eps and abs(old.p_ec - policy.p_ec) < cfg.outer_eps:
            converged = True
            break
    if not converged:
        logger.warning("sgs did not converge in %d outer iterations", cfg.max_outer_iters)
        policy = best[1]
    return OptResult(
        policy=policy,
        objective=tier_tails(params, policy).p_overall,
        outer_iterations=iters,
        converged=converged,
        evaluations=evaluations,
        trace=trace if keep_trace else None,
    )


def lattice(resolution: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Points ``lo, lo + resolution, ..., hi`` (``hi`` included when on-grid)."""
    if not 0 < resolution <= 0.5:
        raise ValueError("resolution must lie in (0, 0.5]")
    count = int(math.floor((hi - lo) / resolution + 1e-9)) + 1
    return np.round(lo + resolution * np.arange(count), 12)


def grid_surface(
    params: SystemParams, resolution: float, lo: float = 0.0, hi: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Objective on the lattice; rows index ``p_ue``, columns ``p_ec``."""
    axis = lattice(resolution, lo, hi)
    pu, pc = np.meshgrid(axis, axis, indexing="ij")
    return pu, pc, overall_violation(params, pu, pc)


def grid_search(
    params: SystemParams, resolution: float, lo: float = 0.0, hi: float = 1.0
) -> OptResult:
    """Exhaustive lattice minimum; ties go to smaller p_ue, then smaller p_ec."""
    pu, pc, values = grid_surface(params, resolution, lo, hi)
    idx = int(np.argmin(values.ravel()))  # first hit in (p_ue, p_ec) order
    policy = OffloadingPolicy(float(pu.ravel()[idx]), float(pc.ravel()[idx]))
    return OptResult(
        policy=policy,
        objective=tier_tails(params, policy).p_overall,
        evaluations=values.size,
    )
