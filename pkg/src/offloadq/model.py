"""Three-tier offloading model: parameters, arrival rates, and delay tails.

Tasks arrive at each UE as a Poisson stream. A task is offloaded to its edge
server with probability ``p_ue`` and from there on to the cloud with
probability ``p_ec``; every server and link is an M/M/1 queue.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

from .hypoexp import RateVector, group_rates, tail_hypoexp, tail_hypoexp_batch, tail_single


class LinkLoad(str, enum.Enum):
    """Arrival rate charged to the UE<->edge links in the analytic model.

    ``SHARED``: edge-served and cloud-bound tasks both cross the uplink and
    the downlink, so each carries ``M * p_ue * lambda``.

    ``EDGE_ONLY``: the links are charged only the edge-served flow,
    ``M * (1 - p_ec) * p_ue * lambda``, on both the edge and the cloud route.
    """

    SHARED = "shared"
    EDGE_ONLY = "edge-only"


_RATE_FIELDS = ("mu_c", "mu_e", "mu_u", "mu_ue", "mu_ec", "mu_ce", "mu_eu", "lambda_ext", "theta")


@dataclass(frozen=True)
class SystemParams:
    """Rates (tasks per time unit), fan-outs and the delay deadline."""

    mu_c: float
    mu_e: float
    mu_u: float
    mu_ue: float
    mu_ec: float
    mu_ce: float
    mu_eu: float
    lambda_ext: float
    m: int
    n: int
    theta: float
    link_load: LinkLoad = LinkLoad.SHARED

    def __post_init__(self) -> None:
        for name in _RATE_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise TypeError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a finite positive number, got {value!r}")
        for name in ("m", "n"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        object.__setattr__(self, "link_load", LinkLoad(self.link_load))

    def replace(self, **changes) -> "SystemParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return SystemParams(**values)


def default_params(**overrides) -> SystemParams:
    """Baseline scenario: lambda=2, M=N=5, theta=1.2.

    Without offloading the UE is overloaded, and sending everything up
    overloads the edge and cloud, so the optimum is interior.
    """
    base = SystemParams(
        mu_c=25.0, mu_e=8.0, mu_u=1.5,
        mu_ue=12.0, mu_ec=22.0, mu_ce=21.0, mu_eu=11.0,
        lambda_ext=2.0, m=5, n=5, theta=1.2,
    )
    return base.replace(**overrides) if overrides else base


@dataclass(frozen=True)
class OffloadingPolicy:
    p_ue: float
    p_ec: float

    def __post_init__(self) -> None:
        for name in ("p_ue", "p_ec"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")

    def tier_weights(self) -> tuple[float, float, float]:
        """Fractions of tasks served by the UE, edge and cloud."""
        return (1.0 - self.p_ue, (1.0 - self.p_ec) * self.p_ue, self.p_ue * self.p_ec)


@dataclass(frozen=True)
class ArrivalRates:
    """Arrival rate at each queue on one UE -> edge -> cloud branch."""

    lam_u: float
    lam_ue: float
    lam_e: float
    lam_eu: float
    lam_ec: float
    lam_c: float
    lam_ce: float


def derive_arrival_rates(params: SystemParams, policy: OffloadingPolicy) -> ArrivalRates:
    lam = params.lambda_ext
    lam_u = (1.0 - policy.p_ue) * lam
    lam_e = params.m * (1.0 - policy.p_ec) * policy.p_ue * lam
    lam_c = params.n * params.m * policy.p_ec * policy.p_ue * lam
    if params.link_load is LinkLoad.SHARED:
        lam_link = params.m * policy.p_ue * lam
    else:
        lam_link = lam_e
    return ArrivalRates(
        lam_u=lam_u, lam_ue=lam_link, lam_e=lam_e, lam_eu=lam_link,
        lam_ec=lam_c, lam_c=lam_c, lam_ce=lam_c,
    )


def stability_margin(mu: float, lam: float) -> float:
    """``mu - lam``; a value <= 0 means the queue is unstable."""
    return mu - lam


def path_rates(params: SystemParams, rates: ArrivalRates) -> tuple[list[float], list[float], list[float]]:
    """Sojourn parameters along the UE, edge and cloud routes, in hop order."""
    v_u = [stability_margin(params.mu_u, rates.lam_u)]
    up = stability_margin(params.mu_ue, rates.lam_ue)
    down = stability_margin(params.mu_eu, rates.lam_eu)
    v_e = [up, stability_margin(params.mu_e, rates.lam_e), down]
    v_c = [
        up,
        stability_margin(params.mu_ec, rates.lam_ec),
        stability_margin(params.mu_c, rates.lam_c),
        stability_margin(params.mu_ce, rates.lam_ce),
        down,
    ]
    return v_u, v_e, v_c


@dataclass(frozen=True)
class TailResult:
    policy: OffloadingPolicy
    p_u: float
    p_e: float
    p_c: float
    p_overall: float
    case_labels: tuple[str, str, str]
    stable: tuple[bool, bool, bool]
    mean_delays: tuple[float, float, float]

    @property
    def tiers(self) -> tuple[float, float, float]:
        return (self.p_u, self.p_e, self.p_c)


def _label(rv: RateVector) -> str:
    return rv.label if rv.stable else "unstable"


def _mean_delay(rates: list[float]) -> float:
    if min(rates) <= 0:
        return math.inf
    return math.fsum(1.0 / v for v in rates)


def mixture(policy: OffloadingPolicy, p_u: float, p_e: float, p_c: float) -> float:
    w_u, w_e, w_c = policy.tier_weights()
    return w_u * p_u + w_e * p_e + w_c * p_c


def tier_tails(params: SystemParams, policy: OffloadingPolicy) -> TailResult:
    """Deadline-violation probability per serving tier and overall."""
    v_u, v_e, v_c = path_rates(params, derive_arrival_rates(params, policy))
    rv_u, rv_e, rv_c = group_rates(v_u), group_rates(v_e), group_rates(v_c)
    p_u = tail_single(v_u[0], params.theta)
    p_e = tail_hypoexp(rv_e, params.theta)
    p_c = tail_hypoexp(rv_c, params.theta)
    return TailResult(
        policy=policy,
        p_u=p_u,
        p_e=p_e,
        p_c=p_c,
        p_overall=min(1.0, mixture(policy, p_u, p_e, p_c)),
        case_labels=(_label(rv_u), _label(rv_e), _label(rv_c)),
        stable=(rv_u.stable, rv_e.stable, rv_c.stable),
        mean_delays=(_mean_delay(v_u), _mean_delay(v_e), _mean_delay(v_c)),
    )


def _policy_arrays(p_ue, p_ec) -> tuple[np.ndarray, np.ndarray]:
    p_ue, p_ec = np.broadcast_arrays(np.asarray(p_ue, dtype=float), np.asarray(p_ec, dtype=float))
    return p_ue.ravel(), p_ec.ravel()


def tier_rate_arrays(params: SystemParams, p_ue, p_ec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hop parameters for many policies: arrays of shape (B, 1), (B, 3), (B, 5)."""
    pu, pc = _policy_arrays(p_ue, p_ec)
    lam = params.lambda_ext
    lam_u = (1.0 - pu) * lam
    lam_e = params.m * (1.0 - pc) * pu * lam
    lam_c = params.n * params.m * pc * pu * lam
    if params.link_load is LinkLoad.SHARED:
        lam_link = params.m * pu * lam
    else:
        lam_link = lam_e
    up = params.mu_ue - lam_link
    down = params.mu_eu - lam_link
    v_u = (params.mu_u - lam_u)[:, None]
    v_e = np.column_stack([up, params.mu_e - lam_e, down])
    v_c = np.column_stack([up, params.mu_ec - lam_c, params.mu_c - lam_c, params.mu_ce - lam_c, down])
    return v_u, v_e, v_c


def tier_weight_arrays(p_ue, p_ec) -> np.ndarray:
    pu, pc = _policy_arrays(p_ue, p_ec)
    return np.column_stack([1.0 - pu, (1.0 - pc) * pu, pu * pc])


def _tails(params: SystemParams, v_u, v_e, v_c) -> np.ndarray:
    return np.column_stack([
        tail_hypoexp_batch(v_u, params.theta),
        tail_hypoexp_batch(v_e, params.theta),
        tail_hypoexp_batch(v_c, params.theta),
    ])


def overall_violation(params: SystemParams, p_ue, p_ec) -> np.ndarray:
    """Vectorised overall violation probability over arrays of policies."""
    shape = np.broadcast_shapes(np.shape(p_ue), np.shape(p_ec))
    tails = _tails(params, *tier_rate_arrays(params, p_ue, p_ec))
    total = np.sum(tier_weight_arrays(p_ue, p_ec) * tails, axis=1)
    return np.minimum(total, 1.0).reshape(shape)


def violation_bounds(params: SystemParams, a: tuple, b: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Bounds on the overall violation probability along policy segments.

    ``a`` and ``b`` are ``(p_ue, p_ec)`` array pairs; each segment from
    ``a[i]`` to ``b[i]`` must vary a single coordinate. Along such a segment
    every hop rate and every tier weight is linear, and a tier's survival
    probability decreases in each of its hop rates, so evaluating the tails
    at the elementwise extreme rates brackets every interior point.
    """
    ra = tier_rate_arrays(params, *a)
    rb = tier_rate_arrays(params, *b)
    low_tails = _tails(params, *(np.maximum(x, y) for x, y in zip(ra, rb)))
    high_tails = _tails(params, *(np.minimum(x, y) for x, y in zip(ra, rb)))
    wa, wb = tier_weight_arrays(*a), tier_weight_arrays(*b)
    lo = np.sum(np.minimum(wa, wb) * low_tails, axis=1)
    hi = np.sum(np.maximum(wa, wb) * high_tails, axis=1)
    return np.minimum(lo, 1.0), np.minimum(hi, 1.0)
