"""Monte Carlo and discrete-event validation of the delay model.

Two independent checks of the analytics:

* :func:`mc_sample_tier` draws path delays directly as sums of independent
  exponentials, i.e. under the model's own assumptions.
* :func:`des_run` simulates the queueing network itself: Poisson arrivals at
  every UE, routes drawn once per task, and FIFO single-server queues with
  exponential service at every hop.

Tasks that arrive before the horizon are followed until they leave the
network, so every measured sojourn is exact rather than censored.
"""

from __future__ import annotations

import enum
import heapq
import math
import statistics
import zlib
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .hypoexp import RatesLike, as_rate_vector
from .model import OffloadingPolicy, SystemParams, derive_arrival_rates


class LinkModel(str, enum.Enum):
    """Topology of the UE<->edge links in the simulated network.

    ``PAPER_RATES``: edge-bound and cloud-bound tasks cross disjoint logical
    uplink and downlink queues. Each is sized so that its sojourn parameter
    ``mu - lambda`` equals the analytic value for that hop, which makes every
    route overtake-free and the per-hop sojourns independent.

    ``PHYSICAL_SHARING``: both flows share one uplink queue (rate ``mu_ue``)
    and one downlink queue (rate ``mu_eu``) per edge server.
    """

    PAPER_RATES = "paper-rates"
    PHYSICAL_SHARING = "physical-sharing"


TIERS = ("u", "e", "c")

# Queue kinds in topological order; the index doubles as the tie-break priority.
QUEUE_KINDS = ("ue", "up", "up_c", "edge", "ec", "cloud", "ce", "down", "down_c")
_PRIORITY = {k: i for i, k in enumerate(QUEUE_KINDS)}

_ROUTES = {
    "physical-sharing": (("ue",), ("up", "edge", "down"), ("up", "ec", "cloud", "ce", "down")),
    "paper-rates": (("ue",), ("up", "edge", "down"), ("up_c", "ec", "cloud", "ce", "down_c")),
}


class Estimate(NamedTuple):
    mean: float
    half_width: float


def replication_stats(values: Sequence[float], confidence: float = 0.95) -> Estimate:
    """Sample mean and Student-t confidence half-width."""
    x = [float(v) for v in values]
    if len(x) < 2:
        raise ValueError("replication_stats needs at least 2 values")
    # statistics works in exact arithmetic, so a constant sample has zero spread
    se = statistics.stdev(x) / math.sqrt(len(x))
    t = stats.t.ppf(0.5 + confidence / 2.0, df=len(x) - 1)
    return Estimate(statistics.fmean(x), float(t * se))


def mc_sample_tier(rv: RatesLike, theta: float, samples: int, seed: int) -> Estimate:
    """Exceedance frequency of a sum of exponentials, with a 95% Wald half-width.

    With a single sample the half-width is 1 so the interval covers [0, 1].
    """
    rates = np.asarray(as_rate_vector(rv).rates, dtype=float)
    if np.any(rates <= 0):
        raise ValueError("mc_sample_tier requires strictly positive rates")
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 250_000
    for start in range(0, samples, chunk):
        size = min(chunk, samples - start)
        total = rng.exponential(1.0 / rates, size=(size, rates.size)).sum(axis=1)
        hits += int(np.count_nonzero(total >= theta))
    p = hits / samples
    if samples < 2:
        return Estimate(p, 1.0)
    return Estimate(p, 1.959963984540054 * math.sqrt(p * (1.0 - p) / samples))


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 10_000.0
    replications: int = 30
    seed: int = 0
    warmup: float = 0.0
    link_model: LinkModel = LinkModel.PAPER_RATES
    engine: str = "vectorized"
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "link_model", LinkModel(self.link_model))
        if not (self.horizon > self.warmup >= 0):
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.engine not in ("vectorized", "event"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class QueueStats:
    """Per-queue measurements over the observation window."""

    arrival_rate: float
    mean_sojourn: float
    mean_in_system: float
    utilization: float
    offered_load: float


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    tasks_generated: int
    tasks_completed: int
    tasks_in_system: int
    tier_counts: tuple[int, int, int]
    tier_violations: tuple[int, int, int]
    tier_delay_sums: tuple[float, float, float]
    queues: dict[str, QueueStats]

    @property
    def violation_rate(self) -> float:
        n = sum(self.tier_counts)
        return sum(self.tier_violations) / n if n else math.nan


@dataclass(frozen=True)
class SimReport:
    violation_prob: Estimate
    per_tier_violation: tuple[float, float, float]
    per_tier_mean_delay: tuple[float, float, float]
    tasks_generated: int
    tasks_completed: int
    tasks_in_system: int
    per_queue_utilization: dict[str, float]
    saturated_queues: tuple[str, ...]
    replications: tuple[ReplicationResult, ...] = field(repr=False)

    @property
    def saturated(self) -> bool:
        return bool(self.saturated_queues)


# ----------------------------------------------------------------- network


@dataclass(frozen=True)
class _Network:
    """Service rates and offered loads of every queue kind."""

    rates: dict[str, float]
    loads: dict[str, float]
    routes: tuple[tuple[str, ...], ...]

    def instances(self, kind: str, params: SystemParams) -> int:
        if kind == "ue":
            return params.m * params.n
        if kind in ("ec", "cloud", "ce"):
            return 1
        return params.n


def _network(params: SystemParams, policy: OffloadingPolicy, link_model: LinkModel) -> _Network:
    lam, m = params.lambda_ext, params.m
    pu, pc = policy.p_ue, policy.p_ec
    rates_in = derive_arrival_rates(params, policy)
    rates = {
        "ue": params.mu_u, "edge": params.mu_e, "ec": params.mu_ec,
        "cloud": params.mu_c, "ce": params.mu_ce,
    }
    arrivals = {
        "ue": rates_in.lam_u, "edge": rates_in.lam_e,
        "ec": rates_in.lam_ec, "cloud": rates_in.lam_c, "ce": rates_in.lam_ce,
    }
    if link_model is LinkModel.PHYSICAL_SHARING:
        rates.update(up=params.mu_ue, down=params.mu_eu)
        arrivals.update(up=m * pu * lam, down=m * pu * lam)
    else:
        flows = {"": m * (1.0 - pc) * pu * lam, "_c": m * pc * pu * lam}
        for kind, mu, lam_link in (("up", params.mu_ue, rates_in.lam_ue), ("down", params.mu_eu, rates_in.lam_eu)):
            for suffix, lam_flow in flows.items():
                # floor keeps an analytically unstable link simulable (and saturated)
                rates[kind + suffix] = max(mu - lam_link + lam_flow, 1e-9 * mu)
                arrivals[kind + suffix] = lam_flow
    loads = {k: arrivals[k] / rates[k] for k in rates}
    return _Network(rates, loads, _ROUTES[link_model.value])


def _stream(seed: int, rep: int, name: str) -> np.random.Generator:
    """Independent generator for one named process in one replication."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, zlib.crc32(name.encode()))))


@dataclass
class _Tasks:
    arrival: np.ndarray  # external arrival time, sorted
    ue: np.ndarray
    route: np.ndarray  # 0 local, 1 edge, 2 cloud
    edge: np.ndarray


def _generate_tasks(params: SystemParams, policy: OffloadingPolicy, horizon: float, seed: int, rep: int) -> _Tasks:
    times, ues, routes = [], [], []
    lam = params.lambda_ext
    for u in range(params.m * params.n):
        rng = _stream(seed, rep, f"arrivals/{u}")
        expected = lam * horizon
        gaps = rng.exponential(1.0 / lam, size=int(expected + 6 * math.sqrt(expected) + 16))
        t = np.cumsum(gaps)
        while t[-1] < horizon:
            more = np.cumsum(rng.exponential(1.0 / lam, size=gaps.size)) + t[-1]
            t = np.concatenate([t, more])
        t = t[t < horizon]
        draws = _stream(seed, rep, f"routes/{u}").random((t.size, 2))
        offload = draws[:, 0] < policy.p_ue
        cloud = offload & (draws[:, 1] < policy.p_ec)
        times.append(t)
        ues.append(np.full(t.size, u))
        routes.append(offload.astype(np.int8) + cloud.astype(np.int8))
    arrival = np.concatenate(times)
    ue = np.concatenate(ues)
    route = np.concatenate(routes)
    order = np.lexsort((ue, arrival))
    ue = ue[order]
    return _Tasks(arrival[order], ue, route[order], ue // params.m)


def _queue_members(tasks: _Tasks, routes, kind: str, inst: int):
    """(task indices, hop index) pairs that visit queue ``kind``/``inst``."""
    for r, path in enumerate(routes):
        if kind not in path:
            continue
        hop = path.index(kind)
        mask = tasks.route == r
        if kind == "ue":
            mask &= tasks.ue == inst
        elif kind not in ("ec", "cloud", "ce"):
            mask &= tasks.edge == inst
        yield np.flatnonzero(mask), hop, (path[hop - 1] if hop else None)


def _lindley(arrival: np.ndarray, service: np.ndarray) -> np.ndarray:
    """FIFO departure times: D_i = max(A_i, D_{i-1}) + S_i, in closed form."""
    c = np.cumsum(service)
    c_prev = np.concatenate([[0.0], c[:-1]])
    return c + np.maximum.accumulate(arrival - c_prev)


def _simulate_vectorized(params, net, tasks, seed, rep):
    """Departure time of every task at every hop, queue by queue."""
    dep = np.full((tasks.arrival.size, 5), np.nan)
    visits = {}
    for kind in QUEUE_KINDS:
        if kind not in net.rates:
            continue
        for inst in range(net.instances(kind, params)):
            idx, hops, prio = [], [], []
            for members, hop, prev in _queue_members(tasks, net.routes, kind, inst):
                idx.append(members)
                hops.append(np.full(members.size, hop))
                prio.append(np.full(members.size, -1 if prev is None else _PRIORITY[prev]))
            idx = np.concatenate(idx)
            hops = np.concatenate(hops)
            prio = np.concatenate(prio)
            arr = np.where(hops == 0, tasks.arrival[idx], dep[idx, np.maximum(hops - 1, 0)])
            order = np.lexsort((idx, prio, arr))
            idx, hops, arr = idx[order], hops[order], arr[order]
            service = _stream(seed, rep, f"service/{kind}/{inst}").exponential(1.0 / net.rates[kind], size=idx.size)
            d = _lindley(arr, service)
            dep[idx, hops] = d
            visits[f"{kind}/{inst}"] = (arr, d, service)
    return dep, visits


def _simulate_events(params, net, tasks, seed, rep):
    """Reference event-list engine; slow but shares streams with the vectorized one."""
    dep = np.full((tasks.arrival.size, 5), np.nan)
    routes = [tuple(f"{k}/{_instance(k, tasks, i)}" for k in net.routes[tasks.route[i]]) for i in range(tasks.arrival.size)]
    streams, queues, busy, log = {}, {}, {}, {}
    heap = []
    seq = 0

    def push(time, prio, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (time, prio, seq, kind, payload))
        seq += 1

    for i in range(tasks.arrival.size):
        push(tasks.arrival[i], -1, "arrive", (i, 0))

    def start(name, now):
        i, hop, arrived = queues[name].popleft()
        kind = name.split("/")[0]
        if name not in streams:
            streams[name] = _stream(seed, rep, f"service/{name}")
        s = streams[name].exponential(1.0 / net.rates[kind])
        busy[name] = True
        log[name].append((arrived, now + s, s))
        push(now + s, _PRIORITY[kind], "depart", (i, hop, name))

    while heap:
        now, _, _, what, payload = heapq.heappop(heap)
        if what == "arrive":
            i, hop = payload
            name = routes[i][hop]
            queues.setdefault(name, deque()).append((i, hop, now))
            log.setdefault(name, [])
            if not busy.get(name):
                start(name, now)
        else:
            i, hop, name = payload
            dep[i, hop] = now
            busy[name] = False
            if hop + 1 < len(routes[i]):
                push(now, _PRIORITY[name.split("/")[0]], "arrive", (i, hop + 1))
            if queues[name]:
                start(name, now)
    visits = {}
    for name, rows in log.items():
        a, d, s = (np.array(col) for col in zip(*rows))
        visits[name] = (a, d, s)
    return dep, visits


def _instance(kind: str, tasks: _Tasks, i: int) -> int:
    if kind == "ue":
        return int(tasks.ue[i])
    if kind in ("ec", "cloud", "ce"):
        return 0
    return int(tasks.edge[i])


def _overlap(start: np.ndarray, end: np.ndarray, lo: float, hi: float) -> float:
    return float(np.sum(np.clip(np.minimum(end, hi) - np.maximum(start, lo), 0.0, None)))


def _replicate(params: SystemParams, policy: OffloadingPolicy, cfg: SimConfig, rep: int) -> ReplicationResult:
    net = _network(params, policy, cfg.link_model)
    tasks = _generate_tasks(params, policy, cfg.horizon, cfg.seed, rep)
    engine = _simulate_vectorized if cfg.engine == "vectorized" else _simulate_events
    dep, visits = engine(params, net, tasks, cfg.seed, rep)

    hops = np.array([len(r) for r in net.routes])[tasks.route]
    done = dep[np.arange(tasks.arrival.size), hops - 1]
    sojourn = done - tasks.arrival
    observed = tasks.arrival >= cfg.warmup
    counts, viol, delays = [], [], []
    for r in range(3):
        sel = observed & (tasks.route == r)
        counts.append(int(np.count_nonzero(sel)))
        viol.append(int(np.count_nonzero(sojourn[sel] >= params.theta)))
        delays.append(float(np.sum(sojourn[sel])))

    window = cfg.horizon - cfg.warmup
    queues = {}
    for name, (a, d, s) in visits.items():
        inside = (a >= cfg.warmup) & (a < cfg.horizon)
        queues[name] = QueueStats(
            arrival_rate=float(np.count_nonzero(inside)) / window,
            mean_sojourn=float(np.mean(d[inside] - a[inside])) if inside.any() else math.nan,
            mean_in_system=_overlap(a, d, cfg.warmup, cfg.horizon) / window,
            utilization=_overlap(d - s, d, cfg.warmup, cfg.horizon) / window,
            offered_load=net.loads[name.split("/")[0]],
        )
    completed = int(np.count_nonzero(done <= cfg.horizon))
    return ReplicationResult(
        index=rep,
        tasks_generated=int(tasks.arrival.size),
        tasks_completed=completed,
        tasks_in_system=int(tasks.arrival.size) - completed,
        tier_counts=tuple(counts),
        tier_violations=tuple(viol),
        tier_delay_sums=tuple(delays),
        queues=queues,
    )


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den else math.nan


def des_run(params: SystemParams, policy: OffloadingPolicy, cfg: SimConfig = SimConfig()) -> SimReport:
    """Simulate the offloading network and aggregate over replications.

    Point estimates pool all observed tasks, so the overall rate is exactly
    the task-weighted mixture of the tier rates; the confidence half-width
    comes from the spread of the per-replication rates.
    """
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_replicate, *zip(*[(params, policy, cfg, r) for r in range(cfg.replications)])))
    else:
        results = [_replicate(params, policy, cfg, r) for r in range(cfg.replications)]
    results.sort(key=lambda r: r.index)

    counts = np.sum([r.tier_counts for r in results], axis=0)
    viol = np.sum([r.tier_violations for r in results], axis=0)
    delay = np.sum([r.tier_delay_sums for r in results], axis=0)
    pooled = _safe_ratio(float(viol.sum()), float(counts.sum()))
    per_rep = [r.violation_rate for r in results]
    if len(per_rep) >= 2 and not any(math.isnan(v) for v in per_rep):
        half = replication_stats(per_rep).half_width
    else:
        half = math.nan
    names = sorted(results[0].queues)
    util = {q: float(np.mean([r.queues[q].utilization for r in results])) for q in names}
    saturated = tuple(q for q in names if results[0].queues[q].offered_load >= 1.0)
    return SimReport(
        violation_prob=Estimate(pooled, half),
        per_tier_violation=tuple(_safe_ratio(float(v), float(c)) for v, c in zip(viol, counts)),
        per_tier_mean_delay=tuple(_safe_ratio(float(d), float(c)) for d, c in zip(delay, counts)),
        tasks_generated=sum(r.tasks_generated for r in results),
        tasks_completed=sum(r.tasks_completed for r in results),
        tasks_in_system=sum(r.tasks_in_system for r in results),
        per_queue_utilization=util,
        saturated_queues=saturated,
        replications=tuple(results),
    )
