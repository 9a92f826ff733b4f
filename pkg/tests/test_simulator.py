import math

import numpy as np
import pytest
from scipy import stats

from offloadq.model import OffloadingPolicy, default_params, mixture, tier_tails
from offloadq.simulator import LinkModel, SimConfig, des_run, mc_sample_tier, replication_stats

SHORT = SimConfig(horizon=2000.0, replications=3, seed=5)


class TestReplicationStats:
    def test_constant(self):
        est = replication_stats([0.2, 0.2, 0.2])
        assert est.mean == pytest.approx(0.2) and est.half_width == 0.0

    def test_two_values(self):
        est = replication_stats([0.1, 0.3])
        se = np.std([0.1, 0.3], ddof=1) / math.sqrt(2)
        assert est.mean == pytest.approx(0.2)
        assert est.half_width == pytest.approx(12.706204736 * se, rel=1e-9)

    def test_thirty_values(self):
        x = np.random.default_rng(0).normal(0.3, 0.02, size=30)
        est = replication_stats(x)
        assert est.half_width == pytest.approx(2.045229642 * x.std(ddof=1) / math.sqrt(30), rel=1e-9)

    def test_too_few(self):
        with pytest.raises(ValueError):
            replication_stats([0.4])


class TestMonteCarlo:
    def test_exponential_median(self):
        est = mc_sample_tier([1.0], math.log(2.0), 400_000, seed=1)
        assert abs(est.mean - 0.5) <= 3 * math.sqrt(0.25 / 400_000)
        assert est.half_width == pytest.approx(1.959964 * math.sqrt(est.mean * (1 - est.mean) / 400_000), rel=1e-6)

    def test_single_sample(self):
        est = mc_sample_tier([2.0, 3.0], 0.5, 1, seed=0)
        assert est.mean in (0.0, 1.0) and est.half_width == 1.0

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            mc_sample_tier([1.0, 0.0], 1.0, 10, seed=0)

    def test_deterministic(self):
        assert mc_sample_tier([1.0, 4.0], 0.7, 1000, seed=3) == mc_sample_tier([1.0, 4.0], 0.7, 1000, seed=3)


class TestSimConfig:
    def test_defaults(self):
        cfg = SimConfig()
        assert (cfg.horizon, cfg.replications, cfg.seed, cfg.warmup) == (10_000.0, 30, 0, 0.0)
        assert cfg.link_model is LinkModel.PAPER_RATES

    @pytest.mark.parametrize(
        "kwargs",
        [dict(horizon=0.0), dict(warmup=20_000.0), dict(replications=0), dict(seed=-1), dict(engine="gpu"), dict(workers=0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_link_model_from_string(self):
        assert SimConfig(link_model="physical-sharing").link_model is LinkModel.PHYSICAL_SHARING


@pytest.fixture(scope="module")
def short_run():
    return des_run(default_params(), OffloadingPolicy(0.7, 0.4), SHORT)


class TestDes:
    @pytest.mark.property
    def test_bit_identical_rerun(self, short_run):
        again = des_run(default_params(), OffloadingPolicy(0.7, 0.4), SHORT)
        assert again.violation_prob == short_run.violation_prob
        assert again.per_tier_mean_delay == short_run.per_tier_mean_delay
        assert again.per_queue_utilization == short_run.per_queue_utilization

    def test_seed_changes_sample(self, short_run):
        other = des_run(default_params(), OffloadingPolicy(0.7, 0.4), SimConfig(horizon=2000.0, replications=3, seed=6))
        assert other.violation_prob.mean != short_run.violation_prob.mean

    @pytest.mark.parametrize("link_model", list(LinkModel))
    def test_event_engine_agrees(self, link_model):
        base = dict(horizon=300.0, replications=2, seed=9, link_model=link_model)
        params, pol = default_params(), OffloadingPolicy(0.6, 0.5)
        fast = des_run(params, pol, SimConfig(**base))
        slow = des_run(params, pol, SimConfig(engine="event", **base))
        assert fast.tasks_generated == slow.tasks_generated
        assert fast.tasks_completed == slow.tasks_completed
        assert fast.violation_prob.mean == slow.violation_prob.mean
        np.testing.assert_allclose(fast.per_tier_mean_delay, slow.per_tier_mean_delay, rtol=1e-12)

    def test_parallel_matches_serial(self):
        params, pol = default_params(), OffloadingPolicy(0.7, 0.4)
        cfg = SimConfig(horizon=500.0, replications=3, seed=2)
        par = des_run(params, pol, SimConfig(horizon=500.0, replications=3, seed=2, workers=2))
        assert par.violation_prob == des_run(params, pol, cfg).violation_prob

    @pytest.mark.property
    def test_conservation(self, short_run):
        assert short_run.tasks_completed + short_run.tasks_in_system == short_run.tasks_generated
        for rep in short_run.replications:
            assert rep.tasks_completed + rep.tasks_in_system == rep.tasks_generated

    @pytest.mark.property
    def test_mixture_invariant(self, short_run):
        counts = np.sum([r.tier_counts for r in short_run.replications], axis=0)
        weights = counts / counts.sum()
        assert short_run.violation_prob.mean == pytest.approx(
            float(np.dot(weights, short_run.per_tier_violation)), abs=1e-12
        )

    @pytest.mark.property
    def test_stable_utilization_below_one(self, short_run):
        assert not short_run.saturated
        assert all(0.0 <= u < 1.0 for u in short_run.per_queue_utilization.values())

    @pytest.mark.property
    def test_utilization_matches_offered_load(self, short_run):
        rep = short_run.replications[0]
        for name, q in rep.queues.items():
            assert short_run.per_queue_utilization[name] == pytest.approx(q.offered_load, abs=0.05), name

    def test_mm1_tail(self):
        # no offloading: every UE is an isolated M/M/1 queue
        params = default_params(mu_u=3.0)
        report = des_run(params, OffloadingPolicy(0.0, 0.0), SimConfig(horizon=4000.0, replications=5, seed=1))
        exact = math.exp(-(3.0 - 2.0) * params.theta)
        n = sum(r.tier_counts[0] for r in report.replications)
        assert report.per_tier_violation[0] == report.violation_prob.mean
        assert abs(report.violation_prob.mean - exact) <= max(report.violation_prob.half_width, 3 * math.sqrt(exact * (1 - exact) / n))

    @pytest.mark.property
    def test_littles_law(self):
        params, pol = default_params(), OffloadingPolicy(0.7, 0.4)
        report = des_run(params, pol, SimConfig(horizon=10_000.0, replications=1, seed=3))
        for name, q in report.replications[0].queues.items():
            assert q.mean_in_system == pytest.approx(q.arrival_rate * q.mean_sojourn, rel=0.05), name

    def test_saturation_flagged(self):
        report = des_run(default_params(), OffloadingPolicy(0.1, 0.4), SimConfig(horizon=500.0, replications=2))
        assert report.saturated
        assert all(name.startswith("ue/") for name in report.saturated_queues)
        assert report.per_tier_violation[0] > 0.5
        assert report.tasks_in_system > 0

    def test_physical_sharing_runs(self):
        report = des_run(
            default_params(), OffloadingPolicy(0.7, 0.4), SimConfig(horizon=1000.0, replications=2, link_model="physical-sharing")
        )
        assert "up/0" in report.per_queue_utilization and "up_c/0" not in report.per_queue_utilization
        assert 0.0 < report.violation_prob.mean < 1.0

    def test_warmup_excludes_early_tasks(self):
        params, pol = default_params(), OffloadingPolicy(0.7, 0.4)
        full = des_run(params, pol, SimConfig(horizon=1000.0, replications=1))
        late = des_run(params, pol, SimConfig(horizon=1000.0, replications=1, warmup=500.0))
        assert sum(late.replications[0].tier_counts) < sum(full.replications[0].tier_counts)
        assert late.tasks_generated == full.tasks_generated

    def test_matches_analytic_optimum(self):
        report = des_run(default_params(), OffloadingPolicy(0.675, 0.37), SimConfig(replications=4))
        assert report.violation_prob.mean == pytest.approx(0.188, abs=0.01)

    def test_mean_delays_match_analytic(self):
        params, pol = default_params(), OffloadingPolicy(0.7, 0.4)
        report = des_run(params, pol, SimConfig(replications=4, warmup=1000.0))
        np.testing.assert_allclose(report.per_tier_mean_delay, tier_tails(params, pol).mean_delays, atol=0.05)


@pytest.mark.property
def test_per_replication_rates_near_analytic():
    # the spread across replications should be consistent with binomial noise
    params, pol = default_params(), OffloadingPolicy(0.7, 0.4)
    report = des_run(params, pol, SimConfig(horizon=3000.0, replications=6, seed=4))
    exact = tier_tails(params, pol).p_overall
    rates = np.array([r.violation_rate for r in report.replications])
    _, p = stats.ttest_1samp(rates, exact)
    assert p > 1e-3
    assert mixture(pol, *tier_tails(params, pol).tiers) == pytest.approx(exact, abs=1e-15)
