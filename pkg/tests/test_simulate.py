import math

import numpy as np
import pytest
from scipy import stats as sps

from clbacktest.distributions import Binomial, Pareto, Poisson, UnitClaim, make_pattern
from clbacktest.simulate import (
    ScenarioConfig,
    ScenarioExhausted,
    deltas,
    expected_triangle_claims,
    run_batch,
    run_scenario,
    scenario_rng,
    simulate_rectangle,
)
from clbacktest.stats import relative_bias_decomposition
from clbacktest.triangle import known_mask


def cfg(I=5, lam=100.0, kind="linear", severity=None, **kw):
    return ScenarioConfig(
        I=I,
        count_dist=Poisson(lam),
        pattern=make_pattern(kind, I),
        severity=severity or UnitClaim(),
        **kw,
    )


class TestConfig:
    def test_pattern_length_must_match(self):
        with pytest.raises(ValueError):
            ScenarioConfig(I=5, count_dist=Poisson(1.0), pattern=make_pattern("linear", 4))

    def test_counts_positive(self):
        with pytest.raises(ValueError):
            cfg(n_scenarios=0)
        with pytest.raises(ValueError):
            cfg(n_replications=0)


class TestRectangle:
    def test_unit_claims_are_counts(self):
        c = cfg(I=6, kind="exponential")
        t = simulate_rectangle(c, scenario_rng(1, 0, 0))
        assert np.all(t.cells == np.round(t.cells))
        # replay the same stream to recover the drawn totals
        g = scenario_rng(1, 0, 0)
        totals = g.poisson(100.0, 6)
        assert t.cells.sum(axis=1).tolist() == totals.tolist()

    def test_first_column_pattern(self):
        c = ScenarioConfig(I=4, count_dist=Poisson(50.0), pattern=make_pattern("explicit", 4, values=(1, 0, 0, 0)))
        t = simulate_rectangle(c, scenario_rng(0, 0, 0))
        assert np.all(t.cells[:, 1:] == 0)

    def test_cell_means_wald(self):
        sev = Pareto(4.0, 1000.0)
        c = cfg(I=5, kind="linear", severity=sev)
        n = 10_000
        tables = np.stack([simulate_rectangle(c, scenario_rng(3, 0, s)).cells for s in range(n)])
        pi = c.pattern.array
        ex, ex2 = 1500.0, 3e6
        # Var S = lambda pi E[X^2] for a compound Poisson cell
        mean = 100.0 * pi * ex
        se = np.sqrt(100.0 * pi * ex2 / n)
        got = tables.mean(axis=0)
        assert np.all(np.abs(got - mean[None, :]) <= 3 * se[None, :] + 1e-9)

    def test_binomial_counts_bounded(self):
        c = ScenarioConfig(I=3, count_dist=Binomial(10, 0.5), pattern=make_pattern("linear", 3))
        t = simulate_rectangle(c, scenario_rng(0, 0, 0))
        assert np.all(t.cells.sum(axis=1) <= 10)


class TestScenario:
    def test_delta_identity(self):
        for s in range(50):
            r = run_scenario(cfg(), scenario_rng(9, 0, s))
            assert r.delta * math.sqrt(r.mse) == pytest.approx(r.r_cl - r.r_real, rel=1e-12, abs=1e-12)
            assert r.mse > 0

    def test_deterministic(self):
        a = run_scenario(cfg(), scenario_rng(4, 2, 7))
        b = run_scenario(cfg(), scenario_rng(4, 2, 7))
        assert a == b

    def test_resamples_rare_at_lambda_100(self):
        res = run_batch(cfg(I=5, n_scenarios=2000), 0)
        assert sum(r.resample_count == 0 for r in res) >= 0.999 * len(res)

    def test_sparse_exhausts(self):
        c = cfg(I=6, lam=0.05, max_resamples_per_scenario=3)
        with pytest.raises(ScenarioExhausted) as exc:
            run_batch(c, 0)
        assert exc.value.scenario_index == 0

    def test_sparse_counts_resamples(self):
        c = cfg(I=4, lam=4.0, n_scenarios=300, max_resamples_per_scenario=1000)
        res = run_batch(c, 0)
        assert sum(r.resample_count for r in res) > 0
        assert all(r.mse > 0 for r in res)

    def test_cl_sees_only_the_triangle(self):
        # changing future cells must leave R_CL and mse untouched
        from clbacktest.chainladder import chain_ladder
        from clbacktest.triangle import RunOffTable, cumulate_upper

        t = simulate_rectangle(cfg(), scenario_rng(0, 0, 1))
        other = RunOffTable(np.where(known_mask(5), t.cells, 0.0))
        a, b = chain_ladder(cumulate_upper(t)), chain_ladder(cumulate_upper(other))
        assert a.total_reserve == b.total_reserve and a.mse_total == b.mse_total


class TestBatch:
    def test_single_scenario_reduces_to_run_scenario(self):
        c = cfg(n_scenarios=1, seed=12)
        assert run_batch(c, 3) == [run_scenario(c, scenario_rng(12, 3, 0))]

    def test_batch_equals_scenario_loop(self):
        c = cfg(I=6, lam=20.0, n_scenarios=200, seed=5)
        batch = run_batch(c, 1)
        loop = [run_scenario(c, scenario_rng(5, 1, s)) for s in range(200)]
        assert batch == loop

    def test_repeat_is_bit_identical(self):
        c = cfg(n_scenarios=300)
        assert np.array_equal(deltas(run_batch(c, 0)), deltas(run_batch(c, 0)))

    def test_jobs_do_not_change_results(self):
        c = cfg(n_scenarios=200, seed=77)
        assert run_batch(c, 0, jobs=2) == run_batch(c, 0, jobs=1)

    def test_replications_look_alike(self):
        c = cfg(n_scenarios=1000)
        a, b = deltas(run_batch(c, 0)), deltas(run_batch(c, 1))
        assert not np.array_equal(a, b)
        assert sps.ks_2samp(a, b).pvalue > 0.01

    def test_relative_bias_identity(self):
        res = run_batch(cfg(n_scenarios=500), 0)
        lhs, rhs = relative_bias_decomposition(res)
        assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1)
        assert lhs == pytest.approx(np.mean(deltas(res)), rel=1e-12)


class TestDelta:
    def test_uniform(self):
        c = ScenarioConfig(I=5, count_dist=Poisson(100.0), pattern=make_pattern("explicit", 5, values=[1] * 5))
        assert expected_triangle_claims(c) == pytest.approx(300.0, rel=1e-14)

    def test_first_column(self):
        c = ScenarioConfig(I=5, count_dist=Poisson(100.0), pattern=make_pattern("explicit", 5, values=(1, 0, 0, 0, 0)))
        assert expected_triangle_claims(c) == 500.0

    def test_matches_simulation(self):
        c = cfg(I=5, kind="exponential")
        mask = known_mask(5)
        counts = np.array([simulate_rectangle(c, scenario_rng(8, 0, s)).cells[mask].sum() for s in range(10_000)])
        assert abs(counts.mean() - expected_triangle_claims(c)) <= 3 * counts.std(ddof=1) / 100
