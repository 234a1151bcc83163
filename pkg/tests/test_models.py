import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from nestsim.errors import GridError, ParameterDomainError
from nestsim.models import (
    GbmParams,
    GmwbParams,
    OuterScenario,
    OuterScenarios,
    Rsln2Params,
    TimeGrid,
    VasicekParams,
    simulate_inner_paths,
    simulate_outer,
    transition_density,
)
from nestsim.rng import make_rng

GBM = GbmParams(100.0, 0.08, 0.03, 0.2)
VAS = VasicekParams(kappa=0.5, theta=0.04, sigma=0.01, f0=0.03)
RSLN = Rsln2Params(0.12, 0.12, -0.15, 0.25, 0.04, 0.2)
GMWB = GmwbParams(g=1.0, w=0.1, m_f=0.01, r=0.05, mu=0.08, sigma=0.2)


class TestTimeGrid:
    def test_indices(self):
        g = TimeGrid(0.25, 1.0, 0.05)
        assert (g.k, g.K, g.steps) == (5, 20, 15)

    def test_misaligned_horizon_rejected(self):
        with pytest.raises(GridError):
            TimeGrid(0.26, 1.0, 0.05)

    def test_tau_must_precede_maturity(self):
        with pytest.raises((GridError, ParameterDomainError)):
            TimeGrid(1.0, 0.5, 0.05)

    @given(st.integers(1, 50), st.integers(1, 50), st.sampled_from([1 / 52, 1 / 624, 0.05, 0.25]))
    def test_integer_multiples_always_align(self, k, extra, dt):
        g = TimeGrid(k * dt, (k + extra) * dt, dt)
        assert g.steps == extra


class TestOuter:
    def test_degenerate_gbm_returns_f0(self):
        sc = simulate_outer(GbmParams(100.0, 0.0, 0.03, 0.0), 50, 1 / 52, make_rng(1))
        assert np.all(sc.values == 100.0)

    def test_gbm_outer_mean(self):
        n = 10**6
        x = simulate_outer(GBM, n, 1 / 52, make_rng(2)).values
        expected = 100.0 * math.exp(0.08 / 52)
        assert abs(x.mean() - expected) < 3 * x.std(ddof=1) / math.sqrt(n)

    def test_rsln2_absorbing_chain_keeps_regime(self):
        p = Rsln2Params(0.1, 0.1, -0.1, 0.3, 0.0, 0.0, s0=2)
        sc = simulate_outer(p, 500, TimeGrid(1.0, 2.0, 1 / 12), make_rng(3))
        assert np.all(sc.regimes == 2)

    def test_zero_count_rejected(self):
        with pytest.raises(ParameterDomainError):
            simulate_outer(GBM, 0, 1 / 52, make_rng(0))

    def test_seed_reproducible(self):
        a = simulate_outer(GBM, 100, 1 / 52, make_rng(9, 1)).values
        b = simulate_outer(GBM, 100, 1 / 52, make_rng(9, 1)).values
        assert np.array_equal(a, b)


class TestInner:
    def test_zero_vol_gbm_is_deterministic(self):
        g = GbmParams(100.0, 0.08, 0.03, 0.0)
        grid = TimeGrid(0.25, 1.0, 0.25)
        paths = simulate_inner_paths(g, OuterScenario(90.0), grid, 7, make_rng(4)).values
        expected = 90.0 * np.exp(0.03 * 0.25 * np.arange(1, 4))
        np.testing.assert_allclose(paths, np.tile(expected, (7, 1)), rtol=1e-14)

    def test_vasicek_one_step_mean(self):
        dt = 1 / 12
        x = 0.05
        m = 10**6
        y = simulate_inner_paths(VAS, OuterScenario(x), TimeGrid(dt, 2 * dt, dt), m, make_rng(5)).first_step
        e = math.exp(-VAS.kappa * dt)
        expected = e * x + VAS.theta * (1 - e)
        assert abs(y.mean() - expected) < 3 * y.std(ddof=1) / math.sqrt(m)

    def test_gmwb_step_is_fee_adjusted_gbm_minus_withdrawal(self):
        grid = TimeGrid(5.0, 5.1, 0.05)
        rng_a = make_rng(6)
        paths = simulate_inner_paths(GMWB, OuterScenario(1.0), grid, 10, rng_a)
        z = make_rng(6).standard_normal((10, grid.steps))
        drift = (GMWB.r - GMWB.m_f - 0.5 * GMWB.sigma**2) * 0.05
        step = np.exp(drift + GMWB.sigma * math.sqrt(0.05) * z[:, 0]) - 0.005
        np.testing.assert_allclose(paths.first_step, step, rtol=1e-13)

    def test_gmwb_absorbs_at_zero(self):
        p = GmwbParams(g=1.0, w=2.0, m_f=0.0, r=0.0, mu=0.0, sigma=0.3)
        grid = TimeGrid(0.1, 1.0, 0.1)
        paths = simulate_inner_paths(p, OuterScenario(0.5), grid, 200, make_rng(7))
        v = paths.values
        assert np.all(v >= 0)
        for row, hit in zip(v, paths.hit_index):
            if hit > 0:
                assert np.all(row[hit - 1:] == 0.0)
                assert np.all(row[: hit - 1] > 0)

    def test_rsln2_paths_record_regimes(self):
        paths = simulate_inner_paths(RSLN, OuterScenario(1.0, 1), TimeGrid(1 / 12, 1.0, 1 / 12), 50, make_rng(8))
        assert paths.regimes.shape == paths.values.shape
        assert set(np.unique(paths.regimes)) <= {1, 2}

    def test_rsln2_needs_regime(self):
        with pytest.raises(ParameterDomainError):
            simulate_inner_paths(RSLN, OuterScenario(1.0), TimeGrid(1 / 12, 1.0, 1 / 12), 5, make_rng(8))

    def test_identical_seeds_identical_paths(self):
        grid = TimeGrid(1 / 52, 1 / 12, 1 / 624)
        a = simulate_inner_paths(GBM, OuterScenario(101.0), grid, 30, make_rng(11, 2, 3)).values
        b = simulate_inner_paths(GBM, OuterScenario(101.0), grid, 30, make_rng(11, 2, 3)).values
        assert np.array_equal(a, b)

    def test_grid_required(self):
        with pytest.raises(GridError):
            simulate_inner_paths(GBM, OuterScenario(100.0), 0.5, 5, make_rng(0))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(50, 150), st.floats(0.01, 0.6), st.integers(0, 2**31))
    def test_gbm_paths_positive(self, x, sigma, seed):
        g = GbmParams(100.0, 0.05, 0.02, sigma)
        paths = simulate_inner_paths(g, OuterScenario(x), TimeGrid(0.1, 0.5, 0.1), 20, make_rng(seed)).values
        assert np.all(paths > 0)


class TestTransitionDensity:
    def test_gbm_normalises(self):
        # the density is concentrated within a few percent of 100; split there so quad sees the peak
        f = lambda y: transition_density(GBM, 100.0, y, 1 / 52)  # noqa: E731
        val = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in [(0, 80), (80, 100), (100, 125), (125, np.inf)])
        assert abs(val - 1) < 1e-6

    def test_vasicek_normalises(self):
        f = lambda y: transition_density(VAS, 0.05, y, 1 / 12)  # noqa: E731
        val = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in [(-np.inf, 0.0), (0.0, 0.05), (0.05, 0.1), (0.1, np.inf)])
        assert abs(val - 1) < 1e-6

    def test_gmwb_normalises(self):
        dt = 0.05
        f = lambda z: transition_density(GMWB, 1.0, z, dt)  # noqa: E731
        val = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in [(-GMWB.w * dt, 1.0), (1.0, np.inf)])
        assert abs(val - 1) < 1e-6

    def test_rsln2_normalises_over_regimes(self):
        dt = 1 / 12
        tot = 0.0
        for s in (1, 2):
            def f(y, s=s):
                return float(transition_density(RSLN, OuterScenario(1.0, 1), y, dt, to_regime=s))
            tot += sum(integrate.quad(f, a, b, limit=200)[0] for a, b in [(0, 1.0), (1.0, 3.0), (3.0, np.inf)])
        assert abs(tot - 1) < 1e-6

    def test_vasicek_mode_height(self):
        dt = 1 / 12
        e = math.exp(-VAS.kappa * dt)
        mean = e * 0.05 + VAS.theta * (1 - e)
        sd = VAS.sigma * math.sqrt((1 - e * e) / (2 * VAS.kappa))
        assert transition_density(VAS, 0.05, mean, dt) == pytest.approx(1 / (sd * math.sqrt(2 * math.pi)), rel=1e-12)

    def test_gbm_matches_lognormal_pdf(self):
        dt = 1 / 52
        drift = (0.03 - 0.02) * dt
        ref = stats.lognorm.pdf(101.0, s=0.2 * math.sqrt(dt), scale=100.0 * math.exp(drift))
        assert transition_density(GBM, 100.0, 101.0, dt) == pytest.approx(ref, rel=1e-12)

    def test_outside_support_is_zero(self):
        assert transition_density(GBM, 100.0, -1.0, 0.1) == 0.0
        assert transition_density(GMWB, 1.0, -1.0, 0.05) == 0.0

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(GridError):
            transition_density(GBM, 100.0, 100.0, 0.0)

    @pytest.mark.parametrize("model,x,cdf", [
        (GBM, 100.0, lambda y, dt: stats.lognorm.cdf(
            y, s=0.2 * math.sqrt(dt), scale=100.0 * math.exp((0.03 - 0.02) * dt))),
        (VAS, 0.05, None),
    ])
    def test_one_step_ks(self, model, x, cdf):
        dt = 1 / 12
        m = 10**5
        y = simulate_inner_paths(model, OuterScenario(x), TimeGrid(dt, 2 * dt, dt), m, make_rng(12)).first_step
        if cdf is None:
            mean, sd = model.step_moments(x, dt)
            res = stats.kstest(y, stats.norm(mean, sd).cdf)
        else:
            res = stats.kstest(y, lambda v: cdf(v, dt))
        assert res.pvalue > 1e-3


class TestParameterValidation:
    @pytest.mark.parametrize("ctor", [
        lambda: GbmParams(-1.0, 0.0, 0.0, 0.2),
        lambda: GbmParams(100.0, 0.0, 0.0, -0.2),
        lambda: VasicekParams(kappa=0.0, theta=0.0, sigma=0.01, f0=0.0),
        lambda: VasicekParams(kappa=0.5, theta=0.0, sigma=0.0, f0=0.0),
        lambda: Rsln2Params(0.1, 0.0, 0.1, 0.1, 0.1, 0.1),
        lambda: Rsln2Params(0.1, 0.1, 0.1, 0.1, 1.5, 0.1),
        lambda: GmwbParams(g=1.0, w=0.0, m_f=0.0, r=0.0, mu=0.0, sigma=0.2),
        lambda: GmwbParams(g=1.0, w=0.1, m_f=-0.1, r=0.0, mu=0.0, sigma=0.2),
    ])
    def test_rejects(self, ctor):
        with pytest.raises(ParameterDomainError):
            ctor()

    def test_gmwb_maturity(self):
        assert GMWB.maturity == pytest.approx(10.0)

    def test_scenarios_subset_keeps_regimes(self):
        sc = OuterScenarios(np.array([1.0, 2.0, 3.0]), np.array([1, 2, 1]))
        sub = sc.subset([2, 0])
        assert sub.values.tolist() == [3.0, 1.0] and sub.regimes.tolist() == [1, 1]
