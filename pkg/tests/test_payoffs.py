import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from nestsim.errors import ParameterDomainError
from nestsim.models import GbmParams, GmwbParams, InnerPaths, OuterScenario, TimeGrid
from nestsim.payoffs import (
    AsianBasket,
    BarrierOption,
    GmwbContract,
    asian_leg_value_curve,
    asian_payoff,
    asian_purchase_price,
    barrier_loss_curve,
    barrier_payoff,
    barrier_purchase_prices,
    default_asian_basket,
    default_barrier_model,
    default_barrier_portfolio,
    default_gmwb_contract,
    gmwb_inner_value,
    oracle_true_loss,
    simulate_min_final,
)
from nestsim.rng import make_rng
from nestsim.weights import barrier_joint_log_density

PORT = default_barrier_portfolio()
MODEL = default_barrier_model()
H = PORT.horizon


def transcribed_barrier(mn, fn, r=0.03, horizon=H):
    """Long puts (101, 91) and (110, 100), short put (114.5, 104.5), as a short-position loss."""
    disc = math.exp(-r * horizon)
    p1 = max(101.0 - fn, 0.0) * (mn > 91.0)
    p2 = max(110.0 - fn, 0.0) * (mn > 100.0)
    p3 = max(114.5 - fn, 0.0) * (mn > 104.5)
    return disc * (p3 - p1 - p2)


class TestBarrierPayoff:
    def test_all_knocked_out(self):
        assert barrier_payoff([90.0], [95.0], PORT)[0] == 0.0

    def test_all_out_of_the_money(self):
        assert barrier_payoff([105.0], [115.0], PORT)[0] == 0.0

    def test_matches_transcription(self, rng):
        mn = rng.uniform(85, 115, 2000)
        fn = mn + rng.exponential(5.0, 2000)
        got = barrier_payoff(mn, fn, PORT)
        want = [transcribed_barrier(a, b) for a, b in zip(mn, fn)]
        np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-14)
        assert barrier_payoff([102.0], [103.0], PORT)[0] == pytest.approx(transcribed_barrier(102.0, 103.0))

    def test_each_leg_monotone_in_minimum(self, rng):
        fn = rng.uniform(90, 120, 500)
        lo = rng.uniform(80, 110, 500)
        hi = lo + rng.uniform(0, 10, 500)
        assert np.all(PORT.option_payoffs(lo, fn) <= PORT.option_payoffs(hi, fn))

    def test_option_validation(self):
        with pytest.raises(ParameterDomainError):
            BarrierOption("long", 100.0, 101.0)
        with pytest.raises(ParameterDomainError):
            BarrierOption("sideways", 100.0, 90.0)


class TestMinFinal:
    def test_zero_volatility(self):
        g = GbmParams(100.0, 0.08, 0.03, 0.0)
        mn, fn = simulate_min_final(g, 100.0, 0.5, 5, make_rng(0))
        np.testing.assert_allclose(fn, 100.0 * math.exp(0.015), rtol=1e-14)
        np.testing.assert_allclose(mn, 100.0, rtol=1e-14)

    def test_hitting_probability(self):
        m = 10**6
        x, h = 100.0, 95.0
        mn, fn = simulate_min_final(MODEL, x, H, m, make_rng(1))
        assert np.all(mn <= np.minimum(fn, x))
        nu = MODEL.r - 0.5 * MODEL.sigma**2
        s = MODEL.sigma * math.sqrt(H)
        b = math.log(h / x)
        p = stats.norm.cdf((b - nu * H) / s) + math.exp(2 * nu * b / MODEL.sigma**2) * stats.norm.cdf((b + nu * H) / s)
        emp = np.mean(mn <= h)
        assert abs(emp - p) < 3 * math.sqrt(p * (1 - p) / m)

    def test_joint_histogram_chi_square(self):
        m = 10**5
        x = 100.0
        mn, fn = simulate_min_final(MODEL, x, H, m, make_rng(2))
        u, v = np.log(mn / x), np.log(fn / x)
        ue = np.quantile(u, [0, 0.33, 0.67, 1.0])
        ve = np.quantile(v, [0, 0.33, 0.67, 1.0])
        ue[0], ve[0], ve[-1] = -1.0, -1.0, 1.0
        ue[-1] = 0.0
        observed = np.histogram2d(u, v, bins=[ue, ve])[0].ravel()

        def dens(vv, uu):
            return math.exp(float(barrier_joint_log_density(x * math.exp(uu), x * math.exp(vv), x, MODEL.r,
                                                            MODEL.sigma, H))) * x * x * math.exp(uu + vv)

        expected = []
        for i in range(3):
            for j in range(3):
                lo_u, hi_u = ue[i], ue[i + 1]
                p, _ = integrate.dblquad(dens, lo_u, hi_u, lambda uu, a=ve[j]: max(a, uu),
                                         lambda uu, b=ve[j + 1]: max(b, uu), epsabs=1e-9)
                expected.append(p * m)
        expected = np.array(expected)
        keep = expected > 5
        stat = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
        assert stats.chi2.sf(stat, keep.sum() - 1) > 1e-3

    def test_nonpositive_scenario(self):
        with pytest.raises(ParameterDomainError):
            simulate_min_final(MODEL, 0.0, H, 3, make_rng(0))


class TestPurchasePricesAndOracle:
    def test_prices_match_quadrature_values(self):
        p = barrier_purchase_prices(MODEL, PORT)
        np.testing.assert_allclose(p, [1.71535, 0.54924, 0.035497], rtol=1e-4)

    def test_prices_match_monte_carlo(self):
        m = 4 * 10**5
        rng = make_rng(3)
        s = MODEL.sigma * math.sqrt(PORT.tau)
        x = MODEL.f0 * np.exp((MODEL.r - 0.5 * MODEL.sigma**2) * PORT.tau + s * rng.standard_normal(m))
        mn, fn = simulate_min_final(MODEL, 1.0, H, m, rng)
        pay = PORT.option_payoffs(x * mn, x * fn)
        for price, row in zip(barrier_purchase_prices(MODEL, PORT), pay):
            assert abs(row.mean() - price) < 4 * row.std(ddof=1) / math.sqrt(m)

    def test_oracle_far_above_strikes_is_purchase_price_limit(self):
        prices = barrier_purchase_prices(MODEL, PORT)
        res = oracle_true_loss("barrier", 160.0, 10**5)
        assert res.loss == pytest.approx(prices[0] + prices[1] - prices[2], abs=max(4 * res.se, 1e-12))

    def test_oracle_matches_quadrature_curve(self):
        port = PORT.with_purchase_prices(barrier_purchase_prices(MODEL, PORT))
        for x in (95.0, 100.0, 106.0):
            res = oracle_true_loss("barrier", x, 10**6, seed=4)
            assert abs(res.loss - barrier_loss_curve(MODEL, port, x)[0]) < 4 * res.se

    def test_gmwb_large_fund_is_fee_leg(self):
        res = oracle_true_loss("gmwb", 3.0, 20_000)
        assert res.loss < 0

    def test_partial_flag_and_cache(self, tmp_path):
        a = oracle_true_loss("barrier", 100.0, 1000, target_se=1e-9, cache_dir=tmp_path)
        assert a.partial
        assert any(tmp_path.iterdir())
        b = oracle_true_loss("barrier", 100.0, 1000, target_se=1e-9, cache_dir=tmp_path)
        assert (a.loss, a.se, a.n_paths) == (b.loss, b.se, b.n_paths)

    def test_unknown_example(self):
        with pytest.raises(ParameterDomainError):
            oracle_true_loss("nope", 1.0, 100)


class TestAsian:
    B = default_asian_basket()

    def test_constant_at_strike(self):
        assert np.all(asian_payoff(np.full((5, 3, 40), 100.0), self.B) == 0.0)

    def test_constant_above_strike(self):
        got = asian_payoff(np.full((5, 2, 40), 101.0), self.B)
        np.testing.assert_allclose(got, 10 * self.B.discount * 5 * 1.0, rtol=1e-13)

    def test_matches_transcription(self, rng):
        paths = rng.uniform(90, 115, (5, 4, 40))
        disc = math.exp(-0.035 * (52 - 12) / 624)
        want = [10 * disc * sum(max(paths[j, i].sum() / 40 - 100, 0) for j in range(5)) for i in range(4)]
        np.testing.assert_allclose(asian_payoff(paths, self.B), want, rtol=1e-12)

    def test_leg_agrees_with_basket(self, rng):
        paths = rng.uniform(90, 115, (5, 4, 40))
        legs = sum(self.B.leg().path_payoff(InnerPaths(paths[j], paths[j, :, 0])) for j in range(5))
        np.testing.assert_allclose(legs, asian_payoff(paths, self.B), rtol=1e-13)

    def test_outer_loss_distribution_centred_near_zero(self):
        # C averages the leg value over the risk-neutral law of F_tau; under the real-world
        # law the mean loss differs only through the drift gap over a short horizon
        c = asian_purchase_price(self.B, m=200_000, seed=1)
        nodes, weights = special.roots_hermitenorm(80)
        g, tau = self.B.model, self.B.grid.tau
        x = g.f0 * np.exp((g.mu - 0.5 * g.sigma**2) * tau + g.sigma * math.sqrt(tau) * nodes)
        value, _ = asian_leg_value_curve(self.B, x, m=200_000, seed=1)
        mean_loss = 5 * np.sum(weights * value) / math.sqrt(2 * math.pi) - c
        assert abs(mean_loss) < 0.05 * c

    def test_oracle_matches_leg_curve(self):
        c = asian_purchase_price(self.B, m=200_000, seed=1)
        basket = AsianBasket(self.B.model, self.B.grid, purchase_price=c)
        res = oracle_true_loss("asian", 100.0, 200_000, problem=basket)
        value, se = asian_leg_value_curve(self.B, [100.0], m=200_000, seed=2)
        assert abs(res.loss - (5 * value[0] - c)) < 4 * math.hypot(res.se, 5 * se[0])


class TestGmwb:
    C = default_gmwb_contract()

    def annuity(self, r, length):
        return (1 - math.exp(-r * length)) / r

    def test_absorbed_at_start(self):
        p = self.C.params
        steps = self.C.grid.steps
        val = gmwb_inner_value(np.zeros(steps), self.C, 0.0)[0]
        length = self.C.T - self.C.tau
        assert val == pytest.approx(p.w * self.annuity(p.r, length), abs=p.w * self.C.dt)

    def test_constant_fund(self):
        p = self.C.params
        steps = self.C.grid.steps
        c = 0.8
        val = gmwb_inner_value(np.full(steps, c), self.C, c)[0]
        length = self.C.T - self.C.tau
        assert val == pytest.approx(-p.m_f * c * self.annuity(p.r, length), abs=p.m_f * c * self.C.dt)

    def test_no_fee_no_absorption_is_zero(self):
        params = GmwbParams(g=1.0, w=0.1, m_f=0.0, r=0.05, mu=0.08, sigma=0.2)
        contract = GmwbContract(params, tau=5.0, dt=0.05)
        assert gmwb_inner_value(np.full(contract.grid.steps, 0.5), contract, 0.5)[0] == 0.0

    def test_pathwise_nonincreasing(self, rng):
        steps = self.C.grid.steps
        lo = np.maximum(rng.normal(0.3, 0.5, (1000, steps)), 0.0)
        hi = lo + rng.exponential(0.2, (1000, steps))
        x = rng.uniform(0.0, 1.0, 1000)
        v_lo = np.array([gmwb_inner_value(a, self.C, xx)[0] for a, xx in zip(lo, x)])
        v_hi = np.array([gmwb_inner_value(a, self.C, xx)[0] for a, xx in zip(hi, x)])
        assert np.all(v_hi <= v_lo + 1e-15)

    def test_tau_before_maturity(self):
        with pytest.raises(ParameterDomainError):
            GmwbContract(self.C.params, tau=12.0, dt=0.05)

    def test_path_payoff_matches_simulated_paths(self):
        paths = self.C.params.simulate_inner(0.7, self.C.grid, 10, make_rng(5))
        direct = gmwb_inner_value(paths.values, self.C, 0.7)
        np.testing.assert_allclose(direct, self.C.deterministic_term(0.7) + self.C.path_payoff(paths))
        assert OuterScenario(0.7).value == 0.7
        assert isinstance(self.C.grid, TimeGrid)
