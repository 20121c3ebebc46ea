"""Unit tests for the price-motion laws and their parameter validation."""
import math

import pytest

from execsched.models import (
    Ar1Extra,
    Benchmark,
    DegeneratePathWarning,
    LinearPercentage,
    Liquidity,
    LiquidityViolationError,
    MarketState,
    Spread,
    ar1_volume_update,
    convexity_check,
    step,
)

NO_NOISE = (0.0, 0.0)


def make_liquidity(**overrides):
    base = dict(alpha=0.01, theta=0.001, gamma=0.0005, rho=0.9, sigma_eps=0.5, sigma_eta=5.0)
    base.update(overrides)
    return Liquidity(**base)


class TestBenchmarkStep:
    def test_worked_example(self):
        params = Benchmark(theta=0.1, sigma_eps=1.0)
        state = MarketState(price=100.0)
        nxt = step(params, state, trade=10.0, noise=NO_NOISE)
        assert nxt.price == 101.0
        assert nxt.time_index == 1

    def test_noise_scaling(self):
        params = Benchmark(theta=0.1, sigma_eps=2.0)
        nxt = step(params, MarketState(price=100.0), trade=0.0, noise=(1.5, 0.0))
        assert nxt.price == 103.0

    def test_identity_with_zero_trade_and_noise(self):
        params = Benchmark(theta=0.3, sigma_eps=1.0)
        state = MarketState(price=55.25)
        assert step(params, state, 0.0, NO_NOISE).price == state.price

    def test_rejects_negative_trade(self):
        with pytest.raises(ValueError):
            step(Benchmark(1.0, 1.0), MarketState(price=10.0), -1.0, NO_NOISE)


class TestAr1Step:
    def test_worked_example(self):
        params = Ar1Extra(theta=0.1, gamma=0.5, rho=0.9, sigma_eps=1.0, sigma_eta=1.0)
        state = MarketState(price=100.0, aux=2.0)
        nxt = step(params, state, trade=0.0, noise=NO_NOISE)
        assert nxt.aux == pytest.approx(1.8, abs=1e-15)
        assert nxt.price == pytest.approx(100.9, abs=1e-12)

    def test_impact_and_state_noise(self):
        params = Ar1Extra(theta=0.1, gamma=0.5, rho=0.5, sigma_eps=1.0, sigma_eta=2.0)
        nxt = step(params, MarketState(price=100.0, aux=1.0), trade=10.0, noise=(1.0, 0.5))
        # X' = 0.5 + 1.0 = 1.5; P' = 100 + 1 + 0.75 + 1
        assert nxt.aux == pytest.approx(1.5)
        assert nxt.price == pytest.approx(102.75)

    def test_identity_with_zero_state(self):
        params = Ar1Extra(theta=0.1, gamma=0.5, rho=0.9, sigma_eps=1.0, sigma_eta=1.0)
        state = MarketState(price=72.0, aux=0.0)
        assert step(params, state, 0.0, NO_NOISE).price == state.price


class TestSpreadAlias:
    def test_is_one_code_path(self):
        spread = Spread(theta=0.1, gamma=0.5, rho=0.9, sigma_eps=1.0, sigma_eta=1.0)
        assert isinstance(spread, Ar1Extra)
        twin = Ar1Extra(theta=0.1, gamma=0.5, rho=0.9, sigma_eps=1.0, sigma_eta=1.0)
        state = MarketState(price=100.0, aux=2.0)
        a = step(spread, state, 5.0, (0.3, -0.2))
        b = step(twin, state, 5.0, (0.3, -0.2))
        assert a.price == b.price
        assert a.aux == b.aux


class TestLinearPercentageStep:
    def test_worked_example(self):
        params = LinearPercentage(mu_B=0.0, sigma_B=0.2, theta=0.001, gamma=0.0, rho=0.5, sigma_eta=1.0)
        state = MarketState(price=100.0, no_impact_price=100.0)
        nxt = step(params, state, trade=10.0, noise=NO_NOISE)
        assert nxt.no_impact_price == pytest.approx(100.0)
        assert nxt.price == pytest.approx(101.0)

    def test_no_impact_price_stays_positive(self):
        params = LinearPercentage(mu_B=-0.1, sigma_B=0.5, theta=0.001, gamma=0.2, rho=0.5, sigma_eta=1.0)
        state = MarketState(price=100.0, no_impact_price=100.0)
        for z in (-8.0, -3.0, 0.0, 3.0):
            nxt = step(params, state, 0.0, (z, 0.0))
            assert nxt.no_impact_price > 0.0
            state = nxt

    def test_requires_no_impact_price(self):
        params = LinearPercentage(mu_B=0.0, sigma_B=0.2, theta=0.001, gamma=0.0, rho=0.5, sigma_eta=1.0)
        with pytest.raises(ValueError, match="no_impact_price"):
            step(params, MarketState(price=100.0), 1.0, NO_NOISE)


class TestLiquidityStep:
    def test_direct_substitution(self):
        params = make_liquidity()
        state = MarketState(price=100.0, aux=100.0)
        nxt = step(params, state, trade=10.0, noise=NO_NOISE)
        # O' = 90; P' = 100*(0.01 + 1 + 0.01 - 0.0005*80) = 98
        assert nxt.aux == pytest.approx(90.0)
        assert nxt.price == pytest.approx(98.0)

    def test_trade_above_volume_raises(self):
        params = make_liquidity()
        state = MarketState(price=100.0, aux=100.0)
        with pytest.raises(LiquidityViolationError):
            step(params, state, trade=90.1, noise=NO_NOISE)

    def test_volume_clamped_at_zero(self):
        params = make_liquidity()
        vol, clamped = ar1_volume_update(params, 1.0, -5.0)
        assert vol == 0.0
        assert clamped
        vol, clamped = ar1_volume_update(params, 100.0, 0.1)
        assert vol == pytest.approx(90.5)
        assert not clamped

    def test_nonpositive_price_warns_but_returns(self):
        params = make_liquidity(gamma=0.5)
        state = MarketState(price=100.0, aux=100.0)
        with pytest.warns(DegeneratePathWarning):
            nxt = step(params, state, trade=0.0, noise=NO_NOISE)
        assert nxt.price < 0.0

    def test_beta_is_theta_plus_gamma(self):
        params = make_liquidity(theta=0.2, gamma=0.1)
        assert params.beta == params.theta + params.gamma


class TestStepPurity:
    def test_bit_identical_repeats(self):
        params = Ar1Extra(theta=0.37, gamma=0.11, rho=-0.4, sigma_eps=0.9, sigma_eta=1.7)
        state = MarketState(price=250.125, aux=-3.5, time_index=4)
        a = step(params, state, 12.75, (0.123456, -1.654321))
        b = step(params, state, 12.75, (0.123456, -1.654321))
        assert (a.price, a.aux, a.time_index) == (b.price, b.aux, b.time_index)


class TestValidation:
    @pytest.mark.parametrize(
        "bad",
        [
            dict(theta=0.0, sigma_eps=1.0),
            dict(theta=-1.0, sigma_eps=1.0),
            dict(theta=1.0, sigma_eps=-0.5),
            dict(theta=math.inf, sigma_eps=1.0),
        ],
    )
    def test_benchmark_rejects(self, bad):
        with pytest.raises(ValueError):
            Benchmark(**bad)

    def test_benchmark_allows_noise_free_law(self):
        params = Benchmark(theta=1.0, sigma_eps=0.0)
        state = MarketState(price=100.0)
        assert step(params, state, 5.0, (1.7, 0.0)).price == 105.0

    def test_ar1_rejects_unit_root(self):
        with pytest.raises(ValueError):
            Ar1Extra(theta=1.0, gamma=0.5, rho=1.0, sigma_eps=1.0, sigma_eta=1.0)

    def test_liquidity_requires_positive_gamma(self):
        with pytest.raises(ValueError):
            make_liquidity(gamma=0.0)

    def test_state_rejects_nonpositive_no_impact_price(self):
        with pytest.raises(ValueError):
            MarketState(price=100.0, no_impact_price=0.0)

    def test_state_rejects_negative_time_index(self):
        with pytest.raises(ValueError):
            MarketState(price=100.0, time_index=-1)


class TestConvexityCheck:
    def test_holds_above_threshold(self):
        assert convexity_check(Benchmark(theta=1.0, sigma_eps=1.0)) is True

    def test_boundary_excluded(self):
        assert convexity_check(Benchmark(theta=0.75, sigma_eps=1.0)) is False

    def test_fails_below_threshold(self):
        assert convexity_check(Benchmark(theta=0.1, sigma_eps=1.0)) is False

    def test_non_benchmark_unsupported(self):
        params = Ar1Extra(theta=1.0, gamma=0.5, rho=0.9, sigma_eps=1.0, sigma_eta=1.0)
        with pytest.raises(ValueError):
            convexity_check(params)
