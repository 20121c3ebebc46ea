"""Tests for the volume-constrained liquidity solver.

Frozen oracle values: the terminal closed form was checked against seeded
2e6-draw rejection Monte Carlo of the conditional premium (seed 411:
1820.294890211295 +/- 0.282815996813938 vs closed 1820.0051336242236, 1.0 SE;
seed 412: 960.4454339441547 +/- 0.054322059695999986 vs closed
960.4000000000001, 0.8 SE).  The two-stage trade was checked against the
1000-point-grid x 1e5-path simulation brute force run inside the test.
"""
import math
import warnings

import numpy as np
import pytest

from execsched.dp import (
    Horizon,
    InfeasibleLiquidityError,
    RecursionConfig,
    ResolutionWarning,
    SolverError,
)
from execsched.kernels import mills_psi
from execsched.liquidity import _make_penultimate, _mills_form, solve_liquidity
from execsched.models import Liquidity, MarketState

SPEC_PARAMS = Liquidity(
    alpha=0.01, theta=0.05, gamma=0.02, rho=0.5, sigma_eps=0.5, sigma_eta=10.0
)
SPEC_STATE = MarketState(price=100.0, aux=50.0)


@pytest.fixture(scope="module")
def spec_solution():
    return solve_liquidity(SPEC_PARAMS, Horizon(2, 20.0), SPEC_STATE)


class TestTerminalForm:
    def test_closed_form_frozen(self):
        assert _mills_form(SPEC_PARAMS, 100.0, 50.0, 20.0) == pytest.approx(
            1820.0051336242236, rel=1e-12
        )

    def test_closed_form_vs_rejection_mc(self):
        # frozen MC header values; the draw is reproduced here so the oracle
        # stays independent of the closed form under test
        cases = [
            (411, SPEC_PARAMS, 100.0, 50.0, 20.0),
            (412, Liquidity(alpha=-0.002, theta=0.01, gamma=0.005, rho=0.3,
                            sigma_eps=1.5, sigma_eta=4.0), 80.0, 120.0, 35.0),
        ]
        for seed, p, price, vol, resid in cases:
            rng = np.random.default_rng(seed)
            eta = rng.normal(0.0, p.sigma_eta, 2_000_000)
            eps = rng.normal(0.0, p.sigma_eps, 2_000_000)
            nxt = price * (p.alpha + 1.0 + p.beta * resid - p.gamma * (p.rho * vol + eta)) + eps
            prem = nxt - price
            kept = prem[prem > 0.0] * resid
            se = kept.std(ddof=1) / np.sqrt(kept.size)
            assert abs(_mills_form(p, price, vol, resid) - kept.mean()) <= 3.0 * se

    def test_gamma_collapse_to_single_noise_arm(self):
        # with gamma ~ 0 and alpha = 0 the scale loses the volume arm and the
        # form reduces to sigma_eps * W * psi(theta*W*P/sigma_eps)
        p = Liquidity(alpha=0.0, theta=0.05, gamma=1e-12, rho=0.5, sigma_eps=0.5, sigma_eta=10.0)
        got = float(_mills_form(p, 100.0, 50.0, 20.0))
        want = 0.5 * 20.0 * float(mills_psi(0.05 * 20.0 * 100.0 / 0.5))
        assert got == pytest.approx(want, rel=1e-7)


class TestSingleStage:
    def test_forced_trade_when_volume_permits(self):
        sched, table = solve_liquidity(SPEC_PARAMS, Horizon(1, 20.0), SPEC_STATE)
        assert sched.trades == (20.0,)
        # certainty-equivalent bound is rho*O = 25 >= 20
        assert table.metadata["volume_bounds"] == (25.0,)
        assert table.value_samples[0][-1, 1] == pytest.approx(1820.0051336242236, rel=1e-12)

    def test_infeasible_when_order_exceeds_volume(self):
        with pytest.raises(InfeasibleLiquidityError):
            solve_liquidity(SPEC_PARAMS, Horizon(1, 26.0), SPEC_STATE)

    def test_infeasible_when_bound_not_positive(self):
        p = Liquidity(alpha=0.01, theta=0.05, gamma=0.02, rho=-0.5, sigma_eps=0.5, sigma_eta=10.0)
        with pytest.raises(InfeasibleLiquidityError, match="stage 1"):
            solve_liquidity(p, Horizon(1, 5.0), SPEC_STATE)


class TestTwoStage:
    def test_first_trade_frozen(self, spec_solution):
        sched, table = spec_solution
        assert sched.trades[0] == pytest.approx(11.37638239225765, abs=1e-6)
        assert math.fsum(sched.trades) == pytest.approx(20.0, abs=1e-12)
        assert table.value_samples[0][-1, 1] == pytest.approx(826.3037125347257, rel=1e-9)

    def test_first_trade_inside_simulation_brute_force_neighborhood(self, spec_solution):
        # the spec-sized oracle: 1000-point S grid, 1e5 paths with common
        # random numbers, stage cost by rejection mean, continuation by the
        # terminal closed form at the realized (P', O'); the reported trade
        # must sit where the sampled objective is within 3 SE of its minimum
        p, total = SPEC_PARAMS, 20.0
        rng = np.random.default_rng(413)
        eta = rng.normal(0.0, p.sigma_eta, 100_000)
        eps = rng.normal(0.0, p.sigma_eps, 100_000)
        o2 = p.rho * 50.0 + eta
        sgrid = np.linspace(0.0, total, 1000)
        means = np.empty(sgrid.size)
        ses = np.empty(sgrid.size)
        for i, s in enumerate(sgrid):
            p2 = 100.0 * (p.alpha + 1.0 + p.beta * s - p.gamma * o2) + eps
            prem = p2 - 100.0
            kept = prem[prem > 0.0]
            cost = s * kept.mean()
            cost_se = s * kept.std(ddof=1) / np.sqrt(kept.size)
            resid = total - s
            scale = np.hypot(p.gamma * p2 * p.sigma_eta, p.sigma_eps)
            u = p2 * (p.alpha + p.beta * resid - p.gamma * p.rho * o2) / scale
            vt = resid * scale * mills_psi(u)
            means[i] = cost + vt.mean()
            ses[i] = math.hypot(cost_se, vt.std(ddof=1) / np.sqrt(vt.size))
        best = int(np.argmin(means))
        inside = sgrid[means <= means[best] + 3.0 * ses[best]]
        sched, _ = spec_solution
        assert inside.min() <= sched.trades[0] <= inside.max()

    def test_policy_agrees_with_schedule_at_top_node(self, spec_solution):
        sched, table = spec_solution
        assert table.stages[0].trade(20.0) == pytest.approx(sched.trades[0], abs=1e-6)

    def test_objective_stable_under_order_doubling(self):
        pen40 = _make_penultimate(SPEC_PARAMS, 100.0, 50.0, 25.0, 20.0, 40, 40)
        pen80 = _make_penultimate(SPEC_PARAMS, 100.0, 50.0, 25.0, 20.0, 80, 80)
        s = np.array([11.38])
        w = np.array([20.0])
        j40 = float(pen40.objective(s, w)[0])
        j80 = float(pen80.objective(s, w)[0])
        assert abs(j80 - j40) <= 1e-6 * abs(j40)

    def test_resolution_warning_on_coarse_quadrature(self):
        with pytest.warns(ResolutionWarning):
            solve_liquidity(
                SPEC_PARAMS, Horizon(2, 20.0), SPEC_STATE, RecursionConfig(quad_order=1)
            )

    def test_no_resolution_warning_at_default_order(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", ResolutionWarning)
            solve_liquidity(
                SPEC_PARAMS, Horizon(2, 20.0), SPEC_STATE, RecursionConfig(grid_nodes=8)
            )

    def test_infeasible_terminal_residual(self):
        # rho = 0.2 leaves bound_2 = 2 while at least half the order must
        # wait for stage 2 under bound_1 = 10
        p = Liquidity(alpha=0.01, theta=0.05, gamma=0.02, rho=0.2, sigma_eps=0.5, sigma_eta=10.0)
        with pytest.raises(InfeasibleLiquidityError, match="terminal residual"):
            solve_liquidity(p, Horizon(2, 20.0), SPEC_STATE, RecursionConfig(grid_nodes=8))


class TestLongerHorizons:
    def test_three_stage_respects_bounds_and_sums(self):
        p = Liquidity(alpha=0.01, theta=0.05, gamma=0.02, rho=0.9, sigma_eps=0.5, sigma_eta=10.0)
        sched, table = solve_liquidity(p, Horizon(3, 20.0), SPEC_STATE, RecursionConfig(grid_nodes=16))
        bounds = table.metadata["volume_bounds"]
        assert math.fsum(sched.trades) == pytest.approx(20.0, abs=1e-9)
        for s, b in zip(sched.trades, bounds):
            assert 0.0 <= s <= b + 1e-9
        assert len(table.stages) == 3

    def test_three_stage_deterministic(self):
        p = Liquidity(alpha=0.01, theta=0.05, gamma=0.02, rho=0.9, sigma_eps=0.5, sigma_eta=10.0)
        cfg = RecursionConfig(grid_nodes=16)
        s1, _ = solve_liquidity(p, Horizon(3, 20.0), SPEC_STATE, cfg)
        s2, _ = solve_liquidity(p, Horizon(3, 20.0), SPEC_STATE, cfg)
        assert s1.trades == s2.trades


class TestValidation:
    def test_rejects_nonpositive_price(self):
        with pytest.raises(ValueError, match="price"):
            solve_liquidity(SPEC_PARAMS, Horizon(2, 20.0), MarketState(price=-1.0, aux=50.0))

    def test_degenerate_ce_price_raises_solver_error(self):
        # a strongly negative drift drives the certainty-equivalent price
        # through zero before the horizon ends
        p = Liquidity(alpha=-2.0, theta=0.05, gamma=0.02, rho=0.5, sigma_eps=0.5, sigma_eta=10.0)
        with pytest.raises(SolverError, match="price"):
            solve_liquidity(p, Horizon(2, 20.0), SPEC_STATE)

    def test_metadata_describes_the_run(self, spec_solution):
        _, table = spec_solution
        md = table.metadata
        assert md["model"] == "liquidity"
        assert md["formulation"] == "simple"
        assert md["method"] == "quadrature-recursion"
        assert md["volume"] == 50.0
        assert md["volume_bounds"] == (25.0, 12.5)
