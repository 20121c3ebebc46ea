"""Attribution tests.

Worked examples use integer-valued prices and quantities so every product
and sum is exact in binary floating point; the telescoping identities then
hold bitwise, not just to tolerance.  Randomized balanced fill sets check
the zero-sum property against the audit's own notional-scaled tolerance.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from execsched.attribution import (
    AttributionReport,
    Fill,
    OrderContext,
    UnbalancedIntervalError,
    attribute,
    impact_complex,
    impact_simple,
    path_costs,
    shortfall,
    timing,
    zero_sum_audit,
)


def _buy(t, price, qty, who="self"):
    return Fill(t=t, price=price, qty=qty, side="buy", participant=who)


def _sell(t, price, qty, who="other"):
    return Fill(t=t, price=price, qty=qty, side="sell", participant=who)


def _ctx(path, total=None):
    path = tuple(float(p) for p in path)
    if total is None:
        total = 10.0
    return OrderContext(
        arrival_price=path[0],
        total_shares=float(total),
        horizon=len(path) - 1,
        price_path=path,
    )


class TestShortfall:
    def test_single_fill_one_point_move(self):
        ctx = _ctx([100.0, 101.0])
        assert shortfall(ctx, [_buy(1, 101.0, 10.0)]) == 10.0

    def test_all_fills_at_arrival(self):
        ctx = _ctx([100.0, 100.0, 100.0])
        fills = [_buy(1, 100.0, 4.0), _buy(2, 100.0, 6.0)]
        assert shortfall(ctx, fills) == 0.0

    def test_symmetric_cancellation(self):
        ctx = _ctx([100.0, 101.0, 99.0], total=100.0)
        fills = [_buy(1, 101.0, 50.0), _buy(2, 99.0, 50.0)]
        assert shortfall(ctx, fills) == 0.0

    def test_sell_is_sign_flipped(self):
        ctx = _ctx([100.0, 99.0, 97.0])
        fills = [_sell(1, 99.0, 4.0), _sell(2, 97.0, 6.0)]
        assert shortfall(ctx, fills) == 22.0

    def test_matches_per_interval_expansion(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            T = int(rng.integers(1, 7))
            path = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.02, T + 1)))
            path[0] = 100.0
            qty = rng.uniform(0.5, 5.0, T)
            fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(T)]
            ctx = _ctx(path, total=float(qty.sum()))
            expanded = math.fsum(q * (p - 100.0) for q, p in zip(qty, path[1:]))
            assert shortfall(ctx, fills) == pytest.approx(expanded, rel=1e-12, abs=1e-12)

    def test_quantity_mismatch_rejected(self):
        ctx = _ctx([100.0, 101.0])
        with pytest.raises(ValueError, match="order total"):
            shortfall(ctx, [_buy(1, 101.0, 9.0)])

    def test_fill_uses_its_own_price(self):
        # Fill away from the path moves shortfall but not the path steps.
        ctx = _ctx([100.0, 101.0])
        assert shortfall(ctx, [_buy(1, 101.5, 10.0)]) == 15.0
        assert impact_simple(ctx, [_buy(1, 101.5, 10.0)]) == 10.0


class TestImpactSimple:
    def test_up_then_down(self):
        ctx = _ctx([100.0, 101.0, 100.5], total=20.0)
        fills = [_buy(1, 101.0, 10.0), _buy(2, 100.5, 10.0)]
        assert impact_simple(ctx, fills) == 10.0

    def test_monotone_up(self):
        ctx = _ctx([100.0, 101.0, 102.0], total=20.0)
        fills = [_buy(1, 101.0, 10.0), _buy(2, 102.0, 10.0)]
        assert impact_simple(ctx, fills) == 20.0

    def test_flat_path(self):
        ctx = _ctx([100.0, 100.0, 100.0])
        fills = [_buy(1, 100.0, 5.0), _buy(2, 100.0, 5.0)]
        assert impact_simple(ctx, fills) == 0.0

    def test_sell_counts_down_steps(self):
        ctx = _ctx([100.0, 99.0, 97.0])
        fills = [_sell(1, 99.0, 4.0), _sell(2, 97.0, 6.0)]
        assert impact_simple(ctx, fills) == 4.0 + 12.0

    def test_monotone_timing_expansion(self):
        # On an all-up path: timing = sum over t>=2 of S_t * (P_{t-1} - P_0).
        path = [100.0, 101.0, 103.0, 106.0]
        qty = [2.0, 3.0, 5.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(3)]
        expected = 3.0 * (101.0 - 100.0) + 5.0 * (103.0 - 100.0)
        assert timing(ctx, fills, "simple") == expected

    def test_new_levels_only_skips_recovered_ground(self):
        path = [100.0, 105.0, 102.0, 105.0, 103.0]
        qty = [1.0, 1.0, 1.0, 1.0]
        ctx = _ctx(path, total=4.0)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(4)]
        assert impact_simple(ctx, fills) == 8.0
        assert impact_simple(ctx, fills, new_levels_only=True) == 5.0

    def test_new_levels_only_counts_fresh_highs(self):
        path = [100.0, 105.0, 102.0, 107.0]
        qty = [1.0, 1.0, 1.0]
        ctx = _ctx(path, total=3.0)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(3)]
        assert impact_simple(ctx, fills, new_levels_only=True) == 7.0


class TestImpactComplex:
    def test_monotone_up_timing_is_exactly_zero(self):
        path = [100.0, 101.0, 103.0, 106.0]
        qty = [2.0, 3.0, 5.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(3)]
        assert impact_complex(ctx, fills) == 41.0
        assert timing(ctx, fills, "complex") == 0.0

    def test_single_interval_equals_simple(self):
        ctx = _ctx([100.0, 101.0])
        fills = [_buy(1, 101.0, 10.0)]
        assert impact_complex(ctx, fills) == impact_simple(ctx, fills) == 10.0

    def test_dip_case_timing_identity(self):
        # Up, two down-steps, then up: timing collects the residual-weighted
        # down-steps W_2*(P_2-P_1) + W_3*(P_3-P_2).
        path = [100.0, 103.0, 101.0, 99.0, 104.0]
        qty = [4.0, 3.0, 2.0, 1.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(4)]
        w2, w3 = 6.0, 3.0
        expected = w2 * (101.0 - 103.0) + w3 * (99.0 - 101.0)
        assert abs(timing(ctx, fills, "complex") - expected) <= 1e-12
        assert timing(ctx, fills, "complex") == -18.0

    def test_charges_intervals_with_no_fill(self):
        # Nothing trades at t=2 but W_2 > 0, so the up-step there still costs.
        path = [100.0, 101.0, 102.0, 103.0]
        ctx = _ctx(path)
        fills = [_buy(1, 101.0, 6.0), _buy(3, 103.0, 4.0)]
        assert impact_complex(ctx, fills) == 10.0 * 1.0 + 4.0 * 1.0 + 4.0 * 1.0

    def test_residual_weight_exceeds_trade_weight_early(self):
        path = [100.0, 102.0, 101.0, 103.0]
        qty = [2.0, 5.0, 3.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(3)]
        assert impact_complex(ctx, fills) >= impact_simple(ctx, fills)


class TestPathCosts:
    def test_matches_record_level_for_path_priced_fills(self):
        path = [100.0, 103.0, 101.0, 99.0, 104.0]
        qty = [4.0, 3.0, 2.0, 1.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t]) for t in range(4)]
        for formulation in ("simple", "complex"):
            sf, imp, tim = path_costs(path, qty, "buy", formulation)
            assert sf == shortfall(ctx, fills)
            if formulation == "simple":
                assert imp == impact_simple(ctx, fills)
            else:
                assert imp == impact_complex(ctx, fills)
            assert tim == timing(ctx, fills, formulation)

    def test_rows_are_independent(self):
        rng = np.random.default_rng(11)
        paths = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.01, (6, 5)), axis=1))
        paths = np.concatenate([np.full((6, 1), 100.0), paths], axis=1)
        trades = rng.uniform(0.0, 3.0, (6, 5))
        sf, imp, tim = path_costs(paths, trades, "buy", "complex")
        for i in range(6):
            row = path_costs(paths[i], trades[i], "buy", "complex")
            assert (sf[i], imp[i], tim[i]) == row

    def test_zero_trade_rows_cost_nothing_simple(self):
        paths = np.array([[100.0, 101.0, 99.0]])
        trades = np.zeros((1, 2))
        sf, imp, tim = path_costs(paths, trades, "buy", "simple")
        assert sf[0] == imp[0] == tim[0] == 0.0

    def test_rejects_negative_trades_and_bad_shapes(self):
        with pytest.raises(ValueError, match=">= 0"):
            path_costs([100.0, 101.0], [-1.0])
        with pytest.raises(ValueError, match="one more column"):
            path_costs([100.0, 101.0], [1.0, 2.0])
        with pytest.raises(ValueError, match="side"):
            path_costs([100.0, 101.0], [1.0], side="short")
        with pytest.raises(ValueError, match="formulation"):
            path_costs([100.0, 101.0], [1.0], formulation="both")

    @given(
        st.lists(st.floats(90.0, 110.0), min_size=2, max_size=8),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_impact_nonnegative_and_decomposition_exact(self, prices, seed):
        path = np.asarray(prices)
        T = path.size - 1
        qty = np.random.default_rng(seed).uniform(0.0, 4.0, T)
        for side in ("buy", "sell"):
            for formulation in ("simple", "complex"):
                sf, imp, tim = path_costs(path, qty, side, formulation)
                assert imp >= 0.0
                assert tim == sf - imp


class TestAttribute:
    def test_report_fields(self):
        path = [100.0, 103.0, 101.0, 99.0, 104.0]
        qty = [4.0, 3.0, 2.0, 1.0]
        ctx = _ctx(path)
        fills = [_buy(t + 1, path[t + 1], qty[t], who="desk-a") for t in range(4)]
        report = attribute(ctx, fills, "complex")
        assert report.participant == "desk-a"
        assert report.side == "buy"
        assert report.formulation == "complex"
        assert report.shortfall == 17.0
        assert report.impact == 35.0
        assert report.timing == -18.0
        assert report.reference_value == 1000.0
        assert report.shortfall_bps == pytest.approx(1e4 * 17.0 / 1000.0, rel=1e-15)
        assert report.impact_bps == pytest.approx(1e4 * 35.0 / 1000.0, rel=1e-15)
        assert report.timing_bps == pytest.approx(-1e4 * 18.0 / 1000.0, rel=1e-15)

    def test_report_rejects_broken_identity(self):
        with pytest.raises(ValueError, match="exactly"):
            AttributionReport(
                participant="x",
                side="buy",
                formulation="simple",
                shortfall=10.0,
                impact=4.0,
                timing=5.0,
                shortfall_bps=1.0,
                impact_bps=0.4,
                timing_bps=0.5,
                reference_value=1e5,
            )


class TestValidation:
    def test_fill_rejects_bad_fields(self):
        for kwargs in (
            dict(t=0, price=100.0, qty=1.0, side="buy"),
            dict(t=True, price=100.0, qty=1.0, side="buy"),
            dict(t=1, price=0.0, qty=1.0, side="buy"),
            dict(t=1, price=100.0, qty=0.0, side="buy"),
            dict(t=1, price=100.0, qty=1.0, side="hold"),
            dict(t=1, price=100.0, qty=1.0, side="buy", participant=""),
        ):
            with pytest.raises(ValueError):
                Fill(**kwargs)

    def test_context_rejects_bad_paths(self):
        with pytest.raises(ValueError, match="P_0..P_T"):
            OrderContext(100.0, 10.0, 2, (100.0, 101.0))
        with pytest.raises(ValueError, match="arrival_price"):
            OrderContext(100.0, 10.0, 1, (101.0, 102.0))
        with pytest.raises(ValueError, match="finite and > 0"):
            OrderContext(100.0, 10.0, 1, (100.0, -1.0))
        with pytest.raises(ValueError, match="horizon"):
            OrderContext(100.0, 10.0, 0, (100.0,))

    def test_fill_outside_horizon(self):
        ctx = _ctx([100.0, 101.0])
        with pytest.raises(ValueError, match="outside the horizon"):
            shortfall(ctx, [_buy(2, 101.0, 10.0)])

    def test_mixed_sides_rejected(self):
        ctx = _ctx([100.0, 101.0])
        with pytest.raises(ValueError, match="one order at a time"):
            shortfall(ctx, [_buy(1, 101.0, 5.0), _sell(1, 101.0, 5.0, who="self")])

    def test_empty_fills_rejected(self):
        ctx = _ctx([100.0, 101.0])
        with pytest.raises(ValueError, match="at least one fill"):
            shortfall(ctx, [])

    def test_timing_rejects_unknown_formulation(self):
        ctx = _ctx([100.0, 101.0])
        with pytest.raises(ValueError, match="formulation"):
            timing(ctx, [_buy(1, 101.0, 10.0)], "net")


class TestZeroSumAudit:
    def test_single_interval_buyer_and_seller_up(self):
        fills = [_buy(1, 101.0, 10.0, who="b"), _sell(1, 101.0, 10.0, who="s")]
        audit = zero_sum_audit(fills, [100.0, 101.0], "simple")
        by_name = {r.participant: r for r in audit.reports}
        assert by_name["b"].impact == 10.0 and by_name["b"].timing == 0.0
        assert by_name["s"].impact == 0.0 and by_name["s"].timing == -10.0
        assert audit.residual == 0.0
        assert audit.passed

    def test_single_interval_price_down_mirrored(self):
        fills = [_buy(1, 99.0, 10.0, who="b"), _sell(1, 99.0, 10.0, who="s")]
        audit = zero_sum_audit(fills, [100.0, 99.0], "simple")
        by_name = {r.participant: r for r in audit.reports}
        assert by_name["b"].impact == 0.0 and by_name["b"].timing == -10.0
        assert by_name["s"].impact == 10.0 and by_name["s"].timing == 0.0
        assert audit.residual == 0.0
        assert audit.passed

    def test_unbalanced_interval_named(self):
        fills = [_buy(1, 101.0, 10.0, who="b"), _sell(1, 101.0, 9.0, who="s")]
        with pytest.raises(UnbalancedIntervalError, match="interval 1") as err:
            zero_sum_audit(fills, [100.0, 101.0])
        assert err.value.interval == 1

    def test_mismatched_fill_prices_fail_the_audit(self):
        # Quantities balance but the buyer paid off-path: totals no longer
        # cancel and the verdict says so rather than raising.
        fills = [_buy(1, 102.0, 10.0, who="b"), _sell(1, 101.0, 10.0, who="s")]
        audit = zero_sum_audit(fills, [100.0, 101.0])
        assert not audit.passed
        assert audit.residual == pytest.approx(10.0)

    @pytest.mark.parametrize("formulation", ["simple", "complex"])
    def test_randomized_balanced_sets(self, formulation):
        rng = np.random.default_rng(20260814)
        for _ in range(300):
            T = int(rng.integers(1, 7))
            path = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.02, T + 1)))
            path[0] = 100.0
            n_buyers = int(rng.integers(1, 3))
            n_sellers = int(rng.integers(1, 3))
            fills = []
            for t in range(1, T + 1):
                qty = float(rng.uniform(1.0, 50.0))
                buy_split = rng.dirichlet(np.ones(n_buyers)) * qty
                sell_split = rng.dirichlet(np.ones(n_sellers)) * qty
                for i, q in enumerate(buy_split):
                    if q > 0.0:
                        fills.append(_buy(t, float(path[t]), float(q), who=f"b{i}"))
                for i, q in enumerate(sell_split):
                    if q > 0.0:
                        fills.append(_sell(t, float(path[t]), float(q), who=f"s{i}"))
            audit = zero_sum_audit(fills, path, formulation)
            assert audit.passed
            assert abs(audit.residual) <= audit.tolerance

    def test_same_participant_both_sides_is_two_orders(self):
        fills = [
            _buy(1, 101.0, 10.0, who="desk"),
            _sell(1, 101.0, 10.0, who="desk"),
        ]
        audit = zero_sum_audit(fills, [100.0, 101.0])
        assert len(audit.reports) == 2
        assert {(r.participant, r.side) for r in audit.reports} == {
            ("desk", "buy"),
            ("desk", "sell"),
        }
