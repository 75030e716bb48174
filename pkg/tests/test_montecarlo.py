import dataclasses
import math
import warnings

import numpy as np
import pytest

from zonemm.hjb import Lattice, PolicyGrid, StabilityWarning, solve_hjb
from zonemm.model import (ExecutionMeasure, IntensitySpec, ValidationError,
                          build_bundle)
from zonemm.montecarlo import (SimConfig, estimate_utility, simulate_policy,
                               write_summary, write_trades_csv)
from zonemm.output import read_csv
from zonemm.presets import desk


def bundle(**overrides):
    return build_bundle(desk(**overrides))


def estimate(b, cfg):
    return estimate_utility(cfg, b.params, (b.intensity_ask, b.intensity_bid),
                            (b.measure_ask, b.measure_bid), b.penalty)


class TestZeroPolicy:
    def test_zero_inventory_is_deterministic(self):
        b = bundle()
        est, diag = estimate(b, SimConfig(n_paths=64, dt=0.5, seed=1, policy="zero"))
        assert est.mean == -1.0
        assert est.std_error == 0.0
        assert diag["mean_trades"] == 0.0

    def test_matches_gaussian_closed_form(self):
        b = bundle()
        p = b.params
        Q0 = 10.0
        cfg = SimConfig(n_paths=4000, dt=1.0, seed=3, start_inventory=Q0,
                        policy="zero")
        est, diag = estimate(b, cfg)
        exact = -math.exp(p.gamma * b.penalty.eval_grid(np.array([Q0]))[0]
                          + p.gamma ** 2 * p.sigma ** 2 * Q0 ** 2 * p.horizon / 2)
        assert abs(est.mean - exact) <= 3.0 * est.std_error
        assert diag["envelope_ok"]

    def test_dt_does_not_change_the_law(self):
        # with no trades the increments telescope, so coarse and fine steps
        # agree in distribution; compare the two estimates loosely
        b = bundle()
        a, _ = estimate(b, SimConfig(n_paths=3000, dt=2.0, seed=6,
                                     start_inventory=5.0, policy="zero"))
        c, _ = estimate(b, SimConfig(n_paths=3000, dt=0.5, seed=7,
                                     start_inventory=5.0, policy="zero"))
        joint = math.hypot(a.std_error, c.std_error)
        assert abs(a.mean - c.mean) <= 3.0 * joint


class TestDeterminism:
    def test_same_seed_reproduces(self):
        b = bundle()
        cfg = SimConfig(n_paths=500, dt=0.5, seed=42, policy=("constant", 10.0, 10.0))
        e1, _ = estimate(b, cfg)
        e2, _ = estimate(b, cfg)
        assert e1 == e2

    def test_different_seed_differs(self):
        b = bundle()
        cfg1 = SimConfig(n_paths=500, dt=0.5, seed=42, policy=("constant", 10.0, 10.0))
        cfg2 = SimConfig(n_paths=500, dt=0.5, seed=43, policy=("constant", 10.0, 10.0))
        assert estimate(b, cfg1)[0] != estimate(b, cfg2)[0]

    def test_single_path_requires_two_for_errors(self):
        b = bundle()
        with pytest.raises(ValidationError, match="n_paths >= 2"):
            estimate(b, SimConfig(n_paths=1, dt=0.5, seed=1, policy="zero"))


class TestThinning:
    def test_constant_intensity_accepts_every_candidate(self):
        # affine slope 0 makes the rate equal its bound, so the acceptance
        # probability is one and trades arrive at the full Poisson rate
        b = bundle()
        p = b.params
        flat = IntensitySpec("affine", "ask", A=0.0, B=0.1, y_bound=p.ybar,
                             horizon=p.horizon)
        flat_b = dataclasses.replace(flat, side="bid")
        cfg = SimConfig(n_paths=4000, dt=0.25, seed=9,
                        policy=("constant", 2.5, 2.5))
        est, diag = estimate_utility(cfg, p, (flat, flat_b),
                                     (b.measure_ask, b.measure_bid), b.penalty)
        expected = 2 * 0.1 * p.horizon
        assert diag["mean_trades"] == pytest.approx(expected, rel=0.02)

    def test_state_dependent_rate_thins_the_flow(self):
        b = bundle()
        p = b.params
        cfg = SimConfig(n_paths=2000, dt=0.25, seed=9,
                        policy=("constant", 2.5, 2.5))
        est, diag = estimate(b, cfg)
        bound_rate = 2 * b.intensity_ask.rate_bound * p.horizon
        assert diag["mean_trades"] < bound_rate


class TestTradeMechanics:
    def test_pnl_increment_arithmetic(self):
        # freeze the price path (tiny sigma) so the ledger moves only through
        # trades: an ask fill at Y=0.002 earns executed * (delta/2 - 0.002)
        b = bundle(market__sigma=1e-12)
        p = b.params
        one = simulate_policy(SimConfig(n_paths=1, dt=0.1, seed=13, start_y=0.002,
                                        policy=("constant", 25.0, 25.0)),
                              p, (b.intensity_ask, b.intensity_bid),
                              (b.measure_ask, b.measure_bid), b.penalty)
        assert one.trades, "seed produced no trades"
        pnl_before = 0.0
        inv_before = 0.0
        for tr in one.trades:
            sign = 1.0 if tr.side == "ask" else -1.0
            assert tr.y == pytest.approx(0.002)
            edge = p.delta / 2 - tr.y if tr.side == "ask" else p.delta / 2 + tr.y
            assert tr.pnl_after == pytest.approx(pnl_before + tr.executed * edge,
                                                 abs=1e-9)
            assert tr.inventory_after == pytest.approx(
                inv_before - sign * tr.executed)
            assert tr.executed <= tr.quoted
            pnl_before = tr.pnl_after
            inv_before = tr.inventory_after

    def test_inventory_never_leaves_the_cap(self):
        b = bundle()
        p = b.params
        one = simulate_policy(SimConfig(n_paths=1, dt=0.1, seed=21,
                                        policy=("constant", 100.0, 100.0)),
                              p, (b.intensity_ask, b.intensity_bid),
                              (b.measure_ask, b.measure_bid), b.penalty)
        assert np.abs(one.inventory).max() <= p.inventory_cap + 1e-9

    def test_utility_sample_below_envelope(self):
        b = bundle()
        cfg = SimConfig(n_paths=2000, dt=0.25, seed=17,
                        policy=("constant", 50.0, 50.0))
        _, diag = estimate(b, cfg)
        assert diag["envelope_ok"]

    def test_eta_diagnostic_matches_configuration(self):
        # slow price motion keeps the per-step move well under the zone width,
        # so the in-step crossing resolution adds little continuation bias
        b = bundle(market__horizon=2000.0, market__sigma=0.002)
        cfg = SimConfig(n_paths=64, dt=0.005, seed=2, policy="zero")
        _, diag = estimate(b, cfg)
        assert diag["eta_hat"] == pytest.approx(0.2, abs=0.015)


class TestPolicyRanking:
    @pytest.fixture(scope="class")
    def solved(self):
        b = bundle()
        lat = Lattice.make(b.params, n_t=1500, n_y=70)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            sol = solve_hjb(b.params, (b.intensity_ask, b.intensity_bid),
                            (b.measure_ask, b.measure_bid), b.penalty, lat,
                            keep_full=True)
        return b, sol

    def test_extracted_policy_beats_naive_policies(self, solved):
        b, sol = solved
        base = dict(n_paths=3000, dt=0.1, seed=23, start_inventory=10.0)
        best, _ = estimate(b, SimConfig(policy=sol.policy, **base))
        zero, _ = estimate(b, SimConfig(policy="zero", **base))
        fixed, _ = estimate(b, SimConfig(policy=("constant", 2.5, 2.5), **base))
        for other in (zero, fixed):
            joint = math.hypot(best.std_error, other.std_error)
            assert best.mean - other.mean >= 2.0 * joint

    def test_policy_lookup_strict_mode(self, solved):
        b, sol = solved
        cfg = SimConfig(n_paths=16, dt=0.37, seed=3, policy=sol.policy,
                        strict_lookup=True)
        with pytest.raises(ValidationError, match="strict"):
            estimate(b, cfg)


class TestOutputs:
    def test_trade_log_and_summary_files(self, tmp_path):
        b = bundle()
        one = simulate_policy(SimConfig(n_paths=1, dt=0.1, seed=13,
                                        policy=("constant", 25.0, 25.0)),
                              b.params, (b.intensity_ask, b.intensity_bid),
                              (b.measure_ask, b.measure_bid), b.penalty)
        f = tmp_path / "trades.csv"
        write_trades_csv(one.trades, f)
        header, rows = read_csv(f)
        assert header == ["time", "side", "quoted", "executed", "Y", "P",
                          "inventory_after", "pnl_after"]
        assert len(rows) == len(one.trades)
        est, _ = estimate(b, SimConfig(n_paths=16, dt=0.5, seed=1, policy="zero"))
        s = tmp_path / "summary.txt"
        write_summary(est, s, {"note": 1.5})
        text = s.read_text()
        assert "mean=-1.0" in text and "n_paths=16" in text and "note=1.5" in text
