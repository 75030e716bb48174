import numpy as np
import pytest

from zonemm.model import (ExecutionMeasure, IntensitySpec, ModelParams,
                          PenaltySpec, ValidationError, build_bundle,
                          build_params, intensity_eval, penalty_eval,
                          power_law_measure)
from zonemm.presets import baseline, desk, tick_study


def make_params(**kw):
    base = dict(horizon=3600.0, sigma=0.005, delta=0.01, eta=0.2, gamma=1.0,
                inventory_cap=50.0, volume_steps=100, ask_cap=100.0, bid_cap=100.0)
    base.update(kw)
    return ModelParams(**base)


class TestModelParams:
    def test_derived_geometry(self):
        p = make_params()
        assert p.ybar == pytest.approx(0.007)
        assert p.y_plus == pytest.approx(-0.003)
        assert p.y_minus == pytest.approx(0.003)

    def test_eta_out_of_range(self):
        for eta in (0.5, 0.0, -0.1, 0.7):
            with pytest.raises(ValidationError, match="eta out of range"):
                make_params(eta=eta)

    def test_volume_step_from_reference_setup(self):
        p = make_params()
        assert p.volume_step == pytest.approx(0.5)
        assert p.inventory_levels == 201

    def test_caps_must_sit_on_the_volume_grid(self):
        make_params(ask_cap=99.5)          # multiple of 0.5: fine
        with pytest.raises(ValidationError):
            make_params(ask_cap=99.75)
        with pytest.raises(ValidationError):
            make_params(bid_cap=0.0)
        with pytest.raises(ValidationError):
            make_params(ask_cap=150.0)     # above 2*Qbar

    def test_nonpositive_constants_rejected(self):
        for kw in ({"sigma": 0.0}, {"delta": -1.0}, {"gamma": 0.0},
                   {"horizon": 0.0}, {"inventory_cap": 0.0}):
            with pytest.raises(ValidationError):
                make_params(**kw)

    def test_barrier_spacing_identities(self):
        p = make_params(delta=0.02, eta=0.31)
        a, b, a0, b0 = p.barrier_geometry()
        assert a0 - a == pytest.approx(p.delta)
        assert b - b0 == pytest.approx(p.delta)
        assert b - a0 == pytest.approx(2 * p.delta * p.eta)
        assert a == -b and b0 == -a0

    def test_continuous_sentinel(self):
        p = make_params(volume_steps=None)
        assert p.is_continuous
        with pytest.raises(ValidationError):
            p.volume_step

    def test_inventory_index_round_trip(self):
        p = make_params(volume_steps=20)
        grid = p.inventory_grid()
        for i, Q in enumerate(grid):
            assert p.inventory_index(Q) == i
        with pytest.raises(ValidationError):
            p.inventory_index(1.3)

    def test_build_params_from_config(self):
        cfg = baseline()
        p = build_params(cfg)
        assert p.volume_step == pytest.approx(0.5)
        cfg["preferences"].pop("gamma")
        with pytest.raises(ValidationError, match="gamma"):
            build_params(cfg)


class TestIntensity:
    def test_affine_values(self):
        p = make_params()
        spec = IntensitySpec("affine", "ask", A=10.0, B=0.1,
                             y_bound=p.ybar, horizon=p.horizon)
        assert intensity_eval(spec, 0.0, 0.0) == pytest.approx(0.1)
        assert intensity_eval(spec, 0.0, 0.005) == pytest.approx(0.15)
        bid = IntensitySpec("affine", "bid", A=10.0, B=0.1,
                            y_bound=p.ybar, horizon=p.horizon)
        assert intensity_eval(bid, 0.0, 0.005) == pytest.approx(0.05)
        assert spec.rate_bound == pytest.approx(0.1 + 10 * p.ybar)

    def test_exponential_value(self):
        p = make_params()
        spec = IntensitySpec("exponential_capped", "ask", A=1.5, B=200.0,
                             y_bound=p.ybar, horizon=p.horizon)
        assert intensity_eval(spec, 0.0, -0.005) == pytest.approx(1.5 * np.exp(-1.0))
        assert intensity_eval(spec, 0.0, 0.004) == pytest.approx(1.5)
        assert spec.rate_bound == pytest.approx(1.5)

    def test_affine_positivity_guard(self):
        p = make_params()
        with pytest.raises(ValidationError, match="positive"):
            IntensitySpec("affine", "ask", A=100.0, B=0.1,
                          y_bound=p.ybar, horizon=p.horizon)

    def test_domain_errors(self):
        p = make_params()
        spec = IntensitySpec("affine", "ask", A=10.0, B=0.1,
                             y_bound=p.ybar, horizon=p.horizon)
        with pytest.raises(ValidationError):
            intensity_eval(spec, 0.0, 2 * p.ybar)

    def test_positive_and_bounded_on_grid(self):
        p = make_params()
        for spec in (IntensitySpec("affine", "bid", A=10.0, B=0.1,
                                   y_bound=p.ybar, horizon=p.horizon),
                     IntensitySpec("exponential_capped", "bid", A=1.5, B=200.0,
                                   y_bound=p.ybar, horizon=p.horizon)):
            y = np.linspace(-p.ybar, p.ybar, 101)
            vals = spec.eval_grid(1.0, y)
            assert np.all(vals > 0)
            assert np.all(vals <= spec.rate_bound + 1e-15)

    def test_table_variant(self):
        p = make_params()
        t_nodes = np.array([0.0, p.horizon])
        y_nodes = np.array([-p.ybar, 0.0, p.ybar])
        vals = np.array([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]])
        spec = IntensitySpec("table", "ask", t_nodes=t_nodes, y_nodes=y_nodes,
                             values=vals, y_bound=p.ybar, horizon=p.horizon)
        assert spec.rate_bound == 4.0
        assert intensity_eval(spec, 0.0, 0.0) == pytest.approx(2.0)
        assert intensity_eval(spec, p.horizon, p.ybar) == pytest.approx(4.0)
        mid = intensity_eval(spec, p.horizon / 2, -p.ybar / 2)
        assert 1.0 < mid < 3.0


class TestExecutionMeasure:
    def test_power_law_reference_mass(self):
        mu = power_law_measure(100.0, range(101), 0.9)
        # independent oracle: geometric series sum
        expected = 0.1 / (1.0 - 0.9 ** 101)
        assert mu.masses[0] == pytest.approx(expected, rel=1e-12)
        assert mu.masses.sum() == pytest.approx(1.0, abs=1e-12)

    def test_single_atom_and_uniform(self):
        one = power_law_measure(7.0, [7.0], 0.42)
        assert one.masses.tolist() == [1.0]
        uni = power_law_measure(2.0, [0, 1, 2], 1.0)
        assert np.allclose(uni.masses, 1 / 3)

    def test_empty_atoms_rejected(self):
        with pytest.raises(ValidationError):
            power_law_measure(2.0, [], 0.9)
        with pytest.raises(ValidationError):
            power_law_measure(2.0, [0, 1, 2], 1.5)

    def test_cap_in_support_enforced_unless_test_mode(self):
        with pytest.raises(ValidationError, match="cap"):
            ExecutionMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.5]), cap=2.0)
        mu = ExecutionMeasure(np.array([0.0]), np.array([1.0]), cap=2.0,
                              test_mode=True)
        assert mu.mean_executed(10.0) == 0.0

    def test_mass_normalization_guard(self):
        with pytest.raises(ValidationError, match="sum"):
            ExecutionMeasure(np.array([0.0, 2.0]), np.array([0.5, 0.6]), cap=2.0)

    def test_step_alignment(self):
        mu = power_law_measure(10.0, [0, 2.5, 5, 10], 0.9)
        assert mu.step_indices(2.5).tolist() == [0, 1, 2, 4]
        with pytest.raises(ValidationError):
            mu.step_indices(3.0)


class TestPenalty:
    def test_quadratic_values(self):
        pen = PenaltySpec("quadratic", cap=50.0, coefficient=0.001)
        assert penalty_eval(pen, 50.0) == pytest.approx(2.5)
        assert penalty_eval(pen, 0.0) == 0.0
        pen5 = PenaltySpec("quadratic", cap=50.0, coefficient=0.005)
        assert penalty_eval(pen5, 10.0) == pytest.approx(0.5)

    def test_range_guard(self):
        pen = PenaltySpec("quadratic", cap=50.0, coefficient=0.001)
        with pytest.raises(ValidationError):
            penalty_eval(pen, 60.0)

    def test_table_and_convexity(self):
        vals = 0.002 * (np.arange(-5, 6) * 10.0) ** 2
        pen = PenaltySpec("table", cap=50.0, values=vals, volume_steps=5)
        assert penalty_eval(pen, -50.0) == pytest.approx(vals[0])
        assert pen.is_convex()
        bumpy = vals.copy()
        bumpy[5] = 3.0
        assert not PenaltySpec("table", cap=50.0, values=bumpy,
                               volume_steps=5).is_convex()


class TestBundle:
    @pytest.mark.parametrize("cfg", [baseline(), desk(), tick_study()])
    def test_presets_build(self, cfg):
        b = build_bundle(cfg)
        assert b.measure_ask.cap == b.params.ask_cap
        assert b.penalty.is_convex()

    def test_missing_section_is_named(self):
        cfg = baseline()
        del cfg["measure"]["ask"]
        with pytest.raises(ValidationError, match="measure.ask"):
            build_bundle(cfg)

    def test_atoms_must_match_volume_grid(self):
        cfg = desk()                       # volume step 2.5
        cfg["measure"]["ask"] = {"variant": "atoms", "volumes": [0.0, 1.0, 100.0],
                                 "masses": [0.3, 0.3, 0.4]}
        with pytest.raises(ValidationError, match="multiples"):
            build_bundle(cfg)

    def test_with_tick_rescales_geometry(self):
        b = build_bundle(desk())
        b2 = b.with_tick(0.005, 0.3)
        assert b2.params.ybar == pytest.approx(0.005 * 0.8)
        assert b2.intensity_ask.y_bound == pytest.approx(b2.params.ybar)
        # a tick so large the affine intensity would turn negative is rejected
        with pytest.raises(ValidationError):
            b.with_tick(0.02, 0.3)
