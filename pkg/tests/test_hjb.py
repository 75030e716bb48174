import dataclasses
import warnings

import numpy as np
import pytest

from zonemm.hjb import (Lattice, LinearCoefficients, NumericalError, PolicyGrid,
                        StabilityWarning, extract_policy, imbalance_curves,
                        implicit_step, solve_hjb, solve_platform,
                        stability_max_dt, write_imbalance_csv,
                        write_solution_csv)
from zonemm.model import (ExecutionMeasure, IntensitySpec, ModelParams,
                          PenaltySpec, ValidationError, build_bundle,
                          power_law_measure)
from zonemm.output import read_csv
from zonemm.presets import degenerate_oracle, desk


def degenerate_setup():
    b = build_bundle(degenerate_oracle())
    lat = Lattice.make(b.params, n_t=100, n_y=100)
    return b, lat


def desk_setup(n_t=300, n_y=70, **overrides):
    b = build_bundle(desk(**overrides))
    lat = Lattice.make(b.params, n_t=n_t, n_y=n_y)
    return b, lat


def run(b, lat, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StabilityWarning)
        return solve_hjb(b.params, (b.intensity_ask, b.intensity_bid),
                         (b.measure_ask, b.measure_bid), b.penalty, lat, **kw)


class TestLattice:
    def test_nodes_and_exact_stencils(self):
        b, _ = degenerate_setup()
        lat = Lattice.make(b.params, n_t=10, n_y=70)
        assert lat.y_nodes[0] == -b.params.ybar
        assert lat.y_nodes[-1] == b.params.ybar
        # eta = 0.2 and 7 | n_y make both reset stencils land on nodes
        assert lat.idx_y_plus[1] == 0.0
        assert lat.idx_y_minus[1] == 0.0
        assert lat.y_nodes[lat.idx_y_plus[0]] == pytest.approx(b.params.y_plus)
        assert lat.y_nodes[lat.idx_y_minus[0]] == pytest.approx(b.params.y_minus)

    def test_inexact_stencil_weights_in_unit_interval(self):
        b, _ = degenerate_setup()
        p2 = dataclasses.replace(b.params, eta=0.23)
        lat = Lattice.make(p2, n_t=10, n_y=70)
        for jlo, w in (lat.idx_y_plus, lat.idx_y_minus):
            assert 0 <= jlo < 70
            assert 0.0 < w < 1.0


class TestImplicitStep:
    def lattice(self):
        p = ModelParams(horizon=1.0, sigma=0.02, delta=0.01, eta=0.2, gamma=1.0,
                        inventory_cap=10.0, volume_steps=5, ask_cap=4.0,
                        bid_cap=4.0)
        return p, Lattice.make(p, n_t=10, n_y=70)

    def test_zero_operator_is_identity_inside(self):
        p, lat = self.lattice()
        rhs = np.full(71, 3.7)
        rhs[0] = rhs[-1] = 0.0
        out = implicit_step(rhs, LinearCoefficients(0.0, 0.0, np.zeros(71)),
                            0.05, lat)
        assert np.allclose(out[1:-1], 3.7)
        # identification rows reproduce the interior value
        assert out[0] == pytest.approx(3.7)
        assert out[-1] == pytest.approx(3.7)

    def test_pure_diffusion_keeps_constants(self):
        p, lat = self.lattice()
        rhs = np.full(71, -2.0)
        rhs[0] = rhs[-1] = 0.0
        out = implicit_step(rhs, LinearCoefficients(1e-4, 0.0, np.zeros(71)),
                            0.1, lat)
        assert np.allclose(out, -2.0, atol=1e-13)

    def test_manufactured_solution_orders(self):
        # field e^{-t} * (2 + cos(2 pi y / delta)) satisfies both reset
        # identifications because each reset shifts y by exactly one tick
        p, _ = self.lattice()
        D = p.sigma ** 2 / 2
        om = 2 * np.pi / p.delta
        ia = IntensitySpec("affine", "ask", A=10.0, B=0.1, y_bound=p.ybar,
                           horizon=p.horizon)
        ib = IntensitySpec("affine", "bid", A=10.0, B=0.1, y_bound=p.ybar,
                           horizon=p.horizon)

        def march(n_t, n_y):
            from zonemm.hjb import _assemble
            lat = Lattice.make(p, n_t=n_t, n_y=n_y)
            y = lat.y_nodes
            r = -(ia.eval_grid(0.0, y) + ib.eval_grid(0.0, y))
            coeffs = LinearCoefficients(D, 0.0, r)
            system = _assemble([coeffs], lat.dt, lat)
            phi = 2.0 + np.cos(om * y)
            phipp = -om ** 2 * np.cos(om * y)

            def exact(t):
                return np.exp(-t) * phi

            # one public single-shot step agrees with the factored solver
            rhs0 = exact(1.0) + lat.dt * (exact(1.0) - D * np.exp(-1.0) * phipp
                                          - r * exact(1.0))
            rhs0[0] = rhs0[-1] = 0.0
            assert np.allclose(implicit_step(rhs0, coeffs, lat.dt, lat),
                               system.solve(rhs0.reshape(1, -1))[0], rtol=1e-14)

            u = exact(1.0)
            for k in range(n_t - 1, -1, -1):
                t = lat.t_nodes[k]
                src = exact(t) - D * np.exp(-t) * phipp - r * exact(t)
                rhs = (u + lat.dt * src).reshape(1, -1)
                rhs[:, 0] = rhs[:, -1] = 0.0
                u = system.solve(rhs)[0]
            return np.abs(u - exact(0.0)).max()

        e_h = [march(20000, n_y) for n_y in (21, 42, 84)]
        orders_h = np.log2(np.array(e_h[:-1]) / np.array(e_h[1:]))
        assert orders_h.min() > 1.7

        e_t = [march(n_t, 280) for n_t in (50, 100, 200)]
        orders_t = np.log2(np.array(e_t[:-1]) / np.array(e_t[1:]))
        assert abs(orders_t.mean() - 1.0) < 0.2


class TestDegenerateOracle:
    def test_matches_closed_form(self):
        b, lat = degenerate_setup()
        p = b.params
        sol = run(b, lat, snapshot_times=[0.0, 30.0])
        Qs = p.inventory_grid()
        for t, layer in sol.value_snapshots.items():
            exact = -np.exp(p.gamma * b.penalty.eval_grid(Qs)
                            + p.sigma ** 2 * p.gamma ** 2 * Qs ** 2
                            * (p.horizon - t) / 2.0)
            rel = np.abs(layer - exact[:, None]) / np.abs(exact[:, None])
            assert rel.max() <= 1e-3

    def test_zero_inventory_row_constant(self):
        b, lat = degenerate_setup()
        sol = run(b, lat)
        i0 = b.params.inventory_index(0.0)
        assert np.abs(sol.u0[i0] + 1.0).max() < 1e-10

    def test_value_independent_of_y(self):
        b, lat = degenerate_setup()
        sol = run(b, lat)
        assert np.abs(sol.u0 - sol.u0[:, [50]]).max() < 1e-12

    def test_degenerate_policy_quotes_nothing(self):
        b, lat = degenerate_setup()
        sol = run(b, lat)
        qa, qb = sol.policy_snapshots[0.0]
        assert not qa.any() and not qb.any()


class TestSolverInvariants:
    def test_negativity_and_envelope(self):
        b, lat = desk_setup()
        p = b.params
        sol = run(b, lat)
        assert sol.diagnostics["max_u"] < 0.0
        bound = np.exp(p.gamma * b.penalty.eval_grid(np.array([p.inventory_cap]))[0]
                       + p.sigma ** 2 * p.gamma ** 2 * p.inventory_cap ** 2
                       * p.horizon / 2.0)
        assert -sol.diagnostics["min_u"] <= bound * (1 + 1e-9)

    def test_boundary_identification_rows(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        jp, wp = lat.idx_y_plus
        jm, wm = lat.idx_y_minus
        top = (1 - wp) * sol.u0[:, jp] + wp * sol.u0[:, jp + 1]
        bot = (1 - wm) * sol.u0[:, jm] + wm * sol.u0[:, jm + 1]
        assert np.abs(sol.u0[:, -1] - top).max() < 1e-12
        assert np.abs(sol.u0[:, 0] - bot).max() < 1e-12

    def test_mirror_symmetry(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        assert np.abs(sol.u0 - sol.u0[::-1, ::-1]).max() \
            <= 1e-9 * np.abs(sol.u0).max()
        qa, qb = sol.policy_snapshots[0.0]
        assert np.array_equal(qa, qb[::-1, ::-1])

    def test_log_concavity_tracked(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        assert sol.diagnostics["max_log_concavity_violation"] <= 1e-6

    def test_stability_warning_emitted(self):
        b, _ = desk_setup()
        dt_max = stability_max_dt(b.params, b.intensity_ask, b.intensity_bid)
        lat = Lattice.make(b.params, n_t=int(b.params.horizon / dt_max / 4), n_y=42)
        with pytest.warns(StabilityWarning):
            solve_hjb(b.params, (b.intensity_ask, b.intensity_bid),
                      (b.measure_ask, b.measure_bid), b.penalty, lat)

    def test_continuous_volumes_rejected(self):
        b, lat = desk_setup()
        p = dataclasses.replace(b.params, volume_steps=None)
        with pytest.raises(ValidationError, match="finite volume grid"):
            solve_hjb(p, (b.intensity_ask, b.intensity_bid),
                      (b.measure_ask, b.measure_bid), b.penalty, lat)


class TestPolicy:
    def test_extract_policy_matches_snapshot(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        qa, qb = extract_policy(sol.u0, (b.measure_ask, b.measure_bid),
                                b.params, lat)
        sa, sb = sol.policy_snapshots[0.0]
        assert np.array_equal(qa.astype(np.int16), sa)
        assert np.array_equal(qb.astype(np.int16), sb)

    def test_no_ask_interest_when_distance_unfavourable(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        qa, _ = sol.policy_snapshots[0.0]
        i0 = b.params.inventory_index(0.0)
        unfavourable = lat.y_nodes >= b.params.delta / 2 + 0.001
        assert not qa[i0, unfavourable].any()

    def test_short_inventory_buys_more_sells_less(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        qa, qb = sol.policy_snapshots[0.0]
        i0 = b.params.inventory_index(0.0)
        im = b.params.inventory_index(-15.0)
        assert np.all(qb[im] >= qb[i0])
        assert np.all(qa[im] <= qa[i0])

    def test_admissibility_caps(self):
        b, lat = desk_setup()
        sol = run(b, lat)
        qa, qb = sol.policy_snapshots[0.0]
        i = np.arange(b.params.inventory_levels)
        assert np.all(qa <= i[:, None])
        assert np.all(qb <= (i[::-1])[:, None])
        assert qa[0].max() == 0      # ask blocked at Q = -Qbar

    def test_strictly_negative_layer_required(self):
        b, lat = desk_setup()
        with pytest.raises(ValidationError):
            extract_policy(np.ones((b.params.inventory_levels, lat.n_y + 1)),
                           (b.measure_ask, b.measure_bid), b.params, lat)


class TestPlatform:
    def test_zero_policy_gives_zero_volume(self):
        b, lat = desk_setup(n_t=100)
        pol = PolicyGrid.zero(b.params, lat)
        plat = solve_platform(pol, b.params, (b.intensity_ask, b.intensity_bid),
                              (b.measure_ask, b.measure_bid), lat)
        assert np.abs(plat.W0).max() == 0.0

    def test_vanishing_intensity_gives_vanishing_volume(self):
        b, lat = desk_setup(n_t=100)
        p = b.params
        tiny_a = IntensitySpec("affine", "ask", A=0.0, B=1e-9, y_bound=p.ybar,
                               horizon=p.horizon)
        tiny_b = IntensitySpec("affine", "bid", A=0.0, B=1e-9, y_bound=p.ybar,
                               horizon=p.horizon)
        pol = PolicyGrid.constant(p, lat, 10.0, 10.0)
        plat = solve_platform(pol, p, (tiny_a, tiny_b),
                              (b.measure_ask, b.measure_bid), lat)
        assert np.abs(plat.W0).max() < 1e-5

    def test_short_horizon_first_order_expansion(self):
        b, _ = desk_setup()
        p = dataclasses.replace(b.params, horizon=0.5)
        ia = dataclasses.replace(b.intensity_ask, horizon=0.5)
        ib = dataclasses.replace(b.intensity_bid, horizon=0.5)
        lat = Lattice.make(p, n_t=50, n_y=70)
        pol = PolicyGrid.constant(p, lat, 10.0, 10.0)
        plat = solve_platform(pol, p, (ia, ib),
                              (b.measure_ask, b.measure_bid), lat)
        i0 = p.inventory_index(0.0)
        j0 = lat.y_index(0.0)
        lam = ia.eval_grid(0.0, np.array([0.0]))[0] \
            + ib.eval_grid(0.0, np.array([0.0]))[0]
        first_order = 0.5 * lam * b.measure_ask.mean_executed(10.0)
        assert plat.W0[i0, j0] == pytest.approx(first_order, rel=0.02)

    def test_nonnegative(self):
        b, lat = desk_setup(n_t=150)
        sol = run(b, lat, keep_full=True)
        plat = solve_platform(sol.policy, b.params,
                              (b.intensity_ask, b.intensity_bid),
                              (b.measure_ask, b.measure_bid), lat)
        assert plat.W0.min() >= 0.0

    def test_policy_lattice_mismatch_rejected(self):
        b, lat = desk_setup(n_t=100)
        other = Lattice.make(b.params, n_t=50, n_y=70)
        pol = PolicyGrid.zero(b.params, other)
        with pytest.raises(ValidationError):
            solve_platform(pol, b.params, (b.intensity_ask, b.intensity_bid),
                           (b.measure_ask, b.measure_bid), lat)


class TestImbalance:
    def test_arithmetic(self):
        b, lat = desk_setup(n_t=50)
        sol = run(b, lat)
        # overwrite one snapshot with a crafted layer to pin the arithmetic
        qa, qb = sol.policy_snapshots[0.0]
        qa = qa.copy()
        qb = qb.copy()
        i0 = b.params.inventory_index(0.0)
        qa[i0, :] = 4      # 10 volume units
        qb[i0, :] = 12     # 30 volume units
        sol.policy_snapshots[0.0] = (qa, qb)
        table = imbalance_curves(sol, 0.0, [0.0])
        assert np.allclose(table["curves"][0], 0.5)

    def test_balanced_quotes_give_zero(self):
        b, lat = desk_setup(n_t=50)
        sol = run(b, lat)
        qa, qb = sol.policy_snapshots[0.0]
        qa = qa.copy()
        qa[:] = 3
        sol.policy_snapshots[0.0] = (qa, qa)
        table = imbalance_curves(sol, 0.0, [0.0, 5.0])
        assert np.allclose(table["curves"], 0.0)

    def test_undefined_cells_are_nan(self):
        b, lat = desk_setup(n_t=50)
        sol = run(b, lat)
        qa, qb = (x.copy() for x in sol.policy_snapshots[0.0])
        i0 = b.params.inventory_index(0.0)
        qa[i0, :5] = 0
        qb[i0, :5] = 0
        sol.policy_snapshots[0.0] = (qa, qb)
        table = imbalance_curves(sol, 0.0, [0.0])
        curve = table["curves"][0]
        both_zero = (qa[i0] == 0) & (qb[i0] == 0)
        assert both_zero[:5].all()
        assert np.all(np.isnan(curve[both_zero]))
        assert np.all(~np.isnan(curve[~both_zero]))

    def test_monotone_in_distance_where_defined(self):
        b, lat = desk_setup(n_t=600, n_y=70)
        sol = run(b, lat)
        table = imbalance_curves(sol, 0.0, [-15.0, 0.0, 15.0])
        for curve in table["curves"]:
            vals = curve[~np.isnan(curve)]
            assert np.all(np.diff(vals) >= -1e-12)


class TestCsv:
    def test_solution_csv_round_trips(self, tmp_path):
        b, lat = desk_setup(n_t=50, n_y=14)
        sol = run(b, lat, snapshot_times=[0.0, 150.0])
        path = tmp_path / "value_policy.csv"
        write_solution_csv(sol, path, [0.0, 150.0])
        header, rows = read_csv(path)
        assert header == ["t", "Q", "y", "u", "q_ask", "q_bid"]
        assert len(rows) == 2 * b.params.inventory_levels * (lat.n_y + 1)
        # bit-exact rewrite
        from zonemm.output import write_csv
        path2 = tmp_path / "again.csv"
        write_csv(path2, header, rows)
        assert path.read_bytes() == path2.read_bytes()

    def test_imbalance_blank_for_undefined(self, tmp_path):
        b, lat = desk_setup(n_t=50)
        sol = run(b, lat)
        qa, qb = (x.copy() for x in sol.policy_snapshots[0.0])
        i0 = b.params.inventory_index(0.0)
        qa[i0, :5] = 0
        qb[i0, :5] = 0
        sol.policy_snapshots[0.0] = (qa, qb)
        table = imbalance_curves(sol, 0.0, [0.0])
        path = tmp_path / "imbalance.csv"
        write_imbalance_csv(table, path)
        _, rows = read_csv(path)
        blanks = [r for r in rows if r[2] == ""]
        assert len(blanks) == 5, "undefined cells must be emitted as empty fields"
