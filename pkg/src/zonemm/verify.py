"""Built-in verification suite: oracle comparisons, invariant checks, and
qualitative reproductions, each reported as one pass/fail line.

The quick level covers the closed-form and combinatorial oracles (seconds to
a couple of minutes); the full level adds the Monte Carlo cross-checks, the
policy-property audits and the desk-scale tick study.  The hours-class
full-scale tick reproduction only runs when explicitly requested.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import presets
from .hamiltonian import (InventorySlice, argmax_shortcut_ask, argmax_shortcut_bid,
                          hamiltonian_ask, hamiltonian_ask_fast, hamiltonian_bid,
                          hamiltonian_bid_fast)
from .hjb import Lattice, solve_hjb
from .model import ExecutionMeasure, ValidationError, build_bundle
from .montecarlo import SimConfig, estimate_utility
from .tick_sweep import run_sweep
from .uncertainty_zone import (DriverPath, barrier_sequence, estimate_eta,
                               midprice_path, simulate_driver)

__all__ = ["CheckResult", "Verifier", "QUICK_CHECKS", "FULL_CHECKS", "run_level"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: str
    expected: str
    runtime_s: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: measured {self.measured}, "
                f"expected {self.expected} ({self.runtime_s:.1f}s)")


def _timed(fn: Callable[[], tuple[bool, str, str]], name: str) -> CheckResult:
    t0 = _time.perf_counter()
    passed, measured, expected = fn()
    return CheckResult(name, passed, measured, expected, _time.perf_counter() - t0)


class Verifier:
    """Lazily caches the expensive solves shared between checks."""

    def __init__(self, rng_seed: int = 1234):
        self.seed = rng_seed
        self._baseline = None
        self._desk = None

    # -- shared runs --------------------------------------------------------

    def baseline_run(self):
        """Busy-market parameters on a reduced lattice, with policy snapshots
        on the stationarity probe times."""
        if self._baseline is None:
            cfg = presets.baseline()
            b = build_bundle(cfg)
            lat = Lattice.make(b.params, n_t=3600, n_y=70)
            T = b.params.horizon
            probes = list(np.linspace(0.0, 0.8 * T, 9)) + [T / 2.0]
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sol = solve_hjb(b.params, (b.intensity_ask, b.intensity_bid),
                                (b.measure_ask, b.measure_bid), b.penalty, lat,
                                snapshot_times=probes)
            self._baseline = (b, sol)
        return self._baseline

    def desk_run(self):
        if self._desk is None:
            b = build_bundle(presets.desk())
            lat = Lattice.make(b.params, n_t=4000, n_y=70)
            sol = solve_hjb(b.params, (b.intensity_ask, b.intensity_bid),
                            (b.measure_ask, b.measure_bid), b.penalty, lat,
                            keep_full=True)
            self._desk = (b, sol)
        return self._desk

    # -- criteria ------------------------------------------------------------

    def closed_form_pde(self) -> CheckResult:
        def body():
            b = build_bundle(presets.degenerate_oracle())
            p = b.params
            lat = Lattice.make(p, n_t=100, n_y=100)
            t0 = _time.perf_counter()
            sol = solve_hjb(p, (b.intensity_ask, b.intensity_bid),
                            (b.measure_ask, b.measure_bid), b.penalty, lat,
                            snapshot_times=[0.0, p.horizon / 2])
            el = _time.perf_counter() - t0
            Qs = p.inventory_grid()
            worst = 0.0
            for t, layer in sol.value_snapshots.items():
                exact = -np.exp(p.gamma * b.penalty.eval_grid(Qs)
                                + p.sigma**2 * p.gamma**2 * Qs**2 * (p.horizon - t) / 2.0)
                worst = max(worst, float(np.max(
                    np.abs(layer - exact[:, None]) / np.abs(exact[:, None]))))
            ok = worst <= 1e-3 and el < 10.0
            return ok, f"max rel err {worst:.2e} in {el:.1f}s", "<= 1e-3 in < 10 s"
        return _timed(body, "closed-form value oracle (zero-volume measure)")

    def zero_policy_mc(self) -> CheckResult:
        def body():
            b = build_bundle(presets.baseline())
            cfg = SimConfig(n_paths=20000, dt=4.0, seed=4, start_inventory=10.0,
                            policy="zero")
            t0 = _time.perf_counter()
            est, diag = estimate_utility(cfg, b.params,
                                         (b.intensity_ask, b.intensity_bid),
                                         (b.measure_ask, b.measure_bid), b.penalty)
            el = _time.perf_counter() - t0
            exact = -math.exp(4.6)
            z = (est.mean - exact) / est.std_error
            ok = abs(z) <= 3.0 and el < 60.0 and diag["envelope_ok"]
            return (ok, f"mean {est.mean:.2f} (se {est.std_error:.2f}), z={z:.2f}, {el:.0f}s",
                    f"|z| <= 3 of {exact:.2f} in < 60 s")
        return _timed(body, "zero-policy Monte Carlo oracle")

    def pde_mc_consistency(self) -> CheckResult:
        def body():
            b, sol = self.desk_run()
            p = b.params
            lat = sol.lattice
            states = [(0.0, 0.0), (-10.0, 0.0), (10.0, 0.0), (0.0, -0.003), (0.0, 0.003)]
            t0 = _time.perf_counter()
            worst = 0.0
            for Q0, y0 in states:
                i = p.inventory_index(Q0)
                j = lat.y_index(y0)
                cfg = SimConfig(n_paths=2000, dt=0.05, seed=5, start_inventory=Q0,
                                start_y=y0, policy=sol.policy)
                est, _ = estimate_utility(cfg, p, (b.intensity_ask, b.intensity_bid),
                                          (b.measure_ask, b.measure_bid), b.penalty)
                z = (est.mean - sol.u0[i, j]) / est.std_error
                worst = max(worst, abs(z))
            el = _time.perf_counter() - t0
            ok = worst <= 3.0 and el < 300.0
            return ok, f"worst |z| {worst:.2f} over 5 states, {el:.0f}s", "<= 3 in < 5 min"
        return _timed(body, "value function equals simulated optimal utility")

    def policy_monotonicity(self) -> CheckResult:
        def body():
            b, sol = self.baseline_run()
            T = b.params.horizon
            worst_a = -10**9
            worst_b = -10**9
            for t in (0.0, T / 2.0):
                qa, qb = sol.policy_layer(t)
                worst_a = max(worst_a, int(np.diff(qa.astype(int), axis=1).max()))
                worst_b = max(worst_b, int(-np.diff(qb.astype(int), axis=1).min()))
            ok = worst_a <= 1 and worst_b <= 1
            return (ok, f"max ask up-move {worst_a}, bid down-move {worst_b} (steps)",
                    "<= 1 volume step")
        return _timed(body, "ask quotes fall and bid quotes rise with the signed distance")

    def log_concavity(self) -> CheckResult:
        def body():
            b, sol = self.baseline_run()
            viol = sol.diagnostics["max_log_concavity_violation"]
            return viol <= 1e-6, f"max second difference {viol:.2e}", "<= 1e-6"
        return _timed(body, "log-transformed value concave in inventory")

    def quote_stationarity(self) -> CheckResult:
        def body():
            b, sol = self.baseline_run()
            p = b.params
            T = p.horizon
            lat = sol.lattice
            probes_t = [t for t in sol.policy_snapshots if t <= 0.8 * T + 1e-9]
            probe_Q = [-15.0, -8.0, 0.0, 8.0, 15.0]
            probe_j = np.linspace(2, lat.n_y - 2, 7).astype(int)
            worst = 0
            for Q in probe_Q:
                i = p.inventory_index(Q)
                qa_t = np.array([sol.policy_snapshots[t][0][i, probe_j] for t in probes_t],
                                dtype=int)
                qb_t = np.array([sol.policy_snapshots[t][1][i, probe_j] for t in probes_t],
                                dtype=int)
                worst = max(worst, int((qa_t.max(0) - qa_t.min(0)).max()),
                            int((qb_t.max(0) - qb_t.min(0)).max()))
            ok = worst <= 1
            return (ok, f"max quote variation {worst} steps over t in [0, 0.8T]",
                    "<= 1 volume step")
        return _timed(body, "quotes near-constant over most of the horizon")

    def n_refinement(self) -> CheckResult:
        def body():
            gaps = {}
            sols = {}
            for n in (10, 20, 40):
                cfg = presets.desk(preferences__volume_steps=n,
                                   measure__ask__atom_step=50.0 / n,
                                   measure__bid__atom_step=50.0 / n)
                b = build_bundle(cfg)
                lat = Lattice.make(b.params, n_t=1200, n_y=70)
                sols[n] = (b.params, solve_hjb(
                    b.params, (b.intensity_ask, b.intensity_bid),
                    (b.measure_ask, b.measure_bid), b.penalty, lat))
            Qs = np.arange(-50.0, 55.0, 5.0)
            def gap(nA, nB):
                pA, sA = sols[nA]
                pB, sB = sols[nB]
                iA = [pA.inventory_index(q) for q in Qs]
                iB = [pB.inventory_index(q) for q in Qs]
                return float(np.abs(sA.u0[iA] - sB.u0[iB]).max())
            g1, g2 = gap(10, 20), gap(20, 40)
            return (g1 > g2, f"sup gap n=10->20: {g1:.4f}, n=20->40: {g2:.4f}",
                    "strictly decreasing")
        return _timed(body, "volume-grid refinement converges")

    def tick_sweep_desk(self) -> CheckResult:
        def body():
            cfg = presets.tick_study(preferences__volume_steps=20,
                                     measure__ask__atom_step=2.5,
                                     measure__bid__atom_step=2.5)
            base = build_bundle(cfg)
            grid = np.geomspace(0.001, 0.02, 8)
            sigmas = [0.005, 0.0075, 0.01, 0.015]
            argmaxes = []
            means = []
            for s in sigmas:
                res = run_sweep(grid, base, sigma=s, eta0=0.2, delta0=0.001,
                                n_y=56, n_t=800)
                argmaxes.append(res.argmax_delta)
                means.append(res.mean_W())
            shift_ok = all(a2 >= a1 for a1, a2 in zip(argmaxes, argmaxes[1:])) \
                and argmaxes[-1] > argmaxes[0]
            vol_ok = all(np.all(means[k + 1] <= means[k] + 1e-9)
                         for k in range(len(means) - 1))
            ok = shift_ok and vol_ok
            arg_str = ", ".join(f"{a:.4f}" for a in argmaxes)
            return (ok, f"argmax ticks by sigma: {arg_str}; volume monotone: {vol_ok}",
                    "argmax nondecreasing (strict overall), W decreasing in sigma")
        return _timed(body, "optimal tick moves right as volatility rises (desk scale)")

    def tick_sweep_full(self) -> CheckResult:
        """Hours-class reproduction of the published optimal ticks."""
        def body():
            cfg = presets.tick_study()
            base = build_bundle(cfg)
            grid = np.geomspace(0.001, 0.02, 12)
            targets = {0.005: 0.0032, 0.0075: 0.0044, 0.01: 0.0064, 0.015: 0.015}
            results = {}
            for s, target in targets.items():
                res = run_sweep(grid, base, sigma=s, eta0=0.2, delta0=0.001,
                                n_y=350, n_t_cap=4000)
                results[s] = res.argmax_delta
            logstep = math.log(grid[1] / grid[0])
            ok = all(abs(math.log(results[s] / t)) <= logstep * 1.001
                     for s, t in targets.items())
            meas = ", ".join(f"sigma={s}: {d:.4f}" for s, d in results.items())
            return ok, meas, "within one grid step of 0.0032/0.0044/0.0064/0.015"
        return _timed(body, "published optimal tick sizes (full scale)")

    def hamiltonian_oracle(self) -> CheckResult:
        def body():
            rng = np.random.default_rng(self.seed)
            gamma, delta = 1.0, 0.01
            bad_fast = 0
            for _ in range(10_000):
                n = int(rng.integers(2, 21))
                phi = InventorySlice(-np.exp(rng.normal(scale=0.5, size=2 * n + 1)),
                                     cap=float(n))
                k_atoms = int(rng.integers(1, min(7, 2 * n + 2)))
                atoms = np.sort(rng.choice(np.arange(2 * n + 1), size=k_atoms,
                                           replace=False)).astype(float)
                if atoms[-1] == 0:
                    atoms = np.array([0.0, float(rng.integers(1, 2 * n + 1))])
                w = rng.random(atoms.size) + 0.01
                mu = ExecutionMeasure(atoms, w / w.sum(), cap=float(atoms[-1]))
                Q = float(rng.integers(-n, n + 1))
                y = float(rng.normal(scale=0.004))
                if rng.random() < 0.5:
                    a = hamiltonian_ask(phi, Q, y, mu, gamma, delta)
                    f = hamiltonian_ask_fast(phi, Q, y, mu, gamma, delta)
                else:
                    a = hamiltonian_bid(phi, Q, y, mu, gamma, delta)
                    f = hamiltonian_bid_fast(phi, Q, y, mu, gamma, delta)
                if (abs(a.value - f.value) > 1e-12 * abs(a.value)
                        or a.argmax_quote != f.argmax_quote):
                    bad_fast += 1
            bad_short = 0
            for _ in range(500):
                n = int(rng.integers(2, 16))
                slopes = np.sort(rng.normal(scale=0.02, size=2 * n))[::-1]
                g = np.concatenate(([0.0], np.cumsum(slopes))) + rng.normal() * 0.1
                phi = InventorySlice(-np.exp(-g), cap=float(n))
                log_phi = InventorySlice(g, cap=float(n))
                atoms = np.arange(2 * n + 1, dtype=float)
                w = rng.random(atoms.size) + 0.01
                mu = ExecutionMeasure(atoms, w / w.sum(), cap=atoms[-1])
                Q = float(rng.integers(-n, n + 1))
                y = float(rng.normal(scale=0.004))
                if (hamiltonian_ask(phi, Q, y, mu, gamma, delta).argmax_quote
                        != argmax_shortcut_ask(log_phi, Q, y, gamma, delta, mu.cap)):
                    bad_short += 1
                if (hamiltonian_bid(phi, Q, y, mu, gamma, delta).argmax_quote
                        != argmax_shortcut_bid(log_phi, Q, y, gamma, delta, mu.cap)):
                    bad_short += 1
            ok = bad_fast == 0 and bad_short == 0
            return (ok, f"{bad_fast}/10000 fast mismatches, {bad_short}/500 shortcut mismatches",
                    "0 and 0")
        return _timed(body, "quote-scan evaluators agree (fast, plain, concave shortcut)")

    def eta_consistency(self) -> CheckResult:
        def body():
            w = simulate_driver(0.002, 25_000.0, 0.005, seed=11)
            p = build_bundle(presets.baseline(market__horizon=25_000.0)).params
            sample = midprice_path(0.005, 0.0, 0.0, w, p)
            n_jumps = len(sample.jump_marks)
            eta_hat = estimate_eta(sample)
            ok = n_jumps >= 2000 and 0.17 <= eta_hat <= 0.23
            return ok, f"eta_hat {eta_hat:.4f} from {n_jumps} jumps", "in [0.17, 0.23], >= 2000 jumps"
        return _timed(body, "zone-width estimator recovers the configured ratio")

    def construction_properties(self) -> CheckResult:
        def body():
            rng = np.random.default_rng(self.seed)
            p = build_bundle(presets.baseline(market__horizon=10.0)).params
            geometry = p.barrier_geometry()
            a, b, a0, b0 = geometry
            spacing = min(a0 - a, b - a0, b0 - a, b - b0)
            failures = []
            for trial in range(1000):
                n_knots = int(rng.integers(3, 120))
                times = np.sort(rng.random(n_knots)) * 10.0
                times = np.concatenate(([0.0], times, [10.0]))
                vals = np.concatenate(([0.0], np.cumsum(
                    rng.normal(scale=0.004, size=times.size - 1))))
                w = DriverPath(times, vals)
                y0 = float(rng.uniform(a + 1e-4, b - 1e-4))
                t0 = float(rng.uniform(0.0, 5.0))
                events = barrier_sequence(t0, y0, w, geometry)
                hits = [e for e in events if e.epsilon != 0]
                if events[-1].epsilon != 0 or events[-1].tau != 10.0:
                    failures.append((trial, "terminal sentinel"))
                taus = [e.tau for e in events]
                if any(t2 < t1 for t1, t2 in zip(taus, taus[1:])):
                    failures.append((trial, "tau ordering"))
                off = 0.0
                for e in hits:
                    pre = y0 + (w.at(e.tau) - w.at(t0)) + off
                    if min(abs(pre - a), abs(pre - b)) > 1e-9:
                        failures.append((trial, "hit level"))
                    if e.epsilon not in (-1, 1):
                        failures.append((trial, "hit mark"))
                    off += e.epsilon_prime
                for e1, e2 in zip(hits, hits[1:]):
                    if abs(w.at(e2.tau) - w.at(e1.tau)) < spacing - 1e-9:
                        failures.append((trial, "minimum displacement"))
                sample = midprice_path(p.delta / 2.0, t0, y0, w, p)
                inner = sample.signed_distance
                if np.any(inner < a - 1e-12) or np.any(inner > b + 1e-12):
                    failures.append((trial, "confinement"))
                resid = np.abs(sample.efficient - sample.mid - sample.signed_distance)
                if resid.max() > 1e-12:
                    failures.append((trial, "S = P + Y"))
            ok = not failures
            return (ok, f"{len(failures)} violations in 1000 drivers"
                    + (f"; first: {failures[0]}" if failures else ""), "0 violations")
        return _timed(body, "reset-process construction properties on random drivers")


QUICK_CHECKS = ["closed_form_pde", "hamiltonian_oracle", "eta_consistency",
                "construction_properties"]
FULL_CHECKS = QUICK_CHECKS + ["zero_policy_mc", "pde_mc_consistency",
                              "policy_monotonicity", "log_concavity",
                              "quote_stationarity", "n_refinement",
                              "tick_sweep_desk"]


def run_level(level: str, paper_scale: bool = False) -> list:
    names = {"quick": QUICK_CHECKS, "full": FULL_CHECKS}.get(level)
    if names is None:
        raise ValidationError(f"unknown verification level {level!r}")
    names = list(names)
    if paper_scale:
        names.append("tick_sweep_full")
    v = Verifier()
    return [getattr(v, name)() for name in names]
