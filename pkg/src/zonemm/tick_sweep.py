"""Tick-size study for the platform: re-solve the quoting problem per
candidate tick, evaluate the expected traded volume, and rank ticks.

The zone-width ratio shrinks with the square root of the tick; candidate
ticks whose ratio reaches 1/2 leave the large-tick regime and are skipped.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .hjb import Lattice, solve_hjb, solve_platform, stability_max_dt
from .model import ModelBundle, ValidationError
from .output import write_csv

__all__ = ["eta_of_delta", "TickSweepRow", "TickSweepResult", "run_sweep",
           "write_sweep_csv"]


def eta_of_delta(delta: float, eta0: float, delta0: float) -> float:
    """Zone ratio at tick delta, anchored at (delta0, eta0)."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    return eta0 * math.sqrt(delta0 / delta)


@dataclass(frozen=True)
class TickSweepRow:
    delta: float
    eta: float
    mean_W: float
    n_t: int
    runtime_s: float


@dataclass(frozen=True)
class TickSweepResult:
    rows: tuple
    skipped: tuple                 # (delta, eta) pairs with eta >= 1/2
    argmax_delta: float
    profiles: dict                 # delta -> W(0, 0, y) array when requested

    def mean_W(self) -> np.ndarray:
        return np.asarray([r.mean_W for r in self.rows])

    def deltas(self) -> np.ndarray:
        return np.asarray([r.delta for r in self.rows])


def _row_lattice(bundle: ModelBundle, n_y: int, n_t: Optional[int],
                 n_t_cap: int) -> Lattice:
    if n_t is None:
        dt_max = stability_max_dt(bundle.params, bundle.intensity_ask,
                                  bundle.intensity_bid)
        n_t = min(max(int(math.ceil(bundle.params.horizon / dt_max)), 200), n_t_cap)
    return Lattice.make(bundle.params, n_t=n_t, n_y=n_y)


def run_sweep(delta_grid: Sequence[float], base: ModelBundle, sigma: float,
              eta0: float, delta0: float, n_y: int,
              n_t: Optional[int] = None, n_t_cap: int = 4000,
              keep_profiles: bool = False) -> TickSweepResult:
    """One platform row per admissible tick: solve the quoting problem, then
    the traded-volume equation, and average W(0, Q=0, .) uniformly over the
    y nodes.  Rows are independent and deterministic."""
    rows = []
    skipped = []
    profiles = {}
    base = ModelBundle(replace(base.params, sigma=sigma), base.intensity_ask,
                       base.intensity_bid, base.measure_ask, base.measure_bid,
                       base.penalty)
    for delta in sorted(set(float(d) for d in delta_grid)):
        eta = eta_of_delta(delta, eta0, delta0)
        if eta >= 0.5:
            skipped.append((delta, eta))
            continue
        bundle = base.with_tick(delta, eta)
        lattice = _row_lattice(bundle, n_y, n_t, n_t_cap)
        t0 = _time.perf_counter()
        sol = solve_hjb(bundle.params, (bundle.intensity_ask, bundle.intensity_bid),
                        (bundle.measure_ask, bundle.measure_bid), bundle.penalty,
                        lattice, keep_full=True)
        plat = solve_platform(sol.policy, bundle.params,
                              (bundle.intensity_ask, bundle.intensity_bid),
                              (bundle.measure_ask, bundle.measure_bid), lattice)
        i0 = bundle.params.inventory_index(0.0)
        profile = plat.W0[i0]
        mean_W = float(profile.mean())
        rows.append(TickSweepRow(delta=delta, eta=eta, mean_W=mean_W,
                                 n_t=lattice.n_t,
                                 runtime_s=_time.perf_counter() - t0))
        if keep_profiles:
            profiles[delta] = profile.copy()
    if not rows:
        raise ValidationError("no admissible tick in the grid (eta >= 1/2 everywhere)")
    best = max(range(len(rows)), key=lambda k: rows[k].mean_W)
    return TickSweepResult(rows=tuple(rows), skipped=tuple(skipped),
                           argmax_delta=rows[best].delta, profiles=profiles)


def write_sweep_csv(result: TickSweepResult, path) -> None:
    write_csv(path, ["delta", "eta", "mean_W"],
              [(r.delta, r.eta, r.mean_W) for r in result.rows])
