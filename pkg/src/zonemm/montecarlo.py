"""Forward simulation of the controlled market-making system.

Order arrivals are thinned against each side's dominating rate: candidates
come from a homogeneous Poisson stream and are accepted with probability
intensity(t, Y)/bound evaluated at the step-start state.  Between arrivals
the signed distance advances on the dt lattice with in-step barrier-crossing
resolution, and the inventory-weighted Brownian increments accumulate the
stochastic part of the PnL.  The same Brownian path drives both.

Paths run in fixed blocks, one RNG stream per block spawned from the master
seed, so estimates are reproducible regardless of how blocks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .hjb import PolicyGrid
from .model import (ExecutionMeasure, IntensitySpec, ModelParams, PenaltySpec,
                    ValidationError)
from .output import write_csv

__all__ = [
    "SimConfig",
    "UtilityEstimate",
    "TradeRecord",
    "SimulationResult",
    "simulate_policy",
    "estimate_utility",
    "write_trades_csv",
    "write_summary",
]

PolicyLike = Union[PolicyGrid, str, tuple]


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    seed: int
    start_time: float = 0.0
    start_inventory: float = 0.0
    start_y: float = 0.0
    policy: PolicyLike = "zero"
    block_size: int = 4096
    strict_lookup: bool = False   # reject off-lattice states instead of snapping

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.n_paths < 1:
            raise ValidationError("n_paths must be at least 1")


@dataclass(frozen=True)
class UtilityEstimate:
    mean: float
    std_error: float
    n_paths: int


@dataclass(frozen=True)
class TradeRecord:
    time: float
    side: str
    quoted: float
    executed: float
    y: float
    mid: float
    inventory_after: float
    pnl_after: float


@dataclass
class SimulationResult:
    times: np.ndarray
    efficient: np.ndarray
    signed_distance: np.ndarray
    mid: np.ndarray
    inventory: np.ndarray
    pnl: np.ndarray
    trades: list
    utility: float


class _PolicyLookup:
    """Quote lookup in volume steps; snaps to the nearest earlier time layer
    and the nearest y node."""

    def __init__(self, policy: PolicyLike, params: ModelParams, strict: bool):
        self.params = params
        self.strict = strict
        self.kind = "grid"
        n = params.volume_steps
        self.n_inv = 2 * n + 1
        if isinstance(policy, str):
            if policy != "zero":
                raise ValidationError(f"unknown built-in policy {policy!r}")
            self.kind = "zero"
        elif isinstance(policy, tuple) and policy and policy[0] == "constant":
            _, qa, qb = policy
            step = params.volume_step
            self.kind = "constant"
            self.ca = int(round(qa / step))
            self.cb = int(round(qb / step))
        elif isinstance(policy, PolicyGrid):
            self.grid = policy
            lat = policy.lattice
            self.dt_lat = lat.dt
            self.n_t = lat.n_t
            self.h = lat.h
            self.ybar = lat.ybar
            self.n_y = lat.n_y
        else:
            raise ValidationError("policy must be a PolicyGrid, 'zero', or "
                                  "('constant', ask_volume, bid_volume)")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def quotes(self, t: float, iq: np.ndarray, Y: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "zero":
            z = np.zeros(iq.shape, dtype=np.int64)
            return z, z
        if self.kind == "constant":
            qa = np.minimum(self.ca, iq)
            qb = np.minimum(self.cb, self.n_inv - 1 - iq)
            return qa.astype(np.int64), qb.astype(np.int64)
        kt = min(int(math.floor(t / self.dt_lat + 1e-12)), self.n_t)
        jy_f = (Y + self.ybar) / self.h
        jy = np.rint(jy_f).astype(np.int64)
        if self.strict and np.any(np.abs(jy_f - jy) > 1e-6):
            raise ValidationError("state off the policy lattice in strict mode")
        jy = np.clip(jy, 0, self.n_y)
        return (self.grid.q_ask[kt, iq, jy].astype(np.int64),
                self.grid.q_bid[kt, iq, jy].astype(np.int64))


def _advance_y(Y: np.ndarray, dY: np.ndarray, geom, P: np.ndarray, delta: float,
               jump_up: np.ndarray, jump_dn: np.ndarray,
               last_dir: np.ndarray, cont: np.ndarray, alt: np.ndarray) -> np.ndarray:
    """One step of the reset process for all paths, with mid-price updates
    and continuation/alternation counting."""
    a, b, a0, b0 = geom
    Ynew = Y + dY
    for _ in range(64):
        up = Ynew >= b
        dn = Ynew <= a
        if not (up.any() or dn.any()):
            break
        # overshoot past the barrier continues from the reset level
        Ynew = np.where(up, b0 + (Ynew - b), Ynew)
        Ynew = np.where(dn, a0 + (Ynew - a), Ynew)
        P += delta * (up.astype(float) - dn.astype(float))
        jump_up += up
        jump_dn += dn
        d = up.astype(np.int8) - dn.astype(np.int8)
        hit = d != 0
        cont += hit & (d == last_dir)
        alt += hit & (d == -last_dir)
        last_dir = np.where(hit, d, last_dir)
    else:
        raise ValidationError("dt too coarse: a step crossed the zone 64 times")
    return Ynew, last_dir


def _simulate_block(rng: np.random.Generator, n: int, params: ModelParams,
                    lam_a: IntensitySpec, lam_b: IntensitySpec,
                    mu_a: ExecutionMeasure, mu_b: ExecutionMeasure,
                    penalty: PenaltySpec, lookup: _PolicyLookup,
                    t0: float, iq0: int, y0: float, dt: float,
                    trace: Optional[list] = None) -> dict:
    T = params.horizon
    n_steps = max(1, int(round((T - t0) / dt)))
    dt = (T - t0) / n_steps
    step_vol = params.volume_step
    n_half = params.volume_steps
    gamma, sigma, delta = params.gamma, params.sigma, params.delta
    geom = params.barrier_geometry()
    sqdt = math.sqrt(dt)

    za = mu_a.step_indices(step_vol)
    zb = mu_b.step_indices(step_vol)
    qa_cap = mu_a.cap
    qb_cap = mu_b.cap

    iq = np.full(n, iq0, dtype=np.int64)
    Y = np.full(n, y0)
    P = np.zeros(n)                       # mid-price offset from its start
    pnl = np.zeros(n)
    W = np.zeros(n)                       # raw Brownian level since t0
    W_seg = np.zeros(n)                   # level at the last trade
    seg_sum = np.zeros(n)
    sup_absW = np.zeros(n)
    n_trades = np.zeros(n, dtype=np.int64)
    jump_up = np.zeros(n, dtype=np.int64)
    jump_dn = np.zeros(n, dtype=np.int64)
    last_dir = np.zeros(n, dtype=np.int8)
    cont = np.zeros(n, dtype=np.int64)
    alt = np.zeros(n, dtype=np.int64)

    path_t = [t0] if trace is not None else None
    path_y = [y0] if trace is not None else None
    path_p = [0.0] if trace is not None else None
    path_q = [iq0] if trace is not None else None
    path_pnl = [0.0] if trace is not None else None

    def serve(side: str, t: float) -> None:
        spec, mu_z, masses = ((lam_a, za, mu_a.masses) if side == "ask"
                              else (lam_b, zb, mu_b.masses))
        bound = spec.rate_bound
        lam = spec.eval_grid(t, Y)
        k = rng.poisson(bound * dt, n)
        acc = rng.binomial(k, np.clip(lam / bound, 0.0, 1.0))
        while True:
            sel = np.nonzero(acc > 0)[0]
            if sel.size == 0:
                return
            qa, qb = lookup.quotes(t, iq[sel], Y[sel])
            quote = qa if side == "ask" else qb
            marks = mu_z[rng.choice(mu_z.size, size=sel.size, p=masses)]
            ex = np.minimum(quote, marks)
            if side == "ask":
                pnl[sel] += ex * step_vol * (delta / 2.0 - Y[sel])
                iq[sel] -= ex
            else:
                pnl[sel] += ex * step_vol * (delta / 2.0 + Y[sel])
                iq[sel] += ex
            n_trades[sel] += 1
            seg_sum[sel] += np.abs(W[sel] - W_seg[sel])
            W_seg[sel] = W[sel]
            if trace is not None and sel.size:
                trades: list = trace
                trades.append(TradeRecord(
                    time=t, side=side, quoted=float(quote[0]) * step_vol,
                    executed=float(ex[0]) * step_vol, y=float(Y[0]),
                    mid=float(P[0]), inventory_after=(float(iq[0]) - n_half) * step_vol,
                    pnl_after=float(pnl[0])))
            acc[sel] -= 1

    for s in range(n_steps):
        t = t0 + s * dt
        if not lookup.is_zero:
            serve("ask", t)
            serve("bid", t)
        dW = rng.standard_normal(n) * sqdt
        Q_vol = (iq - n_half) * step_vol
        pnl += sigma * Q_vol * dW
        W += dW
        np.maximum(sup_absW, np.abs(W), out=sup_absW)
        Y, last_dir = _advance_y(Y, sigma * dW, geom, P, delta,
                                 jump_up, jump_dn, last_dir, cont, alt)
        if trace is not None:
            path_t.append(t + dt)
            path_y.append(float(Y[0]))
            path_p.append(float(P[0]))
            path_q.append(int(iq[0]))
            path_pnl.append(float(pnl[0]))

    seg_sum += np.abs(W - W_seg)
    Q_T = (iq - n_half) * step_vol
    if np.any(np.abs(Q_T) > params.inventory_cap + 1e-9):
        raise ValidationError("inventory left its admissible range")
    util = -np.exp(-gamma * (pnl - penalty.eval_grid(Q_T)))

    ell_star = float(penalty.eval_grid(params.inventory_grid()).max())
    qmax = max(qa_cap, qb_cap)
    envelope = gamma * (ell_star + delta * (1.0 + params.eta) * qmax * n_trades
                        + sigma * params.inventory_cap * (4.0 * sup_absW + seg_sum))
    slack = np.log(-util) - envelope

    out = {
        "utility": util, "pnl": pnl, "Q_T": Q_T, "n_trades": n_trades,
        "jumps": jump_up + jump_dn, "continuations": cont, "alternations": alt,
        "envelope_slack_max": float(slack.max()),
    }
    if trace is not None:
        out["path"] = (np.asarray(path_t), np.asarray(path_y), np.asarray(path_p),
                       np.asarray(path_q), np.asarray(path_pnl))
    return out


def simulate_policy(config: SimConfig, params: ModelParams,
                    intensities: tuple[IntensitySpec, IntensitySpec],
                    measures: tuple[ExecutionMeasure, ExecutionMeasure],
                    penalty: PenaltySpec, p0: float = 0.0) -> SimulationResult:
    """One detailed trajectory with a trade log; the first spawned stream."""
    lookup = _PolicyLookup(config.policy, params, config.strict_lookup)
    iq0 = params.inventory_index(config.start_inventory)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    trades: list = []
    res = _simulate_block(rng, 1, params, intensities[0], intensities[1],
                          measures[0], measures[1], penalty, lookup,
                          config.start_time, iq0, config.start_y, config.dt,
                          trace=trades)
    t, y, pm, qsteps, pnl = res["path"]
    mid = p0 + pm
    s = mid + y
    inv = (qsteps - params.volume_steps) * params.volume_step
    return SimulationResult(times=t, efficient=s, signed_distance=y, mid=mid,
                            inventory=inv, pnl=pnl, trades=trades,
                            utility=float(res["utility"][0]))


def estimate_utility(config: SimConfig, params: ModelParams,
                     intensities: tuple[IntensitySpec, IntensitySpec],
                     measures: tuple[ExecutionMeasure, ExecutionMeasure],
                     penalty: PenaltySpec) -> tuple[UtilityEstimate, dict]:
    """Sample mean and standard error of the terminal utility."""
    if config.n_paths < 2:
        raise ValidationError("standard error undefined: need n_paths >= 2")
    lookup = _PolicyLookup(config.policy, params, config.strict_lookup)
    iq0 = params.inventory_index(config.start_inventory)
    n_blocks = (config.n_paths + config.block_size - 1) // config.block_size
    seeds = np.random.SeedSequence(config.seed).spawn(n_blocks)
    samples = []
    trades = []
    jumps = []
    cont = []
    alt = []
    slack = -np.inf
    left = config.n_paths
    for b in range(n_blocks):
        nb = min(config.block_size, left)
        left -= nb
        rng = np.random.default_rng(seeds[b])
        res = _simulate_block(rng, nb, params, intensities[0], intensities[1],
                              measures[0], measures[1], penalty, lookup,
                              config.start_time, iq0, config.start_y, config.dt)
        samples.append(res["utility"])
        trades.append(res["n_trades"])
        jumps.append(res["jumps"])
        cont.append(res["continuations"])
        alt.append(res["alternations"])
        slack = max(slack, res["envelope_slack_max"])
    u = np.concatenate(samples)
    mean = float(np.mean(u))
    sd = float(np.std(u, ddof=1))
    est = UtilityEstimate(mean=mean, std_error=sd / math.sqrt(u.size), n_paths=u.size)
    n_alt = int(np.concatenate(alt).sum())
    n_cont = int(np.concatenate(cont).sum())
    diagnostics = {
        "mean_trades": float(np.concatenate(trades).mean()),
        "mean_jumps": float(np.concatenate(jumps).mean()),
        "eta_hat": (n_cont / (2.0 * n_alt)) if n_alt > 0 else float("nan"),
        "envelope_slack_max": slack,
        "envelope_ok": slack <= 1e-9,
    }
    return est, diagnostics


def write_trades_csv(trades: Sequence[TradeRecord], path) -> None:
    write_csv(path, ["time", "side", "quoted", "executed", "Y", "P",
                     "inventory_after", "pnl_after"],
              [(t.time, t.side, t.quoted, t.executed, t.y, t.mid,
                t.inventory_after, t.pnl_after) for t in trades])


def write_summary(est: UtilityEstimate, path, extra: Optional[dict] = None) -> None:
    from .output import fmt
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mean={fmt(est.mean)}\n")
        fh.write(f"std_error={fmt(est.std_error)}\n")
        fh.write(f"n_paths={est.n_paths}\n")
        for k, v in (extra or {}).items():
            fh.write(f"{k}={fmt(v)}\n")
