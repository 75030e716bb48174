"""Backward-in-time IMEX finite-difference solver for the coupled value
system and for the platform's expected-traded-volume equation.

Per time step the stiff linear part (diffusion, drift, reaction including the
order-flow killing term) is treated implicitly and the inventory-coupling
terms explicitly on the already-computed later layer.  The space endpoints
carry nonlocal identification rows v(+-ybar) = interp(v at y-+), which turn
each tridiagonal system into tridiagonal-plus-rank-2, solved by the Thomas
algorithm with a Sherman-Morrison-Woodbury correction.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hamiltonian import LayerEvaluator
from .model import (ExecutionMeasure, IntensitySpec, ModelParams, PenaltySpec,
                    ValidationError)
from .output import write_csv

__all__ = [
    "NumericalError",
    "StabilityWarning",
    "Lattice",
    "ValueGrid",
    "PolicyGrid",
    "HJBSolution",
    "PlatformSolution",
    "LinearCoefficients",
    "stability_max_dt",
    "implicit_step",
    "solve_hjb",
    "extract_policy",
    "solve_platform",
    "imbalance_curves",
    "write_solution_csv",
    "write_imbalance_csv",
]


class NumericalError(RuntimeError):
    """The numerical scheme failed (singular system, blow-up, non-finite)."""


class StabilityWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Lattice
# ---------------------------------------------------------------------------

def _interp_stencil(target: float, ybar: float, h: float, n_y: int) -> tuple[int, float]:
    """Bracketing node and weight: value = (1-w)*v[jlo] + w*v[jlo+1].

    Snaps to an exact node when the target is within float fuzz of one, and
    keeps jlo in [0, n_y-1] so jlo+1 is always a valid index.
    """
    pos = (target + ybar) / h
    jlo = int(math.floor(pos))
    w = pos - jlo
    if w < 1e-9:
        w = 0.0
    elif w > 1.0 - 1e-9:
        jlo += 1
        w = 0.0
    if jlo >= n_y:
        jlo, w = n_y - 1, 1.0
    if jlo < 0:
        jlo, w = 0, 0.0
    return jlo, w


@dataclass(frozen=True)
class Lattice:
    """Uniform (time x signed-distance) grid with reset-interpolation stencils."""

    n_t: int
    n_y: int
    horizon: float
    ybar: float
    t_nodes: np.ndarray = field(init=False)
    y_nodes: np.ndarray = field(init=False)
    idx_y_plus: tuple = field(init=False)
    idx_y_minus: tuple = field(init=False)

    def __post_init__(self) -> None:
        if self.n_t < 1 or self.n_y < 4:
            raise ValidationError("lattice needs n_t >= 1 and n_y >= 4")
        object.__setattr__(self, "t_nodes", np.linspace(0.0, self.horizon, self.n_t + 1))
        object.__setattr__(self, "y_nodes", np.linspace(-self.ybar, self.ybar, self.n_y + 1))

    @classmethod
    def make(cls, params: ModelParams, n_t: int, n_y: int) -> "Lattice":
        lat = cls(n_t=n_t, n_y=n_y, horizon=params.horizon, ybar=params.ybar)
        object.__setattr__(lat, "idx_y_plus",
                           _interp_stencil(params.y_plus, params.ybar, lat.h, n_y))
        object.__setattr__(lat, "idx_y_minus",
                           _interp_stencil(params.y_minus, params.ybar, lat.h, n_y))
        return lat

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def h(self) -> float:
        return 2.0 * self.ybar / self.n_y

    def t_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        return min(max(k, 0), self.n_t)

    def y_index(self, y: float) -> int:
        j = int(round((y + self.ybar) / self.h))
        return min(max(j, 0), self.n_y)


def stability_max_dt(params: ModelParams, intensity_ask: IntensitySpec,
                     intensity_bid: IntensitySpec) -> float:
    """Conservative step bound for the explicit coupling term.

    One fill can scale a utility value by exp(gamma*qmax*delta*(eta+1)), and
    the coupling fires at rate up to 2*rate_bound; the product with dt is
    kept at or below one.
    """
    lam_star = max(intensity_ask.rate_bound, intensity_bid.rate_bound)
    qmax = max(params.ask_cap, params.bid_cap)
    growth = math.exp(params.gamma * qmax * params.delta * (params.eta + 1.0))
    return 1.0 / (2.0 * lam_star * growth)


# ---------------------------------------------------------------------------
# Tridiagonal-plus-rank-2 linear algebra
# ---------------------------------------------------------------------------

class _BoundaryTridiag:
    """Factorization of (I - dt*L) with identification rows at both ends.

    Coefficient arrays have shape (B, N): one system per inventory level,
    solved together.  The tridiagonal core is factored once; the nonlocal
    boundary entries enter through a rank-2 Woodbury correction.
    """

    def __init__(self, lo: np.ndarray, di: np.ndarray, up: np.ndarray,
                 lattice: Lattice):
        B, N = di.shape
        self.B, self.N = B, N
        self.up = up
        # Thomas factorization: di'[0]=di[0]; m[j]=lo[j]/di'[j-1]; di'[j]=di[j]-m[j]*up[j-1]
        m = np.zeros_like(di)
        dp = di.copy()
        for j in range(1, N):
            m[:, j] = lo[:, j] / dp[:, j - 1]
            dp[:, j] = di[:, j] - m[:, j] * up[:, j - 1]
        if np.any(dp == 0.0) or not np.all(np.isfinite(dp)):
            raise NumericalError("singular tridiagonal factorization")
        self.m, self.dp = m, dp

        jm, wm = lattice.idx_y_minus    # row 0 references y_minus
        jp, wp = lattice.idx_y_plus     # row N-1 references y_plus
        self._stencils = ((0, jm, wm), (N - 1, jp, wp))
        e = np.zeros((B, N))
        e[:, 0] = 1.0
        W0 = self._tri_solve(e)
        e = np.zeros((B, N))
        e[:, N - 1] = 1.0
        W1 = self._tri_solve(e)
        W = np.stack((W0, W1), axis=2)               # (B, N, 2) = T^-1 [e_0, e_last]
        VtW = np.empty((B, 2, 2))
        for r, (_, j, w) in enumerate(self._stencils):
            VtW[:, r, :] = -((1 - w) * W[:, j, :] + w * W[:, j + 1, :])
        cap = np.eye(2)[None, :, :] + VtW
        det = cap[:, 0, 0] * cap[:, 1, 1] - cap[:, 0, 1] * cap[:, 1, 0]
        if np.any(np.abs(det) < 1e-300):
            raise NumericalError("singular boundary correction system")
        inv = np.empty_like(cap)
        inv[:, 0, 0] = cap[:, 1, 1] / det
        inv[:, 1, 1] = cap[:, 0, 0] / det
        inv[:, 0, 1] = -cap[:, 0, 1] / det
        inv[:, 1, 0] = -cap[:, 1, 0] / det
        self._W = W
        self._cap_inv = inv

    def _tri_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the factored tridiagonal core for rhs of shape (B, N)."""
        N = self.N
        m, dp, up = self.m, self.dp, self.up
        x = rhs.copy()
        for j in range(1, N):
            x[:, j] -= m[:, j] * x[:, j - 1]
        x[:, N - 1] /= dp[:, N - 1]
        for j in range(N - 2, -1, -1):
            x[:, j] = (x[:, j] - up[:, j] * x[:, j + 1]) / dp[:, j]
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x0 = self._tri_solve(rhs)
        s = np.empty((self.B, 2))
        for r, (_, j, w) in enumerate(self._stencils):
            s[:, r] = -((1 - w) * x0[:, j] + w * x0[:, j + 1])
        coef = np.einsum("brc,bc->br", self._cap_inv, s)
        return x0 - np.einsum("bnr,br->bn", self._W, coef)


@dataclass(frozen=True)
class LinearCoefficients:
    """Spatial operator L u = diffusion*u'' + drift*u' + reaction*u."""

    diffusion: float
    drift: float
    reaction: np.ndarray       # per y node


def _assemble(coeffs: Sequence[LinearCoefficients], dt: float, lattice: Lattice
              ) -> _BoundaryTridiag:
    """(I - dt*L) rows for a batch of operators; upwinded drift keeps the
    off-diagonals nonpositive."""
    N = lattice.n_y + 1
    h = lattice.h
    B = len(coeffs)
    lo = np.zeros((B, N))
    di = np.ones((B, N))
    up = np.zeros((B, N))
    for b, c in enumerate(coeffs):
        D = c.diffusion
        cpos = max(c.drift, 0.0)
        cneg = max(-c.drift, 0.0)
        l_lo = D / h**2 + cneg / h
        l_up = D / h**2 + cpos / h
        l_di = -2.0 * D / h**2 - (cpos + cneg) / h + c.reaction[1:-1]
        lo[b, 1:-1] = -dt * l_lo
        up[b, 1:-1] = -dt * l_up
        di[b, 1:-1] = 1.0 - dt * l_di
    return _BoundaryTridiag(lo, di, up, lattice)


def implicit_step(layer: np.ndarray, coefficients: LinearCoefficients, dt: float,
                  lattice: Lattice) -> np.ndarray:
    """One implicit update: solve (I - dt*L) v = layer with identification rows.

    The two endpoint entries of ``layer`` are ignored; identification rows are
    homogeneous.
    """
    rhs = np.asarray(layer, dtype=float).copy().reshape(1, -1)
    if rhs.shape[1] != lattice.n_y + 1:
        raise ValidationError("layer length does not match the lattice")
    rhs[:, 0] = 0.0
    rhs[:, -1] = 0.0
    system = _assemble([coefficients], dt, lattice)
    return system.solve(rhs)[0]


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueGrid:
    """Full value cube u[t, Q, y]."""

    u: np.ndarray
    lattice: Lattice


@dataclass(frozen=True)
class PolicyGrid:
    """Optimal quotes in volume-step units on the full cube."""

    q_ask: np.ndarray          # int16, (n_t+1, 2n+1, n_y+1)
    q_bid: np.ndarray
    volume_step: float
    lattice: Lattice

    def ask_volume(self, k: int) -> np.ndarray:
        return self.q_ask[k].astype(float) * self.volume_step

    def bid_volume(self, k: int) -> np.ndarray:
        return self.q_bid[k].astype(float) * self.volume_step

    @classmethod
    def zero(cls, params: ModelParams, lattice: Lattice) -> "PolicyGrid":
        shape = (lattice.n_t + 1, params.inventory_levels, lattice.n_y + 1)
        z = np.zeros(shape, dtype=np.int16)
        return cls(z, z.copy(), params.volume_step, lattice)

    @classmethod
    def constant(cls, params: ModelParams, lattice: Lattice,
                 ask_volume: float, bid_volume: float) -> "PolicyGrid":
        """Constant quotes clipped to the admissible inventory bounds."""
        step = params.volume_step
        n_inv = params.inventory_levels
        i = np.arange(n_inv, dtype=np.int16)
        ma = np.minimum(int(round(ask_volume / step)), i).astype(np.int16)
        mb = np.minimum(int(round(bid_volume / step)), (n_inv - 1 - i).astype(np.int16))
        shape = (lattice.n_t + 1, n_inv, lattice.n_y + 1)
        qa = np.broadcast_to(ma[None, :, None], shape).copy()
        qb = np.broadcast_to(mb[None, :, None], shape).copy()
        return cls(qa, qb, step, lattice)


@dataclass
class HJBSolution:
    params: ModelParams
    lattice: Lattice
    u0: np.ndarray                                   # value layer at t=0
    value_snapshots: dict
    policy_snapshots: dict                           # t -> (q_ask, q_bid) step arrays
    value: Optional[ValueGrid]
    policy: Optional[PolicyGrid]
    diagnostics: dict

    def policy_layer(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.policy is not None:
            k = self.lattice.t_index(t)
            return self.policy.q_ask[k], self.policy.q_bid[k]
        key = min(self.policy_snapshots, key=lambda s: abs(s - t))
        return self.policy_snapshots[key]

    def value_layer(self, t: float) -> np.ndarray:
        if self.value is not None:
            return self.value.u[self.lattice.t_index(t)]
        if t == 0.0:
            return self.u0
        key = min(self.value_snapshots, key=lambda s: abs(s - t))
        return self.value_snapshots[key]


@dataclass
class PlatformSolution:
    W0: np.ndarray
    value: Optional[ValueGrid]
    diagnostics: dict


# ---------------------------------------------------------------------------
# Value-system solver
# ---------------------------------------------------------------------------

def _check_layer(u: np.ndarray, bound: float, k: int) -> None:
    if not np.all(np.isfinite(u)):
        raise NumericalError(f"non-finite values at time layer {k}")
    if np.any(u >= 0.0):
        raise NumericalError(f"value layer {k} lost strict negativity")
    if np.any(u < -bound):
        raise NumericalError(f"value layer {k} exceeded the closed-form envelope")


def solve_hjb(params: ModelParams,
              intensities: tuple[IntensitySpec, IntensitySpec],
              measures: tuple[ExecutionMeasure, ExecutionMeasure],
              penalty: PenaltySpec,
              lattice: Lattice,
              snapshot_times: Sequence[float] = (),
              keep_full: bool = False,
              keep_values: bool = False,
              check_bounds: bool = True) -> HJBSolution:
    """Backward IMEX sweep of the coupled value system.

    Returns the t=0 layer plus requested snapshots.  ``keep_full`` retains
    the policy cube (int16 step counts); add ``keep_values`` for the full
    float value cube, which costs four times the memory.
    """
    if params.is_continuous:
        raise ValidationError("the solver needs a finite volume grid; "
                              "approximate continuous volumes by a large n")
    lam_a, lam_b = intensities
    mu_a, mu_b = measures
    t0 = _time.perf_counter()
    dt = lattice.dt
    y = lattice.y_nodes
    n_inv = params.inventory_levels
    Qs = params.inventory_grid()

    dt_max = stability_max_dt(params, lam_a, lam_b)
    if dt > dt_max * (1 + 1e-12):
        warnings.warn(
            f"dt={dt:.4g} exceeds the conservative coupling bound {dt_max:.4g}; "
            "the implicit part stays stable but the explicit coupling may not",
            StabilityWarning, stacklevel=2)

    evaluator = LayerEvaluator(params, mu_a, mu_b, y)
    sig2 = params.sigma ** 2
    gam = params.gamma

    time_dep = lam_a.time_dependent or lam_b.time_dependent

    def lam_rows(t: float) -> tuple[np.ndarray, np.ndarray]:
        return lam_a.eval_grid(t, y), lam_b.eval_grid(t, y)

    def factor(t: float) -> _BoundaryTridiag:
        la, lb = lam_rows(t)
        coeffs = [LinearCoefficients(
            diffusion=sig2 / 2.0,
            drift=-sig2 * gam * Q,
            reaction=sig2 * gam**2 * Q**2 / 2.0 - la - lb,
        ) for Q in Qs]
        return _assemble(coeffs, dt, lattice)

    system = factor(0.0) if not time_dep else None

    ell = penalty.eval_grid(Qs)
    u = np.repeat((-np.exp(gam * ell))[:, None], y.size, axis=1)
    bound = math.exp(gam * float(ell.max())
                     + sig2 * gam**2 * params.inventory_cap**2 * params.horizon / 2.0) \
        * (1.0 + 1e-9)

    snap_idx = {lattice.t_index(t) for t in snapshot_times}
    snap_idx.add(0)
    value_snapshots: dict = {}
    policy_snapshots: dict = {}
    keep_values = keep_values and keep_full
    cube_u = np.empty((lattice.n_t + 1, n_inv, y.size)) if keep_values else None
    cube_qa = np.empty((lattice.n_t + 1, n_inv, y.size), dtype=np.int16) if keep_full else None
    cube_qb = np.empty_like(cube_qa) if keep_full else None

    max_viol = 0.0
    shortcut_share = 0.0

    def record(k: int, layer: np.ndarray, m_a: np.ndarray, m_b: np.ndarray) -> None:
        if keep_values:
            cube_u[k] = layer
        if keep_full:
            cube_qa[k] = m_a.astype(np.int16)
            cube_qb[k] = m_b.astype(np.int16)
        if k in snap_idx:
            t = float(lattice.t_nodes[k])
            value_snapshots[t] = layer.copy()
            policy_snapshots[t] = (m_a.astype(np.int16), m_b.astype(np.int16))

    for k in range(lattice.n_t - 1, -1, -1):
        t_new = float(lattice.t_nodes[k])
        Ha, Hb, m_a, m_b = evaluator.hamiltonians(u)
        max_viol = max(max_viol, evaluator.last_concavity_violation)
        shortcut_share += evaluator.last_shortcut_share
        record(k + 1, u, m_a, m_b)

        la, lb = lam_rows(t_new)
        rhs = u + dt * (la[None, :] * Ha + lb[None, :] * Hb)
        rhs[:, 0] = 0.0
        rhs[:, -1] = 0.0
        sys_k = factor(t_new) if time_dep else system
        u = sys_k.solve(rhs)
        if check_bounds:
            _check_layer(u, bound, k)

    Ha, Hb, m_a, m_b = evaluator.hamiltonians(u)
    max_viol = max(max_viol, evaluator.last_concavity_violation)
    record(0, u, m_a, m_b)

    diagnostics = {
        "runtime_s": _time.perf_counter() - t0,
        "dt": dt,
        "dt_stability_bound": dt_max,
        "stability_ok": dt <= dt_max * (1 + 1e-12),
        "min_u": float(u.min()),
        "max_u": float(u.max()),
        "max_log_concavity_violation": max_viol,
        "shortcut_share": shortcut_share / max(lattice.n_t, 1),
    }
    value = ValueGrid(cube_u, lattice) if keep_values else None
    policy = PolicyGrid(cube_qa, cube_qb, params.volume_step, lattice) if keep_full else None
    return HJBSolution(params, lattice, u.copy(), value_snapshots, policy_snapshots,
                       value, policy, diagnostics)


def extract_policy(layer: np.ndarray, measures: tuple[ExecutionMeasure, ExecutionMeasure],
                   params: ModelParams, lattice: Lattice
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Maximizing quotes (in volume steps) for one strictly negative layer."""
    if np.any(layer >= 0):
        raise ValidationError("policy extraction needs a strictly negative layer")
    evaluator = LayerEvaluator(params, measures[0], measures[1], lattice.y_nodes)
    _, _, m_a, m_b = evaluator.hamiltonians(layer)
    return m_a, m_b


# ---------------------------------------------------------------------------
# Platform equation
# ---------------------------------------------------------------------------

def solve_platform(policy: PolicyGrid,
                   params: ModelParams,
                   intensities: tuple[IntensitySpec, IntensitySpec],
                   measures: tuple[ExecutionMeasure, ExecutionMeasure],
                   lattice: Lattice,
                   keep_full: bool = False) -> PlatformSolution:
    """Expected cumulative traded volume under a fixed policy cube.

    Same IMEX layout as the value solver: the inventory-coupling gathers and
    the expected executed volume enter explicitly from the later layer, the
    diffusion and the order-flow killing term implicitly.
    """
    lam_a, lam_b = intensities
    mu_a, mu_b = measures
    if policy.q_ask.shape != (lattice.n_t + 1, params.inventory_levels, lattice.n_y + 1):
        raise ValidationError("policy cube does not match the lattice")
    t0 = _time.perf_counter()
    dt = lattice.dt
    y = lattice.y_nodes
    n_inv = params.inventory_levels
    evaluator = LayerEvaluator(params, mu_a, mu_b, y)
    sig2 = params.sigma ** 2
    time_dep = lam_a.time_dependent or lam_b.time_dependent

    def factor(t: float) -> _BoundaryTridiag:
        la = lam_a.eval_grid(t, y)
        lb = lam_b.eval_grid(t, y)
        coeffs = [LinearCoefficients(sig2 / 2.0, 0.0, -(la + lb))] * n_inv
        return _assemble(coeffs, dt, lattice)

    system = factor(0.0) if not time_dep else None
    W = np.zeros((n_inv, y.size))
    cube = np.empty((lattice.n_t + 1, n_inv, y.size)) if keep_full else None
    if keep_full:
        cube[lattice.n_t] = W

    for k in range(lattice.n_t - 1, -1, -1):
        t_new = float(lattice.t_nodes[k])
        m_a = policy.q_ask[k + 1].astype(np.int64)
        m_b = policy.q_bid[k + 1].astype(np.int64)
        Ga, Gb, EVa, EVb = evaluator.policy_coupling(W, m_a, m_b)
        la = lam_a.eval_grid(t_new, y)
        lb = lam_b.eval_grid(t_new, y)
        rhs = W + dt * (la[None, :] * (Ga + EVa) + lb[None, :] * (Gb + EVb))
        rhs[:, 0] = 0.0
        rhs[:, -1] = 0.0
        sys_k = factor(t_new) if time_dep else system
        W = sys_k.solve(rhs)
        if not np.all(np.isfinite(W)):
            raise NumericalError(f"platform layer {k} became non-finite")
        if keep_full:
            cube[k] = W

    diagnostics = {
        "runtime_s": _time.perf_counter() - t0,
        "min_W": float(W.min()),
        "max_W": float(W.max()),
    }
    return PlatformSolution(W, ValueGrid(cube, lattice) if keep_full else None, diagnostics)


# ---------------------------------------------------------------------------
# Imbalance curves and CSV output
# ---------------------------------------------------------------------------

def imbalance_curves(solution: HJBSolution, t: float, inventories: Sequence[float]
                     ) -> dict:
    """(q_bid - q_ask) / (q_bid + q_ask) against y, one curve per inventory.

    Cells where both quotes are zero are NaN (imbalance undefined there).
    """
    qa, qb = solution.policy_layer(t)
    params = solution.params
    out = {"y": solution.lattice.y_nodes.copy(), "t": t, "inventories": list(inventories)}
    curves = []
    for Q in inventories:
        i = params.inventory_index(Q)
        a = qa[i].astype(float)
        b = qb[i].astype(float)
        tot = a + b
        with np.errstate(invalid="ignore", divide="ignore"):
            curve = np.where(tot > 0, (b - a) / np.where(tot > 0, tot, 1.0), np.nan)
        curves.append(curve)
    out["curves"] = np.asarray(curves)
    return out


def write_imbalance_csv(table: dict, path) -> None:
    rows = []
    for qi, Q in enumerate(table["inventories"]):
        for j, yv in enumerate(table["y"]):
            rows.append((yv, Q, table["curves"][qi, j]))
    write_csv(path, ["y", "Q", "I"], rows)


def write_solution_csv(solution: HJBSolution, path, times: Sequence[float]) -> None:
    """Value and policy slices as flat rows (t, Q, y, u, q_ask, q_bid)."""
    params = solution.params
    Qs = params.inventory_grid()
    step = params.volume_step
    rows = []
    for t in times:
        layer = solution.value_layer(t)
        qa, qb = solution.policy_layer(t)
        tt = float(solution.lattice.t_nodes[solution.lattice.t_index(t)])
        for i, Q in enumerate(Qs):
            for j, yv in enumerate(solution.lattice.y_nodes):
                rows.append((tt, Q, yv, layer[i, j], qa[i, j] * step, qb[i, j] * step))
    write_csv(path, ["t", "Q", "y", "u", "q_ask", "q_bid"], rows)
