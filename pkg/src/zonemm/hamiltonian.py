"""Per-side quote optimization: expected post-trade utility over the volume
grid, maximized over admissible quotes.

Three evaluation routes with identical results:
  * plain scan over quotes, one measure sum per quote (reference),
  * prefix-sum scan, one pass over atoms for a whole quote sweep,
  * slope-threshold shortcut, valid when the log-transformed inventory slice
    is discretely concave.

Argmax ties (values within 1e-12 relative) resolve to the smallest quote so
policies are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ExecutionMeasure, ModelParams, ValidationError

__all__ = [
    "InventorySlice",
    "HamiltonianResult",
    "NonConcaveError",
    "integral_ask",
    "integral_bid",
    "hamiltonian_ask",
    "hamiltonian_bid",
    "hamiltonian_ask_fast",
    "hamiltonian_bid_fast",
    "argmax_shortcut_ask",
    "argmax_shortcut_bid",
    "LayerEvaluator",
]

TIE_REL = 1e-12
CONCAVITY_TOL = 1e-10


class NonConcaveError(ValidationError):
    """The shortcut was asked to run on a non-concave slice."""


@dataclass(frozen=True)
class InventorySlice:
    """Values of one function of inventory on the grid -Qbar..Qbar."""

    values: np.ndarray
    cap: float                 # Qbar

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3 or v.size % 2 == 0:
            raise ValidationError("inventory slice must have odd length 2n+1 >= 3")
        if not np.all(np.isfinite(v)):
            raise ValidationError("inventory slice must be finite")
        if self.cap <= 0:
            raise ValidationError("cap must be positive")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return (self.values.size - 1) // 2

    @property
    def step(self) -> float:
        return self.cap / self.n

    def index(self, Q: float) -> int:
        k = (Q + self.cap) / self.step
        ki = round(k)
        if abs(k - ki) > 1e-9 * max(1.0, abs(k)) or not 0 <= ki < self.values.size:
            raise ValidationError(f"inventory {Q} not on the grid (step {self.step})")
        return int(ki)


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    argmax_quote: float
    admissible_max: float


def _steps(volume: float, step: float, what: str) -> int:
    k = volume / step
    ki = round(k)
    if abs(k - ki) > 1e-9 * max(1.0, abs(k)) or ki < 0:
        raise ValidationError(f"{what}={volume} not on the volume grid (step {step})")
    return int(ki)


def _tie_argmax(values: np.ndarray) -> int:
    """Smallest index whose value is within TIE_REL of the maximum."""
    best = values.max()
    return int(np.argmax(values >= best - TIE_REL * abs(best)))


def _prepare(phi: InventorySlice, Q: float, mu: ExecutionMeasure):
    step = phi.step
    i = phi.index(Q)
    z = mu.step_indices(step)
    cap_steps = _steps(mu.cap, step, "measure cap")
    return step, i, z, cap_steps


# ---------------------------------------------------------------------------
# Point evaluations
# ---------------------------------------------------------------------------

def integral_ask(phi: InventorySlice, Q: float, y: float, q: float,
                 mu: ExecutionMeasure, gamma: float, delta: float) -> float:
    """Expected utility factor after quoting q at the ask against measure mu."""
    step, i, z, _ = _prepare(phi, Q, mu)
    m = _steps(q, step, "quote")
    if m > i:
        raise ValidationError(f"ask quote {q} exceeds the inventory bound Q+Qbar")
    ex = np.minimum(m, z)
    w = mu.masses * np.exp(-gamma * (ex * step) * (delta / 2.0 - y))
    return float(np.sum(w * phi.values[i - ex]))


def integral_bid(phi: InventorySlice, Q: float, y: float, q: float,
                 mu: ExecutionMeasure, gamma: float, delta: float) -> float:
    step, i, z, _ = _prepare(phi, Q, mu)
    m = _steps(q, step, "quote")
    if m > 2 * phi.n - i:
        raise ValidationError(f"bid quote {q} exceeds the inventory bound -Q+Qbar")
    ex = np.minimum(m, z)
    w = mu.masses * np.exp(-gamma * (ex * step) * (delta / 2.0 + y))
    return float(np.sum(w * phi.values[i + ex]))


def _scan(phi: InventorySlice, i: int, k_y: float, z: np.ndarray,
          masses: np.ndarray, m_max: int, side: int) -> np.ndarray:
    """Values of the measure integral for every quote 0..m_max (in steps).

    side=+1 shifts the inventory index down (ask), -1 up (bid).
    """
    step = phi.step
    vals = np.empty(m_max + 1)
    for m in range(m_max + 1):
        ex = np.minimum(m, z)
        w = masses * np.exp(-k_y * (ex * step))
        vals[m] = np.sum(w * phi.values[i - side * ex])
    return vals


def hamiltonian_ask(phi: InventorySlice, Q: float, y: float, mu: ExecutionMeasure,
                    gamma: float, delta: float) -> HamiltonianResult:
    """Supremum over admissible ask quotes, computed by plain scan."""
    step, i, z, cap_steps = _prepare(phi, Q, mu)
    m_max = min(cap_steps, i)
    vals = _scan(phi, i, gamma * (delta / 2.0 - y), z, mu.masses, m_max, side=+1)
    m = _tie_argmax(vals)
    return HamiltonianResult(float(vals[m]), m * step, m_max * step)


def hamiltonian_bid(phi: InventorySlice, Q: float, y: float, mu: ExecutionMeasure,
                    gamma: float, delta: float) -> HamiltonianResult:
    step, i, z, cap_steps = _prepare(phi, Q, mu)
    m_max = min(cap_steps, 2 * phi.n - i)
    vals = _scan(phi, i, gamma * (delta / 2.0 + y), z, mu.masses, m_max, side=-1)
    m = _tie_argmax(vals)
    return HamiltonianResult(float(vals[m]), m * step, m_max * step)


def _fast_scan(phi: InventorySlice, i: int, k_y: float, z: np.ndarray,
               masses: np.ndarray, m_max: int, side: int) -> np.ndarray:
    """Same sweep as _scan in one pass over atoms.

    Splits the integral at the quote: atoms at or below it contribute a
    running prefix (their execution no longer depends on the quote), the
    rest execute the full quote and factor out.
    """
    step = phi.step
    atom_w = masses * np.exp(-k_y * (z * step))
    own_w = np.exp(-k_y * (np.arange(m_max + 1) * step))
    vals = np.empty(m_max + 1)
    prefix = 0.0
    tail_mass = 1.0
    ptr = 0
    for m in range(m_max + 1):
        while ptr < z.size and z[ptr] <= m:
            prefix += atom_w[ptr] * phi.values[i - side * z[ptr]]
            tail_mass -= masses[ptr]
            ptr += 1
        vals[m] = prefix + tail_mass * own_w[m] * phi.values[i - side * m]
    return vals


def hamiltonian_ask_fast(phi: InventorySlice, Q: float, y: float, mu: ExecutionMeasure,
                         gamma: float, delta: float) -> HamiltonianResult:
    step, i, z, cap_steps = _prepare(phi, Q, mu)
    m_max = min(cap_steps, i)
    vals = _fast_scan(phi, i, gamma * (delta / 2.0 - y), z, mu.masses, m_max, side=+1)
    m = _tie_argmax(vals)
    return HamiltonianResult(float(vals[m]), m * step, m_max * step)


def hamiltonian_bid_fast(phi: InventorySlice, Q: float, y: float, mu: ExecutionMeasure,
                         gamma: float, delta: float) -> HamiltonianResult:
    step, i, z, cap_steps = _prepare(phi, Q, mu)
    m_max = min(cap_steps, 2 * phi.n - i)
    vals = _fast_scan(phi, i, gamma * (delta / 2.0 + y), z, mu.masses, m_max, side=-1)
    m = _tie_argmax(vals)
    return HamiltonianResult(float(vals[m]), m * step, m_max * step)


# ---------------------------------------------------------------------------
# Concavity shortcut
# ---------------------------------------------------------------------------

def _check_concave(g: np.ndarray) -> None:
    if g.size >= 3 and np.max(np.diff(g, 2)) > CONCAVITY_TOL:
        raise NonConcaveError("slice is not discretely concave")


def argmax_shortcut_ask(log_phi: InventorySlice, Q: float, y: float,
                        gamma: float, delta: float, quote_cap: float) -> float:
    """Maximizing ask quote from the slopes of the log slice.

    Selling one more volume step earns gamma*(delta/2-y)*step in the exponent
    and costs the slope of log_phi at the index it vacates; the optimum stops
    at the first step whose slope reaches that earn rate.  Requires a
    discretely concave log slice.
    """
    g = log_phi.values
    _check_concave(g)
    step = log_phi.step
    i = log_phi.index(Q)
    thresh = gamma * (delta / 2.0 - y) * step
    c = int(np.sum(np.diff(g) >= thresh))
    m = min(max(i - c, 0), i, _steps(quote_cap, step, "quote cap"))
    return m * step


def argmax_shortcut_bid(log_phi: InventorySlice, Q: float, y: float,
                        gamma: float, delta: float, quote_cap: float) -> float:
    g = log_phi.values
    _check_concave(g)
    step = log_phi.step
    i = log_phi.index(Q)
    thresh = gamma * (delta / 2.0 + y) * step
    c = int(np.sum(np.diff(g) > -thresh))
    m = min(max(c - i, 0), 2 * log_phi.n - i, _steps(quote_cap, step, "quote cap"))
    return m * step


# ---------------------------------------------------------------------------
# Whole-layer evaluation (used by the PDE solver)
# ---------------------------------------------------------------------------

class LayerEvaluator:
    """Vectorized Hamiltonians over the full (inventory x y) lattice.

    Exponential weights depend on time only through nothing: the tables are
    precomputed once per solve.  Columns whose log slice is concave use the
    slope shortcut; the rest fall back to the full quote scan.  Both routes
    share the tie rule of the point operations.
    """

    def __init__(self, params: ModelParams, measure_ask: ExecutionMeasure,
                 measure_bid: ExecutionMeasure, y_nodes: np.ndarray):
        self.params = params
        step = params.volume_step
        self.step = step
        self.n_inv = params.inventory_levels
        self.y = np.asarray(y_nodes, dtype=float)
        ny = self.y.size
        self.k_ask = params.gamma * (params.delta / 2.0 - self.y)
        self.k_bid = params.gamma * (params.delta / 2.0 + self.y)
        self.z_ask = measure_ask.step_indices(step)
        self.z_bid = measure_bid.step_indices(step)
        self.w_ask = measure_ask.masses
        self.w_bid = measure_bid.masses
        self.qa = min(_steps(params.ask_cap, step, "ask_cap"), self.n_inv - 1)
        self.qb = min(_steps(params.bid_cap, step, "bid_cap"), self.n_inv - 1)
        vmax = int(max(self.qa, self.qb, self.z_ask.max(), self.z_bid.max()))
        v = np.arange(vmax + 1)
        self.pow_ask = np.exp(-np.multiply.outer(self.k_ask * step, v))   # (ny, vmax+1)
        self.pow_bid = np.exp(-np.multiply.outer(self.k_bid * step, v))
        i = np.arange(self.n_inv)
        self._iv = i
        self._amax_ask = np.minimum(i, self.qa)           # admissible steps per level
        self._amax_bid = np.minimum(self.n_inv - 1 - i, self.qb)
        # quoting beyond the largest atom executes identically; the shortcut
        # clamps there so ties resolve to the smaller quote like the scan
        self._shortcut_cap_ask = np.minimum(self._amax_ask, int(self.z_ask.max()))
        self._shortcut_cap_bid = np.minimum(self._amax_bid, int(self.z_bid.max()))
        # quote -> number of atoms at or below it, and remaining tail mass
        self._cnt_ask = np.searchsorted(self.z_ask, np.arange(vmax + 2), side="right")
        self._cnt_bid = np.searchsorted(self.z_bid, np.arange(vmax + 2), side="right")
        cm_a = np.concatenate(([0.0], np.cumsum(self.w_ask)))
        cm_b = np.concatenate(([0.0], np.cumsum(self.w_bid)))
        self._tail_ask = 1.0 - cm_a[self._cnt_ask]
        self._tail_bid = 1.0 - cm_b[self._cnt_bid]
        mm = np.arange(vmax + 1)
        self._ev_ask = (self.w_ask[None, :] * np.minimum(mm[:, None], self.z_ask[None, :])
                        ).sum(axis=1) * step
        self._ev_bid = (self.w_bid[None, :] * np.minimum(mm[:, None], self.z_bid[None, :])
                        ).sum(axis=1) * step
        self._jv = np.arange(ny)
        self.last_concavity_violation = 0.0
        self.last_shortcut_share = 1.0

    # -- quote selection ----------------------------------------------------

    def _shortcut_quotes(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dd = np.diff(g, axis=0)                           # (n_inv-1, ny)
        i = self._iv[:, None]
        c_a = np.sum(dd >= self.k_ask[None, :] * self.step, axis=0)
        c_b = np.sum(dd > -self.k_bid[None, :] * self.step, axis=0)
        m_a = np.clip(i - c_a[None, :], 0, self._shortcut_cap_ask[:, None])
        m_b = np.clip(c_b[None, :] - i, 0, self._shortcut_cap_bid[:, None])
        return m_a.astype(np.int64), m_b.astype(np.int64)

    def _atom_cumsum(self, U: np.ndarray, side: int, with_pow: bool) -> np.ndarray:
        """cum[c] = sum over the first c atoms of mass * weight * shifted U.

        Atoms larger than the available shift contribute zero; they are never
        selected because quotes are capped by the same bound.
        """
        z = self.z_ask if side > 0 else self.z_bid
        w = self.w_ask if side > 0 else self.w_bid
        pw = self.pow_ask if side > 0 else self.pow_bid
        n, ny = U.shape
        cum = np.zeros((z.size + 1, n, ny))
        for s, zs in enumerate(z):
            zs = int(zs)
            layer = cum[s + 1]
            layer[:] = cum[s]
            if zs <= n - 1:
                factor = w[s] * (pw[:, zs] if with_pow else 1.0)
                if side > 0:
                    layer[zs:, :] += factor * U[: n - zs, :]
                else:
                    layer[: n - zs, :] += factor * U[zs:, :]
        return cum

    def _value_at(self, cum: np.ndarray, U: np.ndarray, m: np.ndarray, side: int,
                  with_pow: bool) -> np.ndarray:
        """Measure integral at given quotes (in steps) for every grid point."""
        cnt = self._cnt_ask[m] if side > 0 else self._cnt_bid[m]
        tail = self._tail_ask[m] if side > 0 else self._tail_bid[m]
        iv2 = self._iv[:, None]
        jv2 = self._jv[None, :]
        part = cum[cnt, iv2, jv2]
        pw = self.pow_ask if side > 0 else self.pow_bid
        own = pw[jv2, m] if with_pow else 1.0
        return part + tail * own * U[iv2 - side * m, jv2]

    def _integral_at(self, U: np.ndarray, m: np.ndarray, side: int) -> np.ndarray:
        cum = self._atom_cumsum(U, side, with_pow=True)
        return self._value_at(cum, U, m, side, with_pow=True)

    def _column_scan(self, Ucol: np.ndarray, k_y: float, side: int) -> tuple[np.ndarray, np.ndarray]:
        """Full quote sweep for one y column; returns (values, argmax steps)."""
        n = self.n_inv
        z = self.z_ask if side > 0 else self.z_bid
        w = self.w_ask if side > 0 else self.w_bid
        cnt = self._cnt_ask if side > 0 else self._cnt_bid
        tail = self._tail_ask if side > 0 else self._tail_bid
        amax = self._amax_ask if side > 0 else self._amax_bid
        m_hi = int(amax.max())
        own_w = np.exp(-k_y * self.step * np.arange(m_hi + 1))

        # prefix part: cumulated atom contributions, masked where the shift
        # would leave the grid (those quotes are inadmissible anyway)
        contrib = np.zeros((z.size, n))
        for s, zs in enumerate(z):
            if zs > n - 1:
                break
            aw = w[s] * np.exp(-k_y * self.step * zs)
            if side > 0:
                contrib[s, zs:] = aw * Ucol[: n - zs]
            else:
                contrib[s, : n - zs] = aw * Ucol[zs:]
        cum = np.concatenate((np.zeros((1, n)), np.cumsum(contrib, axis=0)))
        prefix = cum[cnt[: m_hi + 1]]                       # (m_hi+1, n)

        shifted = np.zeros((m_hi + 1, n))
        for m in range(m_hi + 1):
            if side > 0:
                shifted[m, m:] = Ucol[: n - m]
            else:
                shifted[m, : n - m] = Ucol[m:]
        vals = prefix + tail[: m_hi + 1, None] * own_w[:, None] * shifted
        mask = np.arange(m_hi + 1)[:, None] > amax[None, :]
        vals[mask] = -np.inf
        best = vals.max(axis=0)
        arg = np.argmax(vals >= best - TIE_REL * np.abs(best), axis=0)
        return best, arg.astype(np.int64)

    # -- public entry points --------------------------------------------------

    def hamiltonians(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(H_ask, H_bid, quote_ask, quote_bid) for a value layer U < 0."""
        if U.shape != (self.n_inv, self.y.size):
            raise ValidationError(f"layer shape {U.shape} does not match the lattice")
        usable = bool(np.all(U < 0))
        if usable:
            g = -np.log(-U)
            second = np.diff(g, 2, axis=0)
            viol = second.max(axis=0) if second.size else np.zeros(self.y.size)
            self.last_concavity_violation = float(viol.max()) if viol.size else 0.0
            concave = viol <= CONCAVITY_TOL
        else:
            concave = np.zeros(self.y.size, dtype=bool)
            self.last_concavity_violation = np.inf
        self.last_shortcut_share = float(np.mean(concave)) if concave.size else 0.0

        if usable and concave.any():
            m_a, m_b = self._shortcut_quotes(g)
        else:
            m_a = np.zeros((self.n_inv, self.y.size), dtype=np.int64)
            m_b = np.zeros_like(m_a)
        cum_a = self._atom_cumsum(U, +1, with_pow=True)
        Ha = self._value_at(cum_a, U, m_a, +1, with_pow=True)
        cum_b = self._atom_cumsum(U, -1, with_pow=True)
        Hb = self._value_at(cum_b, U, m_b, -1, with_pow=True)

        for j in np.nonzero(~concave)[0]:
            va, aa = self._column_scan(U[:, j], self.k_ask[j], +1)
            vb, ab = self._column_scan(U[:, j], self.k_bid[j], -1)
            Ha[:, j], m_a[:, j] = va, aa
            Hb[:, j], m_b[:, j] = vb, ab
        return Ha, Hb, m_a, m_b

    def hamiltonians_bruteforce(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Full quote sweep on every column; reference for the fast route."""
        ny = self.y.size
        Ha = np.empty((self.n_inv, ny))
        Hb = np.empty_like(Ha)
        m_a = np.empty((self.n_inv, ny), dtype=np.int64)
        m_b = np.empty_like(m_a)
        for j in range(ny):
            Ha[:, j], m_a[:, j] = self._column_scan(U[:, j], self.k_ask[j], +1)
            Hb[:, j], m_b[:, j] = self._column_scan(U[:, j], self.k_bid[j], -1)
        return Ha, Hb, m_a, m_b

    def policy_coupling(self, W: np.ndarray, m_a: np.ndarray, m_b: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Gathers for the platform equation: post-trade expectation of W and
        expected executed volume, per side, under fixed quotes (in steps)."""
        cum_a = self._atom_cumsum(W, +1, with_pow=False)
        cum_b = self._atom_cumsum(W, -1, with_pow=False)
        Ga = self._value_at(cum_a, W, m_a, +1, with_pow=False)
        Gb = self._value_at(cum_b, W, m_b, -1, with_pow=False)
        EVa = self._ev_ask[m_a]
        EVb = self._ev_bid[m_b]
        return Ga, Gb, EVa, EVb
