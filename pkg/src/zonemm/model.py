"""Market model primitives: parameters, order-flow intensities, execution
measures and terminal inventory penalties.

Everything here is an immutable value object validated at construction.
Evaluation functions are pure, so instances can be shared freely across
threads and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "ModelParams",
    "IntensitySpec",
    "ExecutionMeasure",
    "PenaltySpec",
    "build_params",
    "build_intensity",
    "build_measure",
    "build_penalty",
    "intensity_eval",
    "power_law_measure",
    "penalty_eval",
    "load_config",
    "ModelBundle",
    "build_bundle",
]

MASS_TOL = 1e-12
GRID_TOL = 1e-9


class ValidationError(ValueError):
    """A configuration value violates a model constraint."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """All market and preference constants plus the derived barrier geometry.

    ``volume_steps`` is the number n of volume increments per ``inventory_cap``;
    ``None`` marks the continuous-volume regime, which the numerical layers do
    not accept (they approximate it by a large finite n).
    """

    horizon: float            # T, seconds
    sigma: float              # efficient-price volatility, price / sqrt(s)
    delta: float              # tick size, price
    eta: float                # relative half-width of the uncertainty zone
    gamma: float              # risk aversion, 1 / price
    inventory_cap: float      # Qbar, volume
    volume_steps: Optional[int]   # n, or None for continuous volumes
    ask_cap: float            # largest quotable ask volume
    bid_cap: float            # largest quotable bid volume
    ybar: float = field(init=False)
    y_plus: float = field(init=False)
    y_minus: float = field(init=False)

    def __post_init__(self) -> None:
        _require(self.horizon > 0, "horizon must be positive")
        _require(self.sigma > 0, "sigma must be positive")
        _require(self.delta > 0, "delta must be positive")
        _require(self.gamma > 0, "gamma must be positive")
        _require(self.inventory_cap > 0, "inventory_cap must be positive")
        if not (0.0 < self.eta < 0.5):
            raise ValidationError(
                f"eta out of range: {self.eta!r} not in (0, 1/2) (large-tick regime)"
            )
        if self.volume_steps is not None:
            n = self.volume_steps
            _require(isinstance(n, int) and n >= 1, "volume_steps must be a positive integer")
        for name, cap in (("ask_cap", self.ask_cap), ("bid_cap", self.bid_cap)):
            _require(0 < cap <= 2 * self.inventory_cap,
                     f"{name} must lie in (0, 2*inventory_cap]")
            if self.volume_steps is not None:
                step = self.inventory_cap / self.volume_steps
                k = cap / step
                _require(abs(k - round(k)) <= GRID_TOL * max(1.0, k),
                         f"{name}={cap} is not a multiple of the volume step {step}")
        object.__setattr__(self, "ybar", self.delta * (self.eta + 0.5))
        object.__setattr__(self, "y_plus", self.delta * (self.eta - 0.5))
        object.__setattr__(self, "y_minus", self.delta * (0.5 - self.eta))

    @property
    def is_continuous(self) -> bool:
        return self.volume_steps is None

    @property
    def volume_step(self) -> float:
        if self.volume_steps is None:
            raise ValidationError("continuous-volume parameters have no volume step")
        return self.inventory_cap / self.volume_steps

    @property
    def inventory_levels(self) -> int:
        """Number of inventory grid points, 2n + 1."""
        if self.volume_steps is None:
            raise ValidationError("continuous-volume parameters have no inventory grid")
        return 2 * self.volume_steps + 1

    def inventory_grid(self) -> np.ndarray:
        n = self.volume_steps
        if n is None:
            raise ValidationError("continuous-volume parameters have no inventory grid")
        return (np.arange(2 * n + 1) - n) * (self.inventory_cap / n)

    def inventory_index(self, Q: float) -> int:
        """Grid index of inventory Q; rejects off-grid values."""
        step = self.volume_step
        k = (Q + self.inventory_cap) / step
        ki = round(k)
        if abs(k - ki) > GRID_TOL * max(1.0, abs(k)) or not 0 <= ki <= 2 * self.volume_steps:
            raise ValidationError(f"inventory {Q} is not on the grid (step {step})")
        return int(ki)

    def barrier_geometry(self) -> tuple[float, float, float, float]:
        """(a, b, a0, b0): barriers and reset levels of the signed distance."""
        return (-self.ybar, self.ybar, self.y_minus, self.y_plus)


def build_params(config: dict) -> ModelParams:
    """Build validated parameters from the [market] / [preferences] sections."""
    market = config.get("market")
    prefs = config.get("preferences")
    _require(isinstance(market, dict), "missing [market] section")
    _require(isinstance(prefs, dict), "missing [preferences] section")
    try:
        n_raw = prefs["volume_steps"]
        n = None if n_raw == "continuous" else int(n_raw)
        return ModelParams(
            horizon=float(market["horizon"]),
            sigma=float(market["sigma"]),
            delta=float(market["delta"]),
            eta=float(market["eta"]),
            gamma=float(prefs["gamma"]),
            inventory_cap=float(prefs["inventory_cap"]),
            volume_steps=n,
            ask_cap=float(prefs["ask_cap"]),
            bid_cap=float(prefs["bid_cap"]),
        )
    except KeyError as exc:
        raise ValidationError(f"missing config key {exc.args[0]!r}") from exc


# ---------------------------------------------------------------------------
# Order-flow intensities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntensitySpec:
    """One side's market-order intensity over (t, y).

    Variants:
      * ``affine``: ask A*y + B, bid -A*y + B
      * ``exponential_capped``: ask A*exp(min(B*y, 0)), bid A*exp(min(-B*y, 0))
      * ``table``: bilinear interpolation of positive samples on a (t, y) grid

    ``rate_bound`` is a finite upper bound, tight for the closed forms and the
    sample maximum for tables.
    """

    variant: str
    side: str
    A: float = 0.0
    B: float = 0.0
    t_nodes: Optional[np.ndarray] = None
    y_nodes: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    y_bound: float = 0.0      # ybar of the owning model
    horizon: float = 0.0
    rate_bound: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        _require(self.side in ("ask", "bid"), f"unknown side {self.side!r}")
        _require(self.y_bound > 0, "y_bound must be positive")
        _require(self.horizon > 0, "horizon must be positive")
        if self.variant == "affine":
            _require(self.B > 0, "affine intensity needs level B > 0")
            _require(abs(self.A) * self.y_bound < self.B,
                     "affine intensity not positive on the zone: need |A|*ybar < B")
            bound = self.B + abs(self.A) * self.y_bound
        elif self.variant == "exponential_capped":
            _require(self.A > 0, "exponential intensity needs scale A > 0")
            _require(self.B >= 0, "exponential intensity needs rate B >= 0")
            bound = self.A
        elif self.variant == "table":
            t = np.asarray(self.t_nodes, dtype=float)
            y = np.asarray(self.y_nodes, dtype=float)
            v = np.asarray(self.values, dtype=float)
            _require(t.ndim == 1 and y.ndim == 1 and v.shape == (t.size, y.size),
                     "table intensity needs values shaped (len(t_nodes), len(y_nodes))")
            _require(bool(np.all(np.diff(t) > 0)) and bool(np.all(np.diff(y) > 0)),
                     "table nodes must be strictly increasing")
            _require(t[0] <= 0 and t[-1] >= self.horizon, "table t_nodes must cover [0, T]")
            _require(y[0] <= -self.y_bound and y[-1] >= self.y_bound,
                     "table y_nodes must cover [-ybar, ybar]")
            _require(bool(np.all(v > 0)), "table intensity samples must be strictly positive")
            object.__setattr__(self, "t_nodes", t)
            object.__setattr__(self, "y_nodes", y)
            object.__setattr__(self, "values", v)
            bound = float(v.max())
        else:
            raise ValidationError(f"unknown intensity variant {self.variant!r}")
        object.__setattr__(self, "rate_bound", float(bound))

    @property
    def time_dependent(self) -> bool:
        return self.variant == "table" and self.t_nodes is not None and self.t_nodes.size > 1

    def eval_grid(self, t: float, y: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at one time over an array of y values."""
        y = np.asarray(y, dtype=float)
        if self.variant == "affine":
            s = self.A if self.side == "ask" else -self.A
            return s * y + self.B
        if self.variant == "exponential_capped":
            s = self.B if self.side == "ask" else -self.B
            return self.A * np.exp(np.minimum(s * y, 0.0))
        ti = np.clip(np.searchsorted(self.t_nodes, t, side="right") - 1, 0, self.t_nodes.size - 2)
        wt = (t - self.t_nodes[ti]) / (self.t_nodes[ti + 1] - self.t_nodes[ti])
        wt = min(max(wt, 0.0), 1.0)
        yj = np.clip(np.searchsorted(self.y_nodes, y, side="right") - 1, 0, self.y_nodes.size - 2)
        wy = (y - self.y_nodes[yj]) / (self.y_nodes[yj + 1] - self.y_nodes[yj])
        wy = np.clip(wy, 0.0, 1.0)
        row0 = self.values[ti]
        row1 = self.values[ti + 1]
        v0 = row0[yj] * (1 - wy) + row0[yj + 1] * wy
        v1 = row1[yj] * (1 - wy) + row1[yj + 1] * wy
        return v0 * (1 - wt) + v1 * wt


def intensity_eval(spec: IntensitySpec, t: float, y: float) -> float:
    """Intensity at (t, y); strictly positive and bounded by spec.rate_bound."""
    if not 0.0 <= t <= spec.horizon + GRID_TOL:
        raise ValidationError(f"time {t} outside [0, {spec.horizon}]")
    if not -spec.y_bound - GRID_TOL <= y <= spec.y_bound + GRID_TOL:
        raise ValidationError(f"y={y} outside the closed barrier interval "
                              f"[{-spec.y_bound}, {spec.y_bound}]")
    return float(spec.eval_grid(t, np.asarray([y]))[0])


def build_intensity(section: dict, side: str, params: ModelParams) -> IntensitySpec:
    variant = section.get("variant")
    common = dict(side=side, y_bound=params.ybar, horizon=params.horizon)
    if variant == "affine":
        return IntensitySpec("affine", A=float(section["slope"]),
                             B=float(section["level"]), **common)
    if variant == "exponential_capped":
        return IntensitySpec("exponential_capped", A=float(section["scale"]),
                             B=float(section["rate"]), **common)
    if variant == "table":
        return IntensitySpec("table",
                             t_nodes=np.asarray(section["t_nodes"], dtype=float),
                             y_nodes=np.asarray(section["y_nodes"], dtype=float),
                             values=np.asarray(section["values"], dtype=float),
                             **common)
    raise ValidationError(f"[intensity.{side}]: unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Execution measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExecutionMeasure:
    """Discrete distribution of market-order volumes for one side.

    ``cap`` is the side's largest quotable volume; it must carry positive mass
    so the quote bound is identifiable, unless ``test_mode`` deliberately
    allows degenerate measures (e.g. all mass at volume zero) used by
    closed-form solver checks.
    """

    volumes: np.ndarray
    masses: np.ndarray
    cap: float
    test_mode: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.volumes, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        _require(v.ndim == 1 and v.size > 0, "measure needs at least one atom")
        _require(m.shape == v.shape, "volumes and masses must have equal length")
        _require(bool(np.all(np.diff(v) > 0)), "atom volumes must be strictly increasing")
        _require(bool(np.all(m >= 0)), "masses must be nonnegative")
        _require(abs(float(m.sum()) - 1.0) <= MASS_TOL,
                 f"masses sum to {m.sum()!r}, not 1 within {MASS_TOL}")
        _require(self.cap > 0, "cap must be positive")
        _require(bool(np.all(v >= 0)) and bool(np.all(v <= self.cap + GRID_TOL)),
                 "atom volumes must lie in [0, cap]")
        if not self.test_mode:
            _require(abs(v[-1] - self.cap) <= GRID_TOL * max(1.0, self.cap)
                     and m[-1] > 0,
                     "cap must be the largest atom and carry positive mass")
        object.__setattr__(self, "volumes", v)
        object.__setattr__(self, "masses", m)

    def mean_executed(self, quote: float) -> float:
        """E[min(quote, Z)] under the measure."""
        return float(np.sum(self.masses * np.minimum(self.volumes, quote)))

    def step_indices(self, step: float) -> np.ndarray:
        """Atom volumes as integer multiples of the inventory step."""
        k = self.volumes / step
        ki = np.rint(k)
        if np.any(np.abs(k - ki) > GRID_TOL * np.maximum(1.0, np.abs(k))):
            raise ValidationError(
                f"measure atoms are not multiples of the volume step {step}")
        return ki.astype(np.int64)


def power_law_measure(cap: float, atom_volumes: Sequence[float], decay: float,
                      test_mode: bool = False) -> ExecutionMeasure:
    """Masses proportional to decay**volume over the given atoms."""
    _require(0 < decay <= 1.0, "decay must lie in (0, 1]")
    v = np.asarray(sorted(atom_volumes), dtype=float)
    _require(v.size > 0, "empty atom list")
    _require(abs(v[-1] - cap) <= GRID_TOL * max(1.0, cap), "cap must equal the largest atom")
    w = decay ** v
    return ExecutionMeasure(volumes=v, masses=w / w.sum(), cap=cap, test_mode=test_mode)


def build_measure(section: dict, side: str, params: ModelParams) -> ExecutionMeasure:
    variant = section.get("variant")
    cap = params.ask_cap if side == "ask" else params.bid_cap
    if variant == "power_law":
        atom_step = float(section.get("atom_step", params.volume_step))
        n_atoms = int(round(cap / atom_step))
        _require(abs(n_atoms * atom_step - cap) <= GRID_TOL * max(1.0, cap),
                 f"[measure.{side}]: cap {cap} is not a multiple of atom_step {atom_step}")
        atoms = np.arange(n_atoms + 1) * atom_step
        return power_law_measure(cap, atoms, float(section["decay"]))
    if variant == "atoms":
        return ExecutionMeasure(
            volumes=np.asarray(section["volumes"], dtype=float),
            masses=np.asarray(section["masses"], dtype=float),
            cap=cap,
            test_mode=bool(section.get("test_mode", False)),
        )
    if variant == "degenerate_zero":
        # Closed-form solver oracle: every fill executes zero volume.
        return ExecutionMeasure(volumes=np.asarray([0.0]), masses=np.asarray([1.0]),
                                cap=cap, test_mode=True)
    raise ValidationError(f"[measure.{side}]: unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Terminal penalty
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PenaltySpec:
    """Terminal inventory penalty, quadratic or tabulated on the grid."""

    variant: str
    cap: float                      # Qbar
    coefficient: float = 0.0
    values: Optional[np.ndarray] = None
    volume_steps: Optional[int] = None

    def __post_init__(self) -> None:
        _require(self.cap > 0, "cap must be positive")
        if self.variant == "quadratic":
            _require(math.isfinite(self.coefficient), "coefficient must be finite")
        elif self.variant == "table":
            v = np.asarray(self.values, dtype=float)
            _require(self.volume_steps is not None and self.volume_steps >= 1,
                     "table penalty needs volume_steps")
            _require(v.shape == (2 * self.volume_steps + 1,),
                     "table penalty needs one value per inventory grid point")
            _require(bool(np.all(np.isfinite(v))), "penalty values must be finite")
            object.__setattr__(self, "values", v)
        else:
            raise ValidationError(f"unknown penalty variant {self.variant!r}")

    def eval_grid(self, Q: np.ndarray) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        if self.variant == "quadratic":
            return self.coefficient * Q * Q
        step = self.cap / self.volume_steps
        idx = np.rint((Q + self.cap) / step).astype(np.int64)
        return self.values[idx]

    def is_convex(self, tol: float = 1e-12) -> bool:
        """Nonnegative discrete second differences on the inventory grid."""
        if self.variant == "quadratic":
            return self.coefficient >= 0
        return bool(np.all(np.diff(self.values, 2) >= -tol))


def penalty_eval(spec: PenaltySpec, Q: float) -> float:
    if abs(Q) > spec.cap * (1 + GRID_TOL):
        raise ValidationError(f"inventory {Q} outside [-{spec.cap}, {spec.cap}]")
    return float(spec.eval_grid(np.asarray([Q]))[0])


def build_penalty(section: dict, params: ModelParams) -> PenaltySpec:
    variant = section.get("variant")
    if variant == "quadratic":
        return PenaltySpec("quadratic", cap=params.inventory_cap,
                           coefficient=float(section["coefficient"]))
    if variant == "table":
        return PenaltySpec("table", cap=params.inventory_cap,
                           values=np.asarray(section["values"], dtype=float),
                           volume_steps=params.volume_steps)
    raise ValidationError(f"[penalty]: unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# Whole-config assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelBundle:
    """Everything a solver or simulator needs, built from one config."""

    params: ModelParams
    intensity_ask: IntensitySpec
    intensity_bid: IntensitySpec
    measure_ask: ExecutionMeasure
    measure_bid: ExecutionMeasure
    penalty: PenaltySpec

    def with_tick(self, delta: float, eta: float) -> "ModelBundle":
        """Rebuild with a new tick geometry, keeping everything else."""
        params = replace(self.params, delta=delta, eta=eta)
        def retick(spec: IntensitySpec) -> IntensitySpec:
            return replace(spec, y_bound=params.ybar)
        return ModelBundle(params, retick(self.intensity_ask), retick(self.intensity_bid),
                           self.measure_ask, self.measure_bid, self.penalty)


def load_config(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:                      # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def build_bundle(config: dict) -> ModelBundle:
    params = build_params(config)
    def section(name: str) -> dict:
        parts = name.split(".")
        node = config
        for p in parts:
            node = node.get(p) if isinstance(node, dict) else None
            if node is None:
                raise ValidationError(f"missing [{name}] section")
        return node
    bundle = ModelBundle(
        params=params,
        intensity_ask=build_intensity(section("intensity.ask"), "ask", params),
        intensity_bid=build_intensity(section("intensity.bid"), "bid", params),
        measure_ask=build_measure(section("measure.ask"), "ask", params),
        measure_bid=build_measure(section("measure.bid"), "bid", params),
        penalty=build_penalty(section("penalty"), params),
    )
    if params.volume_steps is not None:
        step = params.volume_step
        bundle.measure_ask.step_indices(step)
        bundle.measure_bid.step_indices(step)
    return bundle
