"""Signed-distance process between the efficient price and the mid-price.

The efficient price follows the driver w; the signed distance Y behaves like
w until it reaches a barrier (a or b), where it instantly resets to an
interior level (a0 or b0) and the mid-price moves one tick.  The construction
below reproduces that recursion on piecewise-linear drivers, resolving
crossing times inside each segment by linear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ModelParams, ValidationError
from .output import write_csv

__all__ = [
    "DriverPath",
    "BarrierEvent",
    "PathSample",
    "barrier_sequence",
    "y_path",
    "midprice_path",
    "simulate_driver",
    "estimate_eta",
    "write_path_csv",
    "write_jumps_csv",
]

_SCAN_CHUNK = 8192


@dataclass(frozen=True)
class DriverPath:
    """Continuous driver sampled at knots, interpolated linearly in between."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValidationError("driver needs matching 1-d times and values, >= 2 knots")
        if t[0] != 0.0 or v[0] != 0.0:
            raise ValidationError("driver must start at (0, 0)")
        if not np.all(np.diff(t) > 0):
            raise ValidationError("driver times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, s: float) -> float:
        return float(np.interp(s, self.times, self.values))


@dataclass(frozen=True)
class BarrierEvent:
    tau: float
    epsilon: int          # +1 upper hit, -1 lower hit, 0 terminal sentinel
    epsilon_prime: float  # b0-b, a0-a, or 0


@dataclass(frozen=True)
class PathSample:
    """One trajectory of (efficient price, signed distance, mid-price)."""

    times: np.ndarray
    efficient: np.ndarray
    signed_distance: np.ndarray
    mid: np.ndarray
    jump_marks: tuple          # of (time, direction)


def _check_geometry(geometry) -> tuple[float, float, float, float, float]:
    a, b, a0, b0 = (float(x) for x in geometry)
    if not (a < b and a < a0 < b and a < b0 < b):
        raise ValidationError(f"invalid barrier geometry {geometry!r}")
    spacing = min(a0 - a, b - a0, b0 - a, b - b0)
    return a, b, a0, b0, spacing


def barrier_sequence(t: float, y: float, w: DriverPath, geometry) -> list[BarrierEvent]:
    """Hitting times and jump marks of the reset process started at (t, y).

    Returns the barrier hits in order, followed by one terminal sentinel
    (tau=T, epsilon=0).  The driver is read only on [t, T].
    """
    a, b, a0, b0, _ = _check_geometry(geometry)
    T = w.horizon
    if not 0.0 <= t <= T:
        raise ValidationError(f"start time {t} outside [0, {T}]")
    if not a < y < b:
        raise ValidationError(f"start level {y} not strictly inside ({a}, {b})")

    times, vals = w.times, w.values
    wt = w.at(t)
    base = y - wt                      # level(s) = base + w(s) + accumulated resets
    events: list[BarrierEvent] = []

    pos_time = t
    pos_level = y
    i = int(np.searchsorted(times, t, side="right"))   # first knot strictly after t

    while i < times.size:
        # Chunked scan for the first knot whose level leaves (a, b).
        j = i
        hit_idx = -1
        while j < times.size:
            hi = min(j + _SCAN_CHUNK, times.size)
            lv = base + vals[j:hi]
            out = (lv >= b) | (lv <= a)
            if out.any():
                hit_idx = j + int(np.argmax(out))
                break
            j = hi
        if hit_idx < 0:
            break

        # The crossing lies between the last interior point and knot hit_idx.
        if hit_idx - 1 >= i:
            seg_t0, seg_l0 = float(times[hit_idx - 1]), base + float(vals[hit_idx - 1])
        else:
            seg_t0, seg_l0 = pos_time, pos_level
        seg_t1 = float(times[hit_idx])
        seg_l1 = base + float(vals[hit_idx])

        # A single knot interval may produce several hits when the driver
        # moves far; resolve them in order within the segment.
        guard = 0
        while not (a < seg_l1 < b):
            target, eps = (b, 1) if seg_l1 >= b else (a, -1)
            theta = (target - seg_l0) / (seg_l1 - seg_l0)
            tau = seg_t0 + theta * (seg_t1 - seg_t0)
            eps_prime = (b0 - b) if eps == 1 else (a0 - a)
            events.append(BarrierEvent(tau=tau, epsilon=eps, epsilon_prime=eps_prime))
            base += eps_prime
            seg_l0 = target + eps_prime
            seg_l1 += eps_prime
            seg_t0 = tau
            guard += 1
            if guard > 10_000:
                raise RuntimeError("barrier reset loop failed to terminate")

        pos_time, pos_level = seg_t1, seg_l1
        i = hit_idx + 1

    events.append(BarrierEvent(tau=T, epsilon=0, epsilon_prime=0.0))
    return events


def _offsets(events: Sequence[BarrierEvent]) -> tuple[np.ndarray, np.ndarray]:
    taus = np.asarray([e.tau for e in events if e.epsilon != 0], dtype=float)
    jumps = np.asarray([e.epsilon_prime for e in events if e.epsilon != 0], dtype=float)
    return taus, np.concatenate(([0.0], np.cumsum(jumps)))


def y_path(t: float, s: float, y: float, w: DriverPath, geometry) -> float:
    """Signed distance at time s; frozen at y for s <= t, right-continuous."""
    if s <= t:
        return y
    events = barrier_sequence(t, y, w, geometry)
    taus, cum = _offsets(events)
    k = int(np.searchsorted(taus, s, side="right"))
    return y + (w.at(s) - w.at(t)) + float(cum[k])


def _sample_times(t: float, w: DriverPath, taus: np.ndarray) -> np.ndarray:
    knots = w.times[w.times >= t]
    if knots.size == 0 or knots[0] != t:
        knots = np.concatenate(([t], knots))
    return np.unique(np.concatenate((knots, taus)))


def midprice_path(p0: float, t: float, y: float, w: DriverPath,
                  params: ModelParams) -> PathSample:
    """Joint sample of S, Y and the tick-grid mid-price P started at (t, p0, y).

    Samples lie on the driver knots plus the exact barrier-hit times; values
    at a hit are the post-jump ones.
    """
    delta = params.delta
    k = p0 / delta - 0.5
    if abs(k - round(k)) > 1e-9:
        raise ValidationError(f"p0={p0} off the inter-tick grid delta/2 + delta*Z")
    geometry = params.barrier_geometry()
    events = barrier_sequence(t, y, w, geometry)
    taus, cum = _offsets(events)
    dirs = np.asarray([e.epsilon for e in events if e.epsilon != 0], dtype=float)

    ts = _sample_times(t, w, taus)
    wvals = np.interp(ts, w.times, w.values)
    S = p0 + y + (wvals - w.at(t))
    idx = np.searchsorted(taus, ts, side="right")
    Y = y + (wvals - w.at(t)) + cum[idx]
    cumdir = np.concatenate(([0.0], np.cumsum(dirs)))
    P = p0 + delta * cumdir[idx]
    marks = tuple((float(tau), int(d)) for tau, d in zip(taus, dirs))
    return PathSample(times=ts, efficient=S, signed_distance=Y, mid=P, jump_marks=marks)


def simulate_driver(sigma: float, T: float, dt: float, seed) -> DriverPath:
    """Brownian driver with per-step variance sigma^2 * dt, reproducible by seed."""
    if dt <= 0 or T <= 0:
        raise ValidationError("T and dt must be positive")
    n = max(1, int(round(T / dt)))
    step = T / n
    rng = np.random.default_rng(seed)
    incr = rng.standard_normal(n) * (sigma * np.sqrt(step))
    values = np.concatenate(([0.0], np.cumsum(incr)))
    return DriverPath(times=np.linspace(0.0, T, n + 1), values=values)


def estimate_eta(sample: PathSample) -> float:
    """Empirical zone-width ratio: continuations over twice the alternations."""
    dirs = np.asarray([d for _, d in sample.jump_marks])
    if dirs.size < 2:
        raise ValidationError("eta estimate needs at least 2 mid-price jumps")
    same = dirs[1:] == dirs[:-1]
    n_cont = int(np.sum(same))
    n_alt = int(np.sum(~same))
    if n_alt == 0:
        raise ValidationError("eta estimate undefined: no alternations observed")
    return n_cont / (2.0 * n_alt)


def write_path_csv(sample: PathSample, path) -> None:
    write_csv(path, ["time", "S", "Y", "P"],
              zip(sample.times, sample.efficient, sample.signed_distance, sample.mid))


def write_jumps_csv(sample: PathSample, path) -> None:
    write_csv(path, ["time", "direction"], sample.jump_marks)
