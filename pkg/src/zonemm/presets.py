"""Ready-made configuration dictionaries.

``baseline()`` is the busy-market quoting setup used by the policy studies;
``tick_study()`` is the platform's volume-maximization setup; the desk
variants shrink the volume grid and horizon so a solve-plus-simulate cycle
runs in seconds.  All are plain dicts with the same shape as the TOML config
files, so they feed straight into ``model.build_bundle``.
"""

from __future__ import annotations

import copy

__all__ = ["baseline", "desk", "degenerate_oracle", "tick_study"]


def baseline(**overrides) -> dict:
    """Affine order flow, one-tick spread market, busy trading over an hour."""
    cfg = {
        "market": {"horizon": 3600.0, "sigma": 0.005, "delta": 0.01, "eta": 0.2},
        "preferences": {"gamma": 1.0, "inventory_cap": 50.0, "volume_steps": 100,
                        "ask_cap": 100.0, "bid_cap": 100.0},
        "intensity": {"ask": {"variant": "affine", "slope": 10.0, "level": 0.1},
                      "bid": {"variant": "affine", "slope": 10.0, "level": 0.1}},
        "measure": {"ask": {"variant": "power_law", "decay": 0.9, "atom_step": 1.0},
                    "bid": {"variant": "power_law", "decay": 0.9, "atom_step": 1.0}},
        "penalty": {"variant": "quadratic", "coefficient": 0.001},
        "grid": {"n_t": 7500, "n_y": 350},
    }
    return _apply(cfg, overrides)


def desk(**overrides) -> dict:
    """Baseline market on a coarse volume grid and a short horizon."""
    cfg = baseline()
    cfg["market"]["horizon"] = 300.0
    cfg["preferences"]["volume_steps"] = 20
    cfg["measure"]["ask"]["atom_step"] = 2.5
    cfg["measure"]["bid"]["atom_step"] = 2.5
    cfg["grid"] = {"n_t": 4000, "n_y": 70}
    return _apply(cfg, overrides)


def degenerate_oracle(**overrides) -> dict:
    """All order volume collapses to zero: the value system decouples into
    per-inventory linear equations with a closed-form solution."""
    cfg = {
        "market": {"horizon": 60.0, "sigma": 0.005, "delta": 0.01, "eta": 0.2},
        "preferences": {"gamma": 1.0, "inventory_cap": 15.0, "volume_steps": 10,
                        "ask_cap": 3.0, "bid_cap": 3.0},
        "intensity": {"ask": {"variant": "affine", "slope": 0.05, "level": 0.001},
                      "bid": {"variant": "affine", "slope": 0.05, "level": 0.001}},
        "measure": {"ask": {"variant": "degenerate_zero"},
                    "bid": {"variant": "degenerate_zero"}},
        "penalty": {"variant": "quadratic", "coefficient": 0.001},
        "grid": {"n_t": 100, "n_y": 100},
    }
    return _apply(cfg, overrides)


def tick_study(**overrides) -> dict:
    """Platform setup: capped-exponential order flow, stronger penalty, short
    horizon; the [sweep] section drives the tick grid."""
    cfg = {
        "market": {"horizon": 240.0, "sigma": 0.005, "delta": 0.01, "eta": 0.2},
        "preferences": {"gamma": 1.0, "inventory_cap": 50.0, "volume_steps": 100,
                        "ask_cap": 100.0, "bid_cap": 100.0},
        "intensity": {"ask": {"variant": "exponential_capped", "scale": 1.5, "rate": 200.0},
                      "bid": {"variant": "exponential_capped", "scale": 1.5, "rate": 200.0}},
        "measure": {"ask": {"variant": "power_law", "decay": 0.9, "atom_step": 1.0},
                    "bid": {"variant": "power_law", "decay": 0.9, "atom_step": 1.0}},
        "penalty": {"variant": "quadratic", "coefficient": 0.005},
        "grid": {"n_t": 2000, "n_y": 140},
        "sweep": {"eta0": 0.2, "delta0": 0.1,
                  "delta_min": 0.001, "delta_max": 0.02, "delta_count": 12,
                  "sigmas": [0.005, 0.0075, 0.01, 0.015]},
    }
    return _apply(cfg, overrides)


def _apply(cfg: dict, overrides: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    for dotted, value in overrides.items():
        node = cfg
        parts = dotted.split("__")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg
