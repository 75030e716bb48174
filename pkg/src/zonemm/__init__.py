"""Optimal market making on a large-tick asset whose mid-price follows
uncertainty-zone dynamics: coupled-system HJB solver, path simulator,
imbalance curves and tick-size optimization."""

__version__ = "0.1.0"

from .hamiltonian import (HamiltonianResult, InventorySlice, LayerEvaluator,
                          argmax_shortcut_ask, argmax_shortcut_bid,
                          hamiltonian_ask, hamiltonian_ask_fast,
                          hamiltonian_bid, hamiltonian_bid_fast, integral_ask,
                          integral_bid)
from .hjb import (HJBSolution, Lattice, NumericalError, PlatformSolution,
                  PolicyGrid, StabilityWarning, ValueGrid, extract_policy,
                  imbalance_curves, implicit_step, solve_hjb, solve_platform,
                  stability_max_dt)
from .model import (ExecutionMeasure, IntensitySpec, ModelBundle, ModelParams,
                    PenaltySpec, ValidationError, build_bundle, build_params,
                    intensity_eval, load_config, penalty_eval,
                    power_law_measure)
from .montecarlo import (SimConfig, UtilityEstimate, estimate_utility,
                         simulate_policy)
from .tick_sweep import TickSweepResult, eta_of_delta, run_sweep
from .uncertainty_zone import (BarrierEvent, DriverPath, PathSample,
                               barrier_sequence, estimate_eta, midprice_path,
                               simulate_driver, y_path)
