"""End-to-end acceptance suite.

Each test runs one verification criterion at its stated tolerance and prints
a single pass/fail line.  The hours-class full-scale tick reproduction is
gated behind ZONEMM_PAPER_SCALE=1.
"""

import pytest

from zonemm.verify import Verifier


@pytest.fixture(scope="module")
def verifier():
    return Verifier()


def check(result):
    print()
    print(result.line())
    assert result.passed, result.line()


def test_01_closed_form_value_oracle(verifier):
    check(verifier.closed_form_pde())


def test_02_zero_policy_monte_carlo_oracle(verifier):
    check(verifier.zero_policy_mc())


def test_03_value_matches_simulated_policy_utility(verifier):
    check(verifier.pde_mc_consistency())


def test_04_policy_monotone_in_signed_distance(verifier):
    check(verifier.policy_monotonicity())


def test_05_log_value_concave_in_inventory(verifier):
    check(verifier.log_concavity())


def test_06_quotes_stationary_over_most_of_horizon(verifier):
    check(verifier.quote_stationarity())


def test_07_volume_grid_refinement_converges(verifier):
    check(verifier.n_refinement())


def test_08_optimal_tick_shifts_right_with_volatility(verifier):
    check(verifier.tick_sweep_desk())


@pytest.mark.paperscale
def test_08b_full_scale_tick_reproduction(verifier):
    check(verifier.tick_sweep_full())


def test_09_quote_scan_evaluators_agree(verifier):
    check(verifier.hamiltonian_oracle())


def test_10_zone_ratio_estimator_consistent(verifier):
    check(verifier.eta_consistency())


def test_11_reset_process_construction_properties(verifier):
    check(verifier.construction_properties())
