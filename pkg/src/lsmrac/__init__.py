"""Multivariable least-squares model-reference adaptive control simulator.

Factorizations of the high-frequency gain, state-variable filters, the
lag-filtered triangular regressor, least-squares / constant-gain / gradient
update laws, a fixed-step closed-loop integrator, and analysis utilities
that check the stability and convergence-rate properties empirically.
"""

from .analysis import (MatchingOracle, MatchingResult, ScalingReport,
                       ScalingRow, convergence_time, gamma_sweep, l2sq,
                       lemma4_check, linf, matching_params,
                       oracle_for_scenario, pe_measure, upsilon, v1_monitor)
from .controller import (AdaptiveState, FilterBank, OmegaStack, XiState,
                         build_omega, compute_control, filter_derivatives,
                         sign_d_from_minors, theta_dot, xi_derivative)
from .dynamics import (Prefilter, RefModel, SignalSpec, SignalTerm,
                       StateSpace, eval_signal, high_freq_gain,
                       plant_derivative, plant_output, prefilter_step,
                       refmodel_derivative, rk4_step)
from .errors import (Diverged, LsmracError, NonFiniteState, NonPositiveDplus,
                     NonSpdCovariance, ParseError, ScenarioError,
                     SearchExhausted, SingularMinor, UnsupportedPlantFamily)
from .factorization import (LduResult, SduResult, dplus_geometric,
                            find_dplus, is_spd, ldu_factor, leading_minors,
                            lplus, sdu_factor)
from .loop import (LoopLayout, Scenario, Trace, builtin_scenarios,
                   initial_state, layout, loop_derivative, run)
from .scenario_io import (load_scenario, parse_scenario_text, read_trace_csv,
                          save_scenario, scenario_to_text, write_trace_csv)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveState", "Diverged", "FilterBank", "LduResult", "LoopLayout",
    "LsmracError", "MatchingOracle", "MatchingResult", "NonFiniteState",
    "NonPositiveDplus", "NonSpdCovariance", "OmegaStack", "ParseError",
    "Prefilter", "RefModel", "ScalingReport", "ScalingRow", "Scenario",
    "ScenarioError", "SduResult", "SearchExhausted", "SignalSpec",
    "SignalTerm", "SingularMinor", "StateSpace", "Trace",
    "UnsupportedPlantFamily", "XiState", "build_omega", "builtin_scenarios",
    "compute_control", "convergence_time", "dplus_geometric", "eval_signal",
    "filter_derivatives", "find_dplus", "gamma_sweep", "high_freq_gain",
    "initial_state", "is_spd", "l2sq", "layout", "ldu_factor",
    "leading_minors", "lemma4_check", "linf", "load_scenario",
    "loop_derivative", "lplus", "matching_params", "oracle_for_scenario",
    "parse_scenario_text", "pe_measure", "plant_derivative", "plant_output",
    "prefilter_step", "read_trace_csv", "refmodel_derivative", "rk4_step",
    "run", "save_scenario", "scenario_to_text", "sdu_factor",
    "sign_d_from_minors", "theta_dot", "upsilon", "v1_monitor",
    "write_trace_csv", "xi_derivative",
]
