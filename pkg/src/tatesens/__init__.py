"""tatesens: target-population treatment-effect estimation from trial data,
with sensitivity analyses for effect modifiers unobserved in the target
population."""

__version__ = "0.1.0"

from .data import (AnalysisContext, Column, CoverageReport, DataTable,
                   LongOutcome, PopulationKind, PopulationTarget,
                   PrePostOutcome, SingleOutcome, SummaryStats, VariableRoles,
                   check_modifier_coverage, declare_roles, load_summary_stats,
                   load_table)
from .design import Design, ModelSpec, Term, build_design, parse_terms
from .errors import (ConfigError, CoverageError, DataError, DesignError,
                     FitError, SeparationError, TatesensError,
                     UnobservedModifierError)
from .estimation import (FittedModel, LinComResult, MixedFit, fit_glm_irls,
                         fit_random_intercepts, fit_wls, lincom)
from .sensitivity import (EffectStructure, ScanReport, SensitivityConfig,
                          SensitivityResult, compare_methods,
                          default_model_spec, fit_outcome_model,
                          reject_unobserved_in_trial, resolve_effect_structure,
                          run_method1, run_method2, scan_effect_modifiers,
                          tate_ci, tate_point)
from .simulation import (EvalReport, ScenarioSpec, default_scenarios, evaluate,
                         generate_replicate, load_scenario, variance_comparison)
from .weighting import (BalanceTable, WeightSet, adjust_within_trial_balance,
                        balance_table, compose_two_step, diagnostics, kish_ess,
                        weight_by_odds, weight_inverse_probability,
                        weight_ratio_of_probability, weight_to_population)

__all__ = [name for name in dir() if not name.startswith("_")]
