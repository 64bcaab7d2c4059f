"""Trial-to-population weighting procedures and weight diagnostics.

Three procedures cover the target-population data scenarios:

* weighting-by-the-odds — a population dataset (or representative sample) is
  available and trial members cannot be identified in it;
* inverse-probability weighting — trial members are identifiable inside the
  population dataset;
* ratio-of-probability weighting — only the joint categorical distribution of
  the shared covariates is known.

The recommended composition is two-step: first balance the trial arms by
within-trial propensity weighting (on all covariates, including trial-only
modifiers), then weight the adjusted trial sample to the target population.
Weighting each arm to the population separately is implemented only as a
documented anti-pattern for testing, since it can distort between-arm balance
on variables the population data does not observe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import (DataTable, PopulationKind, PopulationTarget, SummaryStats,
                   stack_tables)
from .design import ModelSpec, build_design, parse_terms
from .errors import CoverageError, DataError
from .estimation import fit_glm_irls

logger = logging.getLogger(__name__)

PS_WARN = 0.01
MAX_WEIGHT_RATIO = 10.0


def kish_ess(weights: np.ndarray) -> float:
    """Kish effective sample size, (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / (w**2).sum())


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    arm1_mean: float
    arm0_mean: float
    overall_mean: float
    population_mean: float  # nan when the target provides no value
    std_diff_arms: float
    std_diff_pop: float


@dataclass(frozen=True)
class BalanceTable:
    rows: tuple[BalanceRow, ...]

    def row(self, covariate: str) -> BalanceRow:
        for r in self.rows:
            if r.covariate == covariate:
                return r
        raise DataError(f"no balance row for {covariate!r}")

    def max_std_diff_arms(self) -> float:
        return max((r.std_diff_arms for r in self.rows), default=0.0)

    def max_std_diff_pop(self) -> float:
        vals = [r.std_diff_pop for r in self.rows if np.isfinite(r.std_diff_pop)]
        return max(vals, default=0.0)


@dataclass(frozen=True)
class WeightSet:
    """Per-trial-row weights with provenance and diagnostics."""

    weights: np.ndarray
    procedure: str
    participation_scores: np.ndarray | None = None
    ess: float = 0.0
    ess_by_arm: Mapping[str, float] = field(default_factory=dict)
    balance: BalanceTable | None = None
    balance_before: BalanceTable | None = None
    warnings: tuple[str, ...] = ()
    row_index: np.ndarray | None = None  # rows of the source table the weights refer to

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if (w < 0).any():
            raise DataError("weights must be nonnegative")
        if not (w > 0).any():
            raise DataError("at least one weight must be positive")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ess", kish_ess(w))


# ---------------------------------------------------------------------------
# balance computation


def _expanded_views(table: DataTable, covars: Sequence[str]):
    """(label, 0/1-or-numeric vector, is_proportion) per displayed covariate."""
    views = []
    for name in covars:
        col = table.column(name)
        if col.kind == "categorical":
            for lv in col.levels:
                views.append((f"{name}={lv}", col.level_indicator(lv), True))
        else:
            views.append((name, col.numeric(), col.kind == "binary"))
    return views


def _wmean(x: np.ndarray, w: np.ndarray) -> float:
    return float((w * x).sum() / w.sum())


def _wvar(x: np.ndarray, w: np.ndarray, is_prop: bool) -> float:
    m = _wmean(x, w)
    if is_prop:
        return m * (1.0 - m)
    return float((w * (x - m) ** 2).sum() / w.sum())


def _smd(m1, m0, v1, v0) -> float:
    denom = np.sqrt((v1 + v0) / 2.0)
    if denom <= 0:
        return 0.0 if np.isclose(m1, m0) else np.inf
    return float(abs(m1 - m0) / denom)


def _population_value(pop: PopulationTarget | None, label: str, vec_fn) -> tuple[float, float]:
    """(mean, variance) of an expanded covariate in the population target."""
    if pop is None:
        return np.nan, np.nan
    if pop.data is not None:
        try:
            x = vec_fn(pop.data)
        except DataError:
            return np.nan, np.nan
        w = np.ones(len(x))
        is_prop = set(np.unique(x)) <= {0.0, 1.0}
        return _wmean(x, w), _wvar(x, w, is_prop)
    ss = pop.summary
    if ss is None:
        return np.nan, np.nan
    if label in ss.z_means:
        pt = ss.z_means[label][0]
        return pt, pt * (1.0 - pt) if 0.0 <= pt <= 1.0 else np.nan
    if "=" in label and ss.joint_cells:
        name, lv = label.split("=", 1)
        if name in ss.joint_columns:
            idx = ss.joint_columns.index(name)
            pt = sum(p for pat, p in ss.joint_cells.items() if pat[idx] == lv)
            return pt, pt * (1.0 - pt)
    return np.nan, np.nan


def _view_fn(name: str, label: str):
    def fn(table: DataTable):
        col = table.column(name)
        if col.kind == "categorical":
            return col.level_indicator(label.split("=", 1)[1])
        return col.numeric()
    return fn


def balance_table(trial: DataTable, treatment: str, covars: Sequence[str],
                  weights: np.ndarray | None = None,
                  pop: PopulationTarget | None = None) -> BalanceTable:
    """Weighted covariate means per trial arm and overall, against population
    targets where the target data provides them, with absolute standardized
    differences (pooled-variance denominator)."""
    w = np.ones(trial.n_rows) if weights is None else np.asarray(weights, dtype=float)
    a = trial.numeric(treatment)
    rows = []
    for label, x, is_prop in _expanded_views(trial, covars):
        m1, v1 = _wmean(x[a == 1], w[a == 1]), _wvar(x[a == 1], w[a == 1], is_prop)
        m0, v0 = _wmean(x[a == 0], w[a == 0]), _wvar(x[a == 0], w[a == 0], is_prop)
        mo = _wmean(x, w)
        name = label.split("=", 1)[0]
        mp, vp = _population_value(pop, label, _view_fn(name, label))
        vo = _wvar(x, w, is_prop)
        rows.append(BalanceRow(
            covariate=label,
            arm1_mean=m1, arm0_mean=m0, overall_mean=mo, population_mean=mp,
            std_diff_arms=_smd(m1, m0, v1, v0),
            std_diff_pop=_smd(mo, mp, vo, vp if np.isfinite(vp) else vo)
            if np.isfinite(mp) else np.nan,
        ))
    return BalanceTable(rows=tuple(rows))


def _ess_by_arm(trial: DataTable, treatment: str, w: np.ndarray) -> dict[str, float]:
    a = trial.numeric(treatment)
    return {"arm1": kish_ess(w[a == 1]), "arm0": kish_ess(w[a == 0]),
            "overall": kish_ess(w)}


def _weight_warnings(w: np.ndarray, ps: np.ndarray | None,
                     ps_threshold: float = PS_WARN) -> tuple[str, ...]:
    notes = []
    med = float(np.median(w[w > 0]))
    if med > 0 and w.max() > MAX_WEIGHT_RATIO * med:
        notes.append(f"max weight {w.max():.3g} exceeds {MAX_WEIGHT_RATIO:g}x the median {med:.3g}")
    if ps is not None and (ps < ps_threshold).any():
        notes.append(f"{int((ps < ps_threshold).sum())} participation score(s) below "
                     f"{ps_threshold:.3g} (near-positivity violation)")
    for n in notes:
        logger.warning("weighting: %s", n)
    return tuple(notes)


# ---------------------------------------------------------------------------
# procedures


def _participation_fit(table: DataTable, response: str, covars: Sequence[str],
                       terms: Sequence[str] | None, weights=None):
    spec = ModelSpec(response=response, link="logit",
                     terms=parse_terms(terms if terms is not None else list(covars)))
    design = build_design(table, spec)
    fit = fit_glm_irls(design, weights=weights)
    eta = design.matrix @ fit.coef_vector
    return 1.0 / (1.0 + np.exp(-eta))


def weight_by_odds(trial: DataTable, pop: DataTable, covars: Sequence[str],
                   treatment: str | None = None, terms: Sequence[str] | None = None,
                   trial_weights: np.ndarray | None = None) -> WeightSet:
    """Weighting-by-the-odds for an unidentifiable-overlap population dataset.

    Stacks the trial and population tables, fits a logistic participation
    model on the shared covariates, and weights each trial row by the odds of
    being in the population dataset, (1 - ps) / ps.  ``trial_weights`` lets a
    prior within-trial adjustment enter the participation fit (the two-step
    composition).

    If trial members are present but unidentified in a representative sample,
    the procedure still applies as stated; the overlap inflates only the
    participation-model intercept, which cancels from relative weights.
    """
    for c in covars:
        if c not in trial:
            raise DataError(f"covariate {c!r} missing from trial table")
        if c not in pop:
            raise DataError(f"covariate {c!r} missing from population table")
    stacked = stack_tables(trial, pop, covars, indicator="_in_trial")
    prior = None
    if trial_weights is not None:
        prior = np.concatenate([np.asarray(trial_weights, float), np.ones(pop.n_rows)])
    ps_all = _participation_fit(stacked, "_in_trial", covars, terms, weights=prior)
    ps = ps_all[:trial.n_rows]
    w = (1.0 - ps) / ps
    if trial_weights is not None:
        base = np.asarray(trial_weights, float)
    else:
        base = np.ones(trial.n_rows)
    # in the stacked design the scores sit near the trial's share of the stack,
    # so the positivity warning threshold is scaled to that baseline
    share = trial.n_rows / (trial.n_rows + pop.n_rows)
    warnings = _weight_warnings(w, ps, ps_threshold=PS_WARN * share / 0.5)
    ws = WeightSet(weights=w, procedure="by_odds", participation_scores=ps,
                   warnings=warnings, row_index=np.arange(trial.n_rows))
    if treatment is not None:
        ws = attach_diagnostics(ws, trial, treatment, covars,
                                PopulationTarget(PopulationKind.FULL_DATASET, data=pop),
                                base_weights=base)
    return ws


def weight_inverse_probability(pop: DataTable, covars: Sequence[str],
                               membership_col: str,
                               terms: Sequence[str] | None = None,
                               member_weights: np.ndarray | None = None) -> WeightSet:
    """Inverse-probability weighting when trial members are identified inside
    the population dataset: W = 1 / ps for each member row."""
    if membership_col not in pop:
        raise DataError(f"membership column {membership_col!r} missing from population table")
    member = pop.numeric(membership_col) == 1.0
    if member.sum() < 2:
        raise DataError(f"fewer than 2 trial members flagged by {membership_col!r}")
    prior = None
    if member_weights is not None:
        prior = np.ones(pop.n_rows)
        prior[member] = np.asarray(member_weights, float)
    ps_all = _participation_fit(pop, membership_col, covars, terms, weights=prior)
    ps = ps_all[member]
    w = 1.0 / ps
    warnings = _weight_warnings(w, ps)
    return WeightSet(weights=w, procedure="inverse_probability",
                     participation_scores=ps, warnings=warnings,
                     row_index=np.flatnonzero(member))


def weight_ratio_of_probability(trial: DataTable, summary: SummaryStats,
                                covars: Sequence[str],
                                trial_weights: np.ndarray | None = None) -> WeightSet:
    """Ratio-of-probability weighting from a joint categorical distribution:
    W = Pr(cell | population) / Pr(cell | trial), with trial cell prevalences
    computed empirically (optionally under prior trial weights)."""
    if not summary.joint_cells:
        raise DataError("summary statistics carry no joint cell distribution")
    if set(covars) != set(summary.joint_columns):
        raise DataError(
            f"covariates {sorted(covars)} do not match joint_cells columns "
            f"{sorted(summary.joint_columns)}")
    labels = []
    for name in summary.joint_columns:
        col = trial.column(name)
        if col.kind == "categorical":
            labels.append(col.level_labels())
        elif col.kind == "binary":
            labels.append(np.where(col.values == 1.0, "1", "0"))
        else:
            raise DataError(f"ratio-of-probability weighting needs categorical covariates; "
                            f"{name!r} is numeric")
    patterns = [tuple(row) for row in zip(*labels)]
    w_prior = np.ones(trial.n_rows) if trial_weights is None else np.asarray(trial_weights, float)
    total = w_prior.sum()

    trial_prob: dict[tuple[str, ...], float] = {}
    for pat, wt in zip(patterns, w_prior):
        trial_prob[pat] = trial_prob.get(pat, 0.0) + wt / total

    for pat, p in summary.joint_cells.items():
        if p > 0 and pat not in trial_prob:
            raise CoverageError(
                f"population cell {pat!r} (probability {p:g}) has no trial observations; "
                "the trial does not cover the target-population support of these modifiers "
                "(assumption A3)")
    missing = [pat for pat in trial_prob if pat not in summary.joint_cells]
    if missing:
        raise DataError(f"trial cell pattern(s) {missing} have no population probability")

    w = np.array([summary.joint_cells[pat] / trial_prob[pat] for pat in patterns])
    warnings = _weight_warnings(w, None)
    return WeightSet(weights=w, procedure="ratio_of_probability",
                     warnings=warnings, row_index=np.arange(trial.n_rows))


def adjust_within_trial_balance(trial: DataTable, treatment: str,
                                covars: Sequence[str],
                                terms: Sequence[str] | None = None) -> WeightSet:
    """Within-trial inverse treatment-propensity weighting to balance the two
    arms on the given covariates (which may include trial-only modifiers).
    Weights are normalized per arm to sum to the arm size."""
    a = trial.numeric(treatment)
    ps = _participation_fit(trial, treatment, covars, terms)
    w = np.where(a == 1.0, 1.0 / ps, 1.0 / (1.0 - ps))
    for arm in (0.0, 1.0):
        mask = a == arm
        w[mask] *= mask.sum() / w[mask].sum()
    before = balance_table(trial, treatment, covars)
    after = balance_table(trial, treatment, covars, weights=w)
    warnings = _weight_warnings(w, ps)
    return WeightSet(weights=w, procedure="within_trial_propensity",
                     participation_scores=ps, balance=after, balance_before=before,
                     warnings=warnings, ess_by_arm=_ess_by_arm(trial, treatment, w),
                     row_index=np.arange(trial.n_rows))


def allowed_procedure(pop: PopulationTarget) -> str:
    """Which trial-to-population procedure the data scenario admits."""
    if pop.kind in (PopulationKind.FULL_DATASET, PopulationKind.REPRESENTATIVE_SAMPLE):
        return "inverse_probability" if pop.trial_identifiable else "by_odds"
    if pop.summary is not None and pop.summary.joint_cells:
        return "ratio_of_probability"
    raise DataError(
        "summary statistics without a joint categorical distribution do not support "
        "weighting; only the outcome-model-based method applies")


def weight_to_population(trial: DataTable, pop: PopulationTarget, covars: Sequence[str],
                         terms: Sequence[str] | None = None,
                         trial_weights: np.ndarray | None = None) -> WeightSet:
    """Dispatch to the procedure the population data scenario admits."""
    proc = allowed_procedure(pop)
    if proc == "by_odds":
        return weight_by_odds(trial, pop.data, covars, terms=terms,
                              trial_weights=trial_weights)
    if proc == "inverse_probability":
        member_w = None
        idx = _align_members(trial, pop)
        if trial_weights is not None:
            member_w = np.asarray(trial_weights, float)[idx]
        ws = weight_inverse_probability(pop.data, covars, pop.membership_col,
                                        terms=terms, member_weights=member_w)
        # reorder weights from population-row order back to trial-row order
        inv = np.empty(trial.n_rows, dtype=int)
        inv[idx] = np.arange(trial.n_rows)
        return WeightSet(weights=ws.weights[inv], procedure=ws.procedure,
                         participation_scores=ws.participation_scores[inv],
                         warnings=ws.warnings, row_index=np.arange(trial.n_rows))
    return weight_ratio_of_probability(trial, pop.summary, covars,
                                       trial_weights=trial_weights)


def _align_members(trial: DataTable, pop: PopulationTarget) -> np.ndarray:
    """Trial-row order of the population table's member rows.

    Returns, for each member row of the population table (in appearance
    order), the trial row it corresponds to.  Uses the shared id column when
    both tables declare one; otherwise assumes identical ordering.
    """
    member = pop.data.numeric(pop.membership_col) == 1.0
    n_members = int(member.sum())
    if n_members != trial.n_rows:
        raise DataError(f"{n_members} members flagged in the population table "
                        f"but the trial has {trial.n_rows} rows")
    if trial.id_col and pop.data.id_col:
        tid = trial.column(trial.id_col).values
        pid = pop.data.column(pop.data.id_col).values[member]
        lookup = {v: i for i, v in enumerate(tid)}
        try:
            return np.array([lookup[v] for v in pid])
        except KeyError as exc:
            raise DataError(f"member id {exc.args[0]!r} not found in trial table") from exc
    return np.arange(trial.n_rows)


def compose_two_step(trial: DataTable, pop: PopulationTarget, covars: Sequence[str],
                     within_covars: Sequence[str], treatment: str,
                     terms: Sequence[str] | None = None,
                     within_terms: Sequence[str] | None = None) -> WeightSet:
    """Two-step weighting: within-trial arm balancing followed by weighting the
    adjusted trial sample to the target population.  The participation model of
    the second step is fit on the within-trial-weighted sample, and the final
    weight is the product of the two steps' weights."""
    step1 = adjust_within_trial_balance(trial, treatment, within_covars,
                                        terms=within_terms)
    step2 = weight_to_population(trial, pop, covars, terms=terms,
                                 trial_weights=step1.weights)
    w = step1.weights * step2.weights
    ws = WeightSet(weights=w, procedure=f"two_step({step2.procedure})",
                   participation_scores=step2.participation_scores,
                   warnings=step1.warnings + step2.warnings,
                   balance_before=step1.balance_before,
                   row_index=np.arange(trial.n_rows))
    diag_covars = tuple(covars) + tuple(c for c in within_covars if c not in covars)
    return attach_diagnostics(ws, trial, treatment, diag_covars, pop)


def weight_each_arm_separately(trial: DataTable, pop: PopulationTarget,
                               covars: Sequence[str], treatment: str,
                               terms: Sequence[str] | None = None) -> WeightSet:
    """Anti-pattern, kept only for demonstration and tests: weight each trial
    arm to the target population separately.  This can distort between-arm
    balance on variables not observed in the population data, which is why the
    two-step composition is the recommended procedure.
    """
    a = trial.numeric(treatment)
    w = np.empty(trial.n_rows)
    for arm in (0.0, 1.0):
        mask = a == arm
        ws = weight_to_population(trial.subset(mask), pop, covars, terms=terms)
        w[mask] = ws.weights
    return WeightSet(weights=w, procedure="per_arm_separate(anti-pattern)",
                     row_index=np.arange(trial.n_rows))


def attach_diagnostics(ws: WeightSet, trial: DataTable, treatment: str,
                       covars: Sequence[str], pop: PopulationTarget | None = None,
                       base_weights: np.ndarray | None = None) -> WeightSet:
    """Return a copy of the weight set with balance and per-arm ESS filled in."""
    before = ws.balance_before or balance_table(
        trial, treatment, covars,
        weights=base_weights, pop=pop)
    after = balance_table(trial, treatment, covars, weights=ws.weights, pop=pop)
    return WeightSet(weights=ws.weights, procedure=ws.procedure,
                     participation_scores=ws.participation_scores,
                     balance=after, balance_before=before, warnings=ws.warnings,
                     ess_by_arm=_ess_by_arm(trial, treatment, ws.weights),
                     row_index=ws.row_index)


def diagnostics(ws: WeightSet, trial: DataTable, treatment: str,
                covars: Sequence[str],
                pop: PopulationTarget | None = None) -> tuple[BalanceTable, dict[str, float]]:
    """Balance table and ESS report for an existing weight set."""
    table = balance_table(trial, treatment, covars, weights=ws.weights, pop=pop)
    report = {"ess": ws.ess, **_ess_by_arm(trial, treatment, ws.weights)}
    return table, report
