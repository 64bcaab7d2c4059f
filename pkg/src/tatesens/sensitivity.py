"""Target-population average treatment effect (TATE) estimation and the two
sensitivity analyses for effect modifiers unobserved in the target population.

The effect formula is a linear combination of fitted coefficients: the
treatment coefficient, plus each modifier-by-treatment interaction coefficient
multiplied by that modifier's target-population mean.  Means of modifiers
observed in the population (Z) are estimated from the population data; means
of trial-only modifiers (V) are unknowable and are swept over an analyst-chosen
range — the sensitivity parameter.

Method 1 fits the outcome model to the raw trial sample.  Method 2 first
weights the trial to mimic the population's observed-covariate distribution
(two-step weighting) and fits the same model to the weighted sample with
robust variance.  Confidence limits follow the corner construction: the
formula is re-evaluated at the confidence limits of each Z mean and the most
extreme limits across those extra combinations are taken.

Multiplicative-effect models (logit or log link) use the same linear
combination on the link scale; ratio-scale results are its exponential, i.e.
a geometric-mean effect.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import (AnalysisContext, DataTable, LongOutcome, PopulationKind,
                   PopulationTarget, PrePostOutcome, SingleOutcome)
from .design import Design, ModelSpec, Term, build_design
from .errors import ConfigError, DataError, DesignError, UnobservedModifierError
from .estimation import (FittedModel, LinComResult, MixedFit,
                         fit_glm_irls, fit_random_intercepts, fit_wls, lincom)
from .weighting import WeightSet, compose_two_step

EFFECT_SCALES = ("additive", "log_or", "or", "log_rr", "rr",
                 "log_rate_ratio", "rate_ratio")

_SCALE_FOR_LINK = {
    ("identity", "gaussian"): ("additive",),
    ("logit", "binomial"): ("log_or", "or"),
    ("log", "binomial"): ("log_rr", "rr"),
    ("log", "poisson"): ("log_rate_ratio", "rate_ratio"),
}

SCAN_ADVISORY_THRESHOLD = 1.96


def reject_unobserved_in_trial(table: DataTable, modifiers: Sequence[str]) -> None:
    """Refuse analyses naming an effect modifier with no trial measurements.

    Neither method extends to a modifier that is unobserved in the trial: the
    outcome model cannot estimate its interaction with treatment, and after
    weighting on the observed covariates its mean in the weighted sample is an
    unidentified quantity, so no usable sensitivity parameter exists.
    """
    missing = [m for m in modifiers if m not in table]
    if missing:
        raise UnobservedModifierError(
            f"effect modifier(s) {missing} are not measured in the trial data; "
            "sensitivity analysis requires every declared modifier to be observed "
            "in the trial. Without trial measurements the modifier's interaction "
            "with treatment is unidentified, and weighting cannot produce a "
            "sensitivity parameter for it either.")


# ---------------------------------------------------------------------------
# effect structure: which coefficients enter the TATE formula


@dataclass(frozen=True)
class EffectStructure:
    """Map from a fitted model's coefficients to the TATE combination.

    ``z_keys``/``v_keys`` map an interaction coefficient name to the modifier
    key whose target-population mean multiplies it (for example coefficient
    ``"race=nonWhite:_post:arm"`` has key ``"race=nonWhite"``).
    """

    effect_coef: str
    z_keys: Mapping[str, str]
    v_keys: Mapping[str, str]

    def all_keys(self) -> tuple[str, ...]:
        seen = dict.fromkeys(list(self.z_keys.values()) + list(self.v_keys.values()))
        return tuple(seen)


def resolve_effect_structure(model, roles, long_form: bool,
                             indicator: str | None = None) -> EffectStructure:
    treatment = roles.treatment
    if long_form and indicator is None:
        raise DesignError("long-form structure needs the pre/post indicator column")
    effect_cols = {treatment, indicator} if long_form else {treatment}

    effect_coef = None
    z_keys: dict[str, str] = {}
    v_keys: dict[str, str] = {}
    for label, idx in model.term_map.items():
        if label == "intercept":
            continue
        cols = tuple(label.split(":"))
        if set(cols) == effect_cols:
            effect_coef = model.names[idx[0]]
            continue
        if not effect_cols <= set(cols):
            continue  # adjusters and partial interactions stay out of the formula
        mod_cols = [c for c in cols if c not in effect_cols]
        if not mod_cols:
            continue
        is_v = any(c in roles.v_modifiers for c in mod_cols)
        for j in idx:
            coef = model.names[j]
            parts = [p for p in coef.split(":") if p not in effect_cols]
            key = ":".join(parts)
            (v_keys if is_v else z_keys)[coef] = key
    if effect_coef is None:
        want = ":".join(sorted(effect_cols))
        raise DesignError(f"model lacks the treatment-effect term {want!r} required by the "
                          "effect formula")
    return EffectStructure(effect_coef=effect_coef, z_keys=z_keys, v_keys=v_keys)


def _key_values(table: DataTable, key: str) -> np.ndarray:
    """Evaluate a modifier key (product of expanded columns) on a table."""
    out = np.ones(table.n_rows)
    for part in key.split(":"):
        if "=" in part:
            name, level = part.split("=", 1)
            out = out * table.column(name).level_indicator(level)
        else:
            out = out * table.numeric(part)
    return out


def modifier_means(table: DataTable, keys: Sequence[str],
                   weights: np.ndarray | None = None) -> dict[str, float]:
    w = np.ones(table.n_rows) if weights is None else np.asarray(weights, float)
    return {k: float((w * _key_values(table, k)).sum() / w.sum()) for k in keys}


def population_modifier_means(pop: PopulationTarget, keys: Sequence[str],
                              overrides: Mapping[str, tuple[float, float | None, float | None]]
                              | None = None,
                              ci_level: float = 0.95,
                              ) -> dict[str, tuple[float, float, float]]:
    """Target-population means for Z-side modifier keys, with confidence limits.

    A full population dataset gives means known with certainty (zero-width
    limits); a representative sample gets a normal-approximation interval;
    summary statistics supply their own values.  Explicit ``overrides`` win.
    """
    from scipy import stats

    out: dict[str, tuple[float, float, float]] = {}
    overrides = overrides or {}
    for key in keys:
        if key in overrides:
            pt, lo, hi = overrides[key]
            out[key] = (pt, pt if lo is None else lo, pt if hi is None else hi)
            continue
        if pop.kind is PopulationKind.SUMMARY_STATS:
            zm = pop.summary.z_means
            if key not in zm:
                raise DataError(
                    f"no target-population mean available for modifier {key!r}; "
                    "add it to the summary statistics or the sensitivity config")
            pt, lo, hi = zm[key]
            out[key] = (pt, pt if lo is None else lo, pt if hi is None else hi)
            continue
        try:
            vals = _key_values(pop.data, key)
        except DataError as exc:
            raise DataError(
                f"no target-population mean available for modifier {key!r}: {exc}") from exc
        pt = float(vals.mean())
        if pop.kind is PopulationKind.FULL_DATASET:
            out[key] = (pt, pt, pt)
        else:
            se = float(vals.std(ddof=1) / math.sqrt(len(vals)))
            q = float(stats.norm.ppf(0.5 + ci_level / 2))
            out[key] = (pt, pt - q * se, pt + q * se)
    return out


# ---------------------------------------------------------------------------
# the TATE linear combination and its corner CI


def _check_scale(model, scale: str):
    if scale not in EFFECT_SCALES:
        raise ConfigError(f"unknown effect scale {scale!r}")
    allowed = _SCALE_FOR_LINK.get((model.link, model.family), ())
    if scale not in allowed:
        raise ConfigError(
            f"effect scale {scale!r} does not match a {model.link}/{model.family} model; "
            f"choose one of {allowed}")


def apply_scale(value: float, scale: str) -> float:
    return math.exp(value) if scale in ("or", "rr", "rate_ratio") else value


def tate_point(model, structure: EffectStructure, z_means: Mapping[str, float],
               v_means: Mapping[str, float], scale: str = "additive",
               ci_level: float = 0.95) -> LinComResult:
    """Point TATE as a linear combination on the model's link scale.

    The combination puts weight 1 on the treatment coefficient, the
    target-population mean on each Z-interaction coefficient, and the
    sensitivity value on each V-interaction coefficient.  Ratio scales are the
    exponential of this result (a geometric-mean effect); exponentiation is
    applied by the callers so this stays the pre-exponentiation building block.
    """
    _check_scale(model, scale)
    combo = {structure.effect_coef: 1.0}
    for coef, key in structure.z_keys.items():
        if key not in z_means:
            raise DataError(f"missing target-population mean for modifier {key!r} "
                            f"(coefficient {coef!r})")
        combo[coef] = z_means[key]
    for coef, key in structure.v_keys.items():
        if key not in v_means:
            raise ConfigError(f"no sensitivity value supplied for trial-only modifier "
                              f"{key!r} (coefficient {coef!r})")
        combo[coef] = v_means[key]
    return lincom(model, combo, level=ci_level)


def tate_ci(model, structure: EffectStructure,
            z_means: Mapping[str, tuple[float, float, float]],
            v_means: Mapping[str, float], scale: str = "additive",
            ci_level: float = 0.95) -> tuple[float, float, float, int]:
    """Corner-construction confidence limits for the TATE.

    The point estimate comes from the combination at the Z-mean point
    estimates.  For every Z mean carrying a genuine interval, the combination
    is re-evaluated at the Cartesian corners of those limits, and the most
    extreme lower and upper confidence limits across the corners are taken.
    Returns (point, lower, upper, number of corner combinations) on the link
    scale.
    """
    points = {k: pt for k, (pt, _, _) in z_means.items()}
    base = tate_point(model, structure, points, v_means, scale, ci_level)
    uncertain = [k for k, (pt, lo, hi) in z_means.items() if hi > lo]
    if not uncertain:
        return base.estimate, base.ci[0], base.ci[1], 1
    lowers, uppers = [], []
    for corner in itertools.product(*[(z_means[k][1], z_means[k][2]) for k in uncertain]):
        zm = dict(points)
        zm.update(dict(zip(uncertain, corner)))
        lc = tate_point(model, structure, zm, v_means, scale, ci_level)
        lowers.append(lc.ci[0])
        uppers.append(lc.ci[1])
    return base.estimate, min(lowers), max(uppers), 2 ** len(uncertain)


# ---------------------------------------------------------------------------
# sweep configuration and results


@dataclass(frozen=True)
class SensitivityConfig:
    """Sweep settings for the sensitivity parameter(s).

    ``ev_range`` gives the plausible range per trial-only modifier key; with
    several keys, ``sweep`` names the swept axis and the others sit at
    ``ev_fixed`` values.  ``ev_ties`` lets a key follow the swept parameter
    affinely as offset + slope * value (collapsed cross-classifications).
    ``ez`` entries override or supply target-population Z means.
    """

    ev_range: Mapping[str, tuple[float, float]]
    ez: Mapping[str, tuple[float, float | None, float | None]] = field(default_factory=dict)
    grid_points: int = 9
    effect_scale: str = "additive"
    ci_level: float = 0.95
    sweep: str | None = None
    ev_fixed: Mapping[str, float] = field(default_factory=dict)
    ev_ties: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.grid_points < 2:
            raise ConfigError("grid must contain at least the two range endpoints")
        if self.effect_scale not in EFFECT_SCALES:
            raise ConfigError(f"unknown effect scale {self.effect_scale!r}")
        if not 0 < self.ci_level < 1:
            raise ConfigError(f"ci_level {self.ci_level!r} outside (0, 1)")
        for key, (lo, hi) in self.ev_range.items():
            if lo > hi:
                raise ConfigError(f"ev_range[{key!r}]: low {lo} exceeds high {hi}")

    @property
    def sweep_key(self) -> str:
        if self.sweep is not None:
            if self.sweep not in self.ev_range:
                raise ConfigError(f"sweep key {self.sweep!r} has no ev_range entry")
            return self.sweep
        if not self.ev_range:
            raise ConfigError("no sensitivity range declared")
        if len(self.ev_range) > 1:
            raise ConfigError("several ev_range entries: name the swept axis via 'sweep'")
        return next(iter(self.ev_range))

    def grid(self) -> np.ndarray:
        lo, hi = self.ev_range[self.sweep_key]
        return np.linspace(lo, hi, self.grid_points)

    def v_means_at(self, value: float, v_keys: Sequence[str]) -> dict[str, float]:
        out = {self.sweep_key: value}
        out.update(self.ev_fixed)
        for key, (offset, slope) in self.ev_ties.items():
            out[key] = offset + slope * value
        missing = [k for k in v_keys if k not in out]
        if missing:
            raise ConfigError(
                f"trial-only modifier key(s) {missing} have no sensitivity value; "
                "add ev_range/ev_fixed/ev_ties entries for them")
        return out


@dataclass(frozen=True)
class SensitivityRow:
    ev_value: float
    estimate: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (self.lower <= self.estimate <= self.upper):
            raise ConfigError("confidence limits do not bracket the estimate")


@dataclass(frozen=True)
class SensitivityResult:
    rows: tuple[SensitivityRow, ...]
    method: str
    scale: str
    sweep_key: str
    model: FittedModel | MixedFit
    structure: EffectStructure
    sate_reference: tuple[float, float, float] | None = None
    notes: tuple[str, ...] = ()
    weight_set: WeightSet | None = None

    def endpoints(self) -> tuple[SensitivityRow, SensitivityRow]:
        return self.rows[0], self.rows[-1]


# ---------------------------------------------------------------------------
# model fitting on a context


def fit_outcome_model(ctx: AnalysisContext, spec: ModelSpec,
                      subject_weights: np.ndarray | None = None,
                      vcov: str | None = None):
    """Fit the outcome model the roles call for: WLS or IRLS for a single
    outcome, random-intercepts ML on the long form for pre/post outcomes.
    ``subject_weights`` align with the subject-level table rows."""
    out = ctx.roles.outcome
    if isinstance(out, SingleOutcome):
        design = build_design(ctx.table, spec)
        if spec.link == "identity":
            return fit_wls(design, weights=subject_weights, vcov=vcov), None
        return fit_glm_irls(design, weights=subject_weights, vcov=vcov), None
    if spec.link != "identity":
        raise DesignError("pre/post outcomes are modeled with random intercepts, "
                          "which supports the identity link only")
    long_table, long_out = ctx.to_long()
    design = build_design(long_table, spec)
    subjects = long_table.column(long_out.subject).values
    row_weights = None
    if subject_weights is not None:
        row_weights = _expand_subject_weights(ctx, long_table, long_out, subject_weights)
    fit = fit_random_intercepts(design, subjects, weights=row_weights, vcov=vcov)
    return fit, long_out.indicator


def _expand_subject_weights(ctx: AnalysisContext, long_table: DataTable,
                            long_out: LongOutcome, subject_weights: np.ndarray) -> np.ndarray:
    w = np.asarray(subject_weights, float)
    if isinstance(ctx.roles.outcome, PrePostOutcome):
        # to_long stacks the pre block then the post block in table-row order
        return np.concatenate([w, w])
    subj_tab = ctx.subject_table()
    ids = subj_tab.column(long_out.subject).values
    lookup = {sid: wi for sid, wi in zip(ids, w)}
    return np.array([lookup[s] for s in long_table.column(long_out.subject).values])


def default_model_spec(ctx: AnalysisContext, link: str = "identity",
                       family: str | None = None,
                       references: Mapping[str, str] | None = None) -> ModelSpec:
    """Template outcome model: treatment effect, X adjusters, and main plus
    treatment-interaction terms for every declared modifier.  This is an
    analyst default, not a prescription; override term lists in the config."""
    roles = ctx.roles
    out = roles.outcome
    mods = list(roles.z_modifiers) + list(roles.v_modifiers)
    if isinstance(out, SingleOutcome):
        terms = [(roles.treatment,)]
        terms += [(x,) for x in roles.x_covars]
        terms += [(m,) for m in mods]
        terms += [(m, roles.treatment) for m in mods]
        return ModelSpec(response=out.column, link=link, family=family,
                         terms=tuple(Term(t) for t in terms),
                         references=dict(references or {}))
    indicator = "_post" if isinstance(out, PrePostOutcome) else out.indicator
    response = "_y" if isinstance(out, PrePostOutcome) else out.column
    terms = [(indicator,), (roles.treatment,), (indicator, roles.treatment)]
    terms += [(x,) for x in roles.x_covars]
    terms += [(m,) for m in mods]
    terms += [(m, indicator, roles.treatment) for m in mods]
    return ModelSpec(response=response, link=link, family=family,
                     terms=tuple(Term(t) for t in terms),
                     references=dict(references or {}))


# ---------------------------------------------------------------------------
# the two methods


def _scaled_row(ev: float, point: float, lo: float, hi: float, scale: str) -> SensitivityRow:
    return SensitivityRow(ev_value=ev, estimate=apply_scale(point, scale),
                          lower=apply_scale(lo, scale), upper=apply_scale(hi, scale))


def _run_grid(model, structure, z_means, cfg: SensitivityConfig) -> tuple[
        tuple[SensitivityRow, ...], tuple[str, ...]]:
    rows = []
    notes = []
    v_keys = tuple(dict.fromkeys(structure.v_keys.values()))
    n_uncertain = sum(1 for _, (pt, lo, hi) in z_means.items() if hi > lo)
    if n_uncertain > 1:
        notes.append(f"confidence limits expand the corner construction over {n_uncertain} "
                     "uncertain Z means (the single-Z recipe generalized to full corners)")
    for ev in cfg.grid():
        v_means = cfg.v_means_at(float(ev), v_keys)
        point, lo, hi, _ = tate_ci(model, structure, z_means, v_means,
                                   scale=cfg.effect_scale, ci_level=cfg.ci_level)
        rows.append(_scaled_row(float(ev), point, lo, hi, cfg.effect_scale))
    return tuple(rows), tuple(notes)


def _reference_at_means(model, structure, means: Mapping[str, float],
                        cfg: SensitivityConfig) -> tuple[float, float, float]:
    z = {k: means[k] for k in structure.z_keys.values()}
    v = {k: means[k] for k in structure.v_keys.values()}
    lc = tate_point(model, structure, z, v, scale=cfg.effect_scale, ci_level=cfg.ci_level)
    return (apply_scale(lc.estimate, cfg.effect_scale),
            apply_scale(lc.ci[0], cfg.effect_scale),
            apply_scale(lc.ci[1], cfg.effect_scale))


def run_method1(ctx: AnalysisContext, pop: PopulationTarget, spec: ModelSpec,
                cfg: SensitivityConfig, vcov: str | None = None) -> SensitivityResult:
    """Outcome-model-based sensitivity analysis: fit the outcome model to the
    unweighted trial data and sweep the effect formula over the sensitivity
    grid, with corner-construction confidence limits."""
    reject_unobserved_in_trial(ctx.table, ctx.roles.v_modifiers)
    model, indicator = fit_outcome_model(ctx, spec, vcov=vcov)
    structure = resolve_effect_structure(model, ctx.roles, ctx.is_long, indicator)
    z_means = population_modifier_means(pop, tuple(dict.fromkeys(structure.z_keys.values())),
                                        overrides=cfg.ez, ci_level=cfg.ci_level)
    rows, notes = _run_grid(model, structure, z_means, cfg)
    trial_means = modifier_means(ctx.subject_table(), structure.all_keys())
    sate = _reference_at_means(model, structure, trial_means, cfg) if structure.all_keys() \
        else _reference_at_means(model, structure, {}, cfg)
    return SensitivityResult(rows=rows, method="M1", scale=cfg.effect_scale,
                             sweep_key=cfg.sweep_key, model=model, structure=structure,
                             sate_reference=sate, notes=notes)


def run_method2(ctx: AnalysisContext, pop: PopulationTarget, spec: ModelSpec,
                cfg: SensitivityConfig, weight_covars: Sequence[str],
                within_covars: Sequence[str] | None = None,
                participation_terms: Sequence[str] | None = None,
                vcov: str | None = None) -> SensitivityResult:
    """Weighted-outcome-model-based sensitivity analysis.

    Builds two-step weights (within-trial arm balancing, then weighting the
    adjusted sample to the population), fits the same outcome model to the
    weighted trial with robust variance, and sweeps the same grid.  The
    reference estimate is the treatment-coefficient combination at the
    weighted-trial modifier means — the observed-covariate-adjusted ATE.
    """
    reject_unobserved_in_trial(ctx.table, ctx.roles.v_modifiers)
    roles = ctx.roles
    subject = ctx.subject_table()
    if within_covars is None:
        within_covars = tuple(roles.x_covars) + tuple(roles.z_modifiers) + tuple(roles.v_modifiers)
    ws = compose_two_step(subject, pop, tuple(weight_covars), tuple(within_covars),
                          roles.treatment, terms=participation_terms)
    model, indicator = fit_outcome_model(ctx, spec, subject_weights=ws.weights, vcov=vcov)
    structure = resolve_effect_structure(model, roles, ctx.is_long, indicator)
    z_means = population_modifier_means(pop, tuple(dict.fromkeys(structure.z_keys.values())),
                                        overrides=cfg.ez, ci_level=cfg.ci_level)
    rows, notes = _run_grid(model, structure, z_means, cfg)
    weighted_means = modifier_means(subject, structure.all_keys(), weights=ws.weights)
    adjusted = _reference_at_means(model, structure, weighted_means, cfg)
    return SensitivityResult(rows=rows, method="M2", scale=cfg.effect_scale,
                             sweep_key=cfg.sweep_key, model=model, structure=structure,
                             sate_reference=adjusted, notes=notes, weight_set=ws)


def compare_methods(m1: SensitivityResult, m2: SensitivityResult) -> str:
    """Annotation on endpoint agreement of the two methods.

    The weighted method is generally preferred; when the point estimates agree
    (each method's endpoint estimate falls inside the other's interval), the
    unweighted results are equally usable.
    """
    agree = True
    for r1, r2 in zip(m1.endpoints(), m2.endpoints()):
        if not (r2.lower <= r1.estimate <= r2.upper and r1.lower <= r2.estimate <= r1.upper):
            agree = False
    if agree:
        return ("methods agree: each endpoint estimate lies inside the other method's "
                "interval; the unweighted (method 1) results can be used")
    return ("methods disagree on endpoint estimates; prefer the weighted (method 2) "
            "results, which are fit to data resembling the target population")


# ---------------------------------------------------------------------------
# interaction scan


@dataclass(frozen=True)
class ScanEntry:
    candidate: str
    coefficient: str
    estimate: float
    std_error: float
    statistic: float


@dataclass(frozen=True)
class ScanReport:
    entries: tuple[ScanEntry, ...]  # sorted by |statistic| within candidate rank
    skipped: tuple[str, ...] = ()

    def ranked_candidates(self) -> tuple[str, ...]:
        best: dict[str, float] = {}
        for e in self.entries:
            best[e.candidate] = max(best.get(e.candidate, 0.0), abs(e.statistic))
        return tuple(sorted(best, key=best.__getitem__, reverse=True))

    def flagged(self, threshold: float = SCAN_ADVISORY_THRESHOLD) -> tuple[str, ...]:
        return tuple(dict.fromkeys(e.candidate for e in self.entries
                                   if abs(e.statistic) >= threshold))


def _cross_column(table: DataTable, a: str, b: str) -> tuple[DataTable, str]:
    from .data import Column

    ca, cb = table.column(a), table.column(b)
    name = f"cross({a},{b})"
    levels = tuple(f"{la}-{lb}" for la in ca.levels for lb in cb.levels)
    codes = ca.values * len(cb.levels) + cb.values
    col = Column(name, "categorical", codes, levels)
    return DataTable(table.columns + (col,), id_col=table.id_col), name


def scan_effect_modifiers(ctx: AnalysisContext, candidates: Sequence[str],
                          pairs: bool = True, cross: bool = True,
                          link: str = "identity", family: str | None = None,
                          references: Mapping[str, str] | None = None) -> ScanReport:
    """Screen candidate effect modifiers by their treatment interactions.

    Each candidate (single columns, pairwise products, and cross-
    classifications of categorical pairs) is added to a base adjusted model
    together with its interaction with the treatment effect, and the
    interaction coefficients are reported with their statistics.  The output is
    advisory: trials are rarely powered for interactions, so borderline
    modifiers deserve treatment as modifiers rather than dismissal.
    """
    roles = ctx.roles
    out = roles.outcome
    single = isinstance(out, SingleOutcome)
    indicator = None if single else ("_post" if isinstance(out, PrePostOutcome) else out.indicator)
    response = out.column if single else ("_y" if isinstance(out, PrePostOutcome) else out.column)
    effect = (roles.treatment,) if single else (indicator, roles.treatment)

    base_terms: list[tuple[str, ...]] = []
    if not single:
        base_terms += [(indicator,), (roles.treatment,)]
    base_terms.append(effect)
    base_terms += [(x,) for x in roles.x_covars]

    todo: list[tuple[str, tuple[str, ...] | None]] = [(c, None) for c in candidates]
    if pairs or cross:
        for a, b in itertools.combinations(candidates, 2):
            both_cat = (ctx.table.column(a).kind == "categorical"
                        and ctx.table.column(b).kind == "categorical")
            if both_cat and cross:
                todo.append((f"cross({a},{b})", (a, b)))
            elif pairs and not both_cat:
                todo.append((f"{a}:{b}", None))

    entries: list[ScanEntry] = []
    skipped: list[str] = []
    for cand, cross_of in todo:
        table = ctx.table
        cols = tuple(cand.split(":")) if cross_of is None else (cand,)
        if cross_of is not None:
            table, cname = _cross_column(table, *cross_of)
            cols = (cname,)
        terms = [Term(t) for t in base_terms]
        terms.append(Term(cols))
        terms.append(Term(cols + effect))
        spec = ModelSpec(response=response, link=link, family=family,
                         terms=tuple(terms), references=dict(references or {}))
        work_ctx = AnalysisContext(table=table, roles=roles)
        try:
            model, _ = fit_outcome_model(work_ctx, spec)
        except DesignError as exc:
            skipped.append(f"{cand}: {exc}")
            continue
        label = Term(cols + effect).label
        for j in model.term_map[label]:
            name = model.names[j]
            est = model.coefficients[name]
            se = model.se(name)
            entries.append(ScanEntry(candidate=cand, coefficient=name, estimate=est,
                                     std_error=se, statistic=est / se if se > 0 else math.inf))
    entries.sort(key=lambda e: abs(e.statistic), reverse=True)
    return ScanReport(entries=tuple(entries), skipped=tuple(skipped))
