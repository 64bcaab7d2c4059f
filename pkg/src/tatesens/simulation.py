"""Monte Carlo harness: generate trials and target populations from a known
causal model and evaluate the two sensitivity-analysis methods at the true
sensitivity-parameter value, isolating estimator bias, variance, and CI
coverage.

Covariates are normal (Z and V jointly, with configurable correlation).
Trial membership follows a logistic selection model: the trial covariate
distribution is the exponential tilt of the population distribution with the
selection coefficients as log-odds slopes, which for normal covariates is a
pure mean shift by covariance times coefficients.  Under this sampling model
the logistic participation model used by the weighting step is exactly
correctly specified, and the conditional distribution of V given Z is the
same in trial and population whenever selection does not involve V.
Treatment is randomized inside the trial.  A misspecification switch adds a
quadratic piece in Z or in V to the data-generating model that the analysis
model omits.  The true target effect is computed analytically from the
scenario parameters, never from a fit.

Random numbers come from numpy's PCG64 generator, seeded per replicate with
``SeedSequence([seed, replicate_index])``: replicate streams depend only on
the index, so parallel evaluation order cannot change results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import (DataTable, PopulationKind, PopulationTarget, SingleOutcome,
                   VariableRoles, declare_roles, read_toml)
from .design import ModelSpec, parse_terms
from .errors import ConfigError, FitError, TatesensError
from .sensitivity import (SensitivityConfig, population_modifier_means,
                          resolve_effect_structure, tate_ci, tate_point)
from .sensitivity import fit_outcome_model
from .weighting import compose_two_step

BETA_NAMES = ("b0", "ba", "bx", "bz", "bza", "bv", "bva")
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class ScenarioSpec:
    """A complete data-generating configuration; seeds fully determine output."""

    beta: Mapping[str, float]
    n_trial: int
    n_pop: int
    replicates: int
    seed: int
    name: str = "scenario"
    link: str = "identity"
    resid_sd: float = 1.0
    pop_x_mean: float = 0.0
    pop_x_sd: float = 1.0
    pop_z_mean: float = 0.0
    pop_z_sd: float = 1.0
    pop_v_mean: float = 0.0
    pop_v_sd: float = 1.0
    corr_zv: float = 0.5
    selection: Mapping[str, float] = field(default_factory=lambda: {"z": 0.8})
    misspec: str = "none"  # none | z | v
    misspec_coef: float = 0.0

    def __post_init__(self):
        missing = [k for k in BETA_NAMES if k not in self.beta]
        if missing:
            raise ConfigError(f"scenario beta missing {missing}")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not -1.0 <= self.corr_zv <= 1.0:
            raise ConfigError(f"corr_zv {self.corr_zv} outside [-1, 1]")
        if self.misspec not in ("none", "z", "v"):
            raise ConfigError(f"unknown misspecification switch {self.misspec!r}")
        if self.link not in ("identity", "logit"):
            raise ConfigError("scenario link must be 'identity' or 'logit'")
        if min(self.pop_x_sd, self.pop_z_sd, self.pop_v_sd) <= 0 or self.resid_sd <= 0:
            raise ConfigError("scale parameters must be positive")
        bad = set(self.selection) - {"x", "z", "v"}
        if bad:
            raise ConfigError(f"selection coefficients {sorted(bad)} are not covariates "
                              "(with n_trial fixed, an intercept has no effect)")

    def true_tate(self) -> float:
        """Analytic target effect from the scenario parameters (additive for
        the identity link, log odds ratio for logit)."""
        b = self.beta
        tate = b["ba"] + b["bza"] * self.pop_z_mean + b["bva"] * self.pop_v_mean
        if self.misspec == "z":
            tate += self.misspec_coef * (self.pop_z_mean**2 + self.pop_z_sd**2)
        elif self.misspec == "v":
            tate += self.misspec_coef * (self.pop_v_mean**2 + self.pop_v_sd**2)
        return tate


def load_scenario(path) -> ScenarioSpec:
    raw = read_toml(path)
    sc = raw.get("scenario", raw)
    known = {f for f in ScenarioSpec.__dataclass_fields__}
    extra = set(sc) - known
    if extra:
        raise ConfigError(f"unknown scenario keys {sorted(extra)}")
    try:
        return ScenarioSpec(**sc)
    except TypeError as exc:
        raise ConfigError(f"incomplete scenario: {exc}") from exc


def _rng(spec: ScenarioSpec, rep: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, rep, stream]))


def _draw_covariates(spec: ScenarioSpec, rng: np.random.Generator, n: int):
    x = rng.normal(spec.pop_x_mean, spec.pop_x_sd, n)
    z = rng.normal(spec.pop_z_mean, spec.pop_z_sd, n)
    # V | Z is linear-normal, identical in trial and population by construction
    rho = spec.corr_zv
    resid = math.sqrt(max(1.0 - rho**2, 0.0)) * spec.pop_v_sd
    v = spec.pop_v_mean + rho * spec.pop_v_sd / spec.pop_z_sd * (z - spec.pop_z_mean) \
        + rng.normal(0.0, resid, n)
    return x, z, v


def _linear_predictor(spec: ScenarioSpec, x, z, v, a):
    b = spec.beta
    eta = (b["b0"] + b["bx"] * x + b["bz"] * z + b["bv"] * v
           + a * (b["ba"] + b["bza"] * z + b["bva"] * v))
    if spec.misspec == "z":
        eta = eta + spec.misspec_coef * z**2 * (1.0 + a)
    elif spec.misspec == "v":
        eta = eta + spec.misspec_coef * v**2 * (1.0 + a)
    return eta


def selection_shift(spec: ScenarioSpec) -> np.ndarray:
    """Trial-covariate mean shift implied by the logistic selection model:
    covariance of (x, z, v) times the selection coefficients."""
    sel = spec.selection
    b = np.array([sel.get("x", 0.0), sel.get("z", 0.0), sel.get("v", 0.0)])
    czv = spec.corr_zv * spec.pop_z_sd * spec.pop_v_sd
    cov = np.array([[spec.pop_x_sd**2, 0.0, 0.0],
                    [0.0, spec.pop_z_sd**2, czv],
                    [0.0, czv, spec.pop_v_sd**2]])
    return cov @ b


def generate_replicate(spec: ScenarioSpec, rep: int) -> tuple[DataTable, DataTable, float]:
    """One deterministic replicate: (trial table, population table, true TATE).

    The population table carries x and z only (V is unobserved there); the
    trial carries x, z, v, the randomized arm, and the outcome.
    """
    rng_pop = _rng(spec, rep, 0)
    px, pz, _ = _draw_covariates(spec, rng_pop, spec.n_pop)
    pop = DataTable.from_arrays({"x": px, "z": pz})

    rng_trial = _rng(spec, rep, 1)
    x, z, v = _draw_covariates(spec, rng_trial, spec.n_trial)
    shift = selection_shift(spec)
    x, z, v = x + shift[0], z + shift[1], v + shift[2]
    a = (rng_trial.random(spec.n_trial) < 0.5).astype(float)
    eta = _linear_predictor(spec, x, z, v, a)
    if spec.link == "identity":
        y = eta + rng_trial.normal(0.0, spec.resid_sd, spec.n_trial)
        ykind = "numeric"
    else:
        y = (rng_trial.random(spec.n_trial) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        ykind = "binary"
    trial = DataTable.from_arrays({"y": y, "a": a, "x": x, "z": z, "v": v},
                                  kinds={"a": "binary", "y": ykind})
    return trial, pop, spec.true_tate()


_ROLES = VariableRoles(treatment="a", outcome=SingleOutcome("y"),
                       x_covars=("x",), z_modifiers=("z",), v_modifiers=("v",))


def _analysis_model(spec: ScenarioSpec) -> ModelSpec:
    return ModelSpec(response="y", link=spec.link,
                     terms=parse_terms(["a", "x", "z", "z:a", "v", "v:a"]))


@dataclass(frozen=True)
class ReplicateEstimate:
    estimate: float
    std_error: float
    lower: float
    upper: float


def _estimate_methods(spec: ScenarioSpec, trial: DataTable, pop_table: DataTable,
                      m2_vcov: str | None = None) -> dict[str, ReplicateEstimate]:
    """Both methods on one replicate, evaluated at the true E[V | population]."""
    ctx = declare_roles(trial, _ROLES)
    model_spec = _analysis_model(spec)
    pop = PopulationTarget(PopulationKind.FULL_DATASET, data=pop_table)
    scale = "additive" if spec.link == "identity" else "log_or"
    v_true = {"v": spec.pop_v_mean}
    out = {}

    m1, _ = fit_outcome_model(ctx, model_spec)
    structure = resolve_effect_structure(m1, _ROLES, long_form=False)
    z_means = population_modifier_means(pop, ("z",))
    pt, lo, hi, _ = tate_ci(m1, structure, z_means, v_true, scale=scale)
    se = tate_point(m1, structure, {k: m[0] for k, m in z_means.items()}, v_true,
                    scale=scale).std_error
    out["M1"] = ReplicateEstimate(pt, se, lo, hi)

    ws = compose_two_step(trial, pop, ("x", "z"), ("x", "z", "v"), "a")
    m2, _ = fit_outcome_model(ctx, model_spec, subject_weights=ws.weights, vcov=m2_vcov)
    structure2 = resolve_effect_structure(m2, _ROLES, long_form=False)
    pt, lo, hi, _ = tate_ci(m2, structure2, z_means, v_true, scale=scale)
    se = tate_point(m2, structure2, {k: m[0] for k, m in z_means.items()}, v_true,
                    scale=scale).std_error
    out["M2"] = ReplicateEstimate(pt, se, lo, hi)
    return out


@dataclass(frozen=True)
class MethodEval:
    method: str
    true_tate: float
    n_used: int
    n_failed: int
    mean_estimate: float
    bias: float
    empirical_sd: float
    mean_se: float
    coverage: float
    mcse_bias: float
    mcse_sd: float
    mcse_se: float
    mcse_coverage: float


@dataclass(frozen=True)
class EvalReport:
    scenario: str
    true_tate: float
    methods: tuple[MethodEval, ...]

    def method(self, name: str) -> MethodEval:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)


def _summarize(method: str, ests: np.ndarray, ses: np.ndarray, covers: np.ndarray,
               true_tate: float, n_failed: int) -> MethodEval:
    r = len(ests)
    sd = float(np.std(ests, ddof=1)) if r > 1 else float("nan")
    cov = float(covers.mean())
    return MethodEval(
        method=method,
        true_tate=true_tate,
        n_used=r,
        n_failed=n_failed,
        mean_estimate=float(ests.mean()),
        bias=float(ests.mean() - true_tate),
        empirical_sd=sd,
        mean_se=float(ses.mean()),
        coverage=cov,
        mcse_bias=sd / math.sqrt(r) if r > 1 else float("nan"),
        mcse_sd=sd / math.sqrt(2.0 * (r - 1)) if r > 1 else float("nan"),
        mcse_se=float(np.std(ses, ddof=1) / math.sqrt(r)) if r > 1 else float("nan"),
        mcse_coverage=math.sqrt(max(cov * (1 - cov), 0.0) / r),
    )


def evaluate(spec: ScenarioSpec, m2_vcov: str | None = None) -> EvalReport:
    """Run both methods on every replicate and aggregate bias, variance, and
    coverage against the analytic truth.  Replicates whose fits fail are
    dropped and counted; more than 1% failures aborts the evaluation so a
    selected subset cannot quietly bias the summary."""
    true_tate = spec.true_tate()
    rows: dict[str, list[ReplicateEstimate]] = {"M1": [], "M2": []}
    n_failed = 0
    for rep in range(spec.replicates):
        trial, pop_table, _ = generate_replicate(spec, rep)
        try:
            ests = _estimate_methods(spec, trial, pop_table, m2_vcov=m2_vcov)
        except TatesensError:
            n_failed += 1
            continue
        for k, v in ests.items():
            rows[k].append(v)
    if n_failed > MAX_FAILURE_RATE * spec.replicates:
        raise FitError(f"{n_failed} of {spec.replicates} replicates failed to fit "
                       f"(limit {MAX_FAILURE_RATE:.0%}); the scenario is too extreme "
                       "for a trustworthy summary")
    methods = []
    for name, lst in rows.items():
        ests = np.array([e.estimate for e in lst])
        ses = np.array([e.std_error for e in lst])
        covers = np.array([(e.lower <= true_tate <= e.upper) for e in lst], dtype=float)
        methods.append(_summarize(name, ests, ses, covers, true_tate, n_failed))
    return EvalReport(scenario=spec.name, true_tate=true_tate, methods=tuple(methods))


@dataclass(frozen=True)
class VarianceComparison:
    scenario: str
    sd_m1: float
    sd_m2: float
    mean_model_se_m2: float
    mean_sandwich_se_m2: float

    @property
    def sd_ratio(self) -> float:
        return self.sd_m2 / self.sd_m1

    @property
    def model_se_to_sd(self) -> float:
        return self.mean_model_se_m2 / self.sd_m2

    @property
    def sandwich_se_to_sd(self) -> float:
        return self.mean_sandwich_se_m2 / self.sd_m2


def variance_comparison(spec: ScenarioSpec) -> VarianceComparison:
    """Compare the weighted method's spread with the unweighted one and its
    model-based standard error with the truth (expect underestimation)."""
    if spec.misspec != "none":
        raise ConfigError("variance comparison expects a correctly specified scenario")
    m1_est, m2_est, model_se, sandwich_se = [], [], [], []
    n_failed = 0
    for rep in range(spec.replicates):
        trial, pop_table, _ = generate_replicate(spec, rep)
        try:
            sandwich = _estimate_methods(spec, trial, pop_table, m2_vcov=None)
            model = _estimate_methods(spec, trial, pop_table, m2_vcov="model")
        except TatesensError:
            n_failed += 1
            continue
        m1_est.append(sandwich["M1"].estimate)
        m2_est.append(sandwich["M2"].estimate)
        sandwich_se.append(sandwich["M2"].std_error)
        model_se.append(model["M2"].std_error)
    if n_failed > MAX_FAILURE_RATE * spec.replicates:
        raise FitError(f"{n_failed} of {spec.replicates} replicates failed to fit")
    return VarianceComparison(
        scenario=spec.name,
        sd_m1=float(np.std(m1_est, ddof=1)),
        sd_m2=float(np.std(m2_est, ddof=1)),
        mean_model_se_m2=float(np.mean(model_se)),
        mean_sandwich_se_m2=float(np.mean(sandwich_se)),
    )


def default_scenarios(replicates: int = 2000, seed: int = 20181211,
                      n_trial: int = 500, n_pop: int = 5000) -> dict[str, ScenarioSpec]:
    """Representative desk-scale scenarios for the three headline comparisons.

    Selection depends on Z only in the Z-misspecification scenario (so the
    weighting fully adjusts the misspecified component) and on both Z and V in
    the correct and V-misspecification scenarios (so weighting can only
    partially adjust for V through its correlation with Z).
    """
    beta = {"b0": 0.0, "ba": 1.0, "bx": 0.5, "bz": 0.5, "bza": 0.5,
            "bv": 0.5, "bva": 0.5}
    base = dict(beta=beta, n_trial=n_trial, n_pop=n_pop, replicates=replicates,
                seed=seed, resid_sd=1.0, corr_zv=0.5)
    return {
        "correct": ScenarioSpec(name="correct", misspec="none",
                                selection={"z": 1.0, "v": 0.4}, **base),
        "z_misspec": ScenarioSpec(name="z_misspec", misspec="z", misspec_coef=0.4,
                                  selection={"z": 0.8}, **base),
        "v_misspec": ScenarioSpec(name="v_misspec", misspec="v", misspec_coef=0.4,
                                  selection={"z": 0.8, "v": 0.8}, **base),
    }
