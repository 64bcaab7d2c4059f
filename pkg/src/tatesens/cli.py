"""Command-line front end.

Three subcommands bind a TOML run configuration to the pipeline:

* ``analyze``  — ingest, coverage check, weight, fit, sensitivity sweep, report
* ``scan``     — rank candidate effect modifiers by treatment interactions
* ``simulate`` — Monte Carlo evaluation of the two methods

Every toolkit error class maps to one documented exit code (see ``errors``);
unexpected failures exit 1.  All outputs are deterministic functions of the
configuration, the input files, and the seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .data import (PopulationKind, PopulationTarget, PrePostOutcome,
                   LongOutcome, SingleOutcome, VariableRoles,
                   check_modifier_coverage, declare_roles, load_summary_stats,
                   load_table, read_toml)
from .design import ModelSpec, parse_terms
from .errors import ConfigError, TatesensError
from .reporting import (balance_file_text, coefficient_report, eval_report_csv,
                        fmt, scan_csv, sensitivity_csv, sensitivity_plot_csv)
from .sensitivity import (SensitivityConfig, compare_methods, default_model_spec,
                          fit_outcome_model, reject_unobserved_in_trial,
                          resolve_effect_structure, run_method1, run_method2,
                          scan_effect_modifiers, tate_point)
from .simulation import evaluate, load_scenario
from .svg import render_sensitivity_svg
from .weighting import balance_table

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    "trial": {"path": None, "id": None, "schema": {"*": None}},
    "population": {"kind": None, "path": None, "summary": None,
                   "trial_identifiable": None, "membership": None, "id": None,
                   "schema": {"*": None}},
    "roles": {"treatment": None, "outcome": {"*": None}, "x": None, "z": None, "v": None},
    "model": {"link": None, "family": None, "terms": None, "references": {"*": None}},
    "sensitivity": {"scale": None, "ci_level": None, "grid_points": None, "sweep": None,
                    "ev_range": {"*": None}, "ev_fixed": {"*": None},
                    "ev_ties": {"*": None}, "ez": {"*": None}},
    "weighting": {"covariates": None, "terms": None, "within": None, "within_terms": None},
    "coverage": {"check": None, "trim": None},
    "scan": {"candidates": None, "pairs": None, "cross": None},
}


def _validate_keys(cfg: dict, schema: dict, path: str = "") -> None:
    for key, val in cfg.items():
        where = f"{path}.{key}" if path else key
        sub = schema.get(key, schema.get("*", KeyError))
        if sub is KeyError:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(sub, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"configuration key {where!r} must be a table")
            _validate_keys(val, sub, where)


def load_config(path: str | Path) -> tuple[dict, Path]:
    cfg = read_toml(path)
    _validate_keys(cfg, CONFIG_SCHEMA)
    return cfg, Path(path).resolve().parent


def _required(cfg: dict, section: str, key: str | None = None):
    if section not in cfg:
        raise ConfigError(f"configuration misses the [{section}] table")
    if key is None:
        return cfg[section]
    if key not in cfg[section]:
        raise ConfigError(f"configuration misses {section}.{key}")
    return cfg[section][key]


def _build_roles(cfg: dict) -> VariableRoles:
    r = _required(cfg, "roles")
    out_raw = r.get("outcome")
    if not isinstance(out_raw, dict):
        raise ConfigError("roles.outcome must be a table, e.g. {single=\"y\"} or "
                          "{pre=\"y0\", post=\"y1\"}")
    if "single" in out_raw:
        outcome = SingleOutcome(out_raw["single"])
    elif {"pre", "post"} <= set(out_raw):
        outcome = PrePostOutcome(out_raw["pre"], out_raw["post"])
    elif {"long", "indicator", "subject"} <= set(out_raw):
        outcome = LongOutcome(out_raw["long"], out_raw["indicator"], out_raw["subject"])
    else:
        raise ConfigError("roles.outcome needs 'single', 'pre'+'post', or "
                          "'long'+'indicator'+'subject'")
    return VariableRoles(
        treatment=_required(cfg, "roles", "treatment"),
        outcome=outcome,
        x_covars=tuple(r.get("x", ())),
        z_modifiers=tuple(r.get("z", ())),
        v_modifiers=tuple(r.get("v", ())),
    )


def _load_trial(cfg: dict, base: Path):
    t = _required(cfg, "trial")
    if "path" not in t or "schema" not in t:
        raise ConfigError("[trial] needs 'path' and a [trial.schema] table")
    return load_table(base / t["path"], t["schema"], id_col=t.get("id"))


def _load_population(cfg: dict, base: Path) -> PopulationTarget:
    p = _required(cfg, "population")
    kind_raw = p.get("kind", "full_dataset")
    try:
        kind = PopulationKind(kind_raw)
    except ValueError:
        raise ConfigError(f"unknown population kind {kind_raw!r}") from None
    if kind is PopulationKind.SUMMARY_STATS:
        if "summary" not in p:
            raise ConfigError("summary_stats population needs 'summary' (TOML path)")
        return PopulationTarget(kind, summary=load_summary_stats(base / p["summary"]))
    if "path" not in p or "schema" not in p:
        raise ConfigError("[population] needs 'path' and a [population.schema] table")
    data = load_table(base / p["path"], p["schema"], id_col=p.get("id"))
    return PopulationTarget(kind, data=data,
                            trial_identifiable=bool(p.get("trial_identifiable", False)),
                            membership_col=p.get("membership"))


def _build_model_spec(cfg: dict, ctx) -> ModelSpec:
    m = cfg.get("model", {})
    link = m.get("link", "identity")
    family = m.get("family")
    references = m.get("references", {})
    if "terms" not in m:
        return default_model_spec(ctx, link=link, family=family, references=references)
    out = ctx.roles.outcome
    if isinstance(out, SingleOutcome):
        response = out.column
    elif isinstance(out, PrePostOutcome):
        response = "_y"
    else:
        response = out.column
    return ModelSpec(response=response, link=link, family=family,
                     terms=parse_terms(m["terms"]), references=references)


def _build_sensitivity(cfg: dict) -> SensitivityConfig:
    s = cfg.get("sensitivity", {})

    def triple(v):
        vals = list(v) if isinstance(v, (list, tuple)) else [v]
        if len(vals) == 1:
            return (float(vals[0]), None, None)
        if len(vals) == 3:
            return (float(vals[0]), float(vals[1]), float(vals[2]))
        raise ConfigError("ez entries must be [point] or [point, lo, hi]")

    return SensitivityConfig(
        ev_range={k: (float(v[0]), float(v[1])) for k, v in s.get("ev_range", {}).items()},
        ez={k: triple(v) for k, v in s.get("ez", {}).items()},
        grid_points=int(s.get("grid_points", 9)),
        effect_scale=s.get("scale", "additive"),
        ci_level=float(s.get("ci_level", 0.95)),
        sweep=s.get("sweep"),
        ev_fixed={k: float(v) for k, v in s.get("ev_fixed", {}).items()},
        ev_ties={k: (float(v[0]), float(v[1])) for k, v in s.get("ev_ties", {}).items()},
    )


def _write(outdir: Path, name: str, text: str) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / name).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    cfg, base = load_config(args.config)
    outdir = Path(args.out)
    trial = _load_trial(cfg, base)
    pop = _load_population(cfg, base)
    roles = _build_roles(cfg)
    reject_unobserved_in_trial(trial, roles.v_modifiers)
    ctx = declare_roles(trial, roles)
    spec = _build_model_spec(cfg, ctx)

    cov_cfg = cfg.get("coverage", {})
    check_cols = cov_cfg.get("check", [z for z in roles.z_modifiers])
    coverage = check_modifier_coverage(trial, pop, check_cols,
                                       trim=bool(cov_cfg.get("trim", False))) \
        if check_cols else None
    if coverage is not None and coverage.trimmed_population is not None:
        pop = PopulationTarget(pop.kind, data=coverage.trimmed_population,
                               trial_identifiable=pop.trial_identifiable,
                               membership_col=pop.membership_col)

    if not roles.z_modifiers and not roles.v_modifiers:
        # degenerate pipeline: only the treatment-effect combination is reported
        model, indicator = fit_outcome_model(ctx, spec)
        structure = resolve_effect_structure(model, roles, ctx.is_long, indicator)
        sens = _build_sensitivity(cfg) if cfg.get("sensitivity") else None
        scale = sens.effect_scale if sens else "additive"
        lc = tate_point(model, structure, {}, {}, scale=scale)
        text = coefficient_report(model, "outcome model (no effect modifiers declared)")
        text += ("\n\naverage treatment effect (link scale): "
                 f"{fmt(lc.estimate)} [{fmt(lc.ci[0])}, {fmt(lc.ci[1])}]\n")
        _write(outdir, "coefficients.txt", text)
        pre = balance_table(ctx.subject_table(), roles.treatment,
                            list(roles.x_covars), pop=pop) if roles.x_covars else None
        _write(outdir, "balance.txt",
               balance_file_text(coverage, [("trial covariate balance", pre)] if pre else [], None))
        print(f"ATE (no modifiers): {fmt(lc.estimate)} [{fmt(lc.ci[0])}, {fmt(lc.ci[1])}]")
        return 0

    sens = _build_sensitivity(cfg)
    w_cfg = cfg.get("weighting", {})
    weight_covars = w_cfg.get("covariates")
    if weight_covars is None:
        pop_cols = pop.data.names if pop.data is not None else ()
        weight_covars = [c for c in (*roles.x_covars, *roles.z_modifiers) if c in pop_cols]

    results = []
    coef_sections = []
    if args.method in ("1", "both"):
        r1 = run_method1(ctx, pop, spec, sens)
        results.append(r1)
        coef_sections.append((r1, "method 1: outcome model on the raw trial sample"))
    if args.method in ("2", "both"):
        r2 = run_method2(ctx, pop, spec, sens, weight_covars=weight_covars,
                         within_covars=w_cfg.get("within"),
                         participation_terms=w_cfg.get("terms"))
        results.append(r2)
        coef_sections.append((r2, "method 2: outcome model on the weighted trial sample"))

    parts = []
    for res, title in coef_sections:
        parts.append(coefficient_report(res.model, title))
        label = ("model-implied trial-sample ATE" if res.method == "M1"
                 else "observed-covariate-adjusted ATE (weighted sample)")
        pt, lo, hi = res.sate_reference
        parts.append(f"  {label}: {fmt(pt)} [{fmt(lo)}, {fmt(hi)}]")
        for note in res.notes:
            parts.append(f"  note: {note}")
    if len(results) == 2:
        parts.append("method comparison: " + compare_methods(results[0], results[1]))
    _write(outdir, "coefficients.txt", "\n\n".join(parts) + "\n")

    subject = ctx.subject_table()
    bal_covars = list(dict.fromkeys([*weight_covars, *roles.x_covars,
                                     *roles.z_modifiers, *roles.v_modifiers]))
    sections = [("trial covariate balance (unweighted)",
                 balance_table(subject, roles.treatment, bal_covars, pop=pop))]
    ws = None
    for res in results:
        if res.weight_set is not None:
            ws = res.weight_set
            sections.append(("covariate balance after two-step weighting",
                             balance_table(subject, roles.treatment, bal_covars,
                                           weights=ws.weights, pop=pop)))
    _write(outdir, "balance.txt", balance_file_text(coverage, sections, ws))

    _write(outdir, "sensitivity.csv", sensitivity_csv(results))
    _write(outdir, "sensitivity_plot.csv", sensitivity_plot_csv(results))
    _write(outdir, "sensitivity.svg",
           render_sensitivity_svg(results, xlabel=f"E[{sens.sweep_key} | population]"))

    for res in results:
        first, last = res.endpoints()
        print(f"method {res.method[1:]}: TATE from {fmt(first.estimate)} "
              f"[{fmt(first.lower)}, {fmt(first.upper)}] at {fmt(first.ev_value)} "
              f"to {fmt(last.estimate)} [{fmt(last.lower)}, {fmt(last.upper)}] "
              f"at {fmt(last.ev_value)}")
    return 0


# ---------------------------------------------------------------------------
# scan


def cmd_scan(args) -> int:
    cfg, base = load_config(args.config)
    trial = _load_trial(cfg, base)
    roles = _build_roles(cfg)
    ctx = declare_roles(trial, roles)
    s = cfg.get("scan", {})
    candidates = s.get("candidates", [])
    m = cfg.get("model", {})
    report = scan_effect_modifiers(ctx, candidates,
                                   pairs=bool(s.get("pairs", True)),
                                   cross=bool(s.get("cross", True)),
                                   link=m.get("link", "identity"),
                                   family=m.get("family"),
                                   references=m.get("references", {}))
    _write(Path(args.out), "scan.csv", scan_csv(report))
    for cand in report.ranked_candidates()[:10]:
        best = max((e for e in report.entries if e.candidate == cand),
                   key=lambda e: abs(e.statistic))
        print(f"{cand}: max |statistic| {fmt(abs(best.statistic))} ({best.coefficient})")
    if not report.entries:
        print("no candidates scanned")
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    spec = load_scenario(args.scenario)
    if args.reps is not None:
        spec = dataclasses.replace(spec, replicates=args.reps)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if spec.replicates < 2:
        logger.warning("a single replicate leaves MCSE and empirical SD undefined")
    report = evaluate(spec)
    _write(Path(args.out), "eval_report.csv", eval_report_csv([report]))
    for m in report.methods:
        print(f"{report.scenario} {m.method}: bias {fmt(m.bias)} (MCSE {fmt(m.mcse_bias)}), "
              f"SD {fmt(m.empirical_sd)}, mean SE {fmt(m.mean_se)}, "
              f"coverage {fmt(m.coverage)}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tatesens",
        description="Target-population treatment-effect estimation with sensitivity "
                    "analyses for effect modifiers unobserved in the target population.",
        epilog="exit codes: 0 ok, 1 internal, 2 config, 3 data, 4 design, 5 fit, "
               "6 coverage, 7 unobserved-modifier refusal")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full estimation pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=("1", "2", "both"), default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scan", help="rank candidate effect modifiers")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("simulate", help="Monte Carlo method evaluation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TatesensError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
