"""Text and delimited-output rendering of fitted models, balance tables,
sensitivity sweeps, and simulation summaries.

All numbers print with six significant digits so outputs diff cleanly across
runs.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

from .data import CoverageReport
from .simulation import EvalReport
from .weighting import BalanceTable, WeightSet


def fmt(x: float) -> str:
    if x != x:  # nan
        return "NA"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def coefficient_report(model, title: str, level: float = 0.95) -> str:
    """Coefficient table: estimate, standard error, statistic, CI per name."""
    from .estimation import lincom

    stat_name = "t" if model.df_resid is not None else "z"
    lines = [title,
             f"  vcov: {model.vcov_kind} | n_obs: {model.n_obs} | "
             f"weights: {'yes' if model.weights_used else 'no'}"]
    if getattr(model, "df_resid", None) is not None:
        lines[-1] += f" | df: {model.df_resid}"
    if hasattr(model, "between_var"):
        lines.append(f"  variance components: between-subject {fmt(model.between_var)}, "
                     f"residual {fmt(model.resid_var)}"
                     + (" (between-subject variance truncated at 0)"
                        if model.variance_truncated else ""))
    lines.append(f"  converged in {model.n_iter} iteration(s); "
                 f"final criterion {fmt(model.final_criterion)}")
    header = f"  {'coefficient':<28} {'estimate':>12} {'std.err':>12} {stat_name:>8} " \
             f"{'lower':>12} {'upper':>12}"
    lines.append(header)
    for name in model.names:
        lc = lincom(model, {name: 1.0}, level=level)
        stat = lc.estimate / lc.std_error if lc.std_error > 0 else float("inf")
        lines.append(f"  {name:<28} {fmt(lc.estimate):>12} {fmt(lc.std_error):>12} "
                     f"{fmt(stat):>8} {fmt(lc.ci[0]):>12} {fmt(lc.ci[1]):>12}")
    return "\n".join(lines)


def balance_report(table: BalanceTable, title: str) -> str:
    lines = [title,
             f"  {'covariate':<24} {'arm1':>10} {'arm0':>10} {'overall':>10} "
             f"{'population':>12} {'sd(arms)':>10} {'sd(pop)':>10}"]
    for r in table.rows:
        lines.append(
            f"  {r.covariate:<24} {fmt(r.arm1_mean):>10} {fmt(r.arm0_mean):>10} "
            f"{fmt(r.overall_mean):>10} {fmt(r.population_mean):>12} "
            f"{fmt(r.std_diff_arms):>10} {fmt(r.std_diff_pop):>10}")
    return "\n".join(lines)


def weight_report(ws: WeightSet) -> str:
    lines = [f"weights: procedure {ws.procedure} | ESS {fmt(ws.ess)}"]
    for arm, v in ws.ess_by_arm.items():
        lines.append(f"  ESS {arm}: {fmt(v)}")
    for w in ws.warnings:
        lines.append(f"  warning: {w}")
    return "\n".join(lines)


def balance_file_text(coverage: CoverageReport | None,
                      sections: Sequence[tuple[str, BalanceTable]],
                      ws: WeightSet | None) -> str:
    parts = []
    if coverage is not None:
        parts.append(coverage.to_text())
    for title, table in sections:
        parts.append(balance_report(table, title))
    if ws is not None:
        parts.append(weight_report(ws))
    return "\n\n".join(parts) + "\n"


def sensitivity_csv(results: Iterable) -> str:
    lines = ["ev_value,estimate,lower,upper,method,scale"]
    for res in results:
        for row in res.rows:
            lines.append(",".join([fmt(row.ev_value), fmt(row.estimate),
                                   fmt(row.lower), fmt(row.upper), res.method, res.scale]))
    return "\n".join(lines) + "\n"


def sensitivity_plot_csv(results: Iterable) -> str:
    """Polyline encoding: one row per vertex of the point/lower/upper lines."""
    lines = ["method,line,x,y"]
    for res in results:
        for kind, pick in (("point", lambda r: r.estimate),
                           ("lower", lambda r: r.lower),
                           ("upper", lambda r: r.upper)):
            for row in res.rows:
                lines.append(f"{res.method},{kind},{fmt(row.ev_value)},{fmt(pick(row))}")
    return "\n".join(lines) + "\n"


def eval_report_csv(reports: Sequence[EvalReport]) -> str:
    cols = ["scenario", "method", "true_tate", "n_used", "n_failed", "mean_estimate",
            "bias", "empirical_sd", "mean_se", "coverage",
            "mcse_bias", "mcse_sd", "mcse_se", "mcse_coverage"]
    lines = [",".join(cols)]
    for rep in reports:
        for m in rep.methods:
            lines.append(",".join([
                rep.scenario, m.method, fmt(m.true_tate), str(m.n_used), str(m.n_failed),
                fmt(m.mean_estimate), fmt(m.bias), fmt(m.empirical_sd), fmt(m.mean_se),
                fmt(m.coverage), fmt(m.mcse_bias), fmt(m.mcse_sd), fmt(m.mcse_se),
                fmt(m.mcse_coverage)]))
    return "\n".join(lines) + "\n"


def scan_csv(report) -> str:
    lines = ["candidate,coefficient,estimate,std_error,statistic"]
    for e in report.entries:
        lines.append(",".join([e.candidate, e.coefficient, fmt(e.estimate),
                               fmt(e.std_error), fmt(e.statistic)]))
    for s in report.skipped:
        lines.append(f"# skipped: {s}")
    return "\n".join(lines) + "\n"
