"""Synthetic demonstration inputs for the canonical analysis pipeline.

Generates an HIV-treatment-style trial (933 subjects, pre/post CD4 counts,
age, sex, race, severe immune suppression) and a target population table
(54,220 rows: age group, sex, race) whose marginal distributions mirror the
published covariate tables this toolkit is exercised against, plus a canonical
TOML configuration wiring the whole pipeline.  The outcome model plants effect
modification by race (observed in the population) and by immune-suppression
status (trial-only), so the sensitivity sweep over the population
immune-suppression proportion is informative.

Run ``python -m tatesens.demo OUTDIR`` and then
``tatesens analyze --config OUTDIR/analysis.toml --method both --out OUTDIR/results``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

AGE_GROUPS = ("le29", "30-39", "40-49", "ge50")
AGE_BOUNDS = {"le29": (16, 29), "30-39": (30, 39), "40-49": (40, 49), "ge50": (50, 75)}
POP_AGE_P = (0.341, 0.309, 0.247, 0.103)
POP_FEMALE = 0.266
POP_NONWHITE = 0.639
POP_AGE_RANGE = (13, 80)
POP_N = 54_220

TRIAL_AGE_P = (0.107, 0.421, 0.348, 0.123)
ARM_N = {1: 478, 0: 455}
ARM_FEMALE = {1: 0.174, 0: 0.143}
ARM_NONWHITE = {1: 0.473, 0: 0.468}
ARM_SIS = {1: 0.437, 0: 0.475}

# outcome model: random intercepts, gain under treatment modified by race and SIS
PRE_MEAN = 86.0
SIS_PRE_SHIFT = -38.0
DRIFT = 12.0
EFFECT_BASE = 19.0
EFFECT_NONWHITE = 9.0
EFFECT_SIS = 14.0
SD_SUBJECT = 55.0
SD_RESID = 65.0

CONFIG = """\
# canonical pipeline configuration for the synthetic demonstration data

[trial]
path = "trial.csv"

[trial.schema]
arm = "binary"
cd4_pre = "numeric"
cd4_post = "numeric"
age = "numeric"
agegrp = "categorical:le29|30-39|40-49|ge50"
sex = "binary"
race = "categorical:White|nonWhite"
sis = "binary"

[population]
kind = "full_dataset"
path = "population.csv"

[population.schema]
agegrp = "categorical:le29|30-39|40-49|ge50"
sex = "binary"
race = "categorical:White|nonWhite"

[roles]
treatment = "arm"
outcome = {pre = "cd4_pre", post = "cd4_post"}
x = ["age", "sex"]
z = ["race"]
v = ["sis"]

[sensitivity]
scale = "additive"
grid_points = 9

[sensitivity.ev_range]
sis = [0.2, 0.6]

[weighting]
covariates = ["agegrp", "sex", "race"]
# cell-saturated participation model over the shared covariates
terms = [
    "agegrp", "sex", "race",
    "agegrp:sex", "agegrp:race", "sex:race",
    "agegrp:sex:race",
]

[coverage]
check = ["race", "agegrp"]

[scan]
candidates = ["age", "sex", "race", "sis"]
pairs = true
cross = true
"""


def _age_from_group(rng: np.random.Generator, groups: np.ndarray,
                    bounds=AGE_BOUNDS) -> np.ndarray:
    lo = np.array([bounds[g][0] for g in groups], dtype=float)
    hi = np.array([bounds[g][1] for g in groups], dtype=float)
    return np.floor(lo + rng.random(len(groups)) * (hi - lo + 1.0))


def _norm(p) -> np.ndarray:
    # published proportions are rounded to three decimals; renormalize
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def make_trial(rng: np.random.Generator) -> dict[str, np.ndarray]:
    cols = {k: [] for k in ("arm", "cd4_pre", "cd4_post", "age", "agegrp", "sex", "race", "sis")}
    for arm in (1, 0):
        n = ARM_N[arm]
        agegrp = rng.choice(AGE_GROUPS, size=n, p=_norm(TRIAL_AGE_P))
        age = _age_from_group(rng, agegrp)
        sex = (rng.random(n) < ARM_FEMALE[arm]).astype(float)
        race = (rng.random(n) < ARM_NONWHITE[arm]).astype(float)
        sis = (rng.random(n) < ARM_SIS[arm]).astype(float)
        subject = rng.normal(0.0, SD_SUBJECT, n)
        gain = EFFECT_BASE + EFFECT_NONWHITE * race + EFFECT_SIS * sis
        pre = PRE_MEAN + SIS_PRE_SHIFT * sis + subject + rng.normal(0, SD_RESID, n)
        post = (PRE_MEAN + SIS_PRE_SHIFT * sis + DRIFT + arm * gain
                + subject + rng.normal(0, SD_RESID, n))
        cols["arm"].append(np.full(n, float(arm)))
        cols["cd4_pre"].append(pre)
        cols["cd4_post"].append(post)
        cols["age"].append(age)
        cols["agegrp"].append(agegrp)
        cols["sex"].append(sex)
        cols["race"].append(np.where(race == 1.0, "nonWhite", "White"))
        cols["sis"].append(sis)
    return {k: np.concatenate(v) for k, v in cols.items()}


def make_population(rng: np.random.Generator, n: int = POP_N) -> dict[str, np.ndarray]:
    agegrp = rng.choice(AGE_GROUPS, size=n, p=_norm(POP_AGE_P))
    sex = (rng.random(n) < POP_FEMALE).astype(float)
    race = np.where(rng.random(n) < POP_NONWHITE, "nonWhite", "White")
    return {"agegrp": agegrp, "sex": sex, "race": race}


def _write_csv(path: Path, cols: dict[str, np.ndarray], formats: dict[str, str]) -> None:
    names = list(cols)
    n = len(cols[names[0]])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(formats[c].format(cols[c][i]) for c in names) + "\n")


def write_demo_inputs(outdir: str | Path, seed: int = 320, pop_n: int = POP_N) -> Path:
    """Write trial.csv, population.csv, and analysis.toml; returns the config path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    trial = make_trial(rng)
    _write_csv(outdir / "trial.csv", trial, {
        "arm": "{:.0f}", "cd4_pre": "{:.2f}", "cd4_post": "{:.2f}", "age": "{:.0f}",
        "agegrp": "{}", "sex": "{:.0f}", "race": "{}", "sis": "{:.0f}"})
    pop = make_population(rng, n=pop_n)
    _write_csv(outdir / "population.csv", pop,
               {"agegrp": "{}", "sex": "{:.0f}", "race": "{}"})
    config = outdir / "analysis.toml"
    config.write_text(CONFIG, encoding="utf-8")
    return config


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    outdir = argv[0] if argv else "demo"
    config = write_demo_inputs(outdir)
    print(f"wrote {config.parent}/trial.csv, population.csv, {config.name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
