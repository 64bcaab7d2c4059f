"""Datasets, variable roles, and target-population data scenarios.

A :class:`DataTable` is an immutable collection of named, typed column vectors
(numeric, binary, or categorical).  Variable roles bind columns to their
analysis meaning (treatment, outcome, adjustment covariates X, effect
modifiers Z observed in the target population, and trial-only modifiers V).
The three target-population scenarios — a full population dataset, a
representative sample, or summary statistics — are captured by
:class:`PopulationTarget`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence, Union

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import CoverageError, DataError

logger = logging.getLogger(__name__)


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"{path}: invalid TOML: {exc}") from exc

MISSING_TOKENS = {"", "na", "nan", "null", "."}

COLUMN_KINDS = ("numeric", "binary", "categorical")


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(values)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Column:
    """One typed column vector.

    Numeric and binary columns store float64 values; categorical columns store
    integer level codes plus the explicit level set (declaration order,
    reference = first unless a model overrides it).
    """

    name: str
    kind: str
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise DataError(f"unknown column kind {self.kind!r} for {self.name!r}")
        vals = np.asarray(self.values)
        if self.kind == "categorical":
            codes = vals.astype(np.int64)
            if not self.levels:
                raise DataError(f"categorical column {self.name!r} has no declared levels")
            if codes.size and (codes.min() < 0 or codes.max() >= len(self.levels)):
                raise DataError(f"categorical column {self.name!r} has codes outside its level set")
            object.__setattr__(self, "values", _frozen(codes))
        else:
            vals = vals.astype(np.float64)
            if np.isnan(vals).any():
                raise DataError(f"column {self.name!r} contains missing values")
            if self.kind == "binary" and vals.size and not np.isin(vals, (0.0, 1.0)).all():
                bad = vals[~np.isin(vals, (0.0, 1.0))][0]
                raise DataError(f"binary column {self.name!r} contains value {bad!r} outside {{0,1}}")
            object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return len(self.values)

    def numeric(self) -> np.ndarray:
        """Float view; categorical columns have no single numeric encoding."""
        if self.kind == "categorical":
            raise DataError(f"categorical column {self.name!r} has no numeric view; expand to indicators")
        return self.values

    def level_indicator(self, level: str) -> np.ndarray:
        if self.kind != "categorical":
            raise DataError(f"{self.name!r} is not categorical")
        if level not in self.levels:
            raise DataError(f"level {level!r} not declared for column {self.name!r}")
        return (self.values == self.levels.index(level)).astype(np.float64)

    def level_labels(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[self.values]


@dataclass(frozen=True)
class DataTable:
    """Immutable rectangular dataset; all columns share one length."""

    columns: tuple[Column, ...]
    id_col: str | None = None

    def __post_init__(self):
        if not self.columns:
            raise DataError("a table needs at least one column")
        lengths = {len(c) for c in self.columns}
        if len(lengths) != 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        if self.id_col is not None and self.id_col not in names:
            raise DataError(f"id column {self.id_col!r} not present")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise DataError(f"no column named {name!r}")

    def numeric(self, name: str) -> np.ndarray:
        return self.column(name).numeric()

    def subset(self, mask: np.ndarray) -> "DataTable":
        mask = np.asarray(mask)
        return DataTable(
            tuple(Column(c.name, c.kind, c.values[mask], c.levels) for c in self.columns),
            id_col=self.id_col,
        )

    def with_columns(self, new: Sequence[Column]) -> "DataTable":
        replaced = {c.name for c in new}
        kept = tuple(c for c in self.columns if c.name not in replaced)
        return DataTable(kept + tuple(new), id_col=self.id_col)

    def select(self, names: Sequence[str]) -> "DataTable":
        return DataTable(tuple(self.column(n) for n in names), id_col=None)

    @staticmethod
    def from_arrays(data: Mapping[str, np.ndarray], kinds: Mapping[str, str] | None = None,
                    levels: Mapping[str, Sequence[str]] | None = None,
                    id_col: str | None = None) -> "DataTable":
        """Build a table from plain arrays; kind defaults to numeric."""
        kinds = dict(kinds or {})
        levels = dict(levels or {})
        cols = []
        for name, arr in data.items():
            kind = kinds.get(name, "numeric")
            cols.append(Column(name, kind, np.asarray(arr), tuple(levels.get(name, ()))))
        return DataTable(tuple(cols), id_col=id_col)


def stack_tables(top: DataTable, bottom: DataTable, names: Sequence[str],
                 indicator: str = "_in_top") -> DataTable:
    """Stack two tables on shared columns, adding a 1/0 membership indicator
    for rows coming from ``top``.  Categorical level sets are unioned with the
    top table's declaration order first."""
    cols = []
    for name in names:
        a, b = top.column(name), bottom.column(name)
        if a.kind != b.kind:
            raise DataError(f"column {name!r} has kind {a.kind} in one table and {b.kind} in the other")
        if a.kind == "categorical":
            merged = list(a.levels) + [lv for lv in b.levels if lv not in a.levels]
            remap = np.array([merged.index(lv) for lv in b.levels], dtype=np.int64)
            values = np.concatenate([a.values, remap[b.values]])
            cols.append(Column(name, "categorical", values, tuple(merged)))
        else:
            cols.append(Column(name, a.kind, np.concatenate([a.values, b.values])))
    flag = np.concatenate([np.ones(top.n_rows), np.zeros(bottom.n_rows)])
    cols.append(Column(indicator, "binary", flag))
    return DataTable(tuple(cols))


# ---------------------------------------------------------------------------
# ingestion


def _parse_schema(schema: Mapping[str, str]) -> dict[str, tuple[str, tuple[str, ...]]]:
    parsed = {}
    for name, decl in schema.items():
        if decl.startswith("categorical"):
            _, _, rest = decl.partition(":")
            lv = tuple(s.strip() for s in rest.split("|") if s.strip()) if rest else ()
            parsed[name] = ("categorical", lv)
        elif decl in ("numeric", "binary"):
            parsed[name] = (decl, ())
        else:
            raise DataError(f"unknown type declaration {decl!r} for column {name!r}")
    return parsed


def load_table(path, schema: Mapping[str, str], id_col: str | None = None,
               delimiter: str = ",") -> DataTable:
    """Read a delimited text file into a validated :class:`DataTable`.

    ``schema`` names every column to be used and its type, e.g.
    ``{"age": "numeric", "sex": "binary", "race": "categorical:White|nonWhite"}``.
    A bare ``categorical`` infers the level set in order of first appearance.
    Rows with a missing value in any schema column are dropped with a logged
    count (complete-case rule).
    """
    parsed = _parse_schema(schema)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing_cols = [c for c in parsed if c not in header]
    if missing_cols:
        raise DataError(f"{path}: columns absent from file: {missing_cols}")
    if not rows:
        raise DataError(f"{path}: no rows")

    kept_rows = []
    n_dropped = 0
    for row in rows:
        vals = [row.get(c) for c in parsed]
        if any(v is None or v.strip().lower() in MISSING_TOKENS for v in vals):
            n_dropped += 1
        else:
            kept_rows.append(row)
    if n_dropped:
        logger.warning("%s: dropped %d of %d rows with missing values in declared columns",
                       path, n_dropped, len(rows))
    if not kept_rows:
        raise DataError(f"{path}: no complete rows after missing-value removal")

    cols = []
    for name, (kind, declared_levels) in parsed.items():
        raw = [r[name].strip() for r in kept_rows]
        if kind == "categorical":
            levels = list(declared_levels)
            codes = np.empty(len(raw), dtype=np.int64)
            for i, v in enumerate(raw):
                if v not in levels:
                    if declared_levels:
                        raise DataError(f"{path}: column {name!r} has undeclared level {v!r}")
                    levels.append(v)
                codes[i] = levels.index(v)
            cols.append(Column(name, "categorical", codes, tuple(levels)))
        else:
            try:
                vals = np.array([float(v) for v in raw])
            except ValueError as exc:
                raise DataError(f"{path}: column {name!r} is not numeric: {exc}") from exc
            cols.append(Column(name, kind, vals))
    return DataTable(tuple(cols), id_col=id_col if id_col in parsed else None)


# ---------------------------------------------------------------------------
# population targets


class PopulationKind(Enum):
    FULL_DATASET = "full_dataset"
    REPRESENTATIVE_SAMPLE = "representative_sample"
    SUMMARY_STATS = "summary_stats"


@dataclass(frozen=True)
class SummaryStats:
    """Target-population summary information.

    ``z_means`` maps a column name (or ``"col=level"`` for one categorical
    level) to ``(point, lower, upper)``; confidence limits may be ``None`` when
    the mean is known with certainty.  ``joint_cells`` optionally carries a
    joint categorical distribution over a tuple of columns, with patterns keyed
    by level labels in ``joint_columns`` order.
    """

    z_means: Mapping[str, tuple[float, float | None, float | None]] = field(default_factory=dict)
    joint_columns: tuple[str, ...] = ()
    joint_cells: Mapping[tuple[str, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, (pt, lo, hi) in self.z_means.items():
            if (lo is None) != (hi is None):
                raise DataError(f"z_means[{key!r}]: give both confidence limits or neither")
            if lo is not None and not (lo <= pt <= hi):
                raise DataError(f"z_means[{key!r}]: limits ({lo}, {hi}) do not bracket point {pt}")
        if self.joint_cells:
            if not self.joint_columns:
                raise DataError("joint_cells given without joint_columns")
            probs = np.array(list(self.joint_cells.values()), dtype=float)
            if (probs < 0).any():
                raise DataError("joint_cells probabilities must be nonnegative")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise DataError(f"joint_cells probabilities sum to {probs.sum()!r}, not 1")
            for pattern in self.joint_cells:
                if len(pattern) != len(self.joint_columns):
                    raise DataError(f"pattern {pattern!r} does not match joint_columns")


@dataclass(frozen=True)
class PopulationTarget:
    """One of the three target-population data scenarios.

    ``trial_identifiable`` marks whether trial members can be identified inside
    the population data (via ``membership_col``); it selects between
    weighting-by-the-odds and inverse-probability weighting.
    """

    kind: PopulationKind
    data: DataTable | None = None
    summary: SummaryStats | None = None
    trial_identifiable: bool = False
    membership_col: str | None = None

    def __post_init__(self):
        if self.kind is PopulationKind.SUMMARY_STATS:
            if self.summary is None:
                raise DataError("SUMMARY_STATS target needs summary statistics")
            if self.trial_identifiable:
                raise DataError("summary statistics cannot identify trial members")
        else:
            if self.data is None:
                raise DataError(f"{self.kind.name} target needs a population table")
            if self.trial_identifiable:
                if self.membership_col is None or self.membership_col not in self.data:
                    raise DataError("trial_identifiable target needs a membership column in the data")


def load_summary_stats(path) -> SummaryStats:
    """Parse a TOML summary-statistics file.

    Layout::

        [z_means]
        race = [0.639]
        "agegrp=le29" = [0.341, 0.32, 0.36]

        [joint_cells]
        columns = ["race", "sis"]
        "White|no" = 0.2
        ...
    """
    raw = read_toml(path)
    z_means = {}
    for key, val in raw.get("z_means", {}).items():
        vals = list(val) if isinstance(val, (list, tuple)) else [val]
        if len(vals) == 1:
            z_means[key] = (float(vals[0]), None, None)
        elif len(vals) == 3:
            z_means[key] = (float(vals[0]), float(vals[1]), float(vals[2]))
        else:
            raise DataError(f"z_means[{key!r}] must be [point] or [point, lo, hi]")
    joint = raw.get("joint_cells", {})
    joint_columns = tuple(joint.pop("columns", ()))
    cells = {tuple(k.split("|")): float(v) for k, v in joint.items()}
    return SummaryStats(z_means=z_means, joint_columns=joint_columns, joint_cells=cells)


# ---------------------------------------------------------------------------
# variable roles


@dataclass(frozen=True)
class SingleOutcome:
    column: str

    def columns(self) -> tuple[str, ...]:
        return (self.column,)


@dataclass(frozen=True)
class PrePostOutcome:
    pre: str
    post: str

    def columns(self) -> tuple[str, ...]:
        return (self.pre, self.post)


@dataclass(frozen=True)
class LongOutcome:
    column: str
    indicator: str
    subject: str

    def columns(self) -> tuple[str, ...]:
        return (self.column, self.indicator, self.subject)


Outcome = Union[SingleOutcome, PrePostOutcome, LongOutcome]


@dataclass(frozen=True)
class VariableRoles:
    treatment: str
    outcome: Outcome
    x_covars: tuple[str, ...] = ()
    z_modifiers: tuple[str, ...] = ()
    v_modifiers: tuple[str, ...] = ()

    def role_sets(self) -> dict[str, tuple[str, ...]]:
        return {
            "treatment": (self.treatment,),
            "outcome": self.outcome.columns(),
            "x_covars": self.x_covars,
            "z_modifiers": self.z_modifiers,
            "v_modifiers": self.v_modifiers,
        }


@dataclass(frozen=True)
class AnalysisContext:
    """A table bound to validated variable roles."""

    table: DataTable
    roles: VariableRoles

    @property
    def is_long(self) -> bool:
        return isinstance(self.roles.outcome, (PrePostOutcome, LongOutcome))

    def subject_table(self) -> DataTable:
        """One row per analysis unit, for weighting models.

        Pre/post and single-outcome tables are already subject-level; a long
        table is collapsed to its pre-treatment (indicator 0) rows.
        """
        out = self.roles.outcome
        if isinstance(out, LongOutcome):
            pre = self.table.numeric(out.indicator) == 0.0
            return self.table.subset(pre)
        return self.table

    def to_long(self) -> tuple[DataTable, LongOutcome]:
        """Outcome data in long form (two rows per subject) for mixed fitting."""
        out = self.roles.outcome
        if isinstance(out, LongOutcome):
            return self.table, out
        if isinstance(out, SingleOutcome):
            raise DataError("single-outcome data has no long form")
        t = self.table
        n = t.n_rows
        subject = np.arange(n, dtype=float)
        long_cols = [
            Column("_subject", "numeric", np.concatenate([subject, subject])),
            Column("_post", "binary", np.concatenate([np.zeros(n), np.ones(n)])),
            Column("_y", "numeric", np.concatenate([t.numeric(out.pre), t.numeric(out.post)])),
        ]
        for c in t.columns:
            if c.name in (out.pre, out.post):
                continue
            long_cols.append(Column(c.name, c.kind, np.concatenate([c.values, c.values]), c.levels))
        return DataTable(tuple(long_cols)), LongOutcome("_y", "_post", "_subject")


def declare_roles(table: DataTable, roles: VariableRoles) -> AnalysisContext:
    """Bind a table to variable roles, validating role disjointness, binary
    treatment, and the two-rows-per-subject structure of long outcomes."""
    assignments: dict[str, str] = {}
    for role, cols in roles.role_sets().items():
        for col in cols:
            if col not in table:
                raise DataError(f"{role} column {col!r} not in table")
            if col in assignments:
                raise DataError(f"column {col!r} assigned to both {assignments[col]} and {role}")
            assignments[col] = role
    if table.column(roles.treatment).kind != "binary":
        raise DataError(f"treatment column {roles.treatment!r} must be binary")

    out = roles.outcome
    if isinstance(out, PrePostOutcome):
        for c in (out.pre, out.post):
            if table.column(c).kind == "categorical":
                raise DataError(f"outcome column {c!r} must be numeric")
    elif isinstance(out, LongOutcome):
        if table.column(out.indicator).kind != "binary":
            raise DataError(f"pre/post indicator {out.indicator!r} must be binary")
        subj = table.column(out.subject).values
        post = table.numeric(out.indicator)
        for sid in np.unique(subj):
            rows = post[subj == sid]
            if len(rows) != 2 or set(rows) != {0.0, 1.0}:
                raise DataError(
                    f"subject {sid!r} must have exactly one pre and one post row, got {len(rows)}")
        # treatment and covariates must not change within subject
        for name in (roles.treatment, *roles.x_covars, *roles.z_modifiers, *roles.v_modifiers):
            vals = table.column(name).values
            order = np.argsort(subj, kind="stable")
            pairs = vals[order].reshape(-1, 2)
            if not (pairs[:, 0] == pairs[:, 1]).all():
                raise DataError(f"column {name!r} varies within subject in long data")
    return AnalysisContext(table=table, roles=roles)


# ---------------------------------------------------------------------------
# A3 coverage checking


@dataclass(frozen=True)
class CoverageEntry:
    column: str
    trial_summary: str
    population_summary: str
    flags: tuple[str, ...]
    checkable: bool = True


@dataclass(frozen=True)
class CoverageReport:
    entries: tuple[CoverageEntry, ...]
    note: str
    trimmed_population: DataTable | None = None

    @property
    def flags(self) -> tuple[str, ...]:
        return tuple(f for e in self.entries for f in e.flags)

    def to_text(self) -> str:
        lines = ["modifier coverage (trial support vs target population)"]
        for e in self.entries:
            status = "; ".join(e.flags) if e.flags else ("ok" if e.checkable else "not checkable")
            lines.append(f"  {e.column}: trial {e.trial_summary} | population {e.population_summary} | {status}")
        lines.append(f"  note: {self.note}")
        return "\n".join(lines)


def _pop_column(pop: PopulationTarget, name: str) -> Column | None:
    if pop.data is not None and name in pop.data:
        return pop.data.column(name)
    return None


def check_modifier_coverage(trial: DataTable, pop: PopulationTarget,
                            modifiers: Sequence[str], trim: bool = False) -> CoverageReport:
    """Check that target-population values of each Z modifier lie inside trial
    support: strict min/max containment for numeric columns, level presence for
    categorical ones.  Only Z can be checked; V has no population data, which
    the report states.  With ``trim=True`` (dataset targets only) a population
    table restricted to covered rows is attached."""
    entries = []
    keep = np.ones(pop.data.n_rows, dtype=bool) if pop.data is not None else None
    for name in modifiers:
        if name not in trial:
            raise DataError(f"modifier {name!r} not in trial table")
        tcol = trial.column(name)
        pcol = _pop_column(pop, name)
        if pcol is not None:
            if tcol.kind == "categorical" or pcol.kind == "categorical":
                tl = set(tcol.levels if tcol.kind == "categorical" else ("0", "1"))
                present = set(np.asarray(pcol.levels)[np.unique(pcol.values)]) \
                    if pcol.kind == "categorical" else {str(int(v)) for v in np.unique(pcol.values)}
                missing = sorted(present - tl)
                flags = tuple(f"population level {lv!r} absent from trial" for lv in missing)
                entries.append(CoverageEntry(name, f"levels {sorted(tl)}", f"levels {sorted(present)}", flags))
                if keep is not None and missing and pcol.kind == "categorical":
                    bad_codes = [pcol.levels.index(lv) for lv in missing]
                    keep &= ~np.isin(pcol.values, bad_codes)
            else:
                tlo, thi = tcol.values.min(), tcol.values.max()
                plo, phi = pcol.values.min(), pcol.values.max()
                flags = []
                if plo < tlo or phi > thi:
                    flags.append(f"population range [{plo:g}, {phi:g}] outside trial range [{tlo:g}, {thi:g}]")
                entries.append(CoverageEntry(name, f"[{tlo:g}, {thi:g}]", f"[{plo:g}, {phi:g}]", tuple(flags)))
                if keep is not None:
                    keep &= (pcol.values >= tlo) & (pcol.values <= thi)
        elif pop.kind is PopulationKind.SUMMARY_STATS and pop.summary is not None:
            ss = pop.summary
            if name in ss.joint_columns and tcol.kind == "categorical":
                idx = ss.joint_columns.index(name)
                present = {pat[idx] for pat, p in ss.joint_cells.items() if p > 0}
                missing = sorted(present - set(tcol.levels))
                flags = tuple(f"population level {lv!r} absent from trial" for lv in missing)
                entries.append(CoverageEntry(name, f"levels {sorted(tcol.levels)}",
                                             f"levels {sorted(present)}", flags))
            elif name in ss.z_means or any(k.startswith(name + "=") for k in ss.z_means):
                entries.append(CoverageEntry(
                    name, "observed", "mean only",
                    (), checkable=False))
            else:
                raise CoverageError(f"modifier {name!r} absent from population summary")
        else:
            raise CoverageError(f"modifier {name!r} absent from population data")

    trimmed = None
    if trim and pop.data is not None and keep is not None:
        trimmed = pop.data.subset(keep)
    note = ("coverage is checkable for Z modifiers only; modifiers unobserved in the "
            "target population (V) cannot be checked from data")
    return CoverageReport(entries=tuple(entries), note=note, trimmed_population=trimmed)
