"""Model specification and design-matrix construction.

Term lists are taken literally: no hierarchy is imposed, so an interaction may
appear without its main effects (some published regression forms do exactly
that).  Categorical columns expand to indicator contrasts against a reference
level — the first declared level unless overridden in the spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .data import DataTable
from .errors import DesignError

LINKS = ("identity", "logit", "log")
FAMILIES = ("gaussian", "binomial", "poisson")


@dataclass(frozen=True)
class Term:
    """A main effect (one column) or a pure interaction (product of columns)."""

    columns: tuple[str, ...]

    def __post_init__(self):
        if not self.columns:
            raise DesignError("empty term")

    @property
    def label(self) -> str:
        return ":".join(self.columns)


def parse_terms(specs: Sequence[str]) -> tuple[Term, ...]:
    """Parse ``["age", "race:arm"]``-style term strings."""
    return tuple(Term(tuple(p.strip() for p in s.split(":"))) for s in specs)


@dataclass(frozen=True)
class ModelSpec:
    response: str
    terms: tuple[Term, ...]
    link: str = "identity"
    family: str | None = None
    references: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.link not in LINKS:
            raise DesignError(f"unknown link {self.link!r}")
        fam = self.family
        if self.link == "identity":
            fam = fam or "gaussian"
            if fam != "gaussian":
                raise DesignError("identity link pairs with the gaussian family")
        elif self.link == "logit":
            fam = fam or "binomial"
            if fam != "binomial":
                raise DesignError("logit link pairs with the binomial family")
        else:  # log
            if fam not in ("poisson", "binomial"):
                raise DesignError("log link requires family 'poisson' or 'binomial'")
        object.__setattr__(self, "family", fam)


@dataclass(frozen=True)
class Design:
    """Expanded design matrix with the intercept first and a term map that
    records which matrix columns realize which term."""

    matrix: np.ndarray
    response: np.ndarray
    names: tuple[str, ...]
    term_map: dict[str, tuple[int, ...]]
    spec: ModelSpec

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]


def _expand_column(table: DataTable, name: str, references: Mapping[str, str]):
    """One column -> list of (coef name, float vector)."""
    col = table.column(name)
    if col.kind != "categorical":
        return [(name, col.numeric())]
    ref = references.get(name, col.levels[0])
    if ref not in col.levels:
        raise DesignError(f"reference level {ref!r} not declared for {name!r}")
    return [(f"{name}={lv}", col.level_indicator(lv)) for lv in col.levels if lv != ref]


def build_design(table: DataTable, spec: ModelSpec) -> Design:
    """Realize a model spec on a table.

    Interactions are elementwise products of the expanded parts (all dummy
    combinations for categorical factors).  Rank deficiency is a hard error
    naming the offending terms, because downstream effect formulas require
    specific named coefficients to exist.
    """
    if spec.response not in table:
        raise DesignError(f"response column {spec.response!r} not in table")
    y = table.numeric(spec.response)

    columns = [np.ones(table.n_rows)]
    names = ["intercept"]
    term_map: dict[str, tuple[int, ...]] = {"intercept": (0,)}
    for term in spec.terms:
        parts = []
        for cname in term.columns:
            if cname not in table:
                raise DesignError(f"term {term.label!r} references unknown column {cname!r}")
            parts.append(_expand_column(table, cname, spec.references))
        # cartesian product over the expanded parts, preserving order
        combos = [([], np.ones(table.n_rows))]
        for part in parts:
            combos = [(labels + [nm], vec * v) for labels, vec in combos for nm, v in part]
        idx = []
        for labels, vec in combos:
            names.append(":".join(labels))
            columns.append(vec)
            idx.append(len(columns) - 1)
        if term.label in term_map:
            raise DesignError(f"duplicated term {term.label!r}")
        term_map[term.label] = tuple(idx)

    X = np.column_stack(columns)
    _check_rank(X, names, term_map)
    return Design(matrix=X, response=y, names=tuple(names), term_map=term_map, spec=spec)


def _check_rank(X: np.ndarray, names: Sequence[str], term_map: Mapping[str, tuple[int, ...]]):
    n, p = X.shape
    if n <= p:
        raise DesignError(f"design has {n} rows for {p} columns; need n > p")
    _, r_mat, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < p:
        dropped = sorted(piv[rank:])
        bad_cols = [names[j] for j in dropped]
        bad_terms = sorted({label for label, idx in term_map.items()
                            if any(j in idx for j in dropped)})
        raise DesignError(
            f"rank-deficient design: columns {bad_cols} are collinear (terms {bad_terms})")
