"""Numerical fitting engines.

All fits are implemented directly on numpy linear algebra:

* weighted least squares for identity-link models,
* iteratively reweighted least squares for logit and log links (with
  step-halving and a fitted-probability cap for the log-binomial case),
* maximum-likelihood random-intercepts fitting for two-observations-per-subject
  data, profiling the likelihood over the between/residual variance ratio.

Coefficient covariance comes in three kinds: ``model`` (inverse information),
``sandwich`` (robust to weighting/heteroskedasticity), and
``cluster_sandwich`` (grouping the two rows of a subject).  The sandwich kinds
are the default whenever weights originate from a weighting procedure, since
model-based variance understates the truth under weighting; model-based
standard errors for weighted generalized-linear fits also depend on the
overall scale of the weights, while the sandwich ones do not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .design import Design
from .errors import DesignError, FitError, SeparationError

MAX_IRLS_ITER = 100
IRLS_TOL = 1e-10
SEPARATION_THRESHOLD = 30.0
PROB_CAP = 1e-10


@dataclass(frozen=True)
class LinComResult:
    """A linear combination of coefficients with its standard error and CI."""

    estimate: float
    std_error: float
    ci: tuple[float, float]
    level: float
    basis: str  # "t" or "z"
    df: int | None = None


class _FitBase:
    """Shared inference helpers for fitted linear and mixed models."""

    coefficients: dict[str, float]
    vcov: np.ndarray
    names: tuple[str, ...]
    df_resid: int | None

    @property
    def coef_vector(self) -> np.ndarray:
        return np.array([self.coefficients[n] for n in self.names])

    def se(self, name: str) -> float:
        j = self.names.index(name)
        return math.sqrt(self.vcov[j, j])

    def _critical(self, level: float) -> tuple[float, str]:
        alpha = 1.0 - level
        if self.df_resid is None:
            return float(stats.norm.ppf(1 - alpha / 2)), "z"
        return float(stats.t.ppf(1 - alpha / 2, self.df_resid)), "t"


@dataclass(frozen=True)
class FittedModel(_FitBase):
    coefficients: dict[str, float]
    vcov: np.ndarray
    vcov_kind: str
    link: str
    family: str | None
    names: tuple[str, ...]
    term_map: dict[str, tuple[int, ...]]
    n_obs: int
    weights_used: bool
    converged: bool
    n_iter: int
    final_criterion: float
    df_resid: int | None
    deviance_trace: tuple[float, ...] = ()
    boundary: bool = False


@dataclass(frozen=True)
class MixedFit(_FitBase):
    coefficients: dict[str, float]
    vcov: np.ndarray
    vcov_kind: str
    names: tuple[str, ...]
    term_map: dict[str, tuple[int, ...]]
    between_var: float
    resid_var: float
    n_obs: int
    n_subjects: int
    weights_used: bool
    converged: bool
    n_iter: int
    final_criterion: float
    df_resid: int | None
    variance_truncated: bool = False

    link = "identity"
    family = "gaussian"


def _check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise FitError(f"weights have shape {w.shape}, expected ({n},)")
    if (w < 0).any():
        raise FitError(f"negative weight {w.min()!r}")
    if not (w > 0).any():
        raise FitError("all weights are zero")
    return w


def _validate_psd(vcov: np.ndarray) -> np.ndarray:
    vcov = 0.5 * (vcov + vcov.T)
    eig = np.linalg.eigvalsh(vcov)
    if eig.min() < -1e-10 * max(1.0, eig.max()):
        raise FitError(f"coefficient covariance not positive semidefinite (min eigenvalue {eig.min():g})")
    return vcov


def _sandwich(X: np.ndarray, bread_inv: np.ndarray, score_resid: np.ndarray) -> np.ndarray:
    sx = X * score_resid[:, None]
    meat = sx.T @ sx
    return bread_inv @ meat @ bread_inv


# ---------------------------------------------------------------------------
# weighted least squares


def fit_wls(design: Design, weights=None, vcov: str | None = None) -> FittedModel:
    """Weighted least squares on a built design.

    ``vcov``: "model" (default for unweighted fits) or "sandwich" (default
    when weights are given).
    """
    X, y = design.matrix, design.response
    n, p = X.shape
    w = _check_weights(weights, n)
    if vcov is None:
        vcov = "sandwich" if weights is not None else "model"

    sw = np.sqrt(w)
    beta, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    if rank < p:
        raise FitError("singular normal equations (weights zero out needed rows?)")
    resid = y - X @ beta
    xtwx = (X * w[:, None]).T @ X
    try:
        bread_inv = np.linalg.inv(xtwx)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal equations") from exc

    if vcov == "model":
        sigma2 = float(w @ resid**2) / (n - p)
        V = sigma2 * bread_inv
    elif vcov == "sandwich":
        V = _sandwich(X, bread_inv, w * resid)
    else:
        raise FitError(f"unknown vcov kind {vcov!r}")

    return FittedModel(
        coefficients=dict(zip(design.names, beta)),
        vcov=_validate_psd(V),
        vcov_kind=vcov,
        link="identity",
        family="gaussian",
        names=design.names,
        term_map=design.term_map,
        n_obs=n,
        weights_used=weights is not None,
        converged=True,
        n_iter=1,
        final_criterion=0.0,
        df_resid=None if vcov != "model" else n - p,
        deviance_trace=(float(w @ resid**2),),
    )


# ---------------------------------------------------------------------------
# GLM via IRLS


def _family_funcs(link: str, family: str):
    # inverse links clamp into the open parameter space so working weights
    # stay finite while diverging coefficients run into the separation check
    if link == "logit":
        def mu_of(eta):
            out = np.empty_like(eta)
            pos = eta >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
            e = np.exp(eta[~pos])
            out[~pos] = e / (1.0 + e)
            return np.clip(out, PROB_CAP, 1.0 - PROB_CAP)

        def eta_of(mu):
            return np.log(mu / (1 - mu))

        def dmu(eta, mu):
            return mu * (1 - mu)

        def variance(mu):
            return mu * (1 - mu)
    elif link == "log":
        if family == "poisson":
            def mu_of(eta):
                return np.exp(np.minimum(eta, 700.0)) + 1e-300

            def variance(mu):
                return mu
        else:  # log-binomial
            def mu_of(eta):
                return np.clip(np.exp(np.minimum(eta, 0.0)), PROB_CAP, 1.0 - PROB_CAP)

            def variance(mu):
                return mu * (1 - mu)

        def eta_of(mu):
            return np.log(mu)

        def dmu(eta, mu):
            return mu
    else:
        raise FitError(f"IRLS handles logit/log links, not {link!r}")
    return mu_of, eta_of, dmu, variance


def _deviance(y, mu, w, family) -> float:
    if family == "binomial":
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(y > 0, y * np.log(y / mu), 0.0)
            t0 = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - mu)), 0.0)
        return float(2.0 * (w * (t1 + t0)).sum())
    # poisson
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * (w * (t - (y - mu))).sum())


def _check_response(y: np.ndarray, link: str, family: str):
    if family == "binomial":
        if not np.isin(y, (0.0, 1.0)).all():
            raise FitError(f"{link}/binomial response must lie in {{0,1}}")
    else:
        if (y < 0).any() or not np.allclose(y, np.round(y)):
            raise FitError("log/poisson response must be a nonnegative integer count")


def fit_glm_irls(design: Design, weights=None, vcov: str | None = None,
                 max_iter: int = MAX_IRLS_ITER, tol: float = IRLS_TOL) -> FittedModel:
    """Fit a logit- or log-link GLM by iteratively reweighted least squares.

    Converges on relative deviance change below ``tol``; step-halving keeps the
    deviance non-increasing (and, for log-binomial models, the fitted
    probabilities inside (0, 1)).  Divergence of any coefficient past the
    separation threshold raises :class:`SeparationError` naming the term.
    """
    X, y = design.matrix, design.response
    link, family = design.spec.link, design.spec.family
    n, p = X.shape
    w = _check_weights(weights, n)
    _check_response(y, link, family)
    if vcov is None:
        vcov = "sandwich" if weights is not None else "model"
    mu_of, eta_of, dmu, variance = _family_funcs(link, family)

    # mu-based start; the first iteration sets the parametric deviance baseline
    if family == "binomial":
        mu = (y + 0.5) / 2.0
    else:
        mu = y + 0.5
    eta = eta_of(mu)
    beta = None
    dev = None
    trace: list[float] = []
    crit = np.inf

    for it in range(1, max_iter + 1):
        d = dmu(eta, mu)
        irls_w = w * d**2 / variance(mu)
        z = eta + (y - mu) / d
        sw = np.sqrt(irls_w)
        new_beta, _, rank, _ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if rank < p:
            raise FitError("singular working normal equations in IRLS")

        if beta is None:
            cand = new_beta
            eta_c = X @ cand
            mu_c = mu_of(eta_c)
            dev_c = _deviance(y, mu_c, w, family)
        else:
            step = new_beta - beta
            scale = 1.0
            slack = 1e-10 * (abs(dev) + 1.0)
            for _ in range(32):
                cand = beta + scale * step
                eta_c = X @ cand
                mu_c = mu_of(eta_c)
                dev_c = _deviance(y, mu_c, w, family)
                if np.isfinite(dev_c) and dev_c <= dev + slack:
                    break
                scale *= 0.5
            else:
                raise FitError("IRLS step-halving failed to decrease the deviance")
        beta, eta, mu = cand, eta_c, mu_c

        if np.abs(beta).max() > SEPARATION_THRESHOLD:
            worst = design.names[int(np.abs(beta).argmax())]
            raise SeparationError(
                f"apparent complete separation: coefficient {worst!r} diverged past "
                f"|beta| > {SEPARATION_THRESHOLD:g} on the linear-predictor scale")

        if dev is not None:
            crit = abs(dev - dev_c) / (abs(dev) + 0.1)
        dev = dev_c
        trace.append(dev)
        if crit < tol:
            break
    else:
        raise FitError(f"IRLS did not converge in {max_iter} iterations "
                       f"(last relative deviance change {crit:.3g})")

    boundary = bool(link == "log" and family == "binomial"
                    and (mu >= 1.0 - 10 * PROB_CAP).any())

    d = dmu(eta, mu)
    v = variance(mu)
    irls_w = w * d**2 / v
    xtwx = (X * irls_w[:, None]).T @ X
    try:
        bread_inv = np.linalg.inv(xtwx)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular information matrix at convergence") from exc
    if vcov == "model":
        V = bread_inv
    elif vcov == "sandwich":
        V = _sandwich(X, bread_inv, w * (y - mu) * d / v)
    else:
        raise FitError(f"unknown vcov kind {vcov!r}")

    return FittedModel(
        coefficients=dict(zip(design.names, beta)),
        vcov=_validate_psd(V),
        vcov_kind=vcov,
        link=link,
        family=family,
        names=design.names,
        term_map=design.term_map,
        n_obs=n,
        weights_used=weights is not None,
        converged=True,
        n_iter=it,
        final_criterion=crit,
        df_resid=None,
        deviance_trace=tuple(trace),
        boundary=boundary,
    )


# ---------------------------------------------------------------------------
# random-intercepts ML


def _group_pairs(subjects: np.ndarray, X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Reshape long data into per-subject (2, p) blocks after a stable sort."""
    order = np.argsort(subjects, kind="stable")
    s = subjects[order]
    if len(s) % 2:
        raise FitError("long data must have exactly two rows per subject")
    pairs = s.reshape(-1, 2)
    if not (pairs[:, 0] == pairs[:, 1]).all():
        raise FitError("long data must have exactly two rows per subject")
    Xg = X[order].reshape(-1, 2, X.shape[1])
    yg = y[order].reshape(-1, 2)
    wg = w[order].reshape(-1, 2)
    if not np.allclose(wg[:, 0], wg[:, 1]):
        raise FitError("weights must be constant within subject")
    return Xg, yg, wg[:, 0]


def _profile_pieces(Xg, yg, wg, lam: float):
    """GLS solve and residual quadratic at variance ratio ``lam``.

    For two exchangeable rows, inv(I + lam*J) = I - c*J with
    c = lam / (1 + 2 lam), which keeps everything closed form.
    """
    c = lam / (1.0 + 2.0 * lam)
    xtx = np.einsum("gip,giq->pq", Xg * wg[:, None, None], Xg)
    sx = Xg.sum(axis=1)  # per-subject column sums
    sy = yg.sum(axis=1)
    xty = np.einsum("gip,gi->p", Xg * wg[:, None, None], yg)
    A = xtx - c * (wg[:, None] * sx).T @ sx
    b = xty - c * (wg[:, None] * sx).T @ sy
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular GLS system in random-intercepts fit") from exc
    r = yg - np.einsum("gip,p->gi", Xg, beta)
    rsum = r.sum(axis=1)
    quad = float((wg * ((r**2).sum(axis=1) - c * rsum**2)).sum())
    return beta, A, quad


def _profile_negloglik(Xg, yg, wg, lam: float) -> float:
    n_w = 2.0 * wg.sum()
    _, _, quad = _profile_pieces(Xg, yg, wg, lam)
    se2 = quad / n_w
    return 0.5 * (n_w * (math.log(2 * math.pi * se2) + 1.0) + wg.sum() * math.log1p(2 * lam))


def fit_random_intercepts(design: Design, subjects, weights=None,
                          vcov: str | None = None) -> MixedFit:
    """Maximum-likelihood random-intercepts fit for paired (pre/post) data.

    The likelihood is profiled over the between/residual variance ratio with a
    one-dimensional bounded search; a ratio pinned at zero (a negative
    between-subject variance truncated to the boundary) sets
    ``variance_truncated``.  Subject weights maximize the weighted
    pseudo-log-likelihood; weighted fits report a cluster sandwich covariance
    with z-based inference, unweighted fits a model-based covariance with
    t inference on ``n_subjects - rank`` degrees of freedom.
    """
    X, y = design.matrix, design.response
    n, p = X.shape
    subjects = np.asarray(subjects)
    if subjects.shape[0] != n:
        raise FitError("subjects vector does not match design rows")
    w = _check_weights(weights, n)
    if vcov is None:
        vcov = "cluster_sandwich" if weights is not None else "model"
    Xg, yg, wg = _group_pairs(subjects, X, y, w)
    g = len(wg)
    if g <= p:
        raise FitError(f"{g} subjects for {p} fixed-effect columns; need more subjects")

    # profile over t = log1p(lam) for stable bracketing of flat tails
    def objective(t: float) -> float:
        return _profile_negloglik(Xg, yg, wg, math.expm1(t))

    res = optimize.minimize_scalar(objective, bounds=(0.0, math.log1p(1e6)),
                                   method="bounded", options={"xatol": 1e-12})
    lam = math.expm1(res.x)
    if objective(0.0) <= res.fun:
        lam = 0.0
    truncated = lam < 1e-10

    beta, A, quad = _profile_pieces(Xg, yg, wg, lam)
    n_w = 2.0 * wg.sum()
    se2 = quad / n_w
    sb2 = lam * se2

    bread_inv = np.linalg.inv(A)
    if vcov == "model":
        V = se2 * bread_inv
        df = g - p
    elif vcov == "cluster_sandwich":
        c = lam / (1.0 + 2.0 * lam)
        r = yg - np.einsum("gip,p->gi", Xg, beta)
        rtil = r - c * r.sum(axis=1, keepdims=True)  # R^{-1} r per subject
        u = np.einsum("gip,gi->gp", Xg, rtil) * wg[:, None]
        meat = u.T @ u * (g / (g - 1.0))
        V = bread_inv @ meat @ bread_inv
        df = None
    else:
        raise FitError(f"unknown vcov kind {vcov!r}")

    return MixedFit(
        coefficients=dict(zip(design.names, beta)),
        vcov=_validate_psd(V),
        vcov_kind=vcov,
        names=design.names,
        term_map=design.term_map,
        between_var=sb2,
        resid_var=se2,
        n_obs=n,
        n_subjects=g,
        weights_used=weights is not None,
        converged=bool(res.success),
        n_iter=int(res.nfev),
        final_criterion=float(res.fun),
        df_resid=df,
        variance_truncated=truncated,
    )


# ---------------------------------------------------------------------------
# linear combinations


def lincom(model: _FitBase, combo: Mapping[str, float], level: float = 0.95) -> LinComResult:
    """Linear combination of fitted coefficients with delta-method CI.

    The CI uses the model's own inference basis: t with residual df when the
    fit reports one, standard normal otherwise.
    """
    unknown = [k for k in combo if k not in model.names]
    if unknown:
        raise DesignError(f"unknown coefficient name(s) {unknown} in linear combination")
    c = np.array([combo.get(n, 0.0) for n in model.names])
    est = float(c @ model.coef_vector)
    var = float(c @ model.vcov @ c)
    se = math.sqrt(max(var, 0.0))
    q, basis = model._critical(level)
    return LinComResult(estimate=est, std_error=se, ci=(est - q * se, est + q * se),
                        level=level, basis=basis, df=model.df_resid)
