"""Dyadic logit network formation with sender and receiver fixed effects.

P(w_ij = 1) = expit(x_ij' beta + mu_i + nu_j). The fitted effects feed a
polynomial sieve that stands in for the shock component correlated with
link formation.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import expit
from sklearn.preprocessing import PolynomialFeatures, StandardScaler

from .errors import FormationError, ValidationError
from .netbuild import (
    InteractionNetwork,
    PeriodSpec,
    PublicationRecord,
    ScholarProfile,
    count_outcomes,
    filter_to_roster,
)

logger = logging.getLogger(__name__)

DYAD_KINDS = ("same", "absdiff", "any", "common")
FE_CAP = 15.0
MAX_FE_STEP = 5.0


@dataclass(frozen=True)
class DyadTerm:
    """One dyadic covariate built from per-scholar values.

    Kinds:
        same: 1 if both scholars share the value.
        absdiff: |v_i - v_j|.
        any: 1 if at least one of the two is true.
        common: number of shared tags; ``values`` is an ``n x F`` 0/1 matrix.
    """

    name: str
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in DYAD_KINDS:
            raise ValidationError(f"Unknown dyad term kind {self.kind!r}")
        values = np.asarray(self.values)
        if self.kind != "same" and not np.all(np.isfinite(values.astype(float))):
            raise ValidationError(f"Dyad term {self.name} has non-finite values")
        object.__setattr__(self, "values", values)

    def block(self, rows: np.ndarray) -> np.ndarray:
        v = self.values
        if self.kind == "same":
            return (v[rows, None] == v[None, :]).astype(float)
        if self.kind == "absdiff":
            v = v.astype(float)
            return np.abs(v[rows, None] - v[None, :])
        if self.kind == "any":
            v = v.astype(bool)
            return (v[rows, None] | v[None, :]).astype(float)
        v = v.astype(float)
        return v[rows] @ v.T


@dataclass
class DyadFrame:
    """All ordered pairs (i, j), i != j, generated lazily in row blocks.

    Attributes:
        terms: Dyadic covariates; an intercept is always prepended.
        links: ``n x n`` 0/1 link matrix (w_ij for the ordered pair).
        ids: Scholar ids in row order.
        block_size: Rows of the dyad matrix materialized at once.
    """

    terms: tuple[DyadTerm, ...]
    links: sparse.csr_matrix
    ids: tuple[str, ...] | None = None
    block_size: int = 256

    def __post_init__(self):
        self.links = sparse.csr_matrix(self.links, dtype=float)
        n = self.links.shape[0]
        if self.links.shape != (n, n):
            raise ValidationError("links must be a square matrix")
        for term in self.terms:
            if len(term.values) != n:
                raise ValidationError(
                    f"Dyad term {term.name} has {len(term.values)} rows, expected {n}"
                )
        if np.any(self.links.diagonal() != 0):
            raise ValidationError("Self-links are not allowed in a dyad frame")

    @property
    def n(self) -> int:
        return self.links.shape[0]

    @property
    def names(self) -> list[str]:
        return ["const"] + [t.name for t in self.terms]

    def blocks(self) -> Iterator[np.ndarray]:
        for start in range(0, self.n, self.block_size):
            yield np.arange(start, min(start + self.block_size, self.n))

    def covariates(self, rows: np.ndarray) -> np.ndarray:
        """``len(rows) x n x K`` covariate tensor including the intercept."""
        parts = [np.ones((len(rows), self.n))] + [t.block(rows) for t in self.terms]
        return np.stack(parts, axis=-1)

    def link_block(self, rows: np.ndarray) -> np.ndarray:
        return self.links[rows].toarray()

    def mask(self, rows: np.ndarray) -> np.ndarray:
        m = np.ones((len(rows), self.n), dtype=bool)
        m[np.arange(len(rows)), rows] = False
        return m

    def pair(self, i: int, j: int) -> pd.Series:
        """Covariates of the ordered pair (i, j)."""
        if i == j:
            raise ValidationError("No covariates for a self-pair")
        x = self.covariates(np.array([i]))[0, j]
        return pd.Series(x, index=self.names)

    def probabilities(
        self, beta: np.ndarray, mu: np.ndarray, nu: np.ndarray
    ) -> np.ndarray:
        """Dense ``n x n`` link probabilities with a zero diagonal."""
        out = np.zeros((self.n, self.n))
        for rows in self.blocks():
            eta = self.covariates(rows) @ beta + mu[rows, None] + nu[None, :]
            out[rows] = np.where(self.mask(rows), expit(eta), 0.0)
        return out


@dataclass
class FormationFit:
    """First-stage estimates."""

    beta: pd.Series
    mu: np.ndarray
    nu: np.ndarray
    converged: bool
    iterations: int
    mu_capped: np.ndarray
    nu_capped: np.ndarray
    beta_se: pd.Series | None = None
    trace: list[float] = field(default_factory=list)

    @property
    def any_capped(self) -> bool:
        return bool(self.mu_capped.any() or self.nu_capped.any())

    def fitted_probabilities(self, frame: DyadFrame) -> np.ndarray:
        return frame.probabilities(self.beta.to_numpy(), self.mu, self.nu)

    def effects(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "mu": self.mu,
                "nu": self.nu,
                "mu_capped": self.mu_capped,
                "nu_capped": self.nu_capped,
            }
        )


def dyad_covariates(
    profiles: Sequence[ScholarProfile],
    records: Sequence[PublicationRecord],
    period: PeriodSpec,
    W,
) -> DyadFrame:
    """Homophily covariates for every ordered pair of scholars.

    Same department, same ranking bucket, absolute differences in
    experience, citations (thousands), recent average publications and total
    publications, at least one female, at least one African American, and
    the number of commonly listed fields. Links come from ``W``.

    Raises:
        ValidationError: If a publication author has no profile or ``W`` does
            not match the roster.
    """
    ids = [p.scholar_id for p in profiles]
    known = set(ids)
    missing = sorted({a for r in records for a in r.author_ids} - known)
    if missing:
        raise ValidationError(
            f"No profile for scholar id(s): {', '.join(missing[:20])}"
        )
    W = sparse.csr_matrix(W)
    if W.shape != (len(ids), len(ids)):
        raise ValidationError(f"W has shape {W.shape} for {len(ids)} scholars")

    records = filter_to_roster(records, ids)
    lo, hi = period.lookback_window()
    recent = count_outcomes(records, ids, PeriodSpec(lo, hi)) / (hi - lo + 1)
    first_year = min((r.year for r in records), default=period.start_year)
    total = count_outcomes(
        records, ids, PeriodSpec(min(first_year, period.start_year), period.end_year)
    )
    all_fields = sorted(set().union(*(p.fields for p in profiles)))
    field_matrix = np.array(
        [[float(f in p.fields) for f in all_fields] for p in profiles]
    ).reshape(len(ids), len(all_fields))

    departments = np.array([p.department_id for p in profiles])
    rankings = np.array([p.ranking_bucket for p in profiles])
    terms = (
        DyadTerm("Same Department", "same", departments),
        DyadTerm("Same Ranking", "same", rankings),
        DyadTerm(
            "Experience Difference",
            "absdiff",
            np.array([p.experience(period.start_year) for p in profiles], dtype=float),
        ),
        DyadTerm(
            "Citation Difference (000s)",
            "absdiff",
            np.array([p.citations_at(period.start_year) for p in profiles]) / 1000.0,
        ),
        DyadTerm("Average Publications Difference", "absdiff", recent),
        DyadTerm("Total Publications Difference", "absdiff", total.astype(float)),
        DyadTerm("Any Female", "any", np.array([p.female for p in profiles])),
        DyadTerm(
            "Any African American",
            "any",
            np.array([p.african_american for p in profiles]),
        ),
        DyadTerm("Common Fields", "common", field_matrix),
    )
    return DyadFrame(terms=terms, links=W, ids=tuple(ids))


def _loglik(frame: DyadFrame, beta, mu, nu) -> float:
    total = 0.0
    for rows in frame.blocks():
        eta = frame.covariates(rows) @ beta + mu[rows, None] + nu[None, :]
        w = frame.link_block(rows)
        ll = w * eta - np.logaddexp(0.0, eta)
        total += ll[frame.mask(rows)].sum()
    return total


def _beta_newton(frame: DyadFrame, beta, mu, nu) -> np.ndarray:
    k = len(beta)
    grad = np.zeros(k)
    hess = np.zeros((k, k))
    for rows in frame.blocks():
        X = frame.covariates(rows)
        p = expit(X @ beta + mu[rows, None] + nu[None, :])
        m = frame.mask(rows)
        resid = np.where(m, frame.link_block(rows) - p, 0.0)
        weight = np.where(m, p * (1 - p), 0.0)
        grad += np.einsum("bjk,bj->k", X, resid)
        hess += np.einsum("bjk,bj,bjl->kl", X, weight, X)
    step = np.linalg.lstsq(hess, grad, rcond=None)[0]
    base = _loglik(frame, beta, mu, nu)
    for _ in range(30):
        candidate = beta + step
        if _loglik(frame, candidate, mu, nu) >= base - 1e-12:
            return candidate
        step = step / 2
    return beta


def _margins(frame: DyadFrame, beta, mu, nu, axis: int):
    """Residual and weight sums by sender (axis=1) or receiver (axis=0)."""
    resid = np.zeros(frame.n)
    weight = np.zeros(frame.n)
    for rows in frame.blocks():
        p = expit(frame.covariates(rows) @ beta + mu[rows, None] + nu[None, :])
        m = frame.mask(rows)
        r = np.where(m, frame.link_block(rows) - p, 0.0)
        w = np.where(m, p * (1 - p), 0.0)
        if axis == 1:
            resid[rows] += r.sum(axis=1)
            weight[rows] += w.sum(axis=1)
        else:
            resid += r.sum(axis=0)
            weight += w.sum(axis=0)
    return resid, weight


def _fe_step(resid, weight, free) -> np.ndarray:
    step = np.divide(resid, weight, out=np.zeros_like(resid), where=weight > 0)
    return np.where(free, np.clip(step, -MAX_FE_STEP, MAX_FE_STEP), 0.0)


def fit_dyadic_logit(
    frame: DyadFrame,
    init_mu: np.ndarray | None = None,
    init_nu: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 1000,
    compute_se: bool = True,
) -> FormationFit:
    """Maximum likelihood for the two-way fixed-effect dyadic logit.

    Alternates a Newton step on beta given the fixed effects with one Newton
    update per scholar on mu, then on nu. Senders without links (or linked to
    everyone) have mu capped at -15 (+15); receivers likewise for nu. Sum-to-zero
    holds for the uncapped mu and nu, with the level in the intercept.

    Raises:
        ValidationError: If the frame has no links or no non-links.
        FormationError: If the largest coefficient change stays above ``tol``
            after ``max_iter`` rounds.
    """
    n = frame.n
    n_links = frame.links.nnz
    if n_links == 0:
        raise ValidationError("Dyadic logit needs at least one link")
    if n_links >= n * (n - 1):
        raise ValidationError("Dyadic logit needs at least one non-link")

    out_deg = np.asarray(frame.links.sum(axis=1)).ravel()
    in_deg = np.asarray(frame.links.sum(axis=0)).ravel()
    mu_capped = (out_deg == 0) | (out_deg == n - 1)
    nu_capped = (in_deg == 0) | (in_deg == n - 1)
    if mu_capped.any() or nu_capped.any():
        logger.info(
            "Capping %d sender and %d receiver effects at +-%.0f",
            mu_capped.sum(),
            nu_capped.sum(),
            FE_CAP,
        )

    mu = np.zeros(n) if init_mu is None else np.array(init_mu, dtype=float)
    nu = np.zeros(n) if init_nu is None else np.array(init_nu, dtype=float)
    mu[mu_capped] = np.where(out_deg[mu_capped] == 0, -FE_CAP, FE_CAP)
    nu[nu_capped] = np.where(in_deg[nu_capped] == 0, -FE_CAP, FE_CAP)
    beta = np.zeros(len(frame.names))
    density = n_links / (n * (n - 1))
    beta[0] = np.log(density / (1 - density))

    def normalize(beta, mu, nu):
        for effects, free in ((mu, ~mu_capped), (nu, ~nu_capped)):
            if free.any():
                shift = effects[free].mean()
                effects[free] -= shift
                beta[0] += shift
        return beta, mu, nu

    beta, mu, nu = normalize(beta, mu, nu)
    trace: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        old = np.concatenate([beta, mu, nu])
        beta = _beta_newton(frame, beta, mu, nu)
        mu = mu + _fe_step(*_margins(frame, beta, mu, nu, axis=1), ~mu_capped)
        nu = nu + _fe_step(*_margins(frame, beta, mu, nu, axis=0), ~nu_capped)
        beta, mu, nu = normalize(beta, mu, nu)
        change = float(np.max(np.abs(np.concatenate([beta, mu, nu]) - old)))
        trace.append(change)
        logger.debug("formation iteration %d: max change %.3e", iteration, change)
        if change < tol:
            converged = True
            break
    if not converged:
        raise FormationError(
            f"Dyadic logit did not converge in {max_iter} iterations "
            f"(last change {trace[-1]:.3e})",
            trace,
        )
    logger.info("Dyadic logit converged in %d iterations", iteration)

    fit = FormationFit(
        beta=pd.Series(beta, index=frame.names),
        mu=mu,
        nu=nu,
        converged=True,
        iterations=iteration,
        mu_capped=mu_capped,
        nu_capped=nu_capped,
        trace=trace,
    )
    if compute_se:
        fit.beta_se = _beta_standard_errors(frame, fit)
    return fit


def formation_gradient(frame: DyadFrame, fit: FormationFit) -> dict[str, np.ndarray]:
    """Average score of the log-likelihood for beta, mu and nu."""
    beta = fit.beta.to_numpy()
    grad = np.zeros(len(beta))
    for rows in frame.blocks():
        X = frame.covariates(rows)
        p = expit(X @ beta + fit.mu[rows, None] + fit.nu[None, :])
        resid = np.where(frame.mask(rows), frame.link_block(rows) - p, 0.0)
        grad += np.einsum("bjk,bj->k", X, resid)
    r_mu, _ = _margins(frame, beta, fit.mu, fit.nu, axis=1)
    r_nu, _ = _margins(frame, beta, fit.mu, fit.nu, axis=0)
    n = frame.n
    return {
        "beta": grad / (n * (n - 1)),
        "mu": np.where(fit.mu_capped, 0.0, r_mu / (n - 1)),
        "nu": np.where(fit.nu_capped, 0.0, r_nu / (n - 1)),
    }


def _beta_standard_errors(frame: DyadFrame, fit: FormationFit) -> pd.Series:
    """Slope SEs from the inverse information, profiling out const, mu and nu.

    The intercept is not separately identified from the fixed-effect levels,
    so its SE is reported as NaN.
    """
    n = frame.n
    beta = fit.beta.to_numpy()
    k = len(beta) - 1
    h_bb = np.zeros((k, k))
    h_b_mu = np.zeros((k, n))
    h_b_nu = np.zeros((k, n))
    h_mu_nu = np.zeros((n, n))
    for rows in frame.blocks():
        X = frame.covariates(rows)
        p = expit(X @ beta + fit.mu[rows, None] + fit.nu[None, :])
        w = np.where(frame.mask(rows), p * (1 - p), 0.0)
        slopes = X[..., 1:]
        h_bb += np.einsum("bjk,bj,bjl->kl", slopes, w, slopes)
        h_b_mu[:, rows] += np.einsum("bjk,bj->kb", slopes, w)
        h_b_nu += np.einsum("bjk,bj->kj", slopes, w)
        h_mu_nu[rows] = w
    free_mu = ~fit.mu_capped
    free_nu = ~fit.nu_capped
    cross_fe = h_mu_nu[np.ix_(free_mu, free_nu)]
    nuisance = np.block(
        [
            [np.diag(h_mu_nu.sum(axis=1)[free_mu]), cross_fe],
            [cross_fe.T, np.diag(h_mu_nu.sum(axis=0)[free_nu])],
        ]
    )
    cross = np.hstack([h_b_mu[:, free_mu], h_b_nu[:, free_nu]])
    info = h_bb - cross @ np.linalg.pinv(nuisance) @ cross.T
    se = np.sqrt(np.clip(np.diag(np.linalg.pinv(info)), 0.0, None))
    return pd.Series(np.concatenate([[np.nan], se]), index=frame.names)


def _clip_capped(effects: np.ndarray, capped: np.ndarray) -> np.ndarray:
    if not capped.any() or capped.all():
        return effects
    free = effects[~capped]
    return np.where(capped, np.clip(effects, free.min(), free.max()), effects)


def sieve_terms(
    fit: FormationFit,
    G: InteractionNetwork,
    degree: int = 2,
    standardize: bool = True,
) -> pd.DataFrame:
    """Polynomial basis in (mu_i, nu_i, mu_bar_i, nu_bar_i) for the control function.

    mu_bar = G mu and nu_bar = G nu, so isolated scholars get zero peer
    averages. Capped effects enter at the nearest uncapped extreme. Degree d
    yields every monomial of total degree 1..d.
    """
    if degree < 1:
        raise ValidationError(f"Sieve degree must be at least 1, got {degree}")
    if G.n != len(fit.mu):
        raise ValidationError("Formation fit and network cover different scholars")
    if fit.any_capped:
        warnings.warn(
            f"{int(fit.mu_capped.sum() + fit.nu_capped.sum())} fixed effects are "
            "capped; their sieve terms use the nearest uncapped value",
            stacklevel=2,
        )
    mu = _clip_capped(fit.mu, fit.mu_capped)
    nu = _clip_capped(fit.nu, fit.nu_capped)
    base = np.column_stack([mu, nu, G.peer_mean(mu), G.peer_mean(nu)])
    poly = PolynomialFeatures(degree=degree, include_bias=False)
    terms = poly.fit_transform(base)
    if standardize:
        terms = StandardScaler().fit_transform(terms)
    names = poly.get_feature_names_out(["mu", "nu", "mu_bar", "nu_bar"])
    return pd.DataFrame(
        terms,
        columns=[f"Sieve: {name}" for name in names],
        index=pd.Index(G.ids, name="scholar_id") if G.ids is not None else None,
    )
