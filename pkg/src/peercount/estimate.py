"""Nested pseudo-likelihood (NPL) estimation of the count-outcome game.

The transformed parameter vector is
(log lambda, Gamma, log delta_tilde_2..R_bar, log delta_bar, log rho) with
delta_r = delta_tilde_r + lambda for 2 <= r <= R_bar.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import optimize
from scipy.stats import norm

from .errors import NumericalError, OptimizationError, ValidationError
from .game import (
    Beliefs,
    CostLadder,
    GameParams,
    _phi_diff,
    cut_points,
    expected_outcome_map,
    solve_equilibrium,
)
from .netbuild import InteractionNetwork
from .simulate import replication_seeds, simulate_outcomes

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-300
INITIAL_LAMBDA = 0.01
MIN_INITIAL_INCREMENT = 0.05
MAX_BOOTSTRAP_DROP_SHARE = 0.2
# objective value returned where theta leaves the admissible region
INADMISSIBLE = 1e10


@dataclass(frozen=True)
class ParamLayout:
    """Positions of each block inside the transformed parameter vector."""

    gamma_names: tuple[str, ...]
    R_bar: int

    def __post_init__(self):
        if self.R_bar < 1:
            raise ValidationError(f"R_bar must be at least 1, got {self.R_bar}")

    @property
    def n_gamma(self) -> int:
        return len(self.gamma_names)

    @property
    def size(self) -> int:
        return 1 + self.n_gamma + (self.R_bar - 1) + 2

    @property
    def gamma_slice(self) -> slice:
        return slice(1, 1 + self.n_gamma)

    @property
    def delta_slice(self) -> slice:
        start = 1 + self.n_gamma
        return slice(start, start + self.R_bar - 1)

    @property
    def natural_names(self) -> list[str]:
        return (
            ["lambda"]
            + list(self.gamma_names)
            + [f"delta_{r}" for r in range(2, self.R_bar + 1)]
            + ["delta_bar", "rho"]
        )

    @property
    def transformed_names(self) -> list[str]:
        return (
            ["log_lambda"]
            + list(self.gamma_names)
            + [f"log_delta_tilde_{r}" for r in range(2, self.R_bar + 1)]
            + ["log_delta_bar", "log_rho"]
        )

    def to_params(self, theta: np.ndarray) -> GameParams:
        lam = math.exp(theta[0])
        delta_tilde = np.exp(theta[self.delta_slice])
        ladder = CostLadder(
            lam=lam,
            free_increments=tuple(delta_tilde + lam),
            delta_bar=math.exp(theta[-2]),
            rho=math.exp(theta[-1]),
        )
        return GameParams(ladder, np.asarray(theta[self.gamma_slice], dtype=float))

    def from_params(self, params: GameParams) -> np.ndarray:
        ladder = params.ladder
        if ladder.R_bar != self.R_bar or len(params.gamma) != self.n_gamma:
            raise ValidationError("Parameters do not match the layout")
        lam = max(ladder.lam, 1e-12)
        return np.concatenate(
            [
                [math.log(lam)],
                params.gamma,
                np.log(np.asarray(ladder.free_increments) - ladder.lam),
                [math.log(ladder.delta_bar), math.log(ladder.rho)],
            ]
        )

    def natural(self, theta: np.ndarray) -> np.ndarray:
        """(lambda, Gamma, delta_2..R_bar, delta_bar, rho)."""
        lam = math.exp(theta[0])
        return np.concatenate(
            [
                [lam],
                theta[self.gamma_slice],
                np.exp(theta[self.delta_slice]) + lam,
                np.exp(theta[-2:]),
            ]
        )

    def natural_jacobian(self, theta: np.ndarray) -> np.ndarray:
        """d natural / d transformed."""
        lam = math.exp(theta[0])
        J = np.zeros((self.size, self.size))
        J[0, 0] = lam
        g = self.gamma_slice
        J[g, g] = np.eye(self.n_gamma)
        d = self.delta_slice
        idx = np.arange(d.start, d.stop)
        J[idx, idx] = np.exp(theta[d])
        J[idx, 0] = lam
        J[-2, -2] = math.exp(theta[-2])
        J[-1, -1] = math.exp(theta[-1])
        return J


def _as_matrix(Z) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(Z, pd.DataFrame):
        return Z.to_numpy(dtype=float), tuple(str(c) for c in Z.columns)
    Z = np.asarray(Z, dtype=float)
    return Z, tuple(f"z{k}" for k in range(Z.shape[1]))


def _validate_outcomes(y, G: InteractionNetwork, Z: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != G.n or Z.shape[0] != G.n:
        raise ValidationError(
            f"Dimension mismatch: {len(y)} outcomes, G is {G.n}x{G.n}, "
            f"Z has {Z.shape[0]} rows"
        )
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValidationError("Outcomes must be non-negative integers")
    return y.astype(int)


def _ladder_derivatives(ladder: CostLadder, r_top: int) -> np.ndarray:
    """d a_r / d (lambda, delta_tilde_2..R_bar, delta_bar, rho) for r = 0..r_top.

    Row 0 stands for a_0 = -inf and is zero. Tail increment k > R_bar
    contributes (k - 1)^rho to the delta_bar column.
    """
    R = ladder.R_bar
    r = np.arange(0, r_top + 1)
    D = np.zeros((r_top + 1, 1 + (R - 1) + 2))
    D[1:, 0] = r[1:] - 1
    for k in range(2, R + 1):
        D[:, k - 1] = (r >= k).astype(float)
    base = np.arange(R, max(r_top, R), dtype=float)
    powers = base**ladder.rho
    cum_pow = np.concatenate([[0.0], np.cumsum(powers)])
    cum_log = np.concatenate([[0.0], np.cumsum(powers * np.log(base))])
    steps = np.maximum(r - R, 0)
    D[:, -2] = cum_pow[steps]
    D[:, -1] = ladder.delta_bar * cum_log[steps]
    return D


def _evaluate(
    theta: np.ndarray,
    layout: ParamLayout,
    ybar: np.ndarray,
    y: np.ndarray,
    Z: np.ndarray,
    scores: bool = False,
):
    """Per-agent log p_{i,y_i} and, optionally, per-agent scores."""
    params = layout.to_params(theta)
    ladder = params.ladder
    r_top = int(y.max()) + 1
    a = np.concatenate([[-np.inf], cut_points(ladder, r_top)])
    u = params.lam * ybar + Z @ params.gamma
    A = u - a[y]
    B = u - a[y + 1]
    p = np.maximum(_phi_diff(A, B), PROB_FLOOR)
    logp = np.log(p)
    if not scores:
        return logp, None

    fA = norm.pdf(A)
    fB = norm.pdf(B)
    D = _ladder_derivatives(ladder, r_top)
    dA_ladder = -D[y]
    dB_ladder = -D[y + 1]
    dA_ladder[:, 0] += ybar
    dB_ladder[:, 0] += ybar
    d_ladder = (fA[:, None] * dA_ladder - fB[:, None] * dB_ladder) / p[:, None]
    d_gamma = ((fA - fB) / p)[:, None] * Z

    natural = layout.natural(theta)
    lam = natural[0]
    delta_tilde = np.exp(theta[layout.delta_slice])
    S = np.zeros((len(y), layout.size))
    S[:, 0] = d_ladder[:, 0] * lam
    S[:, layout.gamma_slice] = d_gamma
    S[:, layout.delta_slice] = d_ladder[:, 1 : layout.R_bar] * delta_tilde
    S[:, -2] = d_ladder[:, -2] * natural[-2]
    S[:, -1] = d_ladder[:, -1] * natural[-1]
    return logp, S


def pseudo_loglik(
    params: GameParams,
    y_e: np.ndarray,
    y,
    G: InteractionNetwork,
    Z,
) -> float:
    """L_n = (1/n) sum_i log p_{i,y_i} at fixed beliefs y_e."""
    Zm, names = _as_matrix(Z)
    y = _validate_outcomes(y, G, Zm)
    layout = ParamLayout(names, params.ladder.R_bar)
    logp, _ = _evaluate(
        layout.from_params(params), layout, G.peer_mean(np.asarray(y_e, float)), y, Zm
    )
    return float(logp.mean())


def agent_scores(
    theta: np.ndarray,
    layout: ParamLayout,
    y_e: np.ndarray,
    y,
    G: InteractionNetwork,
    Z,
) -> np.ndarray:
    """``n x p`` matrix of d log p_{i,y_i} / d theta on the transformed scale."""
    Zm, _ = _as_matrix(Z)
    y = _validate_outcomes(y, G, Zm)
    _, S = _evaluate(theta, layout, G.peer_mean(np.asarray(y_e, float)), y, Zm, True)
    return S


def pseudo_loglik_gradient(
    theta: np.ndarray,
    layout: ParamLayout,
    y_e: np.ndarray,
    y,
    G: InteractionNetwork,
    Z,
) -> np.ndarray:
    """Analytic gradient of L_n on the transformed scale."""
    return agent_scores(theta, layout, y_e, y, G, Z).mean(axis=0)


def significance_stars(p_value: float) -> str:
    if not np.isfinite(p_value):
        return ""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.1:
        return "*"
    return ""


@dataclass
class EstimateResult:
    """Outcome of an NPL fit.

    Attributes:
        layout: Parameter layout (Gamma names and R_bar).
        theta: Estimate on the transformed scale.
        beliefs: Expected outcomes y_e at the last NPL step.
        converged: Whether both NPL stopping criteria were met.
        npl_iterations: Outer iterations performed.
        loglik: Final pseudo-log-likelihood.
        trace: Per-iteration loglik, ||d theta||_1 and ||d y_e||_1.
        covariance: Natural-scale covariance, set by :func:`standard_errors`.
        log_lambda_se: Standard error of log lambda. Near lambda = 0 the
            natural-scale SE of lambda shrinks with lambda itself and the
            usual z-test is not valid at the boundary; this scale is the one
            to read there.
    """

    layout: ParamLayout
    theta: np.ndarray
    beliefs: np.ndarray
    converged: bool
    npl_iterations: int
    loglik: float
    trace: pd.DataFrame
    covariance: pd.DataFrame | None = None
    se_method: str | None = None
    bootstrap_dropped: int = 0
    log_lambda_se: float | None = None
    settings: dict[str, Any] = field(default_factory=dict)

    @property
    def R_bar(self) -> int:
        return self.layout.R_bar

    @property
    def params(self) -> GameParams:
        return self.layout.to_params(self.theta)

    @property
    def theta_hat(self) -> pd.Series:
        natural = self.layout.natural(self.theta)
        return pd.Series(natural, index=self.layout.natural_names)

    @property
    def standard_errors(self) -> pd.Series | None:
        if not self.converged or self.covariance is None:
            return None
        return pd.Series(
            np.sqrt(np.clip(np.diag(self.covariance.to_numpy()), 0.0, None)),
            index=self.layout.natural_names,
        )

    def summary(self) -> pd.DataFrame:
        """Estimate, SE, z, two-sided p-value and significance stars."""
        est = self.theta_hat
        se = self.standard_errors
        if se is None:
            se = pd.Series(np.nan, index=est.index)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = est / se
        p = 2 * norm.sf(np.abs(z))
        return pd.DataFrame(
            {
                "estimate": est,
                "se": se,
                "z": z,
                "p_value": p,
                "stars": [significance_stars(v) for v in p],
            }
        )

    def to_dict(self) -> dict[str, Any]:
        summary = self.summary()

        def clean(values):
            return [None if not np.isfinite(v) else float(v) for v in values]

        return {
            "parameters": list(summary.index),
            "estimate": clean(summary["estimate"]),
            "se": clean(summary["se"]),
            "p_value": clean(summary["p_value"]),
            "stars": list(summary["stars"]),
            "covariance": None
            if self.covariance is None
            else [clean(row) for row in self.covariance.to_numpy()],
            "converged": self.converged,
            "npl_iterations": self.npl_iterations,
            "loglik": float(self.loglik),
            "R_bar": self.R_bar,
            "se_method": self.se_method,
            "bootstrap_dropped": self.bootstrap_dropped,
            "log_lambda_se": self.log_lambda_se,
            "settings": self.settings,
            "trace": self.trace.to_dict("list"),
        }


def _objective(theta, layout, ybar, y, Z, analytic: bool):
    try:
        logp, S = _evaluate(theta, layout, ybar, y, Z, scores=analytic)
    except (OverflowError, ValidationError):
        # exp under- or overflow on the transformed scale
        if analytic:
            return INADMISSIBLE, np.zeros(len(theta))
        return INADMISSIBLE
    if analytic:
        return -logp.mean(), -S.mean(axis=0)
    return -logp.mean()


def _maximize(theta0, layout, ybar, y, Z, gradient: str, gtol: float, fixed=()):
    """One quasi-Newton maximization of L_n at fixed beliefs.

    Coordinates listed in ``fixed`` stay at their starting values.
    """
    analytic = gradient == "analytic"
    free = np.setdiff1d(np.arange(layout.size), np.asarray(fixed, dtype=int))

    def fun(x):
        theta = theta0.copy()
        theta[free] = x
        out = _objective(theta, layout, ybar, y, Z, analytic)
        if analytic:
            return out[0], out[1][free]
        return out

    with np.errstate(over="ignore", invalid="ignore"):
        start = fun(theta0[free])
        f0 = start[0] if analytic else start
        res = optimize.minimize(
            fun,
            theta0[free],
            jac=True if analytic else None,
            method="BFGS",
            options={"gtol": gtol, "maxiter": 2000},
        )
    diagnostics = {
        "status": int(res.status),
        "message": str(res.message),
        "nit": int(res.nit),
        "nfev": int(res.nfev),
        "grad_norm": float(np.abs(res.jac).max()) if res.jac is not None else None,
    }
    if not np.isfinite(res.fun) or res.status == 3:
        raise OptimizationError(
            f"Pseudo-likelihood maximization failed: {res.message}", diagnostics
        )
    if res.status != 0:
        logger.debug("BFGS stopped early: %s", diagnostics)
    theta = theta0.copy()
    if res.fun <= f0:
        theta[free] = res.x
    return theta, -min(res.fun, f0)


def initial_theta(y, Z, R_bar: int, names: Sequence[str] | None = None) -> np.ndarray:
    """Starting values from outcome frequencies and a no-peer ordered-probit fit.

    lambda starts at 0.01, the intercept and increments come from the
    empirical distribution of y, rho = 1 and delta_bar makes the first tail
    increment repeat the last free one. Gamma and the ladder are then refined
    with lambda held fixed and beliefs set to zero.
    """
    Zm, default_names = _as_matrix(Z)
    names = tuple(names) if names is not None else default_names
    layout = ParamLayout(names, R_bar)
    y = np.asarray(y, dtype=int)

    cdf = np.array([(y < r).mean() for r in range(1, R_bar + 2)])
    q = norm.ppf(np.clip(np.maximum.accumulate(cdf), 0.01, 0.99))
    intercept = -q[0]
    spacing = np.diff(q)
    delta_tilde = np.maximum(
        spacing[: R_bar - 1] - INITIAL_LAMBDA, MIN_INITIAL_INCREMENT
    )
    if R_bar > 1:
        delta_bar = delta_tilde[-1] / R_bar
    else:
        delta_bar = max(spacing[0] - INITIAL_LAMBDA, MIN_INITIAL_INCREMENT)

    gamma = np.zeros(layout.n_gamma)
    constant = np.flatnonzero(np.all(Zm == 1.0, axis=0))
    if constant.size:
        gamma[constant[0]] = intercept
    theta = np.concatenate(
        [
            [math.log(INITIAL_LAMBDA)],
            gamma,
            np.log(delta_tilde),
            [math.log(delta_bar), 0.0],
        ]
    )
    try:
        theta, _ = _maximize(
            theta, layout, np.zeros(len(y)), y, Zm, "analytic", 1e-8, fixed=(0,)
        )
    except OptimizationError as e:
        logger.warning("Ordered-probit start failed (%s); using raw frequencies", e)
    return theta


def _theta_change(new: np.ndarray, old: np.ndarray) -> float:
    lam = abs(math.exp(new[0]) - math.exp(old[0]))
    return float(lam + np.abs(new[1:] - old[1:]).sum())


def npl_fit(
    y,
    G: InteractionNetwork,
    Z,
    R_bar: int,
    init_theta: np.ndarray | None = None,
    init_beliefs: np.ndarray | None = None,
    tol: float = 1e-4,
    max_outer: int = 100,
    gradient: str = "analytic",
    gtol: float = 1e-8,
    r_max: int | None = None,
) -> EstimateResult:
    """Nested pseudo-likelihood estimation.

    Alternates theta_t = argmax L_n(theta, y_e_{t-1}) (BFGS on the
    transformed scale) with y_e_t = L(theta_t, y_e_{t-1}) until both
    ||theta_t - theta_{t-1}||_1 and ||y_e_t - y_e_{t-1}||_1 fall below ``tol``.
    The lambda entry of the theta change is taken on the natural scale, so
    a fit pinned near lambda = 0 can stop while log lambda still drifts.

    Args:
        y: Observed integer outcomes.
        G: Interaction network.
        Z: Design matrix [X GX] (DataFrame keeps column names).
        R_bar: Number of free cost increments plus one.
        init_theta: Transformed starting vector; defaults to
            :func:`initial_theta`.
        init_beliefs: Starting y_e; defaults to the observed y.
        tol: NPL stopping tolerance.
        max_outer: Cap on outer iterations; reaching it returns an
            unconverged result carrying the trace.
        gradient: "analytic" or "numeric" (finite differences).
        gtol: BFGS gradient tolerance.
        r_max: Largest admissible outcome; larger observations are rejected.

    Raises:
        ValidationError: On inconsistent dimensions or outcomes above r_max.
        OptimizationError: If the inner maximization breaks down.
    """
    if gradient not in ("analytic", "numeric"):
        raise ValidationError(
            f"gradient must be 'analytic' or 'numeric', not {gradient!r}"
        )
    Zm, names = _as_matrix(Z)
    y = _validate_outcomes(y, G, Zm)
    if r_max is not None and y.max() > r_max:
        raise ValidationError(f"Outcome {y.max()} exceeds r_max={r_max}")
    layout = ParamLayout(names, R_bar)
    theta = (
        initial_theta(y, Zm, R_bar, names)
        if init_theta is None
        else np.array(init_theta, dtype=float)
    )
    if len(theta) != layout.size:
        raise ValidationError(
            f"init_theta has {len(theta)} entries, expected {layout.size}"
        )
    y_e = y.astype(float) if init_beliefs is None else np.array(init_beliefs, float)

    rows = []
    converged = False
    loglik = float("nan")
    iteration = 0
    for iteration in range(1, max_outer + 1):
        ybar = G.peer_mean(y_e)
        theta_new, loglik = _maximize(theta, layout, ybar, y, Zm, gradient, gtol)
        y_e_new = expected_outcome_map(layout.to_params(theta_new), G, Zm, y_e)
        d_theta = _theta_change(theta_new, theta)
        d_beliefs = float(np.abs(y_e_new - y_e).sum())
        rows.append(
            {
                "iteration": iteration,
                "loglik": loglik,
                "d_theta": d_theta,
                "d_beliefs": d_beliefs,
                "lambda": math.exp(theta_new[0]),
            }
        )
        logger.info(
            "NPL %d: loglik %.6f, |d theta| %.2e, |d y_e| %.2e",
            iteration,
            loglik,
            d_theta,
            d_beliefs,
        )
        theta, y_e = theta_new, y_e_new
        if d_theta < tol and d_beliefs < tol:
            converged = True
            break
    if not converged:
        logger.warning("NPL did not converge within %d iterations", max_outer)

    return EstimateResult(
        layout=layout,
        theta=theta,
        beliefs=y_e,
        converged=converged,
        npl_iterations=iteration,
        loglik=loglik,
        trace=pd.DataFrame(
            rows, columns=["iteration", "loglik", "d_theta", "d_beliefs", "lambda"]
        ),
        settings={
            "tol": tol,
            "max_outer": max_outer,
            "gradient": gradient,
            "gtol": gtol,
        },
    )


def _shared_change(small: EstimateResult, large: EstimateResult) -> float:
    """Max-norm change of lambda, Gamma and delta_2..R_bar between two fits."""
    keep = ["lambda", *small.layout.gamma_names] + [
        f"delta_{r}" for r in range(2, small.R_bar + 1)
    ]
    return float((large.theta_hat[keep] - small.theta_hat[keep]).abs().max())


def select_R_bar(
    y,
    G: InteractionNetwork,
    Z,
    start: int = 2,
    stability_tol: float = 0.01,
    **fit_kwargs,
) -> int:
    """Smallest R_bar whose estimates barely move when R_bar grows by one.

    The search is capped at max(y) - 2 (and never goes below 1).
    """
    y = np.asarray(y, dtype=int)
    cap = max(int(y.max()) - 2, 1)
    if start >= cap:
        return min(start, cap)
    if math.isinf(stability_tol):
        return start
    current = npl_fit(y, G, Z, start, **fit_kwargs)
    for R in range(start, cap):
        larger = npl_fit(y, G, Z, R + 1, **fit_kwargs)
        change = _shared_change(current, larger)
        logger.info("R_bar %d -> %d: max parameter change %.4f", R, R + 1, change)
        if change < stability_tol:
            return R
        current = larger
    return cap


def _bootstrap_draw(
    seed,
    result: EstimateResult,
    G: InteractionNetwork,
    Z: np.ndarray,
    fit_kwargs: dict,
) -> np.ndarray | None:
    y_star = simulate_outcomes(
        result.params, G, Z, seed, beliefs=Beliefs(result.beliefs)
    )
    try:
        refit = npl_fit(
            y_star,
            G,
            Z,
            result.R_bar,
            init_theta=result.theta,
            init_beliefs=y_star,
            **fit_kwargs,
        )
    except NumericalError as e:
        logger.info("Bootstrap replication failed: %s", e)
        return None
    if not refit.converged:
        return None
    return refit.layout.natural(refit.theta)


def _bootstrap(
    result, G, Z, B: int, seed, n_jobs: int, fit_kwargs
) -> tuple[np.ndarray, int]:
    """Kept natural-scale draws (one per row) and the number dropped."""
    seeds = replication_seeds(seed, B)
    draws = Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_draw)(s, result, G, Z, fit_kwargs) for s in seeds
    )
    kept = [d for d in draws if d is not None]
    dropped = B - len(kept)
    if dropped > MAX_BOOTSTRAP_DROP_SHARE * B:
        warnings.warn(
            f"{dropped} of {B} bootstrap replications failed to converge",
            stacklevel=3,
        )
    if len(kept) < 2:
        raise NumericalError(
            f"Only {len(kept)} bootstrap replications converged; "
            "cannot form a covariance"
        )
    return np.array(kept), dropped


def _sandwich(result, y, G, Z, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Natural- and transformed-scale covariances."""
    layout = result.layout
    theta = result.theta
    n = len(y)
    S = agent_scores(theta, layout, result.beliefs, y, G, Z)
    omega = S.T @ S / n

    def mean_score(t):
        beliefs = solve_equilibrium(
            layout.to_params(t), G, Z, init=result.beliefs, check_bound=False
        )
        return agent_scores(t, layout, beliefs.y_e, y, G, Z).mean(axis=0)

    H = np.zeros((layout.size, layout.size))
    for k in range(layout.size):
        e = np.zeros(layout.size)
        e[k] = step
        H[:, k] = (mean_score(theta + e) - mean_score(theta - e)) / (2 * step)
    H_inv = np.linalg.pinv(H)
    V = H_inv @ omega @ H_inv.T / n
    J = layout.natural_jacobian(theta)
    return J @ V @ J.T, V


def standard_errors(
    result: EstimateResult,
    y,
    G: InteractionNetwork,
    Z,
    method: str = "bootstrap",
    B: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
    step: float = 1e-5,
    **fit_kwargs,
) -> pd.DataFrame:
    """Natural-scale covariance of the NPL estimate.

    ``bootstrap`` resimulates B outcome vectors from the estimate on the
    observed G and Z, refits each and takes the empirical covariance;
    non-converged replications are dropped and counted on ``result``.
    ``sandwich`` differentiates the NPL first-order conditions (beliefs
    re-solved at each perturbed theta) numerically and maps to the natural
    scale by the delta method.

    lambda = 0 sits on the boundary of the parameter space, where neither
    covariance gives a standard normal z for lambda. The SE of log lambda
    is stored on ``result.log_lambda_se`` for that case.

    Raises:
        ValidationError: If the fit did not converge, ``B < 2`` or the
            method is unknown.
    """
    if not result.converged:
        raise ValidationError("Standard errors need a converged NPL fit")
    Zm, _ = _as_matrix(Z)
    y = _validate_outcomes(y, G, Zm)
    if method == "bootstrap":
        if B < 2:
            raise ValidationError(f"Insufficient bootstrap replications: B={B}")
        fit_kwargs = {**result.settings, **fit_kwargs}
        draws, dropped = _bootstrap(result, G, Zm, B, seed, n_jobs, fit_kwargs)
        result.bootstrap_dropped = dropped
        cov = np.cov(draws, rowvar=False)
        log_lambda_se = float(np.log(draws[:, 0]).std(ddof=1))
    elif method == "sandwich":
        cov, V = _sandwich(result, y, G, Zm, step)
        log_lambda_se = float(np.sqrt(max(V[0, 0], 0.0)))
    else:
        raise ValidationError(f"Unknown standard error method {method!r}")
    cov = (cov + cov.T) / 2
    names = result.layout.natural_names
    result.covariance = pd.DataFrame(cov, index=names, columns=names)
    result.se_method = method
    result.log_lambda_se = log_lambda_se
    return result.covariance
