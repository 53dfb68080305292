"""Replication harness: bias, RMSE, mean SE and coverage of the NPL estimator."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from .errors import NumericalError, ValidationError
from .estimate import npl_fit, standard_errors
from .formation import fit_dyadic_logit, sieve_terms
from .netbuild import assemble_design
from .simulate import SimConfig, simulate_dataset, true_parameters

logger = logging.getLogger(__name__)


@dataclass
class StudyResult:
    """Per-replication estimates and standard errors of a simulation study."""

    truth: pd.Series
    estimates: pd.DataFrame
    standard_errors: pd.DataFrame
    failures: int
    level: float = 0.95

    @property
    def n_successful(self) -> int:
        return len(self.estimates)

    def summary(self) -> pd.DataFrame:
        """Bias, SD, RMSE, mean SE and CI coverage for every parameter."""
        est = self.estimates[self.truth.index]
        err = est - self.truth
        se = self.standard_errors.reindex(columns=self.truth.index).astype(float)
        z = norm.ppf(0.5 + self.level / 2)
        covered = (err.abs() <= z * se).astype(float).where(se.notna())
        return pd.DataFrame(
            {
                "truth": self.truth,
                "mean": est.mean(),
                "bias": err.mean(),
                "sd": est.std(),
                "rmse": np.sqrt((err**2).mean()),
                "mean_se": se.mean(),
                "coverage": covered.mean(),
            }
        )


@dataclass
class SieveComparison:
    """Paired plain and sieve-corrected lambda estimates, one row per replication."""

    truth: float
    estimates: pd.DataFrame
    failures: int

    @property
    def improved(self) -> pd.Series:
        """Whether the sieve fit lands closer to the true lambda."""
        err = (self.estimates - self.truth).abs()
        return err["sieve"] < err["plain"]

    @property
    def improved_share(self) -> float:
        return float(self.improved.mean())

    def summary(self) -> pd.DataFrame:
        err = self.estimates - self.truth
        return pd.DataFrame(
            {
                "mean": self.estimates.mean(),
                "bias": err.mean(),
                "rmse": np.sqrt((err**2).mean()),
            }
        )


def _check_sieve(config: SimConfig, sieve_degree: int | None) -> None:
    if sieve_degree is not None and config.network.kind != "dyadic":
        raise ValidationError("Sieve correction needs the dyadic network generator")


def _sieve_design(data, sieve_degree: int):
    formation = fit_dyadic_logit(data.network.frame, compute_se=False)
    controls = sieve_terms(formation, data.G, degree=sieve_degree)
    return assemble_design(
        data.X, data.G, controls=controls, exclude_context=["intercept"]
    )


def _replicate(
    config: SimConfig,
    replication: int,
    R_bar: int,
    se_method: str | None,
    B: int,
    sieve_degree: int | None,
    fit_kwargs: dict,
):
    try:
        data = simulate_dataset(config, replication)
        Z = data.Z if sieve_degree is None else _sieve_design(data, sieve_degree)
        result = npl_fit(data.y, data.G, Z, R_bar, **fit_kwargs)
        if not result.converged:
            return None
        se = None
        if se_method is not None:
            standard_errors(
                result, data.y, data.G, Z, method=se_method, B=B, seed=replication
            )
            se = result.standard_errors
    except NumericalError as e:
        logger.info("Replication %d failed: %s", replication, e)
        return None
    return result.theta_hat, se


def run_study(
    config: SimConfig,
    reps: int,
    R_bar: int | None = None,
    se_method: str | None = None,
    B: int = 50,
    sieve_degree: int | None = None,
    n_jobs: int = 1,
    **fit_kwargs,
) -> StudyResult:
    """Simulate ``reps`` datasets from ``config`` and refit each.

    Args:
        config: Simulation design with the true parameters.
        reps: Number of replications.
        R_bar: Free increments used in estimation; defaults to the true one.
        se_method: "bootstrap", "sandwich" or None to skip standard errors.
        B: Bootstrap replications per fit.
        sieve_degree: Add the formation control function of this degree
            (dyadic generator only).
        n_jobs: joblib workers across replications.
        **fit_kwargs: Passed to :func:`npl_fit`.
    """
    _check_sieve(config, sieve_degree)
    R_bar = R_bar or len(config.free_increments) + 1
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(config, r, R_bar, se_method, B, sieve_degree, fit_kwargs)
        for r in range(reps)
    )
    kept = [o for o in outcomes if o is not None]
    failures = reps - len(kept)
    if not kept:
        raise NumericalError(f"All {reps} replications failed")
    if failures:
        logger.warning(
            "%d of %d replications failed or did not converge", failures, reps
        )

    names = [
        f"x{k + 1}" for k in range(config.n_continuous)
    ] + [f"d{k + 1}" for k in range(config.n_binary)]
    gamma_names = ["intercept", *names, *(f"{c} (Coauthors)" for c in names)]
    truth = pd.Series(true_parameters(config, gamma_names))
    if R_bar != len(config.free_increments) + 1:
        truth = truth[["lambda", *gamma_names]]
    estimates = pd.DataFrame([est for est, _ in kept])
    ses = pd.DataFrame([se if se is not None else {} for _, se in kept])
    return StudyResult(
        truth=truth, estimates=estimates, standard_errors=ses, failures=failures
    )


def _replicate_pair(
    config: SimConfig, replication: int, R_bar: int, sieve_degree: int, fit_kwargs
):
    try:
        data = simulate_dataset(config, replication)
        plain = npl_fit(data.y, data.G, data.Z, R_bar, **fit_kwargs)
        sieve = npl_fit(
            data.y, data.G, _sieve_design(data, sieve_degree), R_bar, **fit_kwargs
        )
    except NumericalError as e:
        logger.info("Replication %d failed: %s", replication, e)
        return None
    if not (plain.converged and sieve.converged):
        return None
    return {
        "plain": plain.theta_hat["lambda"],
        "sieve": sieve.theta_hat["lambda"],
    }


def compare_sieve(
    config: SimConfig,
    reps: int,
    sieve_degree: int = 2,
    R_bar: int | None = None,
    n_jobs: int = 1,
    **fit_kwargs,
) -> SieveComparison:
    """Fit every replication with and without the formation control function.

    Both fits share the simulated data, so their lambda estimates are paired.
    A replication where either fit fails or does not converge is dropped and
    counted in ``failures``.
    """
    _check_sieve(config, sieve_degree)
    R_bar = R_bar or len(config.free_increments) + 1
    pairs = Parallel(n_jobs=n_jobs)(
        delayed(_replicate_pair)(config, r, R_bar, sieve_degree, fit_kwargs)
        for r in range(reps)
    )
    kept = [p for p in pairs if p is not None]
    if not kept:
        raise NumericalError(f"All {reps} paired replications failed")
    comparison = SieveComparison(
        truth=config.lam,
        estimates=pd.DataFrame(kept, columns=["plain", "sieve"]),
        failures=reps - len(kept),
    )
    logger.info(
        "Sieve closer to lambda in %.0f%% of %d pairs",
        100 * comparison.improved_share,
        len(kept),
    )
    return comparison
