"""End-to-end run: records to networks, formation, NPL fits and tables."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

import pandas as pd

from .config import PeriodConfig, RunConfig
from .datafiles import read_publications, read_scholars, write_json
from .errors import PeercountError
from .estimate import EstimateResult, npl_fit, select_R_bar, standard_errors
from .formation import dyad_covariates, fit_dyadic_logit, sieve_terms
from .netbuild import (
    PublicationRecord,
    ScholarProfile,
    assemble_design,
    build_adjacency,
    build_covariates,
    count_outcomes,
    filter_to_roster,
    network_summary,
    row_normalize,
)
from .report import all_tables, render_html, render_text, write_pdf

logger = logging.getLogger(__name__)

COVID_SUFFIX = " + Covid Index"


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")


def _package_version() -> str:
    try:
        return version("peercount")
    except PackageNotFoundError:
        return "unknown"


@dataclass
class ReportBundle:
    """Results of a run.

    Attributes:
        results: Converged or not, one fit per table column.
        failures: Error message per column that could not be fitted.
        networks: Network summary statistics per period.
        tables: Result tables keyed by title.
        manifest: Settings, defaults and diagnostics of the run.
    """

    results: dict[str, EstimateResult] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    networks: dict[str, dict[str, float]] = field(default_factory=dict)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    manifest: dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: str | os.PathLike, pdf: bool = False) -> Path:
        """Write results/<column>.json, tables/ and manifest.json."""
        out = Path(out_dir)
        (out / "results").mkdir(parents=True, exist_ok=True)
        (out / "tables").mkdir(parents=True, exist_ok=True)
        for label, result in self.results.items():
            write_json(out / "results" / f"{_slug(label)}.json", result.to_dict())
        for title, table in self.tables.items():
            table.to_csv(out / "tables" / f"{_slug(title)}.csv")
        text = render_text(self.tables)
        (out / "tables" / "results.txt").write_text(text)
        page = render_html(self.tables, title="Peer Effects on Publications")
        (out / "tables" / "results.html").write_text(page)
        if pdf:
            write_pdf(page, out / "tables" / "results.pdf")
        write_json(out / "manifest.json", self.manifest)
        return out


def _fit_design(
    config: RunConfig,
    label: str,
    y,
    G,
    Z: pd.DataFrame,
) -> EstimateResult:
    est = config.estimation
    fit_kwargs = est.fit_kwargs()
    if est.r_bar == "auto":
        R_bar = select_R_bar(
            y,
            G,
            Z,
            start=est.r_bar_start,
            stability_tol=est.stability_tol,
            **fit_kwargs,
        )
        logger.info("%s: selected R_bar = %d", label, R_bar)
    else:
        R_bar = int(est.r_bar)
    result = npl_fit(y, G, Z, R_bar, **fit_kwargs)
    if not result.converged:
        logger.warning("%s: NPL did not converge; no standard errors", label)
    elif est.se_method != "none":
        standard_errors(
            result,
            y,
            G,
            Z,
            method=est.se_method,
            B=est.bootstrap,
            seed=config.seed,
            n_jobs=est.n_jobs,
        )
    return result


def run_period(
    config: RunConfig,
    entry: PeriodConfig,
    profiles: list[ScholarProfile],
    records: list[PublicationRecord],
) -> tuple[dict[str, EstimateResult], dict[str, float]]:
    """Fit one period; with ``covid_index`` a second fit adds the index."""
    ids = [p.scholar_id for p in profiles]
    period = entry.period
    W = build_adjacency(records, period.network_window(), config.min_joint_papers, ids)
    G = row_normalize(W, ids)
    y = count_outcomes(records, ids, period)
    summary = network_summary(W)
    logger.info(
        "%s: %d scholars, %d links, mean outcome %.2f",
        entry.label,
        G.n,
        summary["edges"],
        y.mean(),
    )

    controls = None
    if config.sieve_degree > 0:
        frame = dyad_covariates(profiles, records, period, W)
        formation = fit_dyadic_logit(frame, tol=config.formation_tol, compute_se=False)
        controls = sieve_terms(formation, G, degree=config.sieve_degree)

    variants = [(entry.label, False)]
    if entry.covid_index:
        variants.append((entry.label + COVID_SUFFIX, True))
    results = {}
    for label, with_covid in variants:
        covariates = build_covariates(
            profiles,
            records,
            period,
            config.buckets,
            G,
            include_covid_index=with_covid,
            covid_window=config.covid_window,
            covid_threshold=config.covid_threshold,
        )
        Z = assemble_design(covariates.X, G, controls=controls)
        results[label] = _fit_design(config, label, y, G, Z)
    return results, summary


def run_pipeline(config: RunConfig) -> ReportBundle:
    """Run every configured period and assemble the tables.

    A failing period is recorded in ``failures`` and the others continue;
    unreadable inputs abort the run.
    """
    profiles = read_scholars(config.scholars)
    ids = [p.scholar_id for p in profiles]
    records = filter_to_roster(
        read_publications(config.publications, config.year_range), ids
    )
    logger.info("Loaded %d scholars and %d papers", len(profiles), len(records))

    bundle = ReportBundle()
    for entry in config.periods:
        try:
            results, summary = run_period(config, entry, profiles, records)
        except PeercountError as e:
            logger.error("Period %s failed: %s", entry.label, e)
            bundle.failures[entry.label] = f"{type(e).__name__}: {e}"
            continue
        bundle.results.update(results)
        bundle.networks[entry.label] = summary

    if bundle.results:
        bundle.tables = all_tables(bundle.results)
    bundle.manifest = {
        "version": _package_version(),
        "config": config.manifest(),
        "columns": list(bundle.results),
        "converged": {k: r.converged for k, r in bundle.results.items()},
        "failures": bundle.failures,
        "networks": bundle.networks,
    }
    return bundle
