"""peercount CLI."""

import functools
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd
from scipy import sparse

from .config import load_run_config, load_sim_config
from .datafiles import (
    read_frame,
    read_matrix,
    read_network,
    read_outcomes,
    read_publications,
    read_scholars,
    write_frame,
    write_json,
    write_network,
    write_outcomes,
    write_roster,
)
from .errors import NumericalError, ValidationError
from .estimate import npl_fit, select_R_bar, standard_errors
from .formation import dyad_covariates, fit_dyadic_logit, sieve_terms
from .netbuild import (
    BucketConfig,
    PeriodSpec,
    build_adjacency,
    build_covariates,
    count_outcomes,
    filter_to_roster,
    network_summary,
    row_normalize,
)
from .report import render_text, results_table

EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def handle_errors(func):
    """Decorator that maps exceptions to an error message and exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except NumericalError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except Exception as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _parse_period(text: str) -> tuple[int, int]:
    start, sep, end = text.partition(":")
    if not sep:
        raise ValidationError(f"Period must look like START:END, got {text!r}")
    return int(start), int(end)


def _load_period_data(
    publications, scholars, period, min_joint_papers, network_years
):
    profiles = read_scholars(scholars)
    ids = [p.scholar_id for p in profiles]
    records = filter_to_roster(read_publications(publications), ids)
    start, end = _parse_period(period)
    spec = PeriodSpec(start, end, network_years=network_years)
    W = build_adjacency(records, spec.network_window(), min_joint_papers, ids)
    return profiles, records, ids, spec, W


def _read_adjacency(path, n: int) -> sparse.csr_matrix:
    W = read_matrix(path, n)
    W.data = (W.data != 0).astype(float)
    W.eliminate_zeros()
    return W


def _align_outcomes(y: pd.Series, ids: pd.Index) -> np.ndarray:
    """Outcomes in the row order of the covariates."""
    if y.index.name != "scholar_id":
        if len(y) != len(ids):
            raise ValidationError(f"{len(y)} outcomes for {len(ids)} scholars")
        return y.to_numpy()
    missing = ids.difference(y.index)
    if len(missing):
        raise ValidationError(
            f"No outcome for scholar id(s): {', '.join(missing[:20])}"
        )
    return y.loc[ids].to_numpy()


def _common_build_options(func):
    options = [
        click.option(
            "--publications",
            required=True,
            type=click.Path(exists=True),
            help="Publications CSV or JSON",
        ),
        click.option(
            "--scholars",
            required=True,
            type=click.Path(exists=True),
            help="Scholars CSV or JSON",
        ),
        click.option("--period", required=True, help="Outcome period, e.g. 2018:2019"),
        click.option(
            "--min-joint-papers",
            default=2,
            show_default=True,
            help="Joint papers required for a co-authorship link",
        ),
        click.option(
            "--network-years",
            type=int,
            default=None,
            help="Co-authorship window length ending with the period",
        ),
        click.option(
            "-o", "--out", required=True, type=click.Path(), help="Output dir"
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.version_option()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG")
def cli(verbose: int):
    """peercount - peer effects on publication counts in co-authorship networks."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_common_build_options
@click.option("--covid-index", is_flag=True, help="Add the Covid index to X")
@handle_errors
def build(
    publications,
    scholars,
    period,
    min_joint_papers,
    network_years,
    out,
    covid_index: bool,
):
    """Build G, X, Z and outcomes for one period.

    Example:
        peercount build --publications pubs.csv --scholars scholars.csv \\
            --period 2018:2019 -o build/
    """
    profiles, records, ids, spec, W = _load_period_data(
        publications, scholars, period, min_joint_papers, network_years
    )
    G = row_normalize(W, ids)
    covariates = build_covariates(
        profiles, records, spec, BucketConfig(), G, include_covid_index=covid_index
    )
    y = count_outcomes(records, ids, spec)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_network(out / "network.txt", G)
    write_network(out / "adjacency.txt", W)
    write_frame(out / "X.csv", covariates.X)
    write_frame(out / "Z.csv", covariates.Z)
    write_roster(out / "roster.csv", ids)
    write_outcomes(out / "outcomes.csv", ids, y)
    summary = network_summary(W)
    write_json(out / "network_summary.json", summary)
    click.echo(
        f"\u2713 Built {spec.label}: {G.n} scholars, {summary['edges']} links, "
        f"{int(G.is_isolated.sum())} isolated"
    )
    click.echo(f"  Output: {out}")


@cli.command()
@click.option(
    "-c", "--config", "config_path", required=True, type=click.Path(exists=True)
)
@click.option("--reps", default=1, show_default=True, help="Replications to draw")
@click.option("-o", "--out", required=True, type=click.Path(), help="Output dir")
@handle_errors
def simulate(config_path: str, reps: int, out: str):
    """Draw synthetic datasets from a TOML simulation design.

    Example:
        peercount simulate -c design.toml --reps 20 -o sims/
    """
    from .simulate import simulate_dataset, write_dataset

    config = load_sim_config(config_path)
    for rep in range(reps):
        data = simulate_dataset(config, rep)
        target = write_dataset(data, Path(out) / f"rep_{rep:03d}")
        click.echo(
            f"\u2713 Replication {rep}: mean y {data.y.mean():.3f}, "
            f"{data.network.W.nnz} links -> {target}"
        )


@cli.command()
@_common_build_options
@click.option(
    "--network",
    type=click.Path(exists=True),
    help="Adjacency coordinate list used instead of the co-authorship links",
)
@click.option("--sieve-degree", default=2, show_default=True, help="Sieve degree")
@click.option("--tol", default=1e-8, show_default=True, help="Convergence tolerance")
@handle_errors
def formation(
    publications,
    scholars,
    period,
    min_joint_papers,
    network_years,
    out,
    network,
    sieve_degree: int,
    tol: float,
):
    """Fit the dyadic link-formation logit and write the sieve terms.

    Links come from co-authorship in the period unless ``--network`` gives an
    adjacency list (e.g. adjacency.txt from ``peercount build``), indexed in
    the order of the scholars file.

    Example:
        peercount formation --publications pubs.csv --scholars scholars.csv \\
            --period 2018:2019 --sieve-degree 2 -o formation/
    """
    profiles, records, ids, spec, W = _load_period_data(
        publications, scholars, period, min_joint_papers, network_years
    )
    if network:
        W = _read_adjacency(network, len(ids))
    frame = dyad_covariates(profiles, records, spec, W)
    fit = fit_dyadic_logit(frame, tol=tol)
    G = row_normalize(W, ids)
    terms = sieve_terms(fit, G, degree=sieve_degree)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(
        out / "formation.json",
        {
            "beta": fit.beta.to_dict(),
            "se": {
                k: None if np.isnan(v) else float(v)
                for k, v in fit.beta_se.items()
            },
            "iterations": fit.iterations,
            "mu_capped": int(fit.mu_capped.sum()),
            "nu_capped": int(fit.nu_capped.sum()),
        },
    )
    effects = fit.effects()
    effects.index = pd.Index(ids, name="scholar_id")
    write_frame(out / "effects.csv", effects.astype(float))
    write_frame(out / "sieve.csv", terms)
    click.echo(f"\u2713 Dyadic logit converged in {fit.iterations} iterations")
    for name, value in fit.beta.items():
        click.echo(f"  {name}: {value:.4f}")


@cli.command()
@click.option("--network", required=True, type=click.Path(exists=True))
@click.option("--covariates", required=True, type=click.Path(exists=True), help="Z.csv")
@click.option("--outcomes", required=True, type=click.Path(exists=True))
@click.option(
    "--controls", type=click.Path(exists=True), help="Extra columns, e.g. sieve.csv"
)
@click.option("--r-bar", default="auto", show_default=True, help="Integer or 'auto'")
@click.option("--tol", default=1e-4, show_default=True, help="NPL tolerance")
@click.option("--max-outer", default=100, show_default=True)
@click.option(
    "--se-method",
    type=click.Choice(["bootstrap", "sandwich", "none"]),
    default="bootstrap",
    show_default=True,
)
@click.option("--bootstrap", "B", default=100, show_default=True, help="Replications")
@click.option("--seed", default=0, show_default=True)
@click.option("--jobs", default=1, show_default=True, help="Bootstrap workers")
@click.option("-o", "--out", required=True, type=click.Path(), help="Output dir")
@handle_errors
def fit(
    network,
    covariates,
    outcomes,
    controls,
    r_bar: str,
    tol: float,
    max_outer: int,
    se_method: str,
    B: int,
    seed: int,
    jobs: int,
    out: str,
):
    """Estimate the peer effect by nested pseudo-likelihood.

    Example:
        peercount fit --network build/network.txt --covariates build/Z.csv \\
            --outcomes build/outcomes.csv --r-bar 3 -o fit/
    """
    Z = read_frame(covariates)
    if controls:
        Z = pd.concat([Z, read_frame(controls).set_axis(Z.index)], axis=1)
    y = _align_outcomes(read_outcomes(outcomes), Z.index)
    G = read_network(network, n=len(Z), ids=tuple(Z.index))
    fit_kwargs = {"tol": tol, "max_outer": max_outer}
    if r_bar == "auto":
        R_bar = select_R_bar(y, G, Z, **fit_kwargs)
    else:
        R_bar = int(r_bar)
    result = npl_fit(y, G, Z, R_bar, **fit_kwargs)
    if result.converged and se_method != "none":
        standard_errors(
            result, y, G, Z, method=se_method, B=B, seed=seed, n_jobs=jobs
        )

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "result.json", result.to_dict())
    tables = {
        block: results_table({"Estimate": result}, block)
        for block in ("lambda", "own", "contextual", "cost")
    }
    text = render_text(tables)
    (out / "table.txt").write_text(text)
    status = "converged" if result.converged else "did NOT converge"
    click.echo(f"NPL {status} after {result.npl_iterations} iterations (R_bar={R_bar})")
    click.echo(text)
    if not result.converged:
        sys.exit(EXIT_NUMERICAL)


@cli.command()
@click.option(
    "-c", "--config", "config_path", required=True, type=click.Path(exists=True)
)
@click.option("--pdf", is_flag=True, help="Also render tables/results.pdf")
@handle_errors
def run(config_path: str, pdf: bool):
    """Run the full pipeline described by a TOML config.

    Example:
        peercount run -c run.toml
    """
    from .pipeline import run_pipeline

    config = load_run_config(config_path)
    bundle = run_pipeline(config)
    target = bundle.write(config.output_dir, pdf=pdf)
    for label, result in bundle.results.items():
        lam = result.theta_hat["lambda"]
        flag = "" if result.converged else " (not converged)"
        click.echo(f"\u2713 {label}: lambda = {lam:.3f}{flag}")
    for label, message in bundle.failures.items():
        click.echo(f"\u2717 {label}: {message}", err=True)
    click.echo(f"  Output: {target}")
    if not bundle.results:
        sys.exit(EXIT_NUMERICAL)


if __name__ == "__main__":
    cli()
