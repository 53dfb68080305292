"""Result tables in the published layout: estimates with stars, SEs below."""

from __future__ import annotations

import html
import logging
import os
from collections.abc import Mapping

import numpy as np
import pandas as pd

from .errors import ValidationError
from .estimate import EstimateResult

# Optional PDF conversion
try:
    from weasyprint import HTML as WeasyHTML

    HAS_WEASYPRINT = True
except (ImportError, OSError):
    HAS_WEASYPRINT = False

logger = logging.getLogger(__name__)

BLOCKS = ("lambda", "own", "contextual", "cost")
CONTEXT_SUFFIX = " (Coauthors)"
STAR_NOTE = "*p<0.1; **p<0.05; ***p<0.01"
BLOCK_TITLES = {
    "lambda": "Peer Effect on Scholars' Number of Publications",
    "own": "Own Effects",
    "contextual": "Contextual Effects (Co-author Averages)",
    "cost": "Cost Ladder",
}


def _block_of(name: str) -> str:
    if name == "lambda":
        return "lambda"
    if name.startswith("delta_") or name in ("delta_bar", "rho"):
        return "cost"
    if name.endswith(CONTEXT_SUFFIX):
        return "contextual"
    return "own"


def _row_label(name: str, block: str) -> str:
    if block == "contextual":
        return name[: -len(CONTEXT_SUFFIX)]
    if block == "lambda":
        return "Peer Effect (lambda)"
    return name


def results_table(
    results: Mapping[str, EstimateResult],
    block: str,
    digits: int = 3,
    include_sieve: bool = False,
) -> pd.DataFrame:
    """One block of the results, one column per fit.

    Each parameter takes two rows: the estimate with significance stars and
    the standard error in parentheses. Parameters absent from a fit are
    left blank. The lambda block closes with sample size, pseudo
    log-likelihood and R_bar.

    Args:
        results: Fits keyed by column heading, in display order.
        block: "lambda", "own", "contextual" or "cost".
        digits: Decimal places.
        include_sieve: Also list the control-function coefficients.
    """
    if block not in BLOCKS:
        raise ValidationError(f"Unknown table block {block!r}")
    names: list[str] = []
    for result in results.values():
        for name in result.layout.natural_names:
            if _block_of(name) != block or name in names:
                continue
            if name.startswith("Sieve:") and not include_sieve:
                continue
            names.append(name)

    summaries = [result.summary() for result in results.values()]
    labels: list[str] = []
    body: list[list[str]] = []
    for name in names:
        estimates, errors = [], []
        for summary in summaries:
            if name not in summary.index:
                estimates.append("")
                errors.append("")
                continue
            row = summary.loc[name]
            estimates.append(f"{row['estimate']:.{digits}f}{row['stars']}")
            errors.append("" if np.isnan(row["se"]) else f"({row['se']:.{digits}f})")
        labels += [_row_label(name, block), ""]
        body += [estimates, errors]
    if block == "lambda":
        body.append([str(len(r.beliefs)) for r in results.values()])
        body.append([f"{r.loglik:.{digits}f}" for r in results.values()])
        body.append([str(r.R_bar) for r in results.values()])
        labels += ["Observations", "Pseudo Log-Likelihood", "R_bar"]
    return pd.DataFrame(body, index=labels, columns=list(results), dtype=object)


def all_tables(
    results: Mapping[str, EstimateResult], digits: int = 3
) -> dict[str, pd.DataFrame]:
    """Every block keyed by its title."""
    return {
        BLOCK_TITLES[block]: results_table(results, block, digits) for block in BLOCKS
    }


def render_text(tables: Mapping[str, pd.DataFrame]) -> str:
    """Plain-text rendering with the significance note."""
    parts = []
    for title, table in tables.items():
        parts.append(title)
        parts.append("=" * len(title))
        parts.append(table.to_string() if len(table) else "(no parameters)")
        parts.append("")
    parts.append(f"Note: {STAR_NOTE}")
    return "\n".join(parts) + "\n"


def render_html(tables: Mapping[str, pd.DataFrame], title: str = "Results") -> str:
    """Standalone HTML page with one table per block."""
    sections = [
        f"<h2>{html.escape(name)}</h2>\n{table.to_html(border=0)}"
        for name, table in tables.items()
    ]
    return (
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html.escape(title)}</title>\n"
        "<style>body{font-family:serif} td,th{padding:2px 10px;text-align:right}"
        "</style>\n</head>\n<body>\n"
        f"<h1>{html.escape(title)}</h1>\n"
        + "\n".join(sections)
        + f"\n<p><em>Note: {html.escape(STAR_NOTE)}</em></p>\n</body>\n</html>\n"
    )


def write_pdf(html_text: str, path: str | os.PathLike) -> None:
    """Render an HTML report to PDF.

    Raises:
        ImportError: If weasyprint is not installed.
    """
    if not HAS_WEASYPRINT:
        raise ImportError(
            "weasyprint is required for PDF reports. "
            "Install with: pip install peercount[pdf]"
        )
    WeasyHTML(string=html_text).write_pdf(str(path))
    logger.info("Wrote PDF report to %s", path)
