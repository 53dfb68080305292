"""Co-authorship networks and scholar covariates from publication records."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from itertools import combinations

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse

from .errors import ValidationError

logger = logging.getLogger(__name__)

RANKING_BUCKETS = ("Top10", "11-20", "21-30", "31-40", "41-50")
DEFAULT_FIELDS = (
    "theory",
    "macro",
    "labor",
    "metrics",
    "io",
    "development",
    "health",
    "finance",
)
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class PublicationRecord:
    """One paper as listed on a scholar page."""

    paper_id: str
    year: int
    author_ids: frozenset[str]
    covid_topic_prob: float | None = None

    def __post_init__(self):
        if not self.author_ids:
            raise ValidationError(f"Paper {self.paper_id} has no authors")
        if self.covid_topic_prob is not None and not (
            0.0 <= self.covid_topic_prob <= 1.0
        ):
            raise ValidationError(
                f"Paper {self.paper_id}: covid_topic_prob "
                f"{self.covid_topic_prob} outside [0, 1]"
            )


@dataclass(frozen=True)
class ScholarProfile:
    """Static characteristics of one faculty member."""

    scholar_id: str
    female: bool
    african_american: bool
    first_pub_year: int
    citations_by_year: Mapping[int, int] = field(default_factory=dict)
    fields: frozenset[str] = frozenset()
    department_id: str = ""
    ranking_bucket: str = "Top10"

    def __post_init__(self):
        if self.ranking_bucket not in RANKING_BUCKETS:
            raise ValidationError(
                f"Scholar {self.scholar_id}: unknown ranking_bucket "
                f"{self.ranking_bucket!r}"
            )
        counts = [self.citations_by_year[y] for y in sorted(self.citations_by_year)]
        if any(b < a for a, b in zip(counts, counts[1:])):
            raise ValidationError(
                f"Scholar {self.scholar_id}: citations_by_year must be "
                "non-decreasing"
            )

    def experience(self, year: int) -> int:
        """Years in academia measured at ``year``."""
        return year - self.first_pub_year

    def citations_at(self, year: int) -> int:
        """Cumulative citations up to and including ``year``."""
        known = [y for y in self.citations_by_year if y <= year]
        return int(self.citations_by_year[max(known)]) if known else 0


@dataclass(frozen=True)
class PeriodSpec:
    """An outcome period and the windows derived from it.

    Attributes:
        start_year: First year of the period (inclusive).
        end_year: Last year of the period (inclusive).
        lookback_years: Years before ``start_year`` used for recent
            productivity.
        network_years: Length of the co-authorship window, counted back
            from ``end_year``. ``None`` uses the period itself.
    """

    start_year: int
    end_year: int
    lookback_years: int = 3
    network_years: int | None = None

    def __post_init__(self):
        if self.start_year > self.end_year:
            raise ValidationError(
                f"Period start {self.start_year} is after end {self.end_year}"
            )
        if self.lookback_years < 1:
            raise ValidationError("lookback_years must be at least 1")
        if self.network_years is not None and self.network_years < 1:
            raise ValidationError("network_years must be at least 1")

    @property
    def label(self) -> str:
        return f"{self.start_year}-{self.end_year}"

    def contains(self, year: int) -> bool:
        return self.start_year <= year <= self.end_year

    def network_window(self) -> PeriodSpec:
        """The period over which co-authorship links are counted."""
        if self.network_years is None:
            return self
        return PeriodSpec(self.end_year - self.network_years + 1, self.end_year)

    def lookback_window(self) -> tuple[int, int]:
        return self.start_year - self.lookback_years, self.start_year - 1


@dataclass(frozen=True)
class InteractionNetwork:
    """Row-stochastic, zero-diagonal peer matrix G.

    Attributes:
        matrix: ``n x n`` CSR matrix of weights g_ij.
        ids: Optional scholar ids in row order.
    """

    matrix: sparse.csr_matrix
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        g = self.matrix
        if g.shape[0] != g.shape[1]:
            raise ValidationError(f"G must be square, got {g.shape}")
        if self.ids is not None and len(self.ids) != g.shape[0]:
            raise ValidationError("ids length does not match G")
        if g.nnz and g.data.min() < 0:
            raise ValidationError("G has negative weights")
        if np.any(g.diagonal() != 0):
            raise ValidationError("G must have a zero diagonal")
        sums = self.row_sums
        bad = (sums > 0) & (np.abs(sums - 1.0) > ROW_SUM_TOL)
        if np.any(bad):
            raise ValidationError(
                f"Rows {np.flatnonzero(bad)[:10].tolist()} are not row-normalized"
            )

    @classmethod
    def empty(cls, n: int) -> InteractionNetwork:
        return cls(sparse.csr_matrix((n, n)))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def rows(self) -> list[list[tuple[int, float]]]:
        """Per-agent list of (neighbor index, weight)."""
        g = self.matrix
        return [
            list(
                zip(
                    g.indices[g.indptr[i] : g.indptr[i + 1]].tolist(),
                    g.data[g.indptr[i] : g.indptr[i + 1]].tolist(),
                )
            )
            for i in range(self.n)
        ]

    @property
    def is_isolated(self) -> np.ndarray:
        return self.row_sums == 0

    @property
    def norm_inf(self) -> float:
        """Maximum absolute row sum."""
        if self.n == 0:
            return 0.0
        return float(np.asarray(abs(self.matrix).sum(axis=1)).max())

    def peer_mean(self, x: np.ndarray) -> np.ndarray:
        """Return G @ x, the average of x over each agent's peers."""
        return np.asarray(self.matrix @ x)

    def permute(self, order: Sequence[int]) -> InteractionNetwork:
        """Relabel agents so that new agent k is old agent ``order[k]``."""
        order = np.asarray(order)
        ids = tuple(self.ids[i] for i in order) if self.ids is not None else None
        return InteractionNetwork(self.matrix[order][:, order].tocsr(), ids)


@dataclass(frozen=True)
class BucketSpec:
    """Right-open bucket edges; the first bucket is the omitted reference."""

    edges: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.labels):
            raise ValidationError("Each bucket edge needs exactly one label")
        if list(self.edges) != sorted(set(self.edges)):
            raise ValidationError("Bucket edges must be strictly increasing")

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Bucket index of each value; values below the first edge go to 0."""
        idx = np.searchsorted(np.asarray(self.edges), values, side="right") - 1
        return np.clip(idx, 0, len(self.edges) - 1)


def _default_buckets() -> dict[str, BucketSpec]:
    return {
        "productivity": BucketSpec(
            (0, 2, 5, 10),
            (
                "0-1 Publications Per Year",
                "2-4 Publications Per Year",
                "5-9 Publications Per Year",
                "10+ Publications Per Year",
            ),
        ),
        "citations": BucketSpec(
            (0, 100, 500, 2000, 5000, 10000, 20000),
            (
                "0-99 Citations",
                "100-499 Citations",
                "500-1,999 Citations",
                "2,000-4,999 Citations",
                "5,000-9,999 Citations",
                "10,000-19,999 Citations",
                "20,000+ Citations",
            ),
        ),
        "experience": BucketSpec(
            (0, 10, 20, 30, 40, 50, 60),
            (
                "Experience 0-10 Years",
                "Experience 10-20 Years",
                "Experience 20-30 Years",
                "Experience 30-40 Years",
                "Experience 40-50 Years",
                "Experience 50-60 Years",
                "Experience 60+ Years",
            ),
        ),
    }


@dataclass(frozen=True)
class BucketConfig:
    """Discretization of productivity, citations and experience."""

    productivity: BucketSpec = field(
        default_factory=lambda: _default_buckets()["productivity"]
    )
    citations: BucketSpec = field(
        default_factory=lambda: _default_buckets()["citations"]
    )
    experience: BucketSpec = field(
        default_factory=lambda: _default_buckets()["experience"]
    )
    fields: tuple[str, ...] = DEFAULT_FIELDS

    @classmethod
    def from_mapping(cls, data: Mapping) -> BucketConfig:
        """Build from a config table, rejecting unknown bucket names."""
        known = {"productivity", "citations", "experience", "fields"}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(
                f"Unknown bucket name(s) in buckets: {', '.join(sorted(unknown))}"
            )
        kwargs: dict = {}
        for name in ("productivity", "citations", "experience"):
            if name in data:
                spec = data[name]
                kwargs[name] = BucketSpec(
                    tuple(spec["edges"]), tuple(str(x) for x in spec["labels"])
                )
        if "fields" in data:
            kwargs["fields"] = tuple(data["fields"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Covariates:
    """Own characteristics X and the design matrix Z = [X GX]."""

    X: pd.DataFrame
    Z: pd.DataFrame


def roster_index(profiles: Iterable[ScholarProfile]) -> dict[str, int]:
    """Map scholar ids to 0-based row indices in roster order."""
    index: dict[str, int] = {}
    for p in profiles:
        if p.scholar_id in index:
            raise ValidationError(f"Duplicate scholar id {p.scholar_id}")
        index[p.scholar_id] = len(index)
    return index


def filter_to_roster(
    records: Iterable[PublicationRecord], roster: Iterable[str]
) -> list[PublicationRecord]:
    """Drop co-authors outside the roster, and papers left with no author."""
    members = set(roster)
    kept = []
    for rec in records:
        authors = rec.author_ids & members
        if authors:
            kept.append(
                PublicationRecord(rec.paper_id, rec.year, authors, rec.covid_topic_prob)
            )
    return kept


def _unique_papers(
    records: Iterable[PublicationRecord],
) -> dict[str, PublicationRecord]:
    papers: dict[str, PublicationRecord] = {}
    for rec in records:
        papers.setdefault(rec.paper_id, rec)
    return papers


def build_adjacency(
    records: Iterable[PublicationRecord],
    period: PeriodSpec,
    min_joint_papers: int,
    roster: Sequence[str],
) -> sparse.csr_matrix:
    """Binary symmetric co-authorship adjacency W.

    Args:
        records: Publication records restricted to roster scholars.
        period: Window in which papers count.
        min_joint_papers: Distinct joint papers required for a link.
        roster: Scholar ids in row order.

    Returns:
        ``n x n`` CSR matrix with w_ij = 1 iff i and j co-appear on at least
        ``min_joint_papers`` distinct papers dated inside ``period``.

    Raises:
        ValidationError: If ``min_joint_papers < 1`` or a record lists a
            scholar not in the roster.
    """
    if min_joint_papers < 1:
        raise ValidationError("min_joint_papers must be at least 1")
    index = {sid: k for k, sid in enumerate(roster)}
    n = len(index)
    pair_counts: Counter[tuple[int, int]] = Counter()
    for rec in _unique_papers(records).values():
        unknown = sorted(rec.author_ids - index.keys())
        if unknown:
            raise ValidationError(
                f"Paper {rec.paper_id} lists unknown scholar id(s): "
                f"{', '.join(unknown)}"
            )
        if not period.contains(rec.year):
            continue
        authors = sorted(index[a] for a in rec.author_ids)
        pair_counts.update(combinations(authors, 2))

    pairs = [pair for pair, count in pair_counts.items() if count >= min_joint_papers]
    if not pairs:
        return sparse.csr_matrix((n, n))
    i, j = np.array(pairs).T
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    W = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    logger.info(
        "Built adjacency for %s: %d scholars, %d links", period.label, n, len(pairs)
    )
    return W


def row_normalize(W, ids: Sequence[str] | None = None) -> InteractionNetwork:
    """Divide each row with positive sum by its sum; zero rows stay zero."""
    W = sparse.csr_matrix(W, dtype=float)
    if W.nnz and W.data.min() < 0:
        raise ValidationError("W must be non-negative")
    if np.any(W.diagonal() != 0):
        raise ValidationError("W must have a zero diagonal")
    sums = np.asarray(W.sum(axis=1)).ravel()
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    G = sparse.diags(inv) @ W
    G = sparse.csr_matrix(G)
    G.eliminate_zeros()
    return InteractionNetwork(G, tuple(ids) if ids is not None else None)


def _papers_by_scholar(
    records: Iterable[PublicationRecord],
) -> dict[str, list[PublicationRecord]]:
    by_scholar: dict[str, list[PublicationRecord]] = {}
    for rec in _unique_papers(records).values():
        for author in rec.author_ids:
            by_scholar.setdefault(author, []).append(rec)
    return by_scholar


def covid_index(
    records: Iterable[PublicationRecord],
    scholar_id: str,
    window: tuple[int, int] = (2019, 2021),
    threshold: float = 0.5,
) -> float:
    """Share of a scholar's papers in ``window`` that are Covid-related.

    A paper is Covid-related when its topic probability exceeds
    ``threshold``. Scholars without papers in the window get 0.
    """
    papers = _papers_by_scholar(records).get(scholar_id, [])
    return _covid_share(papers, window, threshold)


def _covid_share(
    papers: Sequence[PublicationRecord], window: tuple[int, int], threshold: float
) -> float:
    lo, hi = window
    papers = [r for r in papers if lo <= r.year <= hi]
    if not papers:
        return 0.0
    covid = sum(
        1
        for r in papers
        if r.covid_topic_prob is not None and r.covid_topic_prob > threshold
    )
    return covid / len(papers)


def count_outcomes(
    records: Iterable[PublicationRecord],
    roster: Sequence[str],
    period: PeriodSpec,
) -> np.ndarray:
    """Number of distinct papers per scholar dated inside ``period``."""
    index = {sid: k for k, sid in enumerate(roster)}
    y = np.zeros(len(index), dtype=int)
    for rec in _unique_papers(records).values():
        if not period.contains(rec.year):
            continue
        for author in rec.author_ids:
            if author in index:
                y[index[author]] += 1
    return y


def _dummies(assignment: np.ndarray, spec: BucketSpec) -> pd.DataFrame:
    columns = {
        label: (assignment == k).astype(float)
        for k, label in enumerate(spec.labels)
        if k > 0
    }
    return pd.DataFrame(columns)


def build_covariates(
    profiles: Sequence[ScholarProfile],
    records: Iterable[PublicationRecord],
    period: PeriodSpec,
    buckets: BucketConfig,
    network: InteractionNetwork,
    include_covid_index: bool = False,
    covid_window: tuple[int, int] = (2019, 2021),
    covid_threshold: float = 0.5,
) -> Covariates:
    """Own characteristics X and the design Z = [X GX].

    X holds an intercept, bucket dummies (reference buckets omitted),
    female, African American, sub-field dummies and optionally the Covid
    index. Row i of GX is the average of X over i's co-authors, so the
    peer intercept marks scholars with co-authors; isolated scholars get a
    zero row.

    Raises:
        ValidationError: If a record author has no profile, or the network
            size differs from the roster.
    """
    ids = [p.scholar_id for p in profiles]
    if network.n != len(ids):
        raise ValidationError(
            f"Network has {network.n} agents but {len(ids)} profiles were given"
        )
    records = list(records)
    by_scholar = _papers_by_scholar(records)
    missing = sorted(set(by_scholar) - set(ids))
    if missing:
        raise ValidationError(
            f"No profile for scholar id(s): {', '.join(missing[:20])}"
        )

    lo, hi = period.lookback_window()
    span = hi - lo + 1
    productivity = np.array(
        [
            sum(1 for r in by_scholar.get(sid, []) if lo <= r.year <= hi) / span
            for sid in ids
        ]
    )
    citations = np.array([p.citations_at(period.start_year) for p in profiles])
    experience = np.array([p.experience(period.start_year) for p in profiles])

    parts = [
        pd.DataFrame({"intercept": np.ones(len(ids))}),
        _dummies(buckets.productivity.assign(productivity), buckets.productivity),
        _dummies(buckets.citations.assign(citations), buckets.citations),
        _dummies(buckets.experience.assign(experience), buckets.experience),
        pd.DataFrame(
            {
                "African American": [float(p.african_american) for p in profiles],
                "Female": [float(p.female) for p in profiles],
            }
        ),
        pd.DataFrame(
            {
                f"Field: {name}": [float(name in p.fields) for p in profiles]
                for name in buckets.fields
            }
        ),
    ]
    if include_covid_index:
        parts.append(
            pd.DataFrame(
                {
                    "Covid Index": [
                        _covid_share(
                            by_scholar.get(sid, []), covid_window, covid_threshold
                        )
                        for sid in ids
                    ]
                }
            )
        )
    X = pd.concat(parts, axis=1)
    X.index = pd.Index(ids, name="scholar_id")
    return Covariates(X=X, Z=assemble_design(X, network))


def assemble_design(
    X: pd.DataFrame,
    network: InteractionNetwork,
    controls: pd.DataFrame | None = None,
    controls_in_context: bool = False,
    exclude_context: Sequence[str] = (),
) -> pd.DataFrame:
    """Z = [X C | G X (G C)], contextual columns suffixed " (Coauthors)".

    Args:
        X: Own characteristics, one row per agent.
        network: Interaction network in the same row order.
        controls: Extra own-effect columns (e.g. sieve terms).
        controls_in_context: Also average ``controls`` over peers.
        exclude_context: Columns left out of the contextual block, typically
            a constant.
    """
    own = X if controls is None else pd.concat([X, controls.set_axis(X.index)], axis=1)
    contextual_src = own if controls_in_context else X
    contextual_src = contextual_src.drop(columns=list(exclude_context))
    GX = pd.DataFrame(
        network.peer_mean(contextual_src.to_numpy(dtype=float)),
        index=X.index,
        columns=[f"{c} (Coauthors)" for c in contextual_src.columns],
    )
    return pd.concat([own, GX], axis=1)


def network_summary(W) -> dict[str, float]:
    """Size, density, degree and clustering of an undirected network."""
    graph = nx.from_scipy_sparse_array(sparse.csr_matrix(W))
    n = graph.number_of_nodes()
    degrees = np.array([d for _, d in graph.degree()]) if n else np.zeros(0)
    return {
        "nodes": n,
        "edges": graph.number_of_edges(),
        "density": nx.density(graph) if n > 1 else 0.0,
        "mean_degree": float(degrees.mean()) if n else 0.0,
        "isolated": int((degrees == 0).sum()),
        "components": nx.number_connected_components(graph) if n else 0,
        "clustering": nx.average_clustering(graph) if n else 0.0,
    }


def yearly_summary(
    records: Iterable[PublicationRecord], roster: Sequence[str]
) -> pd.DataFrame:
    """Average publications and edge density of each yearly network.

    A yearly link requires one joint paper that year.
    """
    records = filter_to_roster(records, roster)
    years = sorted({r.year for r in records})
    rows = []
    for year in years:
        period = PeriodSpec(year, year)
        W = build_adjacency(records, period, 1, roster)
        stats = network_summary(W)
        rows.append(
            {
                "year": year,
                "avg_publications": count_outcomes(records, roster, period).mean(),
                "edge_density": stats["density"],
                "mean_degree": stats["mean_degree"],
            }
        )
    return pd.DataFrame(
        rows, columns=["year", "avg_publications", "edge_density", "mean_degree"]
    )


def scholar_summary(
    profiles: Sequence[ScholarProfile],
    records: Iterable[PublicationRecord],
    reference_year: int,
    years: Sequence[int] = (),
) -> pd.DataFrame:
    """Mean, sd, min, median and max of the roster characteristics."""
    ids = [p.scholar_id for p in profiles]
    data = {
        "Years in Academia": [p.experience(reference_year) for p in profiles],
        "African American": [int(p.african_american) for p in profiles],
        "Female": [int(p.female) for p in profiles],
    }
    records = filter_to_roster(records, ids)
    for year in years:
        data[f"Number of Publications in {year}"] = count_outcomes(
            records, ids, PeriodSpec(year, year)
        )
    frame = pd.DataFrame(data)
    return pd.DataFrame(
        {
            "Mean": frame.mean(),
            "St. Dev.": frame.std(),
            "Min": frame.min(),
            "Median": frame.median(),
            "Max": frame.max(),
        }
    )
