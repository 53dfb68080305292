"""Shared test fixtures and constants."""

import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from peercount.datafiles import write_network
from peercount.estimate import EstimateResult, ParamLayout
from peercount.game import CostLadder
from peercount.netbuild import row_normalize
from peercount.simulate import SimConfig, simulate_dataset

PUBLICATIONS_CSV = """paper_id,year,author_ids,covid_topic_prob
p1,2018,a;b,
p2,2019,a;b,
p3,2019,a;b;c,0.2
p4,2018,c;d,
p5,2016,a,
p6,2017,e,
p7,2019,a;x,0.9
p8,2015,a;b,
"""

SCHOLARS_CSV = (
    "scholar_id,female,african_american,first_pub_year,citations_by_year,"
    "fields,department_id,ranking_bucket\n"
    """a,0,0,1990,2015:900;2018:2500,labor;metrics,d1,Top10
b,1,0,2005,2018:120,labor,d1,Top10
c,0,1,2012,,theory,d2,11-20
d,1,0,2015,2017:40,macro,d2,11-20
e,0,0,2000,2018:6000,health;labor,d3,21-30
f,1,1,2016,,,d3,21-30
"""
)

RUN_TOML = """seed = 3
output_dir = "out"

[data]
publications = "publications.csv"
scholars = "scholars.csv"

[network]
min_joint_papers = 1
window_years = 4

[[periods]]
label = "Before Covid"
start = 2018
end = 2019

[[periods]]
label = "Covid"
start = 2020
end = 2021
covid_index = true
network_years = 2

[estimation]
r_bar = 2
se_method = "sandwich"
"""

SIM_TOML = """n = 300
lam = 0.1
gamma = [0.5, 0.3, -0.2, 0.2, 0.1]
free_increments = [0.5]
delta_bar = 0.4
rho = 1.0
seed = 7

[network]
kind = "erdos_renyi"
mean_degree = 5.0
"""


@pytest.fixture
def ladder():
    """R_bar = 2 ladder with cut points 0, 0.6, 1.5, 2.8, 4.5, ..."""
    return CostLadder(lam=0.1, free_increments=(0.6,), delta_bar=0.4, rho=1.0)


@pytest.fixture
def ring():
    """Six agents on a cycle, each with two peers of weight 1/2."""
    n = 6
    rows = np.arange(n)
    W = sparse.coo_matrix(
        (np.ones(2 * n), (np.r_[rows, rows], np.r_[(rows + 1) % n, (rows - 1) % n])),
        shape=(n, n),
    )
    return row_normalize(W, [f"s{i}" for i in range(n)])


@pytest.fixture
def sample_files(tmp_path):
    """Publication and scholar CSVs for six scholars (a-f)."""
    pubs = tmp_path / "publications.csv"
    scholars = tmp_path / "scholars.csv"
    pubs.write_text(PUBLICATIONS_CSV)
    scholars.write_text(SCHOLARS_CSV)
    return pubs, scholars


PANEL_SIZE = 300


@pytest.fixture(scope="session")
def panel_files(tmp_path_factory):
    """Publications, scholars and co-author adjacency for PANEL_SIZE scholars.

    Joint papers link about 4.5 co-authors per scholar between 2016 and 2021;
    every scholar also writes solo papers from 2013 on.
    """
    rng = np.random.default_rng(11)
    ids = [f"s{k:03d}" for k in range(PANEL_SIZE)]
    fields = ("theory", "macro", "labor", "metrics")
    scholars = pd.DataFrame(
        {
            "scholar_id": ids,
            "female": (rng.random(PANEL_SIZE) < 0.4).astype(int),
            "african_american": (rng.random(PANEL_SIZE) < 0.2).astype(int),
            "first_pub_year": rng.choice([1994, 2003], PANEL_SIZE)
            + rng.integers(0, 5, PANEL_SIZE),
            "citations_by_year": [
                f"2015:{c};2020:{2 * c}"
                for c in rng.choice([150, 800], PANEL_SIZE)
                + rng.integers(0, 50, PANEL_SIZE)
            ],
            "fields": [
                ";".join(rng.choice(fields, rng.integers(1, 3), replace=False))
                for _ in ids
            ],
            "department_id": [f"d{k % 6}" for k in range(PANEL_SIZE)],
            "ranking_bucket": rng.choice(["Top10", "11-20"], PANEL_SIZE),
        }
    )

    papers = []
    for sid in ids:
        for year in range(2013, 2022):
            papers += [([sid], year)] * rng.poisson(1.2)
    upper = sparse.triu(
        sparse.random(PANEL_SIZE, PANEL_SIZE, density=0.015, random_state=rng),
        k=1,
    ).tocoo()
    for i, j in zip(upper.row, upper.col):
        years = rng.integers(2016, 2022, 2)
        papers += [([ids[i], ids[j]], int(year)) for year in years]
    pubs = pd.DataFrame(
        {
            "paper_id": [f"p{k}" for k in range(len(papers))],
            "year": [year for _, year in papers],
            "author_ids": [";".join(authors) for authors, _ in papers],
            "covid_topic_prob": [
                round(float(rng.random()), 2) if year >= 2020 else None
                for _, year in papers
            ],
        }
    )

    root = tmp_path_factory.mktemp("panel")
    pubs.to_csv(root / "publications.csv", index=False)
    scholars.to_csv(root / "scholars.csv", index=False)
    W = sparse.coo_matrix(
        (np.ones(upper.nnz), (upper.row, upper.col)), shape=upper.shape
    )
    write_network(root / "adjacency.txt", W + W.T)
    return root / "publications.csv", root / "scholars.csv", root / "adjacency.txt"


@pytest.fixture(scope="session")
def sim_config():
    """Erdos-Renyi design with 300 agents and R_bar = 2."""
    return SimConfig(n=300, seed=7)


@pytest.fixture(scope="session")
def sim_data(sim_config):
    """One replication of ``sim_config``."""
    return simulate_dataset(sim_config, 0)


def make_result(names, R_bar=1, theta=None, se=None, n=10, converged=True):
    """EstimateResult built by hand, without running NPL.

    ``se`` gives natural-scale standard errors and fills a diagonal
    covariance.
    """
    layout = ParamLayout(tuple(names), R_bar)
    theta = np.zeros(layout.size) if theta is None else np.asarray(theta, float)
    covariance = None
    if se is not None:
        covariance = pd.DataFrame(
            np.diag(np.asarray(se, float) ** 2),
            index=layout.natural_names,
            columns=layout.natural_names,
        )
    return EstimateResult(
        layout=layout,
        theta=theta,
        beliefs=np.zeros(n),
        converged=converged,
        npl_iterations=3,
        loglik=-1.25,
        trace=pd.DataFrame(
            {
                "iteration": [1, 2, 3],
                "loglik": [-1.3, -1.26, -1.25],
                "d_theta": [1.0, 1e-2, 1e-5],
                "d_beliefs": [1.0, 1e-2, 1e-5],
                "lambda": [0.2, 0.3, 0.3],
            }
        ),
        covariance=covariance,
        se_method="bootstrap" if se is not None else None,
    )


def panel_toml(panel_files, sieve_degree=1, se_method="none"):
    """RUN_TOML pointed at ``panel_files``, writing next to the config."""
    pubs, scholars, _ = panel_files
    return (
        RUN_TOML.replace('"publications.csv"', f'"{pubs.as_posix()}"')
        .replace('"scholars.csv"', f'"{scholars.as_posix()}"')
        .replace('se_method = "sandwich"', f'se_method = "{se_method}"\nbootstrap = 2')
        + f"\n[formation]\nsieve_degree = {sieve_degree}\n"
    )
