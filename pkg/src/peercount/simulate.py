"""Synthetic networks, covariates and outcomes drawn from the exact model."""

from __future__ import annotations

import logging
import math
import os
import warnings
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.stats import norm

from .datafiles import (
    write_frame,
    write_json,
    write_network,
    write_outcomes,
    write_roster,
)
from .errors import ValidationError
from .formation import DyadFrame, DyadTerm
from .game import (
    Beliefs,
    CostLadder,
    GameParams,
    cut_points,
    peer_effect_bound,
    solve_equilibrium,
    truncation_level,
)
from .netbuild import InteractionNetwork, assemble_design, row_normalize

logger = logging.getLogger(__name__)

NETWORK_KINDS = ("erdos_renyi", "dyadic")


@dataclass(frozen=True)
class NetworkSpec:
    """How the simulated co-authorship network is generated.

    ``erdos_renyi`` draws symmetric links with probability
    mean_degree / (n - 1). ``dyadic`` draws directed links from the
    two-way fixed-effect logit with intercept and slopes ``beta_bar``
    (intercept first, then one slope per own characteristic other than the
    constant) and effects mu ~ N(0, mu_sd^2), nu ~ N(0, nu_sd^2).
    """

    kind: str = "erdos_renyi"
    mean_degree: float = 5.0
    beta_bar: tuple[float, ...] = (-4.0, -0.5, 0.5)
    mu_sd: float = 1.0
    nu_sd: float = 1.0

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise ValidationError(
                f"network.kind must be one of {', '.join(NETWORK_KINDS)}, "
                f"got {self.kind!r}"
            )
        if self.mean_degree < 0:
            raise ValidationError("network.mean_degree must be non-negative")
        if self.mu_sd < 0 or self.nu_sd < 0:
            raise ValidationError("network.mu_sd and network.nu_sd must be >= 0")
        object.__setattr__(self, "beta_bar", tuple(float(b) for b in self.beta_bar))


@dataclass(frozen=True)
class SimConfig:
    """True parameters and sizes of a simulation design.

    Gamma is ordered as the columns of Z: intercept, the continuous and
    binary characteristics, then their peer averages (no peer intercept).

    With the dyadic generator, ``shock_loading`` and ``peer_shock_loading``
    add the control term h_i = (shock_loading * mu_i + peer_shock_loading *
    mu_bar_i) / mu_sd to every index, with mu_bar = G mu. Agents see h_i, the
    econometrician does not, so h_i is the shock component tied to link
    formation.
    """

    n: int = 1000
    n_continuous: int = 1
    n_binary: int = 1
    lam: float = 0.10
    gamma: tuple[float, ...] = (0.5, 0.3, -0.2, 0.2, 0.1)
    free_increments: tuple[float, ...] = (0.5,)
    delta_bar: float = 0.4
    rho: float = 1.0
    network: NetworkSpec = field(default_factory=NetworkSpec)
    shock_loading: float = 0.0
    peer_shock_loading: float = 0.0
    seed: int = 0
    allow_above_bound: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"n must be at least 2, got {self.n}")
        if self.n_continuous < 0 or self.n_binary < 0:
            raise ValidationError("Covariate counts must be non-negative")
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(
            self, "free_increments", tuple(float(d) for d in self.free_increments)
        )
        expected = 1 + 2 * (self.n_continuous + self.n_binary)
        if len(self.gamma) != expected:
            raise ValidationError(
                f"gamma has {len(self.gamma)} entries, "
                f"the design has {expected} columns"
            )
        loadings = (self.shock_loading, self.peer_shock_loading)
        if not all(math.isfinite(v) for v in loadings):
            raise ValidationError("Shock loadings must be finite")
        if any(loadings) and self.network.kind != "dyadic":
            raise ValidationError("Shock loadings need the dyadic network generator")
        if self.network.kind == "dyadic":
            slopes = len(self.network.beta_bar) - 1
            if slopes != self.n_continuous + self.n_binary:
                raise ValidationError(
                    f"network.beta_bar needs 1 + {self.n_continuous + self.n_binary} "
                    f"entries, got {len(self.network.beta_bar)}"
                )
        bound = peer_effect_bound(self.ladder)
        if self.lam >= bound:
            message = (
                f"lambda={self.lam} is not below the uniqueness bound {bound:.4g}"
            )
            if not self.allow_above_bound:
                raise ValidationError(message)
            warnings.warn(message, stacklevel=3)

    @property
    def ladder(self) -> CostLadder:
        return CostLadder(self.lam, self.free_increments, self.delta_bar, self.rho)

    @property
    def params(self) -> GameParams:
        return GameParams(self.ladder, np.array(self.gamma))

    @property
    def own_columns(self) -> list[str]:
        return (
            ["intercept"]
            + [f"x{k + 1}" for k in range(self.n_continuous)]
            + [f"d{k + 1}" for k in range(self.n_binary)]
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> SimConfig:
        """Build from a parsed TOML table, rejecting unknown keys."""
        data = dict(data)
        allowed = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValidationError(f"Unknown simulation key(s): {', '.join(unknown)}")
        network = data.pop("network", {})
        net_unknown = sorted(set(network) - set(NetworkSpec.__dataclass_fields__))
        if net_unknown:
            raise ValidationError(
                "Unknown network key(s): "
                + ", ".join("network." + k for k in net_unknown)
            )
        return cls(network=NetworkSpec(**network), **data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class NetworkDraw:
    """A simulated network with the latent formation data behind it."""

    W: sparse.csr_matrix
    G: InteractionNetwork
    frame: DyadFrame | None = None
    mu: np.ndarray | None = None
    nu: np.ndarray | None = None


@dataclass
class SimulatedData:
    """One replication of a simulation design."""

    config: SimConfig
    replication: int
    ids: tuple[str, ...]
    X: pd.DataFrame
    Z: pd.DataFrame
    network: NetworkDraw
    y: np.ndarray
    beliefs: Beliefs
    shocks: np.ndarray
    control: np.ndarray

    @property
    def G(self) -> InteractionNetwork:
        return self.network.G


def replication_seeds(seed, reps: int) -> list[np.random.SeedSequence]:
    """Independent child seeds, one per replication."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(reps)


def simulate_covariates(config: SimConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Own characteristics: intercept, N(0, 1) and Bernoulli(0.5) columns."""
    n = config.n
    columns = [np.ones(n)]
    columns += [rng.standard_normal(n) for _ in range(config.n_continuous)]
    columns += [
        rng.binomial(1, 0.5, size=n).astype(float) for _ in range(config.n_binary)
    ]
    ids = pd.Index([f"s{i:05d}" for i in range(n)], name="scholar_id")
    return pd.DataFrame(np.column_stack(columns), index=ids, columns=config.own_columns)


def _erdos_renyi(n: int, mean_degree: float, rng: np.random.Generator):
    p = min(mean_degree / (n - 1), 1.0)
    counts = rng.binomial(np.arange(n - 1, -1, -1), p)
    rows = np.repeat(np.arange(n), counts)
    cols = np.concatenate(
        [i + 1 + rng.choice(n - 1 - i, k, replace=False) for i, k in enumerate(counts)]
    )
    upper = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return (upper + upper.T).tocsr()


def dyad_terms_from_covariates(X: pd.DataFrame) -> tuple[DyadTerm, ...]:
    """Dyad terms from own characteristics.

    Continuous columns give absolute differences, binary columns give
    same-value indicators.
    """
    terms = []
    for name in X.columns:
        if name == "intercept":
            continue
        values = X[name].to_numpy()
        binary = np.isin(values, (0.0, 1.0)).all()
        if binary:
            terms.append(DyadTerm(f"Same {name}", "same", values))
        else:
            terms.append(DyadTerm(f"{name} Difference", "absdiff", values))
    return tuple(terms)


def simulate_network(
    spec: NetworkSpec,
    n: int,
    seed,
    X: pd.DataFrame | None = None,
) -> NetworkDraw:
    """Draw a network and row-normalize it.

    Args:
        spec: Generator settings.
        n: Number of agents (at least 2).
        seed: Seed or SeedSequence.
        X: Own characteristics; required by the dyadic generator, whose
            dyad terms are built from the non-constant columns.

    Returns:
        The adjacency W, its row-normalized G and, for the dyadic
        generator, the dyad frame with the true mu and nu.
    """
    if n < 2:
        raise ValidationError(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)
    ids = tuple(X.index) if X is not None else tuple(f"s{i:05d}" for i in range(n))
    if spec.kind == "erdos_renyi":
        W = _erdos_renyi(n, spec.mean_degree, rng)
        logger.info("Simulated Erdos-Renyi network: %d links", W.nnz // 2)
        return NetworkDraw(W=W, G=row_normalize(W, ids))

    if X is None or len(X) != n:
        raise ValidationError("The dyadic generator needs covariates for every agent")
    terms = dyad_terms_from_covariates(X)
    if len(spec.beta_bar) != len(terms) + 1:
        raise ValidationError(
            f"beta_bar has {len(spec.beta_bar)} entries for {len(terms)} dyad terms"
        )
    mu = rng.normal(0.0, spec.mu_sd, n)
    nu = rng.normal(0.0, spec.nu_sd, n)
    empty = DyadFrame(terms=terms, links=sparse.csr_matrix((n, n)), ids=ids)
    P = empty.probabilities(np.array(spec.beta_bar), mu, nu)
    W = sparse.csr_matrix((rng.random((n, n)) < P).astype(float))
    logger.info("Simulated dyadic network: %d directed links", W.nnz)
    frame = DyadFrame(terms=terms, links=W, ids=ids)
    return NetworkDraw(W=W, G=row_normalize(W, ids), frame=frame, mu=mu, nu=nu)


def choose_outcome(u: np.ndarray, eps: np.ndarray, ladder: CostLadder) -> np.ndarray:
    """The r with a_r <= u + eps < a_{r+1} (0 when below a_1)."""
    latent = np.asarray(u, dtype=float) + np.asarray(eps, dtype=float)
    if latent.size == 0:
        return np.zeros(0, dtype=int)
    # tail_tol = 0.5 puts the threshold at the largest latent value itself
    r_max = truncation_level(ladder, float(latent.max()), tail_tol=0.5)
    a = cut_points(ladder, r_max + 1)
    return np.searchsorted(a, latent, side="right").astype(int)


def simulate_outcomes(
    params: GameParams,
    G: InteractionNetwork,
    Z,
    seed,
    shocks: np.ndarray | None = None,
    beliefs: Beliefs | None = None,
) -> np.ndarray:
    """Draw integer outcomes at the equilibrium beliefs.

    Without ``shocks``, y_i is sampled by inverse CDF: with U_i uniform,
    y_i counts the cut points with U_i < Phi(u_i - a_r). Given shocks, the
    choice rule is applied to them directly.

    Raises:
        EquilibriumError: If the beliefs cannot be solved.
    """
    Zm = np.asarray(Z, dtype=float)
    if beliefs is None:
        beliefs = solve_equilibrium(params, G, Zm)
    u = params.lam * G.peer_mean(beliefs.y_e) + Zm @ params.gamma
    if shocks is not None:
        return choose_outcome(u, shocks, params.ladder)
    rng = np.random.default_rng(seed)
    U = rng.random(len(u))
    if u.size == 0:
        return np.zeros(0, dtype=int)
    r_max = truncation_level(params.ladder, float(u.max()))
    a = cut_points(params.ladder, r_max)
    survival = norm.cdf(u[:, None] - a[None, :])
    return (U[:, None] < survival).sum(axis=1).astype(int)


def control_term(config: SimConfig, draw: NetworkDraw) -> np.ndarray:
    """h_i = (shock_loading * mu_i + peer_shock_loading * mu_bar_i) / mu_sd.

    Zero without the dyadic generator or when both loadings are zero.
    """
    if draw.mu is None or not (config.shock_loading or config.peer_shock_loading):
        return np.zeros(config.n)
    scale = config.network.mu_sd or 1.0
    mu_bar = draw.G.peer_mean(draw.mu)
    own = config.shock_loading * draw.mu
    return (own + config.peer_shock_loading * mu_bar) / scale


def simulate_dataset(config: SimConfig, replication: int = 0) -> SimulatedData:
    """Covariates, network, beliefs and outcomes for one replication.

    Each replication draws from its own child of ``config.seed``, so a
    replication is reproducible on its own.
    """
    seed = replication_seeds(config.seed, replication + 1)[replication]
    cov_seed, net_seed, out_seed = seed.spawn(3)
    X = simulate_covariates(config, np.random.default_rng(cov_seed))
    draw = simulate_network(config.network, config.n, net_seed, X)
    Z = assemble_design(X, draw.G, exclude_context=["intercept"])
    control = control_term(config, draw)
    # h_i enters as an extra column with coefficient one
    params = GameParams(config.ladder, np.append(config.gamma, 1.0))
    Zh = np.column_stack([Z.to_numpy(), control])
    beliefs = solve_equilibrium(params, draw.G, Zh)

    rng = np.random.default_rng(out_seed)
    shocks = rng.standard_normal(config.n)
    u = params.lam * draw.G.peer_mean(beliefs.y_e) + Zh @ params.gamma
    y = choose_outcome(u, shocks, params.ladder)
    logger.info(
        "Replication %d: mean outcome %.3f, max %d", replication, y.mean(), y.max()
    )
    return SimulatedData(
        config=config,
        replication=replication,
        ids=tuple(X.index),
        X=X,
        Z=Z,
        network=draw,
        y=y,
        beliefs=beliefs,
        shocks=shocks,
        control=control,
    )


def true_parameters(config: SimConfig, names: list[str]) -> dict[str, float]:
    """Natural-scale truth keyed like an estimate summary."""
    truth = {"lambda": config.lam}
    truth.update(dict(zip(names, config.gamma)))
    for r, d in enumerate(config.free_increments, start=2):
        truth[f"delta_{r}"] = d
    truth["delta_bar"] = config.delta_bar
    truth["rho"] = config.rho
    return truth


def write_dataset(data: SimulatedData, out_dir: str | os.PathLike) -> Path:
    """Write one replication in the exchanged file formats plus ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_network(out / "network.txt", data.G)
    write_network(out / "adjacency.txt", data.network.W)
    write_frame(out / "X.csv", data.X)
    write_frame(out / "Z.csv", data.Z)
    write_roster(out / "roster.csv", data.ids)
    write_outcomes(out / "outcomes.csv", data.ids, data.y)
    truth = {
        "parameters": true_parameters(data.config, list(data.Z.columns)),
        "config": data.config.to_dict(),
        "replication": data.replication,
        "bound": peer_effect_bound(data.config.ladder, data.G),
    }
    if data.network.mu is not None:
        truth["mu"] = data.network.mu
        truth["nu"] = data.network.nu
    if data.control.any():
        truth["control"] = data.control
    write_json(out / "truth.json", truth)
    return out
