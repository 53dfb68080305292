"""Count-outcome network game with incomplete information.

Agents choose an integer r. With private shock eps ~ N(0, 1), agent i picks r
iff a_r <= u_i + eps < a_{r+1}, where u_i = lambda * (G y_e)_i + z_i' Gamma and
a_1 = 0 < a_2 < ... are the cut points built from the cost ladder.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.stats import norm

from .errors import EquilibriumError, ValidationError
from .netbuild import InteractionNetwork

logger = logging.getLogger(__name__)

TAIL_TOL = 1e-12
OUTCOME_MARGIN = 20
MAX_TRUNCATION = 1_000_000
BOUND_TAIL_POINTS = 200


@dataclass(frozen=True)
class CostLadder:
    """Cut-point increments delta_r = a_r - a_{r-1}.

    delta_1 = 0, delta_r is free for 2 <= r <= R_bar and
    delta_r = (r - 1)^rho * delta_bar + lambda beyond R_bar.

    Attributes:
        lam: Peer effect lambda (>= 0).
        free_increments: delta_2, ..., delta_{R_bar}; each must exceed lam.
        delta_bar: Tail scale (> 0).
        rho: Tail curvature (> 0).
    """

    lam: float
    free_increments: tuple[float, ...]
    delta_bar: float
    rho: float

    def __post_init__(self):
        object.__setattr__(
            self, "free_increments", tuple(float(d) for d in self.free_increments)
        )
        if self.lam < 0:
            raise ValidationError(f"lambda must be non-negative, got {self.lam}")
        if self.delta_bar <= 0 or self.rho <= 0:
            raise ValidationError(
                f"Tail parameters must be positive (delta_bar={self.delta_bar}, "
                f"rho={self.rho})"
            )
        low = [d for d in self.free_increments if d <= self.lam]
        if low:
            raise ValidationError(
                f"Free increments must exceed lambda={self.lam}: {low}"
            )

    @property
    def R_bar(self) -> int:
        return len(self.free_increments) + 1

    def increments(self, r_max: int) -> np.ndarray:
        """delta_1, ..., delta_{r_max}."""
        r = np.arange(1, r_max + 1)
        tail = ((r - 1) ** self.rho) * self.delta_bar + self.lam
        delta = np.where(r > self.R_bar, tail, 0.0)
        k = min(r_max, self.R_bar) - 1
        if k > 0:
            delta[1 : k + 1] = self.free_increments[:k]
        return delta


@dataclass(frozen=True)
class GameParams:
    """Structural parameters on the natural scale."""

    ladder: CostLadder
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def lam(self) -> float:
        return self.ladder.lam


@dataclass
class Beliefs:
    """Rational expected outcomes y_e and how they were obtained."""

    y_e: np.ndarray
    iterations: int = 0
    residual: float = float("nan")


def cut_points(ladder: CostLadder, r_max: int) -> np.ndarray:
    """a_1, ..., a_{r_max} with a_1 = 0.

    Raises:
        ValidationError: If ``r_max < 1``.
    """
    if r_max < 1:
        raise ValidationError(f"r_max must be at least 1, got {r_max}")
    return np.cumsum(ladder.increments(r_max))


def truncation_level(
    ladder: CostLadder, u_max: float, tail_tol: float = TAIL_TOL, minimum: int = 1
) -> int:
    """Smallest r_max >= minimum with Phi(u_max - a_{r_max + 1}) < tail_tol."""
    threshold = u_max - norm.ppf(tail_tol)
    size = max(minimum + 1, 64)
    while size <= MAX_TRUNCATION:
        a = cut_points(ladder, size)
        beyond = np.flatnonzero(a > threshold)
        if beyond.size:
            return max(minimum, int(beyond[0]))
        size *= 2
    raise ValidationError(
        f"Outcome support does not decay below {tail_tol} before r={MAX_TRUNCATION}"
    )


def _phi_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Phi(x) - Phi(y) for x >= y without cancellation in the upper tail."""
    upper = norm.sf(y) - norm.sf(x)
    lower = norm.cdf(x) - norm.cdf(y)
    return np.where(y > 0, upper, lower)


def choice_probability_matrix(
    u: np.ndarray, ladder: CostLadder, r_max: int
) -> np.ndarray:
    """p_ir for r = 0..r_max for every index u_i, as an ``n x (r_max + 1)`` array."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a = np.concatenate([[-np.inf], cut_points(ladder, r_max + 1)])
    x = u[:, None] - a[None, :-1]
    y = u[:, None] - a[None, 1:]
    return np.maximum(_phi_diff(x, y), 0.0)


def choice_probabilities(
    psi_i: float,
    ybar_e_i: float,
    ladder: CostLadder,
    r_max: int | None = None,
    tail_tol: float = TAIL_TOL,
) -> np.ndarray:
    """Probabilities p_{i,0..r_max} of each outcome for one agent.

    Args:
        psi_i: Index z_i' Gamma.
        ybar_e_i: Expected peer average (G y_e)_i.
        ladder: Cost ladder.
        r_max: Largest outcome kept. ``None`` picks the smallest level with
            tail mass below ``tail_tol``; a smaller explicit value is
            enlarged with a warning.
        tail_tol: Maximum probability mass allowed beyond ``r_max``.
    """
    u = ladder.lam * ybar_e_i + psi_i
    needed = truncation_level(ladder, u, tail_tol)
    if r_max is None:
        r_max = needed
    elif r_max < needed:
        warnings.warn(
            f"r_max={r_max} leaves tail mass above {tail_tol}; using {needed}",
            stacklevel=2,
        )
        r_max = needed
    return choice_probability_matrix(np.array([u]), ladder, r_max)[0]


def _indices(params: GameParams, G: InteractionNetwork, Z: np.ndarray, y_e):
    psi = np.asarray(Z, dtype=float) @ np.asarray(params.gamma, dtype=float)
    return params.lam * G.peer_mean(np.asarray(y_e, dtype=float)) + psi


def expected_outcomes_from_index(
    u: np.ndarray, ladder: CostLadder, tail_tol: float = TAIL_TOL
) -> np.ndarray:
    """sum_{r >= 1} Phi(u_i - a_r), truncated once the summand is below tail_tol."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return np.zeros(0)
    r_max = truncation_level(ladder, float(u.max()), tail_tol)
    a = cut_points(ladder, r_max + 1)
    return norm.cdf(u[:, None] - a[None, :]).sum(axis=1)


def expected_outcome_map(
    params: GameParams,
    G: InteractionNetwork,
    Z: np.ndarray,
    y_e: np.ndarray,
    tail_tol: float = TAIL_TOL,
) -> np.ndarray:
    """The belief map L(theta, y_e)."""
    if np.shape(Z)[0] != G.n or len(y_e) != G.n:
        raise ValidationError(
            f"Dimension mismatch: G is {G.n}x{G.n}, Z has {np.shape(Z)[0]} rows, "
            f"y_e has {len(y_e)} entries"
        )
    u = _indices(params, G, Z, y_e)
    return expected_outcomes_from_index(u, params.ladder, tail_tol)


def solve_equilibrium(
    params: GameParams,
    G: InteractionNetwork,
    Z: np.ndarray,
    init: Beliefs | np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    check_bound: bool = True,
) -> Beliefs:
    """Fixed point y_e = L(theta, y_e) by successive substitution.

    Damping with factor 0.5 switches on once the L1 residual grows twice in a
    row.

    Raises:
        EquilibriumError: If ``max_iter`` map evaluations do not bring the
            residual below ``tol``.
    """
    if check_bound and params.lam > 0:
        bound = peer_effect_bound(params.ladder, G)
        if params.lam >= bound:
            warnings.warn(
                f"lambda={params.lam:.4g} is not below the uniqueness bound "
                f"{bound:.4g}; the equilibrium may not be unique",
                stacklevel=2,
            )
    if init is None:
        y = np.zeros(G.n)
    else:
        y = np.array(init.y_e if isinstance(init, Beliefs) else init, dtype=float)

    damping = 1.0
    previous = np.inf
    increases = 0
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        mapped = expected_outcome_map(params, G, Z, y)
        y_new = y + damping * (mapped - y)
        residual = float(np.abs(y_new - y).sum())
        y = y_new
        logger.debug("equilibrium iteration %d: residual %.3e", iteration, residual)
        if residual < tol:
            return Beliefs(y, iteration, residual)
        increases = increases + 1 if residual > previous else 0
        if increases >= 2 and damping == 1.0:
            logger.info("Residuals oscillate; damping belief updates by 0.5")
            damping = 0.5
        previous = residual
    raise EquilibriumError(
        f"No equilibrium after {max_iter} iterations (residual {residual:.3e})",
        last_iterate=y,
        residual=residual,
        iterations=max_iter,
    )


def _bound_support(ladder: CostLadder) -> int:
    """Number of cut points entering the density sum.

    Tail increments grow with r, so cut points past the first tail spacing of
    12 are isolated and cannot raise the maximum. At most 200 tail points.
    """
    reach = ((max(12.0 - ladder.lam, 0.0)) / ladder.delta_bar) ** (1.0 / ladder.rho)
    last = ladder.R_bar + BOUND_TAIL_POINTS
    tail_end = 1 + int(np.ceil(min(reach, last)))
    return max(ladder.R_bar, min(tail_end, last)) + 1


def peer_effect_bound(
    ladder: CostLadder, G: InteractionNetwork | None = None, r_max: int | None = None
) -> float:
    """Uniqueness threshold B_c / ||G||_{-inf} for lambda.

    B_c = 1 / max_u sum_r phi(u - a_r), maximized on a 0.01 grid spanning the
    cut points +- 6 and refined with a bounded scalar search. The network
    norm is the maximum absolute row sum; an empty network gives ``inf``.
    """
    if r_max is None:
        r_max = _bound_support(ladder)
    a = cut_points(ladder, r_max)

    def density_sum(u):
        return norm.pdf(np.subtract.outer(np.atleast_1d(u), a)).sum(axis=-1)

    grid = np.arange(a[0] - 6.0, a[-1] + 6.0 + 0.01, 0.01)
    values = density_sum(grid)
    best = int(np.argmax(values))
    refined = optimize.minimize_scalar(
        lambda u: -density_sum(u)[0],
        bounds=(grid[max(best - 1, 0)], grid[min(best + 1, len(grid) - 1)]),
        method="bounded",
        options={"xatol": 1e-10},
    )
    peak = max(values[best], -refined.fun)
    b_c = 1.0 / peak
    norm_g = 1.0 if G is None else G.norm_inf
    return np.inf if norm_g == 0 else b_c / norm_g


def ladder_table(
    ladder: CostLadder, r_max: int, G: InteractionNetwork | None = None
) -> pd.DataFrame:
    """Diagnostic dump of delta_r, a_r and the uniqueness bound."""
    return pd.DataFrame(
        {
            "r": np.arange(1, r_max + 1),
            "delta": ladder.increments(r_max),
            "cut_point": cut_points(ladder, r_max),
            "bound": peer_effect_bound(ladder, G),
        }
    )
