"""Tests for the count-outcome game and its equilibrium."""

import contextlib
import math

import numpy as np
import pytest
from scipy import sparse
from scipy.stats import norm

from peercount.errors import EquilibriumError, ValidationError
from peercount.game import (
    Beliefs,
    CostLadder,
    GameParams,
    choice_probabilities,
    choice_probability_matrix,
    cut_points,
    expected_outcome_map,
    expected_outcomes_from_index,
    ladder_table,
    peer_effect_bound,
    solve_equilibrium,
    truncation_level,
)
from peercount.netbuild import InteractionNetwork, row_normalize


def _random_instance(rng, n=20, links=4):
    """Random directed network, design and ladder with lambda at 0.9 of its bound."""
    rows = np.repeat(np.arange(n), links)
    cols = (rows + rng.integers(1, n, size=rows.size)) % n
    W = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    G = row_normalize((W.tocsr() > 0).astype(float))
    Z = np.column_stack([np.ones(n), rng.normal(size=n)])
    gamma = rng.normal(0.0, 0.5, 2)
    tilde = tuple(rng.uniform(0.05, 1.0, rng.integers(0, 3)))
    delta_bar, rho = rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0)
    lam = 0.0
    for _ in range(20):
        ladder = CostLadder(lam, tuple(t + lam for t in tilde), delta_bar, rho)
        lam = 0.9 * peer_effect_bound(ladder, G)
    ladder = CostLadder(lam, tuple(t + lam for t in tilde), delta_bar, rho)
    return GameParams(ladder, gamma), G, Z


class TestCostLadder:
    """Tests for cost increments and cut points."""

    def test_increments(self, ladder):
        """delta_1 = 0, free delta_2, then (r - 1) * delta_bar + lambda."""
        np.testing.assert_allclose(ladder.increments(5), [0, 0.6, 0.9, 1.3, 1.7])

    def test_cut_points(self, ladder):
        """a_1 = 0 and cut points accumulate the increments."""
        np.testing.assert_allclose(cut_points(ladder, 5), [0, 0.6, 1.5, 2.8, 4.5])

    def test_tail_continues_from_first_outcome(self):
        """The tail counts from r = 1, not from R_bar."""
        ladder = CostLadder(0.1, (0.5,), 0.3, 1.0)
        np.testing.assert_allclose(cut_points(ladder, 5), [0, 0.5, 1.2, 2.2, 3.5])

    def test_curvature(self):
        """rho bends the tail."""
        ladder = CostLadder(0.0, (1.0,), 1.0, 2.0)
        np.testing.assert_allclose(ladder.increments(4), [0, 1.0, 4.0, 9.0])

    def test_no_free_increments(self):
        """R_bar = 1 starts the tail right after a_1."""
        ladder = CostLadder(0.2, (), 0.5, 1.0)
        assert ladder.R_bar == 1
        np.testing.assert_allclose(ladder.increments(3), [0, 0.7, 1.2])

    def test_increments_must_exceed_lambda(self):
        """Free increments at or below lambda are rejected."""
        with pytest.raises(ValidationError, match="exceed lambda"):
            CostLadder(0.5, (0.5,), 0.4, 1.0)

    def test_tail_parameters_positive(self):
        """delta_bar and rho must be positive."""
        with pytest.raises(ValidationError):
            CostLadder(0.1, (0.5,), 0.0, 1.0)
        with pytest.raises(ValidationError):
            CostLadder(0.1, (0.5,), 0.4, -1.0)

    def test_negative_lambda(self):
        """lambda cannot be negative."""
        with pytest.raises(ValidationError):
            CostLadder(-0.1, (0.5,), 0.4, 1.0)

    def test_r_max_at_least_one(self, ladder):
        """There is always a first cut point."""
        with pytest.raises(ValidationError):
            cut_points(ladder, 0)

    def test_ladder_table(self, ladder):
        """Diagnostic table lists r, delta and a."""
        table = ladder_table(ladder, 4)
        assert list(table["r"]) == [1, 2, 3, 4]
        assert table["cut_point"].iloc[-1] == pytest.approx(2.8)


class TestChoiceProbabilities:
    """Tests for p_ir."""

    def test_sum_to_one(self, ladder):
        """Truncated support keeps all but tail_tol of the mass."""
        p = choice_probabilities(0.4, 2.0, ladder)
        assert p.sum() == pytest.approx(1.0, abs=1e-11)
        assert np.all(p >= 0)

    def test_zero_outcome(self, ladder):
        """p_i0 = Phi(-u_i)."""
        p = choice_probabilities(0.4, 2.0, ladder)
        u = 0.4 + 0.1 * 2.0
        assert p[0] == pytest.approx(norm.cdf(-u))
        assert p[1] == pytest.approx(norm.cdf(u) - norm.cdf(u - 0.6))

    def test_small_r_max_is_enlarged(self, ladder):
        """An explicit r_max that cuts off mass is raised with a warning."""
        with pytest.warns(UserWarning, match="tail mass"):
            p = choice_probabilities(3.0, 0.0, ladder, r_max=2)
        assert len(p) > 3

    def test_large_index_stays_accurate(self, ladder):
        """Upper-tail probabilities do not cancel to zero."""
        p = choice_probability_matrix(np.array([40.0]), ladder, 60)[0]
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert p.argmax() > 5

    def test_expected_outcome_matches_probabilities(self, ladder):
        """sum_r r p_ir equals sum_r Phi(u - a_r)."""
        u = 0.8
        p = choice_probabilities(u, 0.0, ladder)
        mean = (np.arange(len(p)) * p).sum()
        assert expected_outcomes_from_index(np.array([u]), ladder)[0] == pytest.approx(
            mean, abs=1e-9
        )

    def test_truncation_level_grows_with_index(self, ladder):
        """Larger indices need more outcomes."""
        assert truncation_level(ladder, 10.0) > truncation_level(ladder, 0.0)

    def test_normalization_random_draws(self):
        """Probabilities sum to one over random indices and ladders."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            lam = rng.uniform(0.0, 1.0)
            tilde = rng.uniform(0.01, 2.0, rng.integers(0, 4))
            ladder = CostLadder(
                lam, tuple(tilde + lam), rng.uniform(0.05, 2.0), rng.uniform(0.3, 3.0)
            )
            u = rng.uniform(-8.0, 15.0, 100)
            r_max = truncation_level(ladder, float(u.max()))
            p = choice_probability_matrix(u, ladder, r_max)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)

    def test_location_invariance(self, ladder):
        """Shifting the index and every cut point together changes nothing."""
        u = np.array([-1.0, 0.3, 2.5])
        p = choice_probability_matrix(u, ladder, 12)
        for c in (-3.0, 0.7, 5.0):
            a = np.concatenate([[-np.inf], cut_points(ladder, 13) + c, [np.inf]])
            shifted = norm.cdf(u[:, None] + c - a[None, :-1]) - norm.cdf(
                u[:, None] + c - a[None, 1:]
            )
            np.testing.assert_allclose(p, shifted[:, :13], atol=1e-12)


class TestEquilibrium:
    """Tests for the belief fixed point."""

    def test_empty_network_closed_form(self, ladder):
        """Without peers y_e_i = sum_r Phi(psi_i - a_r)."""
        G = InteractionNetwork.empty(4)
        Z = np.array([[1.0, -1.0], [1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        params = GameParams(ladder, np.array([0.2, 0.5]))
        beliefs = solve_equilibrium(params, G, Z)
        psi = Z @ params.gamma
        a = cut_points(ladder, 200)
        expected = norm.cdf(psi[:, None] - a[None, :]).sum(axis=1)
        np.testing.assert_allclose(beliefs.y_e, expected, atol=1e-9)

    def test_fixed_point(self, ladder, ring):
        """The solution reproduces itself under the belief map."""
        Z = np.column_stack([np.ones(6), np.linspace(-1, 1, 6)])
        params = GameParams(ladder, np.array([0.3, 0.4]))
        beliefs = solve_equilibrium(params, ring, Z)
        mapped = expected_outcome_map(params, ring, Z, beliefs.y_e)
        assert np.abs(mapped - beliefs.y_e).sum() < 1e-8
        assert beliefs.residual < 1e-9

    def test_zero_lambda_converges_immediately(self, ring):
        """With lambda = 0 the map is constant, so two steps suffice."""
        params = GameParams(CostLadder(0.0, (0.6,), 0.4, 1.0), np.array([0.3]))
        beliefs = solve_equilibrium(params, ring, np.ones((6, 1)))
        assert beliefs.iterations == 2

    def test_initial_beliefs_are_used(self, ladder, ring):
        """Starting at the solution converges in one step."""
        Z = np.ones((6, 1))
        params = GameParams(ladder, np.array([0.3]))
        solved = solve_equilibrium(params, ring, Z)
        again = solve_equilibrium(params, ring, Z, init=Beliefs(solved.y_e))
        assert again.iterations == 1

    def test_exhausted_iterations(self, ladder, ring):
        """Running out of iterations raises with the last iterate."""
        params = GameParams(ladder, np.array([0.3]))
        with pytest.raises(EquilibriumError) as info:
            solve_equilibrium(params, ring, np.ones((6, 1)), max_iter=1)
        assert info.value.iterations == 1
        assert len(info.value.last_iterate) == 6
        assert info.value.residual > 0

    def test_warns_above_bound(self, ring):
        """A lambda past the uniqueness bound triggers a warning."""
        ladder = CostLadder(5.0, (6.0,), 0.1, 1.0)
        params = GameParams(ladder, np.array([0.0]))
        with pytest.warns(UserWarning, match="uniqueness bound"):
            with contextlib.suppress(EquilibriumError):
                solve_equilibrium(params, ring, np.ones((6, 1)), max_iter=5)

    def test_dimension_mismatch(self, ladder, ring):
        """Z must have one row per agent."""
        params = GameParams(ladder, np.array([0.3]))
        with pytest.raises(ValidationError, match="Dimension"):
            expected_outcome_map(params, ring, np.ones((5, 1)), np.zeros(6))

    def test_unique_from_random_starts(self):
        """At 0.9 of the bound, random starts reach the same fixed point."""
        rng = np.random.default_rng(17)
        for _ in range(10):
            params, G, Z = _random_instance(rng)
            assert params.lam < peer_effect_bound(params.ladder, G)
            solutions = [
                solve_equilibrium(
                    params, G, Z, init=rng.uniform(0.0, 20.0, G.n), tol=1e-12
                ).y_e
                for _ in range(10)
            ]
            for y_e in solutions[1:]:
                np.testing.assert_allclose(y_e, solutions[0], atol=1e-8)

    @pytest.mark.slow
    def test_unique_on_many_instances(self):
        """The multi-start check holds on 100 random instances."""
        rng = np.random.default_rng(18)
        for _ in range(100):
            params, G, Z = _random_instance(rng)
            first = solve_equilibrium(params, G, Z, tol=1e-12).y_e
            for _ in range(10):
                other = solve_equilibrium(
                    params, G, Z, init=rng.uniform(0.0, 20.0, G.n), tol=1e-12
                ).y_e
                np.testing.assert_allclose(other, first, atol=1e-8)

    def test_peer_effect_raises_beliefs(self, ring):
        """Positive lambda raises expected outcomes above the no-peer level."""
        Z = np.ones((6, 1))
        gamma = np.array([0.3])
        low = solve_equilibrium(
            GameParams(CostLadder(0.0, (0.6,), 0.4, 1.0), gamma), ring, Z
        )
        high = solve_equilibrium(
            GameParams(CostLadder(0.3, (0.6,), 0.4, 1.0), gamma), ring, Z
        )
        assert np.all(high.y_e > low.y_e)


class TestMonotonicity:
    """Tests for the direction of the belief map."""

    def test_increasing_in_index(self, ladder, ring):
        """Raising one agent's index raises only that agent's expectation."""
        params = GameParams(ladder, np.array([1.0]))
        y_e = np.linspace(0.0, 2.0, 6)
        base = expected_outcome_map(params, ring, np.ones((6, 1)), y_e)
        for i in range(6):
            Z = np.ones((6, 1))
            Z[i] = 1.3
            moved = expected_outcome_map(params, ring, Z, y_e)
            assert moved[i] > base[i]
            np.testing.assert_allclose(np.delete(moved, i), np.delete(base, i))

    def test_non_decreasing_in_peer_beliefs(self, ladder, ring):
        """A peer's higher expectation never lowers an agent's own."""
        params = GameParams(ladder, np.array([0.2]))
        Z = np.ones((6, 1))
        y_e = np.linspace(0.0, 2.0, 6)
        base = expected_outcome_map(params, ring, Z, y_e)
        for j in range(6):
            bumped = y_e.copy()
            bumped[j] += 0.5
            moved = expected_outcome_map(params, ring, Z, bumped)
            assert np.all(moved >= base)
            peers = ring.matrix[:, j].toarray().ravel() > 0
            assert np.all(moved[peers] > base[peers])


class TestPeerEffectBound:
    """Tests for the uniqueness threshold."""

    def test_widely_spaced_cut_points(self):
        """With isolated cut points the peak density sum is phi(0)."""
        ladder = CostLadder(0.0, (50.0,), 50.0, 1.0)
        assert peer_effect_bound(ladder) == pytest.approx(
            math.sqrt(2 * math.pi), rel=1e-6
        )

    def test_never_above_inverse_peak_density(self, ladder):
        """The density sum is at least phi(0), so B_c <= sqrt(2 pi)."""
        assert peer_effect_bound(ladder) <= math.sqrt(2 * math.pi) + 1e-9

    def test_empty_network(self, ladder):
        """No peers means no restriction."""
        assert peer_effect_bound(ladder, InteractionNetwork.empty(3)) == np.inf

    def test_row_normalized_network(self, ladder, ring):
        """A row-stochastic G has norm one."""
        assert peer_effect_bound(ladder, ring) == pytest.approx(
            peer_effect_bound(ladder)
        )

    def test_matches_grid_search(self, ladder):
        """Agrees with a brute-force maximum of the density sum."""
        a = cut_points(ladder, 300)
        grid = np.linspace(-6, 20, 26001)
        peak = norm.pdf(grid[:, None] - a[None, :]).sum(axis=1).max()
        assert peer_effect_bound(ladder) == pytest.approx(1 / peak, rel=1e-6)
