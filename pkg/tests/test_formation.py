"""Tests for the dyadic link-formation logit and the sieve."""

import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from peercount.datafiles import read_publications, read_scholars
from peercount.errors import FormationError, ValidationError
from peercount.formation import (
    FE_CAP,
    DyadFrame,
    DyadTerm,
    dyad_covariates,
    fit_dyadic_logit,
    formation_gradient,
    sieve_terms,
)
from peercount.netbuild import (
    InteractionNetwork,
    PeriodSpec,
    build_adjacency,
    filter_to_roster,
    row_normalize,
)
from peercount.simulate import NetworkSpec, simulate_network

BETA = (-1.5, -1.0)


@pytest.fixture(scope="module")
def draw():
    """Dyadic network on 150 agents with one absolute-difference term."""
    rng = np.random.default_rng(21)
    X = pd.DataFrame(
        {"intercept": np.ones(150), "x1": rng.standard_normal(150)},
        index=[f"s{i:03d}" for i in range(150)],
    )
    spec = NetworkSpec(kind="dyadic", beta_bar=BETA, mu_sd=0.5, nu_sd=0.5)
    return simulate_network(spec, 150, 8, X)


@pytest.fixture(scope="module")
def fit(draw):
    return fit_dyadic_logit(draw.frame)


class TestDyadTerm:
    """Tests for dyadic covariates built from scholar values."""

    def test_same(self):
        """Indicator of equal values."""
        term = DyadTerm("Same", "same", np.array(["x", "y", "x"]))
        np.testing.assert_array_equal(term.block(np.array([0]))[0], [1, 0, 1])

    def test_absdiff(self):
        """Absolute difference."""
        term = DyadTerm("Diff", "absdiff", np.array([1.0, 4.0, -1.0]))
        np.testing.assert_allclose(term.block(np.array([1]))[0], [3, 0, 5])

    def test_any(self):
        """At least one of the two."""
        term = DyadTerm("Any", "any", np.array([True, False, False]))
        np.testing.assert_array_equal(term.block(np.array([1, 2])), [[1, 0, 0]] * 2)

    def test_common(self):
        """Count of shared tags."""
        tags = np.array([[1, 1, 0], [1, 1, 1], [0, 0, 1]])
        term = DyadTerm("Common", "common", tags)
        np.testing.assert_array_equal(term.block(np.array([0]))[0], [2, 2, 0])

    def test_unknown_kind(self):
        """Only the four kinds exist."""
        with pytest.raises(ValidationError, match="kind"):
            DyadTerm("x", "ratio", np.zeros(3))

    def test_non_finite(self):
        """Numeric terms must be finite."""
        with pytest.raises(ValidationError, match="non-finite"):
            DyadTerm("x", "absdiff", np.array([1.0, np.nan]))


class TestDyadFrame:
    """Tests for the lazily built dyad frame."""

    def test_pair(self):
        """Covariates of one ordered pair, intercept first."""
        term = DyadTerm("Diff", "absdiff", np.array([1.0, 4.0, -1.0]))
        frame = DyadFrame((term,), sparse.csr_matrix((3, 3)))
        pair = frame.pair(0, 2)
        assert list(pair.index) == ["const", "Diff"]
        assert pair["Diff"] == 2.0

    def test_self_pair(self):
        """There are no self-dyads."""
        frame = DyadFrame((), sparse.csr_matrix((3, 3)))
        with pytest.raises(ValidationError):
            frame.pair(1, 1)

    def test_self_links_rejected(self):
        """Links on the diagonal are invalid."""
        with pytest.raises(ValidationError, match="Self-links"):
            DyadFrame((), sparse.identity(3, format="csr"))

    def test_term_length(self):
        """Terms need a value per scholar."""
        term = DyadTerm("Diff", "absdiff", np.zeros(2))
        with pytest.raises(ValidationError, match="rows"):
            DyadFrame((term,), sparse.csr_matrix((3, 3)))

    def test_probabilities_zero_diagonal(self):
        """Block-wise probabilities skip self-pairs."""
        frame = DyadFrame((), sparse.csr_matrix((5, 5)), block_size=2)
        P = frame.probabilities(np.array([0.0]), np.zeros(5), np.zeros(5))
        np.testing.assert_allclose(P, 0.5 * (1 - np.eye(5)))

    def test_dyad_covariates(self, sample_files):
        """Homophily covariates from scholar profiles."""
        profiles = read_scholars(sample_files[1])
        ids = [p.scholar_id for p in profiles]
        records = filter_to_roster(read_publications(sample_files[0]), ids)
        period = PeriodSpec(2018, 2019)
        W = build_adjacency(records, period, 1, ids)
        frame = dyad_covariates(profiles, records, period, W)
        assert len(frame.names) == 10
        pair = frame.pair(0, 1)
        assert pair["Same Department"] == 1.0
        assert pair["Same Ranking"] == 1.0
        assert pair["Experience Difference"] == 15.0
        assert pair["Citation Difference (000s)"] == pytest.approx(2.38)
        assert pair["Any Female"] == 1.0
        assert pair["Common Fields"] == 1.0
        assert frame.links[0, 1] == 1.0

    def test_dyad_covariates_unknown_author(self, sample_files):
        """Records must be filtered to the roster."""
        profiles = read_scholars(sample_files[1])
        records = read_publications(sample_files[0])
        with pytest.raises(ValidationError, match="No profile"):
            dyad_covariates(
                profiles, records, PeriodSpec(2018, 2019), sparse.csr_matrix((6, 6))
            )


class TestDyadicLogit:
    """Tests for the two-way fixed-effect logit."""

    def test_converges(self, fit):
        """Coefficient changes fall below the tolerance."""
        assert fit.converged
        assert fit.trace[-1] < 1e-8

    def test_recovers_slope(self, fit):
        """The homophily slope is close to the truth."""
        assert fit.beta["x1 Difference"] == pytest.approx(BETA[1], abs=0.25)

    def test_score_vanishes(self, draw, fit):
        """The average score is zero at the estimate."""
        grad = formation_gradient(draw.frame, fit)
        np.testing.assert_allclose(grad["beta"], 0.0, atol=1e-6)
        np.testing.assert_allclose(grad["mu"], 0.0, atol=1e-6)
        np.testing.assert_allclose(grad["nu"], 0.0, atol=1e-6)

    def test_effects_sum_to_zero(self, fit):
        """Uncapped effects are centered; the level sits in the intercept."""
        assert fit.mu[~fit.mu_capped].mean() == pytest.approx(0.0, abs=1e-10)
        assert fit.nu[~fit.nu_capped].mean() == pytest.approx(0.0, abs=1e-10)

    def test_standard_errors(self, fit):
        """Slopes get a positive SE, the intercept none."""
        assert np.isnan(fit.beta_se["const"])
        assert 0 < fit.beta_se["x1 Difference"] < 0.5

    def test_sender_without_links_capped(self, draw):
        """A scholar with no outgoing links gets mu = -cap."""
        links = draw.W.tolil()
        links[0, :] = 0
        frame = DyadFrame(draw.frame.terms, links.tocsr(), draw.frame.ids)
        fit = fit_dyadic_logit(frame, compute_se=False)
        assert fit.mu_capped[0]
        assert fit.mu[0] == -FE_CAP
        assert fit.any_capped

    def test_shifted_effects_fit_the_same(self, draw, fit):
        """Moving c from nu to mu changes no probability; a shifted start refits."""
        beta = fit.beta.to_numpy()
        base = draw.frame.probabilities(beta, fit.mu, fit.nu)
        shifted = draw.frame.probabilities(beta, fit.mu + 0.7, fit.nu - 0.7)
        np.testing.assert_allclose(shifted, base, atol=1e-12)
        refit = fit_dyadic_logit(
            draw.frame, init_mu=fit.mu + 2.0, init_nu=fit.nu - 2.0, compute_se=False
        )
        np.testing.assert_allclose(
            refit.fitted_probabilities(draw.frame),
            fit.fitted_probabilities(draw.frame),
            atol=1e-8,
        )
        np.testing.assert_allclose(refit.mu, fit.mu, atol=1e-6)

    @pytest.mark.slow
    def test_recovers_sender_effects(self):
        """Estimated sender effects track the true ones on 500 scholars."""
        rng = np.random.default_rng(30)
        X = pd.DataFrame(
            {
                "intercept": np.ones(500),
                "x1": rng.standard_normal(500),
                "d1": rng.binomial(1, 0.5, 500).astype(float),
            },
            index=[f"s{i:03d}" for i in range(500)],
        )
        spec = NetworkSpec(kind="dyadic", beta_bar=(-4.7, -0.5, 0.5))
        sim = simulate_network(spec, 500, 31, X)
        assert 5 < sim.W.nnz / 500 < 20
        fit = fit_dyadic_logit(sim.frame, compute_se=False)
        free = ~fit.mu_capped
        assert np.corrcoef(fit.mu[free], sim.mu[free])[0, 1] > 0.8

    def test_no_links(self):
        """An empty network cannot be fitted."""
        frame = DyadFrame((), sparse.csr_matrix((4, 4)))
        with pytest.raises(ValidationError, match="at least one link"):
            fit_dyadic_logit(frame)

    def test_complete_network(self):
        """A complete network cannot be fitted."""
        frame = DyadFrame((), sparse.csr_matrix(1 - np.eye(4)))
        with pytest.raises(ValidationError, match="non-link"):
            fit_dyadic_logit(frame)

    def test_iteration_cap(self, draw):
        """Stopping early raises with the change trace."""
        with pytest.raises(FormationError) as info:
            fit_dyadic_logit(draw.frame, max_iter=1)
        assert len(info.value.trace) == 1

    def test_effects_frame(self, fit):
        """Fitted effects come back one row per scholar."""
        effects = fit.effects()
        assert list(effects.columns) == ["mu", "nu", "mu_capped", "nu_capped"]
        assert len(effects) == 150


class TestSieve:
    """Tests for the control-function basis."""

    def test_degree_two(self, draw, fit):
        """Four linear and ten quadratic terms, standardized."""
        terms = sieve_terms(fit, draw.G, degree=2)
        assert terms.shape == (150, 14)
        assert "Sieve: mu" in terms.columns
        assert "Sieve: mu nu" in terms.columns
        assert "Sieve: mu_bar^2" in terms.columns
        np.testing.assert_allclose(terms.mean(), 0.0, atol=1e-10)
        assert list(terms.index) == list(draw.G.ids)

    def test_degree_one_raw(self, draw, fit):
        """Without standardization the linear terms are the effects."""
        terms = sieve_terms(fit, draw.G, degree=1, standardize=False)
        np.testing.assert_allclose(terms["Sieve: mu"], fit.mu)
        np.testing.assert_allclose(terms["Sieve: nu_bar"], draw.G.peer_mean(fit.nu))

    def test_capped_effects_clipped(self, draw):
        """A capped sender enters the basis at the lowest fitted mu."""
        links = draw.W.tolil()
        links[0, :] = 0
        frame = DyadFrame(draw.frame.terms, links.tocsr(), draw.frame.ids)
        capped = fit_dyadic_logit(frame, compute_se=False)
        G = row_normalize(links.tocsr(), draw.frame.ids)
        with pytest.warns(UserWarning, match="capped"):
            terms = sieve_terms(capped, G, degree=1, standardize=False)
        assert terms["Sieve: mu"].iloc[0] == pytest.approx(
            capped.mu[~capped.mu_capped].min()
        )

    def test_relabeling_equivariance(self, draw, fit):
        """Relabeling scholars permutes the rows of the basis."""
        order = np.random.default_rng(6).permutation(150)
        links = draw.W.tocsr()[order][:, order]
        terms = tuple(
            DyadTerm(t.name, t.kind, t.values[order]) for t in draw.frame.terms
        )
        ids = tuple(draw.frame.ids[i] for i in order)
        refit = fit_dyadic_logit(DyadFrame(terms, links, ids), compute_se=False)
        relabeled = sieve_terms(refit, draw.G.permute(order))
        original = sieve_terms(fit, draw.G)
        np.testing.assert_allclose(
            relabeled.to_numpy(), original.to_numpy()[order], atol=1e-6
        )
        assert list(relabeled.index) == list(ids)

    def test_degree_must_be_positive(self, draw, fit):
        """Degree zero has no terms."""
        with pytest.raises(ValidationError, match="degree"):
            sieve_terms(fit, draw.G, degree=0)

    def test_network_size(self, fit):
        """The network must cover the fitted scholars."""
        with pytest.raises(ValidationError, match="different scholars"):
            sieve_terms(fit, InteractionNetwork.empty(3))
