"""Model density: likelihood, priors, constraints, gradients, vectorization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit, logit
from scipy.stats import halfnorm, norm

from biathlon_bayes import model
from biathlon_bayes.data import Dataset, SessionRecord
from biathlon_bayes.errors import DataError
from biathlon_bayes.model import (
    ModelSpec,
    ParameterState,
    bout_log_likelihoods,
    expand,
    from_vector,
    grad_log_posterior,
    layout,
    linear_predictors,
    log_likelihood,
    log_posterior,
    log_prior,
    param_names,
    sample_prior,
    to_vector,
)
from biathlon_bayes.streams import rng_for

from conftest import make_season


def rec(**kw):
    base = dict(
        athlete="a", stage=1, race_type="sprint", position="prone",
        race_seq=1, bout_seq=1, hits=4,
    )
    base.update(kw)
    return SessionRecord(**base)


class TestModelSpec:
    def test_free_dimension_full_scale(self):
        # 11 baseline + 29x11 trajectories + 30 position + 30x3 race + 4 scales
        assert ModelSpec(S=30, T=11, Z=4).dim == 454

    def test_free_dimension_small(self):
        assert ModelSpec(S=3, T=2).dim == 2 + 2 * 2 + 3 + 3 * 3 + 4

    def test_mu_only_dimension(self):
        assert ModelSpec(S=2, T=1, Z=2, mu_only=True).dim == 1

    def test_for_dataset(self):
        d = Dataset.from_records([rec(), rec(athlete="b", stage=2)], n_stages=3)
        spec = ModelSpec.for_dataset(d)
        assert (spec.S, spec.T) == (2, 3)

    @pytest.mark.parametrize("kw", [dict(S=0, T=1), dict(S=2, T=0), dict(S=2, T=1, Z=1)])
    def test_degenerate_shapes_rejected(self, kw):
        with pytest.raises(DataError):
            ModelSpec(**kw)


class TestLikelihood:
    def test_three_hits_at_even_odds(self):
        # direct binomial pmf: ln C(5,3) + 5 ln(1/2)
        val = bout_log_likelihoods(np.array([3]), np.array([0.0]))[0]
        assert val == pytest.approx(-1.1631508098056809, abs=1e-15)

    def test_five_hits_at_even_odds(self):
        val = bout_log_likelihoods(np.array([5]), np.array([0.0]))[0]
        assert val == pytest.approx(5 * math.log(0.5), abs=1e-15)

    def test_extreme_linear_predictor_stays_finite(self):
        hits = np.array([0, 5, 3, 2])
        eta = np.array([50.0, -50.0, 700.0, -700.0])
        vals = bout_log_likelihoods(hits, eta)
        assert np.all(np.isfinite(vals))
        # 0 hits at eta=+50: each shot costs ~50 nats
        assert vals[0] == pytest.approx(-250.0, rel=1e-6)

    def test_log_likelihood_sums_over_bouts(self):
        d = Dataset.from_records(
            [rec(hits=3), rec(hits=5, bout_seq=2, position="standing"), rec(athlete="b", hits=2)]
        )
        spec = ModelSpec.for_dataset(d)
        p = ParameterState.zeros(spec)
        expected = float(
            bout_log_likelihoods(np.array([3, 5, 2]), linear_predictors(p, d, spec)).sum()
        )
        assert log_likelihood(p, d, spec) == pytest.approx(expected, abs=1e-12)

    def test_link_function_is_logistic(self):
        # eta = 1.671 corresponds to ~84.2% hit probability
        assert expit(1.671) == pytest.approx(0.8417, abs=5e-5)
        assert logit(expit(1.671)) == pytest.approx(1.671, abs=1e-12)


class TestConstraints:
    def test_expand_satisfies_sum_to_zero(self):
        spec = ModelSpec(S=4, T=3)
        eff = expand(sample_prior(spec, rng_for(3)), spec)
        # athletes cancel per stage; positions cancel per athlete; race types per athlete
        assert np.allclose(eff.beta.sum(axis=0), 0.0, atol=1e-12)
        assert np.allclose(eff.gamma[:, 0] + eff.gamma[:, 1], 0.0, atol=1e-12)
        assert np.allclose(eff.omega.sum(axis=1), 0.0, atol=1e-12)

    def test_constrained_athlete_is_negative_column_sum(self):
        spec = ModelSpec(S=3, T=2)
        p = sample_prior(spec, rng_for(4))
        eff = expand(p, spec)
        assert np.allclose(eff.beta[-1], -p.beta_free.sum(axis=0), atol=1e-12)

    def test_linear_predictor_assembles_all_terms(self):
        d = Dataset.from_records(
            [rec(athlete="x"), rec(athlete="y"), rec(athlete="x", bout_seq=2, position="standing")]
        )
        spec = ModelSpec.for_dataset(d)
        p = sample_prior(spec, rng_for(5))
        eff = expand(p, spec)
        eta = linear_predictors(p, d, spec)
        i_spr = 1  # RACE_TYPES.index("sprint")
        want0 = eff.mu[0] + eff.beta[0, 0] + eff.gamma[0, 0] + eff.omega[0, i_spr]
        want2 = eff.mu[0] + eff.beta[0, 0] + eff.gamma[0, 1] + eff.omega[0, i_spr]
        assert eta[0] == pytest.approx(want0, abs=1e-12)
        assert eta[2] == pytest.approx(want2, abs=1e-12)


def _independent_log_prior(p: ParameterState, spec: ModelSpec) -> float:
    """Second-route prior: scipy densities, term by term."""
    if spec.mu_only:
        total = norm.logpdf(p.mu[0], 0.0, 1.0)
        for a, b in zip(p.mu[1:], p.mu[:-1]):
            total += norm.logpdf(a - b, 0.0, 1.0)
        return float(total)
    sig = np.exp(p.log_sigma)
    total = 0.0
    for row, sd in [(p.mu, sig[0])] + [(r, sig[1]) for r in p.beta_free]:
        total += norm.logpdf(row[0], 0.0, sd)
        total += norm.logpdf(np.diff(row), 0.0, sd).sum()
    total += norm.logpdf(p.gamma_free, 0.0, sig[2]).sum()
    total += norm.logpdf(p.omega_free, 0.0, sig[3]).sum()
    # half-normal hyperpriors on the scales, plus the log-scale Jacobian
    total += halfnorm.logpdf(sig, scale=spec.sigma_scale).sum() + p.log_sigma.sum()
    return float(total)


class TestPrior:
    def test_log_prior_matches_independent_route(self):
        spec = ModelSpec(S=3, T=4)
        for seed in range(5):
            p = sample_prior(spec, rng_for(seed))
            assert log_prior(p, spec) == pytest.approx(
                _independent_log_prior(p, spec), rel=1e-12
            )

    def test_mu_only_prior_is_unit_random_walk(self):
        spec = ModelSpec(S=2, T=3, Z=2, mu_only=True)
        p = ParameterState.zeros(spec)
        p.mu[:] = [0.5, 0.7, 0.2]
        assert log_prior(p, spec) == pytest.approx(
            _independent_log_prior(p, spec), rel=1e-12
        )

    def test_posterior_is_likelihood_plus_prior(self, golden):
        d, spec = golden
        p = ParameterState.zeros(spec)
        p.mu[0] = 0.4
        assert log_posterior(p, d, spec) == pytest.approx(
            log_likelihood(p, d, spec) + log_prior(p, spec), abs=1e-12
        )

    def test_sample_prior_scales_respect_spec(self):
        spec = ModelSpec(S=2, T=1, sigma_scale=0.5)
        draws = np.array(
            [np.exp(sample_prior(spec, rng_for(i)).log_sigma) for i in range(400)]
        )
        # half-normal(0.5) has mean 0.5*sqrt(2/pi) ~ 0.399
        assert draws.mean() == pytest.approx(0.399, abs=0.05)


class TestVectorization:
    def test_roundtrip(self):
        spec = ModelSpec(S=3, T=2)
        p = sample_prior(spec, rng_for(8))
        q = from_vector(to_vector(p, spec), spec)
        assert np.array_equal(to_vector(q, spec), to_vector(p, spec))

    def test_layout_covers_vector_exactly(self):
        spec = ModelSpec(S=3, T=2)
        lay = layout(spec)
        stops = [lay.mu, lay.beta, lay.gamma, lay.omega, lay.sigma]
        assert stops[0].start == 0
        for a, b in zip(stops, stops[1:]):
            assert a.stop == b.start
        assert stops[-1].stop == spec.dim

    def test_param_names_align_with_vector(self):
        spec = ModelSpec(S=3, T=2)
        names = param_names(spec)
        assert len(names) == spec.dim
        assert len(set(names)) == spec.dim
        assert names[0] == "mu[1]"
        assert names[-4:] == (
            "log_sigma_mu", "log_sigma_beta", "log_sigma_gamma", "log_sigma_omega",
        )
        lay = layout(spec)
        assert names[lay.beta.start] == "beta[1,1]"
        assert names[lay.gamma.start] == "gamma_prone[1]"
        assert names[lay.omega.start] == "omega[1,individual]"

    def test_wrong_length_vector_rejected(self):
        spec = ModelSpec(S=3, T=2)
        with pytest.raises(DataError):
            from_vector(np.zeros(spec.dim + 1), spec)


class TestGradient:
    def test_matches_finite_differences_small(self):
        d, _ = make_season_small()
        spec = ModelSpec.for_dataset(d)
        rng = rng_for(19)
        f = lambda v: log_posterior(from_vector(v, spec), d, spec)
        for _ in range(20):
            x = rng.normal(0.0, 0.5, spec.dim)
            g = grad_log_posterior(from_vector(x, spec), d, spec)
            for i in rng.choice(spec.dim, 6, replace=False):
                h = 1e-5 * (1.0 + abs(x[i]))
                e = np.zeros(spec.dim)
                e[i] = h
                fd = (f(x + e) - f(x - e)) / (2 * h)
                rel = abs(g[i] - fd) / max(1.0, abs(g[i]), abs(fd))
                assert rel < 1e-6, f"coord {i}: analytic {g[i]}, fd {fd}"

    def test_gradient_shape_and_finiteness(self, season):
        d, _ = season
        spec = ModelSpec.for_dataset(d)
        g = grad_log_posterior(sample_prior(spec, rng_for(2)), d, spec)
        assert g.shape == (spec.dim,)
        assert np.all(np.isfinite(g))


def make_season_small():
    schedule = {1: ("sprint", "pursuit"), 2: ("individual",)}
    from biathlon_bayes import synth

    cfg = synth.SynthConfig(n_athletes=3, n_stages=2, schedule=schedule, seed=13)
    return synth.generate_synthetic(cfg)


def _relabel(p: ParameterState, spec: ModelSpec, perm) -> ParameterState:
    """The state describing the same physical effects after athletes are
    reindexed by ``perm`` (new index i holds old athlete perm[i])."""
    eff = expand(p, spec)
    q = ParameterState.zeros(spec)
    q.mu[:] = p.mu
    q.beta_free[:] = eff.beta[perm][:-1]
    q.gamma_free[:] = eff.gamma[perm][:, 0]
    q.omega_free[:] = eff.omega[perm][:, : spec.Z - 1]
    q.log_sigma[:] = p.log_sigma
    return q


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_log_likelihood_equivariant_under_relabeling(rnd):
    """Shuffling rows (which can reindex athletes) must not change the
    likelihood of the correspondingly relabeled state."""
    d, _ = make_season_small()
    spec = ModelSpec.for_dataset(d)
    p = sample_prior(spec, rng_for(1))
    records = list(d.records)
    rnd.shuffle(records)
    shuffled = Dataset.from_records(records, n_stages=d.n_stages)
    perm = [d.athletes.index(a) for a in shuffled.athletes]
    q = _relabel(p, spec, perm)
    assert log_likelihood(q, shuffled, spec) == pytest.approx(
        log_likelihood(p, d, spec), rel=1e-12
    )
