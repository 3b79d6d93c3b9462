import math

import numpy as np
import pytest

from dqr.datagen import (
    APPENDIX_E,
    DGP_KINDS,
    DgpSpec,
    covariate_style,
    describe,
    gen_covariates,
    gen_dataset,
    gen_response,
    make_truth,
    t_cdf,
    t_quantile,
)


def spec_for(kind, **kw):
    base = dict(kind=kind, p=4, n=50, m=2, tau=0.7, nu=2.0, seed=5)
    base.update(kw)
    return DgpSpec(**base)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            spec_for("Cauchy")
        with pytest.raises(ValueError):
            spec_for("LinearHetero", tau=1.0)
        with pytest.raises(ValueError):
            spec_for("LinearHetero", nu=0.0)
        with pytest.raises(ValueError):
            spec_for("LinearHetero", p=0)

    def test_total_size(self):
        assert spec_for("LinearHetero", n=30, m=7).N == 210

    def test_describe_mentions_sizes(self):
        text = describe(spec_for("LinearHetero"))
        assert "kind=LinearHetero" in text
        assert "n=50" in text and "m=2" in text and "N=100" in text


class TestStudentT:
    def test_t2_closed_form(self):
        # for 2 degrees of freedom the quantile is (2p-1)/sqrt(2p(1-p))
        for prob in (0.05, 0.3, 0.5, 0.8, 0.99):
            expected = (2 * prob - 1) / math.sqrt(2 * prob * (1 - prob))
            assert t_quantile(2.0, prob) == pytest.approx(expected, rel=1e-10)

    def test_t1_closed_form(self):
        # Cauchy quantile tan(pi (p - 1/2))
        for prob in (0.2, 0.5, 0.77):
            assert t_quantile(1.0, prob) == pytest.approx(
                math.tan(math.pi * (prob - 0.5)), rel=1e-10)

    def test_cdf_inverts_quantile(self):
        for nu in (1.5, 2.0, 5.0):
            for prob in (0.1, 0.4, 0.9):
                assert float(t_cdf(nu, t_quantile(nu, prob))) == pytest.approx(
                    prob, abs=1e-9)

    def test_domain_guards(self):
        with pytest.raises(ValueError):
            t_quantile(2.0, 0.0)
        with pytest.raises(ValueError):
            t_quantile(-1.0, 0.5)


class TestCovariates:
    def test_shape_and_ones_column(self):
        X = gen_covariates(100, 6, seed=1)
        assert X.shape == (100, 7)
        np.testing.assert_array_equal(X[:, 0], 1.0)

    def test_deterministic_streams(self):
        a = gen_covariates(50, 3, seed=2, trial=4)
        b = gen_covariates(50, 3, seed=2, trial=4)
        c = gen_covariates(50, 3, seed=2, trial=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_copula_marginals_and_covariance(self):
        # Monte Carlo oracle: uniform marginals scaled to variance 1 and
        # geometric cross-covariance 0.5^{|j-k|}
        X = gen_covariates(200000, 4, seed=3)[:, 1:]
        assert np.max(np.abs(X)) <= math.sqrt(3) + 1e-9
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=0.02)
        cov = np.cov(X.T)
        target = 0.5 ** np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
        np.testing.assert_allclose(cov, target, atol=0.02)

    def test_iid_uniform_style(self):
        X = gen_covariates(100000, 3, seed=4, style="iid-uniform")[:, 1:]
        assert np.min(X) >= -1.0 and np.max(X) <= 1.0
        cov = np.cov(X.T)
        np.testing.assert_allclose(cov, np.eye(3) / 3.0, atol=0.02)
        with pytest.raises(ValueError):
            gen_covariates(10, 2, seed=0, style="exponential")

    def test_style_per_kind(self):
        assert covariate_style(APPENDIX_E) == "iid-uniform"
        assert covariate_style("LinearHetero") == "copula"


class TestTruth:
    def test_lengths_and_values(self):
        assert make_truth(spec_for("LinearHetero", p=6)).shape == (7,)
        sparse = make_truth(spec_for("SparseLinearHetero", p=20))
        np.testing.assert_array_equal(sparse[:6], [3, 1, 1, 1, 1, 1])
        np.testing.assert_array_equal(sparse[6:], 0.0)
        appe = make_truth(spec_for(APPENDIX_E, p=10))
        assert appe[0] == 2.0 and np.all(appe[1:] == 1.0)


class TestResponse:
    def test_noise_pinned_at_quantile_gives_exact_plane(self):
        spec = spec_for("LinearHetero", p=3, n=40, m=1)
        X = gen_covariates(40, 3, spec.seed)
        beta = make_truth(spec)
        eps = np.full(40, t_quantile(spec.nu, spec.tau))
        y = gen_response(X, beta, spec, eps=eps)
        np.testing.assert_allclose(y, X @ beta, atol=1e-12)

    def test_beta_length_checked(self):
        spec = spec_for("LinearHetero", p=3)
        X = gen_covariates(10, 3, spec.seed)
        with pytest.raises(ValueError):
            gen_response(X, np.ones(3), spec)

    @pytest.mark.parametrize("kind", DGP_KINDS)
    def test_conditional_quantile_property(self, kind):
        # P(y <= x' beta*) must equal tau for every model kind
        spec = spec_for(kind, p=6, n=40000, m=1, tau=0.7)
        X = gen_covariates(spec.N, spec.p, spec.seed,
                           style=covariate_style(kind))
        beta = make_truth(spec)
        y = gen_response(X, beta, spec)
        frac = float(np.mean(y <= X @ beta))
        assert frac == pytest.approx(0.7, abs=0.01)


class TestDataset:
    def test_partition_and_shapes(self):
        spec = spec_for("LinearHetero", n=30, m=4, p=3)
        fed = gen_dataset(spec, trial=1)
        assert fed.m == 4
        assert fed.total_n == 120
        assert fed.p == 4

    def test_bit_identical_regeneration(self):
        spec = spec_for("QuadraticHetero", n=25, m=3, p=3)
        a = gen_dataset(spec, trial=2)
        b = gen_dataset(spec, trial=2)
        for sa, sb in zip(a.shards, b.shards):
            np.testing.assert_array_equal(sa.y, sb.y)
            np.testing.assert_array_equal(sa.X, sb.X)

    def test_trials_differ(self):
        spec = spec_for("LinearHetero", n=25, m=1, p=3)
        a = gen_dataset(spec, trial=0)
        b = gen_dataset(spec, trial=1)
        assert not np.array_equal(a.master.y, b.master.y)

    def test_single_machine_case(self):
        spec = spec_for("HighHet", n=30, m=1, p=2)
        fed = gen_dataset(spec)
        assert fed.m == 1 and fed.master.n == 30
