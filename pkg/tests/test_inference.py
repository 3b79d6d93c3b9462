import math

import numpy as np
import pytest
from scipy.stats import norm

from dqr.data import DataShard, FederatedDataset, partition
from dqr.inference import (
    BOOT_A,
    SCORE,
    TYPE_I,
    TYPE_II,
    TYPE_III,
    InferenceReport,
    VarianceEstimate,
    accepted_runs,
    bootstrap_intervals,
    covariance_estimates,
    default_score_grid,
    density_at_zero,
    empirical_quantile,
    estimate_variance,
    hall_sheather_bandwidth,
    inverse_powell_hessian,
    powell_hessian,
    score_confidence_set,
    score_statistic,
    wald_intervals,
    write_reports_csv,
)
from dqr.smoothed_qr import fit_conquer


def make_fed(N=400, p=3, m=4, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(N), rng.normal(size=(N, p - 1))])
    beta_star = np.ones(p)
    y = X @ beta_star + rng.normal(size=N)
    return partition(y, X, m, seed=seed + 1), beta_star


class TestReportContainers:
    def test_variance_requires_symmetry(self):
        with pytest.raises(ValueError):
            VarianceEstimate(kind=TYPE_II, sigma_j=np.ones(2),
                             H_hat=np.array([[1.0, 2.0], [0.0, 1.0]]),
                             Sigma_hat=np.eye(2))

    def test_report_interval_ordering(self):
        with pytest.raises(ValueError):
            InferenceReport(method="WaldNormal", level=0.95,
                            lower=np.array([1.0]), upper=np.array([0.0]))

    def test_accepted_runs_split_on_gap(self):
        vals = np.array([0.0, 0.1, 0.2, 0.5, 0.6])
        assert accepted_runs(vals) == [(0.0, 0.2), (0.5, 0.6)]
        assert accepted_runs(np.array([])) == []
        assert accepted_runs(np.array([3.0])) == [(3.0, 3.0)]

    def test_csv_round_trip(self, tmp_path):
        report = InferenceReport(method="BootA", level=0.95,
                                 lower=np.array([0.1]), upper=np.array([0.9]))
        path = tmp_path / "reports.csv"
        write_reports_csv([report], str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "coef_index,method,level,lower,upper"
        idx, method, level, lo, hi = lines[1].split(",")
        assert (int(idx), method) == (0, "BootA")
        assert float(lo) == 0.1 and float(hi) == 0.9

    def test_score_csv_rows_emit_runs(self):
        report = InferenceReport(method=SCORE, level=0.9, coef_index=2,
                                 accepted=np.array([0.0, 0.1, 0.5]),
                                 undecided=np.array([]))
        rows = report.csv_rows()
        assert rows == [(2, SCORE, 0.9, 0.0, 0.1), (2, SCORE, 0.9, 0.5, 0.5)]


class TestVariancePieces:
    def test_powell_hessian_direct(self):
        fed, _ = make_fed(seed=1)
        shard = fed.master
        res = np.linspace(-1, 1, shard.n)
        H = powell_hessian(shard, res, 0.3)
        w = norm.pdf(res / 0.3) / 0.3
        expected = (shard.X.T * w) @ shard.X / shard.n
        np.testing.assert_allclose(H, expected, atol=1e-12)
        with pytest.raises(ValueError):
            powell_hessian(shard, res, 0.0)
        with pytest.raises(ValueError):
            powell_hessian(shard, res[:-1], 0.3)

    def test_covariance_estimates_shapes(self):
        fed, _ = make_fed(seed=2)
        shard = fed.master
        res = shard.y - shard.X @ np.ones(shard.p)
        Sigma1, SigmaTau = covariance_estimates(shard, res, 0.4, 0.3)
        np.testing.assert_allclose(Sigma1, shard.X.T @ shard.X / shard.n)
        assert np.min(np.linalg.eigvalsh(SigmaTau)) >= -1e-12

    def test_density_at_zero_matches_pooled_kde(self):
        fed, _ = make_fed(seed=3, m=5)
        y, X, offsets = fed.pooled()
        res = y - X @ np.ones(fed.p)
        parts = [res[a:b] for a, b in zip(offsets[:-1], offsets[1:])]
        f0 = density_at_zero(fed, parts, 0.25)
        pooled = float(np.mean(norm.pdf(res / 0.25))) / 0.25
        assert f0 == pytest.approx(pooled, abs=1e-12)

    def test_hall_sheather_shrinks_with_n(self):
        b1 = hall_sheather_bandwidth(1000, 0.5, 0.05)
        b2 = hall_sheather_bandwidth(100000, 0.5, 0.05)
        assert 0 < b2 < b1

    @pytest.mark.parametrize("kind", [TYPE_I, TYPE_II, TYPE_III])
    def test_estimate_variance_positive(self, kind):
        fed, beta_star = make_fed(N=800, m=4, seed=4)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        var = estimate_variance(fed, beta, 0.5, 0.4, kind)
        assert var.kind == kind
        assert np.all(var.sigma_j > 0)

    def test_type_i_matches_direct_formula(self):
        fed, _ = make_fed(N=600, m=3, seed=5)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        var = estimate_variance(fed, beta, 0.5, 0.4, TYPE_I, alpha=0.05)
        y, X, offsets = fed.pooled()
        res = y - X @ beta
        Sigma1 = X.T @ X / fed.total_n
        bw = hall_sheather_bandwidth(fed.total_n, 0.5, 0.05)
        f0 = float(np.mean(norm.pdf(res / bw))) / bw
        expected = np.sqrt(0.25 / f0**2 * np.diag(np.linalg.inv(Sigma1)))
        np.testing.assert_allclose(var.sigma_j, expected, rtol=1e-10)


class TestWald:
    def test_interval_formula(self):
        var = VarianceEstimate(kind=TYPE_II, sigma_j=np.array([2.0, 4.0]),
                               H_hat=np.eye(2), Sigma_hat=np.eye(2))
        beta = np.array([1.0, -1.0])
        report = wald_intervals(beta, var, N=400, alpha=0.05)
        half = norm.ppf(0.975) * var.sigma_j / 20.0
        np.testing.assert_allclose(report.lower, beta - half)
        np.testing.assert_allclose(report.upper, beta + half)

    def test_zero_sd_raises_with_coefficient_name(self):
        var = VarianceEstimate(kind=TYPE_II, sigma_j=np.array([1.0, 0.0]),
                               H_hat=np.eye(2), Sigma_hat=np.eye(2))
        with pytest.raises(ValueError, match="coefficient 1"):
            wald_intervals(np.zeros(2), var, N=100, alpha=0.05)


class TestScoreStatistic:
    def test_bounded_by_sqrt_n(self):
        # (S/V)^2 <= N algebraically, so |T| is finite or +/- inf only when
        # the bound is attained
        for seed in range(10):
            fed, _ = make_fed(N=200, m=4, seed=seed)
            rng = np.random.default_rng(seed)
            beta = rng.normal(size=fed.p)
            t = score_statistic(fed, beta, 1, 0.3, 0.2)
            assert math.isfinite(t) or math.isinf(t)

    def test_pooled_equals_distributed(self):
        fed, _ = make_fed(N=300, m=6, seed=11)
        beta = np.full(fed.p, 0.5)
        t_fed = score_statistic(fed, beta, 2, 0.4, 0.25)
        mono = FederatedDataset(shards=[fed.pooled_shard()])
        t_pool = score_statistic(mono, beta, 2, 0.4, 0.25)
        assert t_fed == pytest.approx(t_pool, abs=1e-12)

    def test_degenerate_cases(self):
        X = np.column_stack([np.ones(4), np.zeros(4)])
        shard = DataShard(y=np.ones(4), X=X)
        fed = FederatedDataset(shards=[shard])
        # column of zeros: every product term vanishes -> statistic 0
        assert score_statistic(fed, np.zeros(2), 1, 0.5, 0.2) == 0.0

    def test_saturated_statistic_is_infinite(self):
        # all residuals far on one side: every xi has the same sign, and with
        # a constant regressor the self-normalized ratio hits the N bound
        X = np.ones((5, 1))
        shard = DataShard(y=np.full(5, 100.0), X=X)
        fed = FederatedDataset(shards=[shard])
        t = score_statistic(fed, np.zeros(1), 0, 0.5, 0.1)
        assert t == -math.inf or t == math.inf

    def test_antisymmetric_in_tail_direction(self):
        X = np.ones((5, 1))
        up = FederatedDataset(shards=[DataShard(y=np.full(5, 100.0), X=X)])
        down = FederatedDataset(shards=[DataShard(y=np.full(5, -100.0), X=X)])
        t_up = score_statistic(up, np.zeros(1), 0, 0.5, 0.1)
        t_down = score_statistic(down, np.zeros(1), 0, 0.5, 0.1)
        assert t_up == -t_down


class TestScoreSet:
    def test_grid_and_coverage_of_truth(self):
        fed, beta_star = make_fed(N=600, m=3, seed=12)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        var = estimate_variance(fed, beta, 0.5, 0.4, TYPE_III)
        k = 1
        grid = default_score_grid(beta[k], var.sigma_j[k], fed.total_n,
                                  n_points=41, span=5.0)
        assert grid.shape == (41,)
        assert grid[0] < beta[k] < grid[-1]
        report = score_confidence_set(fed, k, 0.5, 0.3, grid, 0.05,
                                      b=0.4, beta_init=beta)
        assert report.undecided.size == 0
        assert report.accepted.size > 0
        # the point estimate itself must be accepted
        assert report.accepted.min() <= beta[k] <= report.accepted.max()

    def test_empty_grid_rejected(self):
        fed, _ = make_fed()
        with pytest.raises(ValueError):
            score_confidence_set(fed, 1, 0.5, 0.3, np.array([]), 0.05)


class TestBootstrap:
    def test_empirical_quantile_order_statistic(self):
        draws = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
        assert empirical_quantile(draws, 0.5) == 3.0
        assert empirical_quantile(draws, 0.2) == 1.0
        assert empirical_quantile(draws, 0.21) == 2.0
        assert empirical_quantile(draws, 1.0) == 5.0

    def test_zero_multipliers_collapse_to_point(self):
        fed, _ = make_fed(N=200, m=4, seed=13)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        res = fed.master.y - fed.master.X @ beta
        H1inv = inverse_powell_hessian(fed.master, res, 0.4)
        for variant in ("A", "B"):
            report = bootstrap_intervals(fed, beta, 0.5, 0.2, variant, H1inv,
                                         200, 0.05, seed=1,
                                         zero_multipliers=True)
            np.testing.assert_allclose(report.lower, beta, atol=1e-12)
            np.testing.assert_allclose(report.upper, beta, atol=1e-12)

    def test_deterministic_in_seed(self):
        fed, _ = make_fed(N=200, m=4, seed=14)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        res = fed.master.y - fed.master.X @ beta
        H1inv = inverse_powell_hessian(fed.master, res, 0.4)
        r1 = bootstrap_intervals(fed, beta, 0.5, 0.2, "A", H1inv, 150, 0.05, seed=7)
        r2 = bootstrap_intervals(fed, beta, 0.5, 0.2, "A", H1inv, 150, 0.05, seed=7)
        r3 = bootstrap_intervals(fed, beta, 0.5, 0.2, "A", H1inv, 150, 0.05, seed=8)
        np.testing.assert_array_equal(r1.lower, r2.lower)
        assert not np.array_equal(r1.lower, r3.lower)

    def test_intervals_contain_estimate(self):
        fed, _ = make_fed(N=400, m=4, seed=15)
        beta = fit_conquer(fed.pooled_shard(), 0.5, 0.3).beta
        res = fed.master.y - fed.master.X @ beta
        H1inv = inverse_powell_hessian(fed.master, res, 0.4)
        for variant, method in (("A", BOOT_A), ("B", "BootB")):
            report = bootstrap_intervals(fed, beta, 0.5, 0.2, variant, H1inv,
                                         300, 0.05, seed=3)
            assert report.method == method
            assert np.all(report.lower < beta)
            assert np.all(report.upper > beta)

    def test_input_guards(self):
        fed, _ = make_fed()
        with pytest.raises(ValueError):
            bootstrap_intervals(fed, np.zeros(fed.p), 0.5, 0.2, "C",
                                np.eye(fed.p), 200, 0.05, seed=0)
        with pytest.raises(ValueError):
            bootstrap_intervals(fed, np.zeros(fed.p), 0.5, 0.2, "A",
                                np.eye(fed.p), 50, 0.05, seed=0)
