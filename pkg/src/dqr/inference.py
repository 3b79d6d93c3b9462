"""Variance estimation, Wald intervals, self-normalized score confidence
sets, and the two communication-efficient multiplier bootstraps.

All procedures only need quantities the master can assemble from one round of
shard messages: shard gradients at the global bandwidth, shard second-moment
matrices, and shard kernel-density sums.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import as_federated
from .kernels import KernelSpec, SmoothedLossParams, gradient_weight, kernel_density
from .smoothed_qr import dynamic_bandwidth_scale  # noqa: F401  (re-export convenience)

TYPE_I = "TypeI"
TYPE_II = "TypeII"
TYPE_III = "TypeIII"
VARIANCE_KINDS = (TYPE_I, TYPE_II, TYPE_III)

WALD = "WaldNormal"
SCORE = "Score"
BOOT_A = "BootA"
BOOT_B = "BootB"


@dataclass
class VarianceEstimate:
    """Per-coefficient standard deviations of the sqrt(N)-scaled estimator."""

    kind: str
    sigma_j: np.ndarray
    H_hat: np.ndarray
    Sigma_hat: np.ndarray

    def __post_init__(self):
        if self.kind not in VARIANCE_KINDS:
            raise ValueError(f"unknown variance kind {self.kind!r}")
        if not np.allclose(self.H_hat, self.H_hat.T):
            raise ValueError("H_hat must be symmetric")
        if not np.allclose(self.Sigma_hat, self.Sigma_hat.T):
            raise ValueError("Sigma_hat must be symmetric")


@dataclass
class InferenceReport:
    """Per-coefficient intervals, or accepted grid values for the score set."""

    method: str
    level: float
    lower: np.ndarray = None
    upper: np.ndarray = None
    accepted: np.ndarray = None    # Score only: accepted grid values
    undecided: np.ndarray = None   # Score only: grid values with failed fits
    coef_index: int = None         # Score only: which coordinate

    def __post_init__(self):
        if self.method not in (WALD, SCORE, BOOT_A, BOOT_B):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method != SCORE and np.any(self.lower > self.upper):
            raise ValueError("interval lower bounds exceed upper bounds")

    def csv_rows(self):
        """Rows of (coef_index, method, level, lower, upper); score sets emit
        one row per maximal run of accepted grid values."""
        rows = []
        if self.method == SCORE:
            for lo, hi in accepted_runs(self.accepted):
                rows.append((self.coef_index, self.method, self.level, lo, hi))
        else:
            for j, (lo, hi) in enumerate(zip(self.lower, self.upper)):
                rows.append((j, self.method, self.level, lo, hi))
        return rows


CSV_HEADER = "coef_index,method,level,lower,upper"


def write_reports_csv(reports, path):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for report in reports:
            for idx, method, level, lo, hi in report.csv_rows():
                fh.write(f"{idx},{method},{level},{float(lo)!r},{float(hi)!r}\n")


def accepted_runs(accepted):
    """Group a sorted array of accepted grid values into (start, end) runs of
    consecutive grid spacing; a single gap splits the run."""
    accepted = np.asarray(accepted, dtype=float)
    if accepted.size == 0:
        return []
    gaps = np.diff(accepted)
    step = np.min(gaps) if gaps.size else 0.0
    runs = []
    start = accepted[0]
    for i in range(1, len(accepted)):
        if gaps[i - 1] > 1.5 * step:
            runs.append((start, accepted[i - 1]))
            start = accepted[i]
    runs.append((start, accepted[-1]))
    return runs


# ---------------------------------------------------------------------------
# variance estimation

def powell_hessian(shard, residuals, b):
    """Kernel-weighted Hessian estimate (1/(n b)) sum phi(e_i/b) x_i x_i'.

    Always uses the standard normal density, independent of the smoothing
    kernel used for estimation.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != (shard.n,):
        raise ValueError("residuals length must match shard size")
    w = norm.pdf(residuals / b) / b
    return (shard.X.T * w) @ shard.X / shard.n


def covariance_estimates(shard, residuals, b, tau, kernel=KernelSpec()):
    """(Sigma1, SigmaTau): plain and score-weighted second-moment matrices."""
    residuals = np.asarray(residuals, dtype=float)
    Sigma1 = shard.X.T @ shard.X / shard.n
    w = gradient_weight(SmoothedLossParams(tau=tau, h=b, kernel=kernel),
                        residuals) ** 2
    SigmaTau = (shard.X.T * w) @ shard.X / shard.n
    return Sigma1, SigmaTau


def density_at_zero(fed, residuals_by_shard, b, kernel=KernelSpec()):
    """Distributed KDE of the residual density at zero: shard means of
    K(e/b)/b averaged with weights n_j/N; equals the pooled KDE exactly."""
    if b <= 0:
        raise ValueError("b must be positive")
    fed = as_federated(fed)
    means = np.array([
        float(np.mean(kernel_density(kernel, np.asarray(res, dtype=float) / b))) / b
        for res in residuals_by_shard
    ])
    return float(fed.weights @ means)


def hall_sheather_bandwidth(N, tau, alpha):
    """Rule-of-thumb KDE bandwidth for the residual density at a quantile."""
    if not (0 < tau < 1 and 0 < alpha < 1 and N >= 1):
        raise ValueError("need 0<tau<1, 0<alpha<1, N>=1")
    z_alpha = norm.ppf(1 - alpha / 2)
    z_tau = norm.ppf(tau)
    return (N ** (-1 / 3) * z_alpha ** (2 / 3)
            * (1.5 * norm.pdf(z_tau) ** 2 / (2 * z_tau ** 2 + 1)) ** (1 / 3))


def estimate_variance(fed, beta, tau, b, kind=TYPE_II, kernel=KernelSpec(),
                      alpha=0.05) -> VarianceEstimate:
    """Assemble a VarianceEstimate of the requested kind at the fit ``beta``.

    TypeI:   tau(1-tau) fhat(0)^{-2} (Sigma1^{-1})_{jj}, with a pooled Sigma1
             and the distributed KDE at the Hall-Sheather bandwidth; only
             calibrated for homoscedastic errors.
    TypeII:  tau(1-tau) (H^{-1} Sigma1 H^{-1})_{jj} with the master-shard
             kernel Hessian at bandwidth b.
    TypeIII: (H^{-1} SigmaTau H^{-1})_{jj} with the score-weighted
             second-moment matrix at bandwidth b.
    """
    fed = as_federated(fed)
    master = fed.master
    res_master = master.y - master.X @ beta

    if kind == TYPE_I:
        y, X, offsets = fed.pooled()
        res_all = y - X @ beta
        Sigma1 = X.T @ X / fed.total_n
        res_by_shard = [res_all[a:c] for a, c in zip(offsets[:-1], offsets[1:])]
        f0 = density_at_zero(fed, res_by_shard, hall_sheather_bandwidth(
            fed.total_n, tau, alpha), kernel)
        if f0 <= 0:
            raise ValueError("estimated residual density at zero is not positive")
        H = f0 * Sigma1
        var = tau * (1 - tau) / f0 ** 2 * np.diag(np.linalg.inv(Sigma1))
        Sigma_used = Sigma1
    else:
        H = powell_hessian(master, res_master, b)
        Sigma1, SigmaTau = covariance_estimates(master, res_master, b, tau, kernel)
        Hinv = np.linalg.inv(H)
        if kind == TYPE_II:
            var = tau * (1 - tau) * np.diag(Hinv @ Sigma1 @ Hinv)
            Sigma_used = Sigma1
        else:
            var = np.diag(Hinv @ SigmaTau @ Hinv)
            Sigma_used = SigmaTau

    return VarianceEstimate(kind=kind, sigma_j=np.sqrt(np.maximum(var, 0.0)),
                            H_hat=H, Sigma_hat=Sigma_used)


def wald_intervals(beta_tilde, var: VarianceEstimate, N, alpha) -> InferenceReport:
    """Normal-based intervals beta_j +/- z_{1-alpha/2} sigma_j / sqrt(N)."""
    beta_tilde = np.asarray(beta_tilde, dtype=float)
    for j, s in enumerate(var.sigma_j):
        if not s > 0:
            raise ValueError(
                f"non-positive standard deviation for coefficient {j} "
                f"({var.kind}): {s}")
    half = norm.ppf(1 - alpha / 2) * var.sigma_j / math.sqrt(N)
    return InferenceReport(method=WALD, level=1 - alpha,
                           lower=beta_tilde - half, upper=beta_tilde + half)


# ---------------------------------------------------------------------------
# score confidence sets

def score_statistic(fed, beta_constrained, k, tau, h, kernel=KernelSpec()):
    """Self-normalized score statistic for coordinate k at a constrained fit.

    Accumulated shard-by-shard: S = sum of xi_i x_{ik}, V^2 = sum of squares,
    T = (S/V) / sqrt((N - (S/V)^2) / (N - 1)).
    """
    fed = as_federated(fed)
    beta_constrained = np.asarray(beta_constrained, dtype=float)
    y, X, offsets = fed.pooled()
    N = fed.total_n
    params = SmoothedLossParams(tau=tau, h=h, kernel=kernel)
    prod = gradient_weight(params, y - X @ beta_constrained) * X[:, k]
    # per-shard partial sums, combined in fixed shard order
    S = float(np.sum(np.add.reduceat(prod, offsets[:-1])))
    V2 = float(np.sum(np.add.reduceat(prod ** 2, offsets[:-1])))
    if V2 == 0.0:
        if S == 0.0:
            return 0.0
        raise ValueError("degenerate score statistic: V = 0 with S != 0")
    ratio2 = S * S / V2
    if ratio2 >= N:
        return math.copysign(math.inf, S)
    return (S / math.sqrt(V2)) / math.sqrt((N - ratio2) / (N - 1))


def default_score_grid(beta_k, sigma_k, N, n_points=401, span=6.0):
    half = span * sigma_k / math.sqrt(N)
    return np.linspace(beta_k - half, beta_k + half, n_points)


def score_confidence_set(fed, k, tau, h, grid, alpha, b=None, T=None,
                         kernel=KernelSpec(), beta_init=None) -> InferenceReport:
    """Invert the score test over a grid of hypothesized values for
    coordinate k.  Constrained fits are warm-started along the grid."""
    from .smoothed_qr import fit_constrained

    fed = as_federated(fed)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be nonempty and sorted")
    z_lo, z_hi = norm.ppf(alpha / 2), norm.ppf(1 - alpha / 2)

    accepted, undecided = [], []
    warm = beta_init
    for c in grid:
        try:
            beta_c = fit_constrained(fed, tau, h, k, c, kernel=kernel,
                                     beta0=warm, b=b, T=T)
            warm = beta_c
            t_stat = score_statistic(fed, beta_c, k, tau, h, kernel)
        except (RuntimeError, FloatingPointError, ValueError):
            undecided.append(c)
            continue
        if z_lo <= t_stat <= z_hi:
            accepted.append(c)
    return InferenceReport(method=SCORE, level=1 - alpha, coef_index=k,
                           accepted=np.array(accepted),
                           undecided=np.array(undecided))


# ---------------------------------------------------------------------------
# multiplier bootstraps

def empirical_quantile(draws, q):
    """Inf-type empirical quantile: order statistic at index ceil(q * B)."""
    draws = np.sort(np.asarray(draws, dtype=float))
    B = len(draws)
    idx = min(max(int(math.ceil(q * B)), 1), B)
    return draws[idx - 1]


def inverse_powell_hessian(shard, residuals, b):
    H = powell_hessian(shard, residuals, b)
    try:
        return np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"singular kernel Hessian at bandwidth {b}") from exc


def bootstrap_intervals(fed, beta_tilde, tau, h, variant, H1_inverse,
                        B_reps, alpha, seed, kernel=KernelSpec(),
                        zero_multipliers=False) -> InferenceReport:
    """Multiplier-bootstrap confidence intervals.

    Variant "A" perturbs the m aggregated shard gradients; variant "B"
    perturbs the master's per-observation score terms plus the other m-1
    shard gradients.  Replicate r draws its multipliers from an independent
    stream keyed by (seed, r) in index order.  ``zero_multipliers`` is a test
    hook that forces every multiplier to zero.
    """
    fed = as_federated(fed)
    if variant not in ("A", "B"):
        raise ValueError(f"unknown bootstrap variant {variant!r}")
    if B_reps < 100:
        raise ValueError("need at least 100 bootstrap replicates")
    beta_tilde = np.asarray(beta_tilde, dtype=float)
    H1_inverse = np.asarray(H1_inverse, dtype=float)
    N = fed.total_n
    m = fed.m

    from .federation import gather_gradients
    msgs = gather_gradients(fed, beta_tilde, tau, h, kernel)
    G = np.vstack([msg.grad for msg in msgs])          # (m, p)
    sqrt_n = np.sqrt(np.array([s.n for s in fed.shards], dtype=float))

    if variant == "A":
        M = sqrt_n[:, None] * G
        scale = math.sqrt(m)
    else:
        master = fed.master
        params = SmoothedLossParams(tau=tau, h=h, kernel=kernel)
        xi = gradient_weight(params, master.y - master.X @ beta_tilde)
        Xi = xi[:, None] * master.X                    # (n, p)
        M = np.vstack([Xi, sqrt_n[1:, None] * G[1:]])  # (n + m - 1, p)
        scale = math.sqrt(master.n + m - 1)

    n_mult = M.shape[0]
    draws = np.empty((B_reps, fed.p))
    for r in range(B_reps):
        if zero_multipliers:
            e = np.zeros(n_mult)
        else:
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence((seed, r))))
            e = rng.standard_normal(n_mult)
        draws[r] = -H1_inverse @ (M.T @ e) / scale

    lower = np.empty(fed.p)
    upper = np.empty(fed.p)
    for j in range(fed.p):
        c_hi = empirical_quantile(draws[:, j], 1 - alpha / 2)
        c_lo = empirical_quantile(draws[:, j], alpha / 2)
        lower[j] = beta_tilde[j] - c_hi / math.sqrt(N)
        upper[j] = beta_tilde[j] - c_lo / math.sqrt(N)
    method = BOOT_A if variant == "A" else BOOT_B
    return InferenceReport(method=method, level=1 - alpha,
                           lower=lower, upper=upper)
