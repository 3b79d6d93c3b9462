"""Deterministic synthetic data generation for the simulation settings.

Designs have an all-ones first column followed by p random covariates.  The
default covariate law has uniform marginals on sqrt(3)*[-1, 1] with
covariance 0.5^{|j-k|}, built through a Gaussian copula: if z is normal with
correlation rho_z = 2 sin(pi * 0.5^{|j-k|} / 6), the transformed uniforms
u = sqrt(3) (2 Phi(z) - 1) have exactly the target covariance.  Responses
follow location-scale models y = x'beta* + sigma(x) (eps - F_eps^{-1}(tau)),
so the conditional tau-quantile of y given x is exactly x'beta*.

All randomness comes from counter-based Philox streams keyed by
(seed, trial, shard), so any (spec, seed) pair regenerates bit-identical data.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import special
from scipy.stats import norm

from .data import FederatedDataset, partition

LINEAR = "LinearHetero"
QUADRATIC = "QuadraticHetero"
LOW_HET = "LowHet"
HIGH_HET = "HighHet"
SPARSE_LINEAR = "SparseLinearHetero"
SPARSE_QUADRATIC = "SparseQuadraticHetero"
APPENDIX_E = "AppendixE"
DGP_KINDS = (LINEAR, QUADRATIC, LOW_HET, HIGH_HET, SPARSE_LINEAR,
             SPARSE_QUADRATIC, APPENDIX_E)


@dataclass(frozen=True)
class DgpSpec:
    """One simulation setting: model kind, sizes, quantile level, noise."""

    kind: str
    p: int
    n: int
    m: int
    tau: float
    nu: float      # Student-t degrees of freedom of the noise
    seed: int
    a: float = 0.2  # linear heteroscedasticity slope (LinearHetero only)

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.p < 1 or self.n < 1 or self.m < 1:
            raise ValueError("p, n, m must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")
        if self.nu <= 0:
            raise ValueError("nu must be positive")

    @property
    def N(self) -> int:
        return self.n * self.m


def t_quantile(nu, prob):
    """Student-t quantile via the inverse regularized incomplete beta."""
    prob = np.asarray(prob, dtype=float)
    if np.any(prob <= 0) or np.any(prob >= 1):
        raise ValueError("prob must lie strictly in (0, 1)")
    if nu <= 0:
        raise ValueError("nu must be positive")
    out = special.stdtrit(nu, prob)
    return float(out) if out.ndim == 0 else out


def t_cdf(nu, x):
    return special.stdtr(nu, np.asarray(x, dtype=float))


def _rng(seed, trial=0, shard=0):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence((int(seed), int(trial), int(shard)))))


def _copula_correlation(p):
    # normal-score correlation that maps to uniform covariance 0.5^{|j-k|}
    lags = 0.5 ** np.arange(p)
    return scipy.linalg.toeplitz(2.0 * np.sin(np.pi * lags / 6.0))


def gen_covariates(n, p, seed, trial=0, style="copula"):
    """n x (p+1) design: ones column, then p random covariates.

    ``style`` is "copula" (uniform marginals on sqrt(3)*[-1,1], covariance
    0.5^{|j-k|}) or "iid-uniform" (independent uniforms on [-1, 1]).
    """
    rng = _rng(seed, trial, 0)
    if style == "copula":
        L = scipy.linalg.cholesky(_copula_correlation(p), lower=True)
        z = rng.standard_normal((n, p)) @ L.T
        cov = math.sqrt(3.0) * (2.0 * norm.cdf(z) - 1.0)
    elif style == "iid-uniform":
        cov = rng.uniform(-1.0, 1.0, size=(n, p))
    else:
        raise ValueError(f"unknown covariate style {style!r}")
    return np.column_stack([np.ones(n), cov])


def covariate_style(kind):
    return "iid-uniform" if kind == APPENDIX_E else "copula"


def make_truth(spec: DgpSpec):
    """Exact coefficient vector, length p+1 (intercept first)."""
    if spec.kind in (SPARSE_LINEAR, SPARSE_QUADRATIC):
        beta = np.zeros(spec.p + 1)
        beta[0] = 3.0
        beta[1:6] = 1.0
        return beta
    if spec.kind == APPENDIX_E:
        return np.concatenate([[2.0], np.ones(spec.p)])
    return np.ones(spec.p + 1)


def _scale(spec: DgpSpec, X):
    """Heteroscedastic scale sigma(x); columns of X after the first are the
    covariates x_1..x_p."""
    kind = spec.kind
    if kind == LINEAR:
        s = spec.a * X[:, -1] + 1.0
    elif kind == LOW_HET:
        s = 0.2 * X[:, -1] + 1.0
    elif kind == HIGH_HET:
        s = 0.4 * X[:, -1] + 1.0
    elif kind == QUADRATIC or kind == SPARSE_QUADRATIC:
        s = 0.5 * (1.0 + (0.25 * X[:, -1] - 1.0) ** 2)
    elif kind == SPARSE_LINEAR:
        s = 0.2 * X[:, 1] + 1.0
    elif kind == APPENDIX_E:
        s = 0.25 * X[:, 1] + 0.25 * X[:, 2] + 0.75
    else:  # pragma: no cover
        raise ValueError(kind)
    if np.any(s <= 0):
        raise ValueError("non-positive heteroscedastic scale; x outside the "
                         "support of the model")
    return s


def gen_response(X, beta_star, spec: DgpSpec, trial=0, eps=None):
    """y = X beta* + sigma(x) (eps - F^{-1}_eps(tau)), eps ~ t_nu i.i.d.

    ``eps`` (test hook) supplies the noise draws directly; forcing
    eps = F^{-1}_eps(tau) gives y = X beta* exactly.
    """
    X = np.asarray(X, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape != (X.shape[1],):
        raise ValueError("beta_star length must match X columns")
    if eps is None:
        rng = _rng(spec.seed, trial, 1)
        eps = t_quantile(spec.nu, rng.random(X.shape[0]))
    centered = np.asarray(eps, dtype=float) - t_quantile(spec.nu, spec.tau)
    return X @ beta_star + _scale(spec, X) * centered


def gen_dataset(spec: DgpSpec, trial=0) -> FederatedDataset:
    """One full trial: covariates + response, partitioned into m shards."""
    X = gen_covariates(spec.N, spec.p, spec.seed, trial,
                       style=covariate_style(spec.kind))
    y = gen_response(X, make_truth(spec), spec, trial)
    if spec.m == 1:
        from .data import DataShard
        return FederatedDataset(shards=[DataShard(y=y, X=X, shard_id=0)])
    # rows are already exchangeable; the partition seed only fixes the split
    split_seed = int(np.random.SeedSequence(
        (spec.seed, trial, 2)).generate_state(1)[0])
    return partition(y, X, spec.m, split_seed)


def describe(spec: DgpSpec) -> str:
    """Resolved spec as key-value lines (the `dgp describe` format)."""
    lines = [
        f"kind={spec.kind}", f"p={spec.p}", f"n={spec.n}", f"m={spec.m}",
        f"N={spec.N}", f"tau={spec.tau}", f"noise=StudentT({spec.nu})",
        f"seed={spec.seed}",
    ]
    if spec.kind == LINEAR:
        lines.append(f"a={spec.a}")
    lines.append(f"covariates={covariate_style(spec.kind)}")
    return "\n".join(lines)
