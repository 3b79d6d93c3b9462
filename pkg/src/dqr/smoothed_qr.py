"""Kernel-smoothed quantile regression on a single shard.

Provides the smoothed loss/gradient/Hessian, the non-smooth check-loss
utilities, the Barzilai-Borwein gradient descent solver, and plain /
coordinate-constrained fits.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    KernelSpec,
    SmoothedLossParams,
    check_loss,
    gradient_weight,
    kernel_density,
    smoothed_check_loss,
)


@dataclass
class ModelFit:
    """A fitted coefficient vector with its per-round trace."""

    beta: np.ndarray
    grad_sup_norms: list = field(default_factory=list)
    rounds_used: int = 0
    comm_bytes: int = 0
    converged: bool = True

    def __post_init__(self):
        if len(self.grad_sup_norms) != self.rounds_used:
            raise ValueError("grad_sup_norms length must equal rounds_used")
        if self.comm_bytes < 0:
            raise ValueError("comm_bytes must be non-negative")


def _check_beta(shard, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (shard.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({shard.p},)")
    return beta


def conquer_loss(shard, beta, tau, h, kernel=KernelSpec()):
    """Mean smoothed check loss over the shard rows."""
    beta = _check_beta(shard, beta)
    params = SmoothedLossParams(tau=tau, h=h, kernel=kernel)
    return float(np.mean(smoothed_check_loss(params, shard.y - shard.X @ beta)))


def conquer_gradient(shard, beta, tau, h, kernel=KernelSpec()):
    """Gradient of the mean smoothed loss; weight factors lie in [-tau, 1-tau]."""
    beta = _check_beta(shard, beta)
    params = SmoothedLossParams(tau=tau, h=h, kernel=kernel)
    w = gradient_weight(params, shard.y - shard.X @ beta)
    return shard.X.T @ w / shard.n


def conquer_hessian(shard, beta, tau, h, kernel=KernelSpec()):
    """Hessian of the mean smoothed loss; symmetric PSD for non-negative kernels."""
    beta = _check_beta(shard, beta)
    res = shard.y - shard.X @ beta
    w = kernel_density(kernel, res / h) / h
    return (shard.X.T * w) @ shard.X / shard.n


def check_loss_and_subgradient(shard, beta, tau):
    """Mean check loss and its subgradient with the strict-inequality tie rule."""
    beta = _check_beta(shard, beta)
    res = shard.y - shard.X @ beta
    loss = float(np.mean(check_loss(res, tau)))
    sub = shard.X.T @ ((res < 0).astype(float) - tau) / shard.n
    return loss, sub


def dynamic_bandwidth_scale(residuals) -> float:
    """Scale-invariant bandwidth constant: min of the sample SD and 1.4826*MAD."""
    residuals = np.asarray(residuals, dtype=float)
    if len(residuals) < 2:
        raise ValueError("need at least two residuals")
    sd = float(np.std(residuals, ddof=1))
    mad = 1.4826 * float(np.median(np.abs(residuals - np.median(residuals))))
    return min(sd, mad)


@dataclass
class GdBbResult:
    beta: np.ndarray
    n_iter: int
    converged: bool
    grad_norm: float


def gd_bb_minimize(grad_oracle, loss_oracle, beta0, tol=1e-8, max_iter=500,
                   step_cap=20.0) -> GdBbResult:
    """Gradient descent with Barzilai-Borwein step sizes.

    The first update uses a unit step; afterwards the step is
    min(eta_1, eta_2, step_cap) with the two BB ratios, falling back to 1
    whenever either ratio is non-positive.  Stops when the Euclidean gradient
    norm drops below ``tol``.  If ``max_iter`` is exhausted, the iterate with
    the smallest observed loss is returned with ``converged=False``.
    """
    if tol <= 0 or max_iter < 1 or step_cap <= 0:
        raise ValueError("tol and step_cap must be positive and max_iter >= 1")
    beta_prev = np.asarray(beta0, dtype=float).copy()
    g_prev = np.asarray(grad_oracle(beta_prev), dtype=float)
    if not np.all(np.isfinite(g_prev)):
        raise FloatingPointError("non-finite gradient at the initial point")
    gnorm = float(np.linalg.norm(g_prev))
    if gnorm <= tol:
        return GdBbResult(beta=beta_prev, n_iter=0, converged=True, grad_norm=gnorm)

    best_beta, best_loss = beta_prev, float(loss_oracle(beta_prev))
    beta = beta_prev - g_prev
    for k in range(1, max_iter + 1):
        g = np.asarray(grad_oracle(beta), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at iteration {k}")
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return GdBbResult(beta=beta, n_iter=k, converged=True, grad_norm=gnorm)
        loss = float(loss_oracle(beta))
        if loss < best_loss:
            best_beta, best_loss = beta, loss

        db = beta - beta_prev
        dg = g - g_prev
        denom1 = float(db @ dg)
        denom2 = float(dg @ dg)
        eta1 = float(db @ db) / denom1 if denom1 != 0 else np.inf
        eta2 = denom1 / denom2 if denom2 != 0 else np.inf
        eta = min(eta1, eta2, step_cap) if (eta1 > 0 and eta2 > 0) else 1.0

        beta_prev, g_prev = beta, g
        beta = beta - eta * g

    return GdBbResult(beta=best_beta, n_iter=max_iter, converged=False,
                      grad_norm=float(np.linalg.norm(grad_oracle(best_beta))))


def least_squares_init(shard):
    """Ordinary least squares start via lstsq; p is small in this regime."""
    return np.linalg.lstsq(shard.X, shard.y, rcond=None)[0]


def fit_conquer(shard, tau, h, kernel=KernelSpec(), beta0=None, tol=1e-8,
                max_iter=500) -> ModelFit:
    """Minimize the smoothed quantile loss on one shard with GD-BB."""
    if beta0 is None:
        beta0 = least_squares_init(shard)
    result = gd_bb_minimize(
        lambda b: conquer_gradient(shard, b, tau, h, kernel),
        lambda b: conquer_loss(shard, b, tau, h, kernel),
        beta0, tol=tol, max_iter=max_iter,
    )
    return ModelFit(beta=result.beta, converged=result.converged)


def fit_constrained(data, tau, h, k, c_k, kernel=KernelSpec(), beta0=None,
                    tol=1e-8, b=None, T=None):
    """Fit with coordinate ``k`` pinned at ``c_k`` (0-based column index).

    The constrained column is folded into the response as an offset, the
    remaining coordinates are fitted, and ``c_k`` is re-inserted.  Accepts a
    single shard or a federated dataset; the latter runs the multi-round
    distributed procedure on the reduced problem.
    """
    from .data import FederatedDataset, as_federated
    from .federation import SmoothingPlan, run_algorithm1

    fed = as_federated(data)
    p = fed.p
    if not 0 <= k < p:
        raise ValueError(f"column index {k} out of range for p={p}")
    if p == 1:
        return np.array([float(c_k)])

    if beta0 is not None:
        beta0 = np.delete(np.asarray(beta0, dtype=float), k)

    # fold the pinned column into the response; use raw shards because the
    # reduced design may no longer start with an all-ones column
    def reduce_arrays(shard):
        return shard.y - c_k * shard.X[:, k], np.delete(shard.X, k, axis=1)

    if fed.m == 1:
        shard = fed.master
        y_r, X_r = reduce_arrays(shard)
        fit = _fit_raw(y_r, X_r, tau, h, kernel, beta0, tol)
        return np.insert(fit, k, c_k)

    if b is None:
        b = h
    reduced_shards = []
    for shard in fed.shards:
        y_r, X_r = reduce_arrays(shard)
        reduced_shards.append(_RawShard(y_r, X_r, shard.shard_id))
    reduced_fed = FederatedDataset(shards=reduced_shards)
    plan = SmoothingPlan(tau=tau, b=b, h=h, kernel=kernel)
    fit = run_algorithm1(reduced_fed, plan, beta0=beta0, T=T, inner_tol=tol)
    return np.insert(fit.beta, k, c_k)


class _RawShard:
    """Shard-shaped container without the all-ones first-column invariant.

    Used for reduced designs (offset responses, deleted columns) that feed the
    same loss/gradient machinery as :class:`~dqr.data.DataShard`.
    """

    def __init__(self, y, X, shard_id=0):
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.shard_id = shard_id

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def _fit_raw(y, X, tau, h, kernel, beta0, tol):
    shard = _RawShard(y, X)
    if beta0 is None:
        beta0 = np.linalg.lstsq(X, y, rcond=None)[0]
    result = gd_bb_minimize(
        lambda bb: conquer_gradient(shard, bb, tau, h, kernel),
        lambda bb: conquer_loss(shard, bb, tau, h, kernel),
        beta0, tol=tol,
    )
    return result.beta
