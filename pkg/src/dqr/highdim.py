"""L1-penalized conquer: LAMM solver, multi-round penalized orchestration,
regularization/bandwidth schedules, and an ADMM solver for (penalized) QR.

The intercept (first coordinate) is unpenalized in the LAMM path.  The ADMM
solver follows the consensus five-block updates verbatim and doubles as the
exact-QR oracle when the penalty is zero.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .data import as_federated
from .kernels import KernelSpec, check_loss
from .smoothed_qr import conquer_gradient, conquer_loss


def soft_threshold(a, b):
    """S(a, b) = sign(a) * max(|a| - b, 0); vectorized in ``a``."""
    a = np.asarray(a, dtype=float)
    if np.any(np.asarray(b) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(a) * np.maximum(np.abs(a) - b, 0.0)


@dataclass
class LammResult:
    beta: np.ndarray
    n_iter: int
    converged: bool


def lamm_minimize(loss_oracle, grad_oracle, lam, beta0, phi0=1e-3, tol=1e-6,
                  max_iter=500, penalize_intercept=False) -> LammResult:
    """Minimize loss(beta) + lam * ||beta_-||_1 by adaptive isotropic
    majorization.

    Each iteration solves the quadratic majorizer in closed form (gradient
    step on the intercept, soft-threshold on the rest) and inflates the
    curvature parameter by 1.1 until the majorization holds at the new point,
    which guarantees descent of the penalized objective.
    """
    if lam < 0 or phi0 <= 0 or tol <= 0 or max_iter < 1:
        raise ValueError("need lam >= 0, phi0 > 0, tol > 0, max_iter >= 1")
    beta = np.asarray(beta0, dtype=float).copy()

    def penalty(bb):
        active = bb if penalize_intercept else bb[1:]
        return lam * float(np.sum(np.abs(active)))

    obj = float(loss_oracle(beta)) + penalty(beta)
    phi = phi0
    for k in range(1, max_iter + 1):
        phi = max(phi0, phi / 1.1)
        loss_old = float(loss_oracle(beta))
        grad = np.asarray(grad_oracle(beta), dtype=float)
        while True:
            cand = beta - grad / phi
            thresholded = soft_threshold(cand, lam / phi)
            new = thresholded if penalize_intercept else \
                np.concatenate([[cand[0]], thresholded[1:]])
            step = new - beta
            majorizer = loss_old + float(grad @ step) + 0.5 * phi * float(step @ step)
            loss_new = float(loss_oracle(new))
            if majorizer >= loss_new:
                break
            phi *= 1.1

        obj_new = loss_new + penalty(new)
        if obj_new > obj + 1e-10:
            raise RuntimeError(
                f"LAMM descent violated at iteration {k}: {obj} -> {obj_new}")
        beta, obj = new, obj_new
        if float(np.linalg.norm(step)) <= tol:
            return LammResult(beta=beta, n_iter=k, converged=True)

    warnings.warn("LAMM reached max_iter without convergence")
    return LammResult(beta=beta, n_iter=max_iter, converged=False)


def fit_l1_conquer(shard, tau, h, lam, beta0=None, kernel=KernelSpec(),
                   phi0=1e-3, tol=1e-6, max_iter=500):
    """L1-penalized conquer fit on a single shard (plain, unshifted loss)."""
    if beta0 is None:
        beta0 = np.zeros(shard.p)
        k = min(max(math.ceil(tau * shard.n), 1), shard.n)
        beta0[0] = np.sort(shard.y)[k - 1]
    result = lamm_minimize(
        lambda bb: conquer_loss(shard, bb, tau, h, kernel),
        lambda bb: conquer_gradient(shard, bb, tau, h, kernel),
        lam, beta0, phi0=phi0, tol=tol, max_iter=max_iter,
    )
    if not result.converged:
        warnings.warn("fit_l1_conquer did not converge")
    return result.beta


THEOREM10 = "theorem10"
USER_SUPPLIED = "user"


@dataclass(frozen=True)
class PenaltySchedule:
    """Per-round regularization levels for the multi-round penalized fit."""

    lambdas: tuple
    s_hint: int = 1
    form: str = USER_SUPPLIED

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        if not lambdas or any(v <= 0 for v in lambdas):
            raise ValueError("all lambda values must be positive")
        if self.form == THEOREM10 and any(
                a < b for a, b in zip(lambdas, lambdas[1:])):
            raise ValueError("theorem-10 schedules must be nonincreasing")
        object.__setattr__(self, "lambdas", lambdas)

    def at(self, t: int) -> float:
        """Round-t value (1-based); the last value persists beyond the end."""
        return self.lambdas[min(t, len(self.lambdas)) - 1]


def theorem10_lambda_schedule(s, p, n, N, t, c0=1.0) -> float:
    """Round-t regularization level lambda_t.

    lambda_t = c0 * [sqrt(log p / N)
                     + max(s^2 log p / n, s^3 log p / N)^{t/4} sqrt(log p / n)].
    """
    if s < 1 or t < 1 or c0 <= 0:
        raise ValueError("need s >= 1, t >= 1, c0 > 0")
    lp = math.log(p)
    contraction = max(s**2 * lp / n, s**3 * lp / N)
    if contraction >= 1:
        warnings.warn(
            f"lambda schedule contraction factor {contraction:.3g} >= 1; "
            "no shrinkage across rounds at this (s, p, n, N)")
    return c0 * (math.sqrt(lp / N) + contraction ** (t / 4) * math.sqrt(lp / n))


def theorem9_bandwidths(s, p, n, N, c=0.75):
    """Local/global bandwidths for the penalized regime:
    b = c sqrt(s) (log p / n)^{1/4}, h = c (s log p / N)^{1/4}."""
    if c <= 0:
        raise ValueError("c must be positive")
    lp = math.log(p)
    b = c * math.sqrt(s) * (lp / n) ** 0.25
    h = c * (s * lp / N) ** 0.25
    return b, h


def run_penalized_multiround(fed, tau, b, h, schedule: PenaltySchedule,
                             T=None, beta0=None, kernel=KernelSpec(),
                             phi0=1e-3, tol=1e-6, max_lamm_iter=500,
                             apply_stopping_rule=True):
    """Multi-round distributed penalized conquer.

    Mirrors the unpenalized multi-round loop: per round, aggregate shard
    gradients at bandwidth h, then LAMM-minimize the shifted penalized loss on
    the master with the round's lambda.  Initialization defaults to a local
    l1-conquer fit on the master.
    """
    from .federation import GRAD_TOL, global_gradient
    from .smoothed_qr import ModelFit

    fed = as_federated(fed)
    master = fed.master
    if T is None:
        T = len(schedule.lambdas)
    if T < 1:
        raise ValueError("T must be at least 1")
    if beta0 is None:
        # Initialize at twice the first-round level: the iterate's gradient
        # sup-norm tracks the active lambda, so starting from a more heavily
        # penalized fit keeps the gradient trace decreasing and prevents the
        # round-level stopping rule from firing on the first update.
        beta0 = fit_l1_conquer(master, tau, b, 2.0 * schedule.at(1),
                               kernel=kernel, phi0=phi0, tol=tol,
                               max_iter=max_lamm_iter)
    beta = np.asarray(beta0, dtype=float).copy()

    trace = []
    g_prev = 1.0
    converged = True
    for t in range(1, T + 1):
        grad_h = global_gradient(fed, beta, tau, h, kernel)
        g_t = float(np.max(np.abs(grad_h)))
        trace.append(g_t)
        # Gradient norms from rounds with materially different lambdas are not
        # comparable (the iterate tracks the active penalty level), so the
        # no-progress test only applies once the schedule has plateaued.
        plateaued = t > 1 and schedule.at(t) >= 0.999 * schedule.at(t - 1)
        if apply_stopping_rule and (g_t < GRAD_TOL
                                    or (plateaued and g_t > g_prev)):
            converged = g_t < GRAD_TOL
            break
        shift = conquer_gradient(master, beta, tau, b, kernel) - grad_h
        result = lamm_minimize(
            lambda bb: conquer_loss(master, bb, tau, b, kernel) - float(shift @ bb),
            lambda bb: conquer_gradient(master, bb, tau, b, kernel) - shift,
            schedule.at(t), beta, phi0=phi0, tol=tol, max_iter=max_lamm_iter,
        )
        beta = result.beta
        g_prev = g_t

    rounds = len(trace)
    scalars = rounds * (fed.m + 1) * fed.p
    return ModelFit(beta=beta, grad_sup_norms=trace, rounds_used=rounds,
                    comm_bytes=scalars * 8, converged=converged)


@dataclass
class AdmmResult:
    beta: np.ndarray
    n_iter: int
    converged: bool


def admm_qr(fed, tau, lam=0.0, gamma=1.0, max_iter=20000, tol=1e-6,
            beta0=None) -> AdmmResult:
    """Consensus ADMM for l1-penalized quantile regression on shard blocks.

    With lam=0 this is an exact (unsmoothed) quantile regression solver.
    lam is the per-observation penalty; internally it is scaled to
    lambda_N = N * lam as the consensus formulation requires.
    """
    fed = as_federated(fed)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    m, p, N = fed.m, fed.p, fed.total_n
    lam_N = N * lam

    # one Cholesky factorization of (X_j'X_j + I) per shard, reused throughout
    factors = [
        scipy.linalg.cho_factor(shard.X.T @ shard.X + np.eye(p))
        for shard in fed.shards
    ]

    if beta0 is None:
        beta0 = np.zeros(p)
    beta = np.asarray(beta0, dtype=float).copy()
    beta_j = np.tile(beta, (m, 1))
    r_j = [shard.y - shard.X @ beta for shard in fed.shards]
    u_j = [np.zeros(shard.n) for shard in fed.shards]
    delta_j = np.zeros((m, p))

    best_beta, best_err = beta.copy(), np.inf
    beta_prev = beta.copy()
    for k in range(1, max_iter + 1):
        bar_beta = beta_j.mean(axis=0)
        bar_delta = delta_j.mean(axis=0)
        beta = soft_threshold(bar_beta + bar_delta / gamma, lam_N / (m * gamma))

        primal_fit = 0.0
        dual = gamma * float(np.linalg.norm(beta - beta_prev))
        for j, shard in enumerate(fed.shards):
            v = shard.y - shard.X @ beta_j[j] + u_j[j] / gamma
            r_new = (np.maximum(v - tau / gamma, 0.0)
                     - np.maximum(-v + (tau - 1.0) / gamma, 0.0))
            dual = max(dual, gamma * float(np.linalg.norm(r_new - r_j[j])))
            r_j[j] = r_new
            rhs = (shard.X.T @ (shard.y - r_j[j] + u_j[j] / gamma)
                   - delta_j[j] / gamma + beta)
            beta_j[j] = scipy.linalg.cho_solve(factors[j], rhs)
            resid = shard.y - shard.X @ beta_j[j] - r_j[j]
            u_j[j] = u_j[j] + gamma * resid
            delta_j[j] = delta_j[j] + gamma * (beta_j[j] - beta)
            primal_fit = max(primal_fit, float(np.linalg.norm(resid)))

        beta_prev = beta.copy()
        consensus = float(np.max(np.linalg.norm(beta_j - beta, axis=1)))
        err = max(primal_fit, consensus, dual)
        if err < best_err:
            best_beta, best_err = beta.copy(), err
        if err <= tol:
            return AdmmResult(beta=beta, n_iter=k, converged=True)

    warnings.warn(f"ADMM reached max_iter={max_iter}; best residual {best_err:.3g}")
    return AdmmResult(beta=best_beta, n_iter=max_iter, converged=False)


def select_lambda_by_validation(fit_fn, lambdas, val_shard, tau):
    """Pick the lambda whose fit minimizes check loss on a validation shard;
    ties go to the larger lambda."""
    lambdas = sorted(float(v) for v in lambdas)
    best_lam, best_loss = None, np.inf
    for lam in lambdas:
        beta = fit_fn(lam)
        res = val_shard.y - val_shard.X @ beta
        loss = float(np.mean(check_loss(res, tau)))
        if loss <= best_loss:
            best_lam, best_loss = lam, loss
    return best_lam
