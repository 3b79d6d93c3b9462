"""Multi-round distributed conquer orchestration.

The master (shard 0) broadcasts the current iterate, workers return shard
gradients at the global bandwidth ``h``, and the master minimizes a shifted
local loss whose gradient at the current iterate matches the aggregated
global gradient.  Also provides the Newton one-step variant, one-shot
averaging (DC-QR), a scaling diagnostic, and communication accounting.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import as_federated
from .kernels import KernelSpec, SmoothedLossParams, gradient_weight
from .smoothed_qr import (
    ModelFit,
    check_loss_and_subgradient,
    conquer_gradient,
    conquer_hessian,
    conquer_loss,
    dynamic_bandwidth_scale,
    fit_conquer,
    gd_bb_minimize,
)

FIXED = "fixed"
DYNAMIC = "dynamic"

GRAD_TOL = 1e-5  # sup-norm threshold in the round-level stopping rule


@dataclass(frozen=True)
class SmoothingPlan:
    """Quantile level, local/global bandwidths and kernel for one run.

    ``scale_rule`` is either "fixed" (use b and h as given) or "dynamic"
    (rescale both every round by the robust spread of the master-shard
    residuals at the current iterate).
    """

    tau: float
    b: float
    h: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    scale_rule: str = FIXED

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if not self.b >= self.h > 0.0:
            raise ValueError(f"need b >= h > 0, got b={self.b}, h={self.h}")
        if self.scale_rule not in (FIXED, DYNAMIC):
            raise ValueError(f"unknown scale_rule {self.scale_rule!r}")


@dataclass(frozen=True)
class GradientMessage:
    """One worker's reply in a communication round."""

    shard_id: int
    beta_version: int
    grad: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise ValueError(f"shard {self.shard_id} sent a non-finite gradient")


def default_bandwidths(n: int, N: int, p: int, c: float):
    """Rule-of-thumb local/global bandwidth pair (b, h)."""
    if c <= 0:
        raise ValueError("c must be positive")
    if n <= p:
        raise ValueError("need n > p for the bandwidth rule")
    b = c * ((p + math.log(n)) / n) ** (1.0 / 3.0)
    h = c * ((p + math.log(N)) / N) ** (1.0 / 3.0)
    return b, h


def estimation_bandwidth(n: int, p: int, tau: float) -> float:
    """Default bandwidth for a standalone (non-shifted) conquer fit.

    Smaller than the Algorithm-1 local bandwidth: standalone estimates carry
    the full smoothing bias, so the rate-optimal
    max{0.05, sqrt(tau(1-tau)) ((p + log n)/n)^{2/5}} is used instead.
    """
    if n <= p:
        raise ValueError("need n > p")
    return max(0.05, math.sqrt(tau * (1 - tau))
               * ((p + math.log(n)) / n) ** 0.4)


def gather_gradients(fed, beta, tau, h, kernel=KernelSpec(), beta_version=0,
                     smooth=True):
    """One round of worker replies: per-shard gradients at bandwidth ``h``.

    Evaluated over the pooled arrays with a fixed-order segmented reduction,
    which is equivalent to each worker computing its own mean gradient.  With
    ``smooth=False`` workers return check-loss subgradients instead.
    """
    y, X, offsets = fed.pooled()
    res = y - X @ beta
    if smooth:
        w = gradient_weight(SmoothedLossParams(tau=tau, h=h, kernel=kernel), res)
    else:
        w = (res < 0).astype(float) - tau
    sums = np.add.reduceat(X * w[:, None], offsets[:-1], axis=0)
    counts = np.diff(offsets).astype(float)
    grads = sums / counts[:, None]
    return [
        GradientMessage(shard_id=s.shard_id, beta_version=beta_version, grad=g)
        for s, g in zip(fed.shards, grads)
    ]


def aggregate_gradients(messages, weights, beta_version=0):
    """Master-side reduction: shard-size-weighted mean in fixed shard order."""
    for msg in messages:
        if msg.beta_version != beta_version:
            raise RuntimeError(
                f"stale gradient from shard {msg.shard_id}: "
                f"version {msg.beta_version}, expected {beta_version}")
    return np.asarray(weights) @ np.vstack([m.grad for m in messages])


def global_gradient(fed, beta, tau, h, kernel=KernelSpec(), smooth=True):
    """Aggregated global gradient at ``beta`` (one full communication round)."""
    msgs = gather_gradients(fed, beta, tau, h, kernel, smooth=smooth)
    return aggregate_gradients(msgs, fed.weights)


def default_rounds(m: int) -> int:
    return max(math.ceil(math.log(m)), 2)


def _round_bandwidths(plan, fed, beta):
    if plan.scale_rule == FIXED:
        return plan.b, plan.h
    master = fed.master
    c = dynamic_bandwidth_scale(master.y - master.X @ beta)
    if c == 0.0:
        c = 1.0
    return default_bandwidths(master.n, fed.total_n, fed.p, c)


def run_algorithm1(fed, plan: SmoothingPlan, beta0=None, T=None,
                   inner_tol=1e-8, max_inner_iter=500, smooth=True,
                   apply_stopping_rule=True) -> ModelFit:
    """Multi-round distributed conquer.

    Each round broadcasts the iterate, aggregates worker gradients at the
    global bandwidth, and (unless the gradient trace stops improving) solves
    the shifted local loss on the master with GD-BB.  ``smooth=False`` runs
    the non-smooth baseline: workers return check-loss subgradients, the
    master's shifted problem uses the unsmoothed check loss, and the default
    initializer is the one-shot average of local fits (a local fit alone
    leaves the non-smooth iteration stuck far from the pooled optimum).
    """
    fed = as_federated(fed)
    master = fed.master
    tau, kernel = plan.tau, plan.kernel
    if T is None:
        T = default_rounds(fed.m)
    if T < 1:
        raise ValueError("T must be at least 1")
    if beta0 is None:
        if smooth:
            beta0 = fit_conquer(master, tau, plan.b, kernel).beta
        else:
            beta0 = dc_average(fed, tau)
    beta = np.asarray(beta0, dtype=float).copy()
    if beta.shape != (fed.p,):
        raise ValueError(f"beta0 has shape {beta.shape}, expected ({fed.p},)")

    trace = []
    g_prev = 1.0
    converged = True
    for t in range(1, T + 1):
        b_t, h_t = _round_bandwidths(plan, fed, beta)
        msgs = gather_gradients(fed, beta, tau, h_t, kernel,
                                beta_version=t, smooth=smooth)
        grad_h = aggregate_gradients(msgs, fed.weights, beta_version=t)
        g_t = float(np.max(np.abs(grad_h)))
        trace.append(g_t)
        if apply_stopping_rule and (g_t > g_prev or g_t < GRAD_TOL):
            converged = g_t < GRAD_TOL
            break

        if smooth:
            shift = conquer_gradient(master, beta, tau, b_t, kernel) - grad_h

            def grad_oracle(bb, _b=b_t, _s=shift):
                return conquer_gradient(master, bb, tau, _b, kernel) - _s

            def loss_oracle(bb, _b=b_t, _s=shift):
                return conquer_loss(master, bb, tau, _b, kernel) - float(_s @ bb)
        else:
            shift = check_loss_and_subgradient(master, beta, tau)[1] - grad_h

            def grad_oracle(bb, _s=shift):
                return check_loss_and_subgradient(master, bb, tau)[1] - _s

            def loss_oracle(bb, _s=shift):
                return check_loss_and_subgradient(master, bb, tau)[0] - float(_s @ bb)

        try:
            inner = gd_bb_minimize(grad_oracle, loss_oracle, beta,
                                   tol=inner_tol, max_iter=max_inner_iter)
        except FloatingPointError as exc:
            raise RuntimeError(f"inner solver failed at round {t}: {exc}") from exc
        beta = inner.beta
        g_prev = g_t

    rounds = len(trace)
    scalars = rounds * (fed.m + 1) * fed.p
    return ModelFit(beta=beta, grad_sup_norms=trace, rounds_used=rounds,
                    comm_bytes=scalars * 8, converged=converged)


def run_newton_variant(fed, plan: SmoothingPlan, beta0=None, T=None) -> ModelFit:
    """Distributed one-step Newton: T closed-form updates using the master's
    local Hessian at bandwidth b and the aggregated global gradient at h."""
    fed = as_federated(fed)
    master = fed.master
    tau, kernel = plan.tau, plan.kernel
    if T is None:
        T = default_rounds(fed.m)
    if T < 1:
        raise ValueError("T must be at least 1")
    if beta0 is None:
        beta0 = fit_conquer(master, tau, plan.b, kernel).beta
    beta = np.asarray(beta0, dtype=float).copy()

    trace = []
    for t in range(1, T + 1):
        b_t, h_t = _round_bandwidths(plan, fed, beta)
        grad_h = global_gradient(fed, beta, tau, h_t, kernel)
        trace.append(float(np.max(np.abs(grad_h))))
        H = conquer_hessian(master, beta, tau, b_t, kernel)
        try:
            step = np.linalg.solve(H, grad_h)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                f"singular local Hessian at round {t} (tau={tau}, b={b_t})"
            ) from exc
        beta = beta - step

    scalars = T * (fed.m + 1) * fed.p
    return ModelFit(beta=beta, grad_sup_norms=trace, rounds_used=T,
                    comm_bytes=scalars * 8, converged=True)


def dc_average(fed, tau, local_solver="conquer", c=None):
    """One-shot divide-and-conquer: shard-size-weighted mean of local fits.

    ``local_solver`` is "conquer" (local smoothed fit with the standalone
    estimation bandwidth, or c times the rule-of-thumb one when ``c`` is
    given), "exact" (exact quantile regression via the ADMM solver with zero
    penalty), or any callable shard -> coefficient vector.
    """
    fed = as_federated(fed)
    if callable(local_solver):
        solve = local_solver
    elif local_solver == "conquer":
        def solve(shard):
            if c is None:
                b = estimation_bandwidth(shard.n, shard.p - 1, tau)
            else:
                b, _ = default_bandwidths(shard.n, shard.n, shard.p - 1, c)
            return fit_conquer(shard, tau, b).beta
    elif local_solver == "exact":
        from .highdim import admm_qr

        def solve(shard):
            return admm_qr(as_federated(shard), tau, lam=0.0).beta
    else:
        raise ValueError(f"unknown local solver {local_solver!r}")

    fits = []
    for shard in fed.shards:
        if shard.n <= shard.p:
            raise RuntimeError(f"shard {shard.shard_id}: n <= p, local fit infeasible")
        try:
            fits.append(np.asarray(solve(shard), dtype=float))
        except Exception as exc:
            raise RuntimeError(f"local fit failed on shard {shard.shard_id}: {exc}") from exc
    return fed.weights @ np.vstack(fits)


def scaling_diagnostic(m: int, N: int, p: int) -> float:
    """u(m, N)/m with u(m, N) = N / (p + log(N/m) + log log m).

    Values above 1 indicate the number of machines is within the regime where
    multi-round aggregation can match the pooled estimator's rate.
    """
    if m < 3:
        raise ValueError("need m >= 3 (log log m must be defined)")
    if N <= m:
        raise ValueError("need N > m")
    u = N / (p + math.log(N / m) + math.log(math.log(m)))
    return u / m


def comm_cost(fit: ModelFit, m: int, p: int) -> dict:
    """Scalars and bytes moved: each round broadcasts one length-p vector and
    collects m gradient vectors of length p."""
    scalars = fit.rounds_used * (m + 1) * p
    return {"rounds": fit.rounds_used, "scalars": scalars, "bytes": scalars * 8}
