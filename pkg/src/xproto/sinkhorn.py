"""Entropic optimal transport: cost matrices, a log-domain Sinkhorn solver,
the domain-alignment loss, and an exact small-instance oracle.

The alignment loss between a source and a target minibatch is the
transport cost <P, M> of the entropic-regularized optimal plan under
squared Euclidean cost and uniform marginals. Gradients flow into the
embeddings with the converged plan held fixed (envelope approximation);
the solver itself is never differentiated through.

All functions are pure; concurrent calls share no state.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger("xproto.sinkhorn")


def cost_matrix(source_batch: np.ndarray, target_batch: np.ndarray) -> np.ndarray:
    """M_ij = ||x_i - x~_j||^2, computed from explicit differences."""
    a = np.asarray(source_batch, dtype=np.float64)
    b = np.asarray(target_batch, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("batches must be 2-d with matching dimensions")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("cost matrix undefined: non-finite embeddings")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs. ``regularization=None`` adapts to 0.05 * mean(M)."""

    regularization: float | None = None
    max_iterations: int = 1000
    marginal_tolerance: float = 1e-9

    def resolve_reg(self, cost: np.ndarray) -> float:
        if self.regularization is not None:
            if self.regularization <= 0:
                raise ValueError("regularization must be positive")
            return float(self.regularization)
        return 0.05 * float(cost.mean())


@dataclass
class TransportPlan:
    """A feasible coupling with its marginals and convergence diagnostics."""

    entries: np.ndarray
    a: np.ndarray
    b: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float
    regularization: float


def _logsumexp(z: np.ndarray, axis: int) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def sinkhorn(cost: np.ndarray, a: np.ndarray, b: np.ndarray,
             config: SinkhornConfig = SinkhornConfig()):
    """Entropic OT via log-domain Sinkhorn iterations.

    Returns (wd, TransportPlan) where wd = <P, M> for the converged plan.
    Iteration stops when the L1 marginal violation drops below the
    configured tolerance; hitting max_iterations instead is flagged on
    the plan (and logged), not raised.
    """
    m = np.asarray(cost, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if m.shape != (a.size, b.size):
        raise ValueError("cost shape does not match marginal lengths")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be strictly positive")
    if not (np.isclose(a.sum(), 1.0) and np.isclose(b.sum(), 1.0)):
        raise ValueError("marginals must each sum to 1")

    if float(m.max()) == 0.0:
        # All costs zero: any feasible plan is optimal at zero cost.
        plan = TransportPlan(np.outer(a, b), a, b, True, 0, 0.0,
                             config.regularization or 0.0)
        return 0.0, plan

    reg = config.resolve_reg(m)
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    err = np.inf
    it = 0
    check_every = 10
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(1, config.max_iterations + 1):
            f = reg * (log_a - _logsumexp((g[None, :] - m) / reg, axis=1))
            g = reg * (log_b - _logsumexp((f[:, None] - m) / reg, axis=0))
            if it % check_every == 0 or it == config.max_iterations:
                p = np.exp((f[:, None] + g[None, :] - m) / reg)
                err = float(np.abs(p.sum(axis=1) - a).sum()
                            + np.abs(p.sum(axis=0) - b).sum())
                if err < config.marginal_tolerance:
                    converged = True
                    break
        if not converged:
            logger.warning("sinkhorn did not converge: error %.3e after %d iterations",
                           err, it)
        p = np.exp((f[:, None] + g[None, :] - m) / reg)
    wd = float((p * m).sum())
    return wd, TransportPlan(p, a, b, converged, it, err, reg)


@dataclass
class AdversarialLoss:
    """Alignment loss with embedding gradients for both batches."""

    value: float
    d_source: np.ndarray
    d_target: np.ndarray
    plan: TransportPlan


def adversarial_loss(source_embeddings: np.ndarray, target_embeddings: np.ndarray,
                     config: SinkhornConfig = SinkhornConfig()) -> AdversarialLoss:
    """Wasserstein alignment loss between two embedding batches.

    Uniform marginals 1/n_s and 1/n_t (batch sizes may differ). With the
    converged plan P held constant,

        d/dx_i   = sum_j P_ij 2 (x_i - x~_j)
        d/dx~_j  = sum_i P_ij 2 (x~_j - x_i).
    """
    x = np.asarray(source_embeddings, dtype=np.float64)
    y = np.asarray(target_embeddings, dtype=np.float64)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("batches must be non-empty")
    m = cost_matrix(x, y)
    a = np.full(x.shape[0], 1.0 / x.shape[0])
    b = np.full(y.shape[0], 1.0 / y.shape[0])
    wd, plan = sinkhorn(m, a, b, config)
    p = plan.entries
    d_source = 2.0 * (p.sum(axis=1)[:, None] * x - p @ y)
    d_target = 2.0 * (p.sum(axis=0)[:, None] * y - p.T @ x)
    return AdversarialLoss(value=wd, d_source=d_source, d_target=d_target, plan=plan)


def exact_ot_oracle(cost: np.ndarray) -> float:
    """Exact OT value for square costs with uniform marginals, n <= 8.

    For uniform marginals and equal batch sizes an optimal vertex is a
    permutation matrix scaled by 1/n, so brute force over all n!
    assignments is exact.
    """
    m = np.asarray(cost, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("exact oracle needs a square cost matrix")
    n = m.shape[0]
    if n > 8:
        raise ValueError("exact oracle limited to n <= 8")
    best = np.inf
    rows = np.arange(n)
    for perm in itertools.permutations(range(n)):
        total = m[rows, perm].sum()
        if total < best:
            best = total
    return float(best) / n
