"""Multimarginal Sinkhorn for path-structured costs.

The optimal plan has the form ``M = K * (u_1 x u_2 x ... x u_ns)`` where the
kernel tensor factors along the path into matrices ``K^j = exp(-C^j / eps)``.
Unimarginal and bimarginal sums of such a tensor reduce to chains of
matrix-vector products, so one Sinkhorn sweep costs ``O(n_s N^2)``.

Snapshot indices are 0-based everywhere in this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.special import logsumexp

from .cost import DENSE_CAP, OracleCapError, _check_cap, dense_shape

log = logging.getLogger(__name__)

RENORMALIZE_TOL = 1e-9


class SinkhornUnderflowError(FloatingPointError):
    """A projection entry vanished; the kernel is too small for the chosen epsilon."""

    def __init__(self, sigma: int, epsilon: float):
        self.sigma = sigma
        super().__init__(
            f"unimarginal projection {sigma} has zero or non-finite entries at "
            f"epsilon={epsilon:g}; rescale the data or try a larger epsilon"
        )


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.1
    tol: float = 1e-12
    maxiter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.maxiter) < 1:
            raise ValueError(f"maxiter must be at least 1, got {self.maxiter}")


def hilbert_metric(p, q) -> float:
    """Hilbert's projective metric between two positive vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("Hilbert metric needs strictly positive vectors")
    r = np.log(p) - np.log(q)
    return float(r.max() - r.min())


def marginal_weights(marginals: Sequence) -> list[np.ndarray]:
    """Weight vectors of the marginals, renormalized if off by at most 1e-9."""
    out = []
    for k, mu in enumerate(marginals):
        w = np.asarray(getattr(mu, "weights", mu), dtype=float)
        if w.ndim != 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"marginal {k} must have finite, strictly positive weights")
        total = w.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise ValueError(f"marginal {k} sums to {total!r}; expected 1")
        out.append(w / total)
    return out


def kernels_from_cost(path_cost: Sequence[np.ndarray], epsilon: float) -> list[np.ndarray]:
    return [np.exp(-np.asarray(c, dtype=float) / epsilon) for c in path_cost]


def _right_messages(potentials, kernels) -> list[np.ndarray]:
    """``right[s]`` sums the plan over indices after ``s``."""
    n_s = len(potentials)
    right = [None] * n_s
    right[-1] = np.ones(kernels[-1].shape[1])
    for s in range(n_s - 2, -1, -1):
        right[s] = kernels[s] @ (potentials[s + 1] * right[s + 1])
    return right


def _check_index(sigma: int, n_s: int) -> None:
    if not 0 <= sigma < n_s:
        raise IndexError(f"snapshot index {sigma} outside [0, {n_s})")


def unimarginal_projection(potentials, kernels, sigma: int) -> np.ndarray:
    """Sum of ``K * U`` over every index except the ``sigma``-th."""
    n_s = len(potentials)
    if len(kernels) != n_s - 1:
        raise ValueError(f"{n_s} potentials need {n_s - 1} kernels, got {len(kernels)}")
    _check_index(sigma, n_s)
    left = np.ones(potentials[0].size)
    for s in range(sigma):
        left = kernels[s].T @ (left * potentials[s])
    right = np.ones(potentials[-1].size)
    for s in range(n_s - 2, sigma - 1, -1):
        right = kernels[s] @ (potentials[s + 1] * right)
    return left * potentials[sigma] * right


def bimarginal_projection(potentials, kernels, sigma1: int, sigma2: int) -> np.ndarray:
    """Sum of ``K * U`` over every index except ``sigma1 < sigma2``; an N x N matrix."""
    n_s = len(potentials)
    _check_index(sigma1, n_s)
    _check_index(sigma2, n_s)
    if sigma1 >= sigma2:
        raise ValueError(f"need sigma1 < sigma2, got {sigma1}, {sigma2}")
    left = np.ones(potentials[0].size)
    for s in range(sigma1):
        left = kernels[s].T @ (left * potentials[s])
    right = np.ones(potentials[-1].size)
    for s in range(n_s - 2, sigma2 - 1, -1):
        right = kernels[s] @ (potentials[s + 1] * right)
    chain = kernels[sigma1]
    for s in range(sigma1 + 1, sigma2):
        chain = (chain * potentials[s]) @ kernels[s]
    return (left * potentials[sigma1])[:, None] * chain * (potentials[sigma2] * right)[None, :]


@dataclass
class SolverSolution:
    """Converged dual potentials and kernel factors.

    Potentials are normalized to unit maximum; ``log_scale`` carries the
    product of the removed factors so the plan is
    ``exp(log_scale) * K * (u_1 x ... x u_ns)``.
    """

    potentials: list[np.ndarray]
    kernels: list[np.ndarray]
    epsilon: float
    log_scale: float = 0.0
    iterations: int = 0
    final_error: float = float("inf")
    converged: bool = False
    residuals: list[float] = field(default_factory=list)

    @property
    def n_s(self) -> int:
        return len(self.potentials)

    @property
    def size(self) -> int:
        return self.potentials[0].size

    def unimarginal(self, sigma: int) -> np.ndarray:
        return np.exp(self.log_scale) * unimarginal_projection(self.potentials, self.kernels, sigma)

    def bimarginal(self, sigma1: int, sigma2: int) -> np.ndarray:
        return np.exp(self.log_scale) * bimarginal_projection(
            self.potentials, self.kernels, sigma1, sigma2
        )


def _init_potentials(n_s: int, n: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    # (0, 1]: random() draws from [0, 1)
    return [1.0 - rng.random(n) for _ in range(n_s)]


def _normalized(potentials):
    peaks = [float(u.max()) for u in potentials]
    return [u / c for u, c in zip(potentials, peaks)], float(np.sum(np.log(peaks)))


def _sweep(u, kernels, mus, epsilon) -> float:
    """One in-place Gauss-Seidel pass over all snapshots; returns the largest Hilbert step."""
    right = _right_messages(u, kernels)
    left = np.ones(u[0].size)
    err = 0.0
    for s in range(len(u)):
        if s > 0:
            left = kernels[s - 1].T @ (left * u[s - 1])
        proj = left * u[s] * right[s]
        if not (np.all(proj > 0) and np.all(np.isfinite(proj))):
            raise SinkhornUnderflowError(s, epsilon)
        updated = u[s] * mus[s] / proj
        if not np.all(np.isfinite(updated)):
            raise SinkhornUnderflowError(s, epsilon)
        err = max(err, hilbert_metric(u[s], updated))
        u[s] = updated
    return err


def sinkhorn_solve(path_cost: Sequence[np.ndarray], marginals, config: SolverConfig = SolverConfig()) -> SolverSolution:
    """Cyclic (Gauss-Seidel) Sinkhorn scaling until the Hilbert residual drops below ``tol``.

    The residual of a sweep is the largest Hilbert distance between a
    potential and its update.  On non-convergence the iterate with the
    smallest residual is returned with ``converged=False``.
    """
    mus = marginal_weights(marginals)
    n_s = len(mus)
    if len(path_cost) != n_s - 1:
        raise ValueError(f"{n_s} marginals need {n_s - 1} cost matrices, got {len(path_cost)}")
    n = mus[0].size
    for c in path_cost:
        if c.shape != (n, n):
            raise ValueError(f"cost matrix shape {c.shape} does not match N={n}")
    kernels = kernels_from_cost(path_cost, config.epsilon)
    u = _init_potentials(n_s, n, config.seed)

    residuals: list[float] = []
    best_err, best_u = float("inf"), [x.copy() for x in u]
    converged = False
    for _ in range(int(config.maxiter)):
        with np.errstate(over="ignore", invalid="ignore"):
            err = _sweep(u, kernels, mus, config.epsilon)
        residuals.append(err)
        if err < best_err:
            best_err, best_u = err, [x.copy() for x in u]
        if err <= config.tol:
            converged = True
            break
    if not converged:
        log.warning("Sinkhorn stopped after %d sweeps with residual %.3e", len(residuals), best_err)
    potentials, log_scale = _normalized(best_u)
    return SolverSolution(
        potentials=potentials,
        kernels=kernels,
        epsilon=config.epsilon,
        log_scale=log_scale,
        iterations=len(residuals),
        final_error=best_err,
        converged=converged,
        residuals=residuals,
    )


# -- dense oracle ---------------------------------------------------------------


def _outer(vectors) -> np.ndarray:
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def dense_unimarginal(plan: np.ndarray, sigma: int) -> np.ndarray:
    axes = tuple(a for a in range(plan.ndim) if a != sigma)
    return plan.sum(axis=axes)


def dense_bimarginal(plan: np.ndarray, sigma1: int, sigma2: int) -> np.ndarray:
    axes = tuple(a for a in range(plan.ndim) if a not in (sigma1, sigma2))
    return plan.sum(axis=axes)


def dense_sinkhorn_solve(dense_cost: np.ndarray, marginals, config: SolverConfig = SolverConfig(), cap: int = DENSE_CAP) -> np.ndarray:
    """Brute-force Sinkhorn on the full tensor; returns the plan itself."""
    dense_cost = np.asarray(dense_cost, dtype=float)
    _check_cap(dense_cost.shape, cap)
    mus = marginal_weights(marginals)
    if tuple(w.size for w in mus) != dense_cost.shape:
        raise ValueError("marginal sizes do not match the cost tensor")
    kernel = np.exp(-dense_cost / config.epsilon)
    u = _init_potentials(len(mus), mus[0].size, config.seed)
    for _ in range(int(config.maxiter)):
        err = 0.0
        for s in range(len(mus)):
            proj = dense_unimarginal(kernel * _outer(u), s)
            if not (np.all(proj > 0) and np.all(np.isfinite(proj))):
                raise SinkhornUnderflowError(s, config.epsilon)
            updated = u[s] * mus[s] / proj
            err = max(err, hilbert_metric(u[s], updated))
            u[s] = updated
        if err <= config.tol:
            return kernel * _outer(u)
    raise ConvergenceError(f"dense Sinkhorn did not converge in {config.maxiter} sweeps")


def assemble_dense_plan(solution: SolverSolution, path_cost=None, cap: int = DENSE_CAP) -> np.ndarray:
    """Materialize ``K * U`` from a path-structured solution (oracle scale only)."""
    kernels = solution.kernels
    if path_cost is not None:
        kernels = kernels_from_cost(path_cost, solution.epsilon)
    shape = dense_shape(kernels)
    _check_cap(shape, cap)
    n_s = len(shape)
    plan = np.exp(solution.log_scale) * _outer(solution.potentials)
    for j, k in enumerate(kernels):
        index = [None] * n_s
        index[j] = index[j + 1] = slice(None)
        plan = plan * k[tuple(index)]
    return plan


def kl_to_gibbs(plan: np.ndarray, dense_cost: np.ndarray, epsilon: float) -> float:
    """Relative entropy of ``plan`` with respect to ``exp(-C/eps) / Z``."""
    plan = np.asarray(plan, dtype=float)
    dense_cost = np.asarray(dense_cost, dtype=float)
    if plan.shape != dense_cost.shape:
        raise ValueError(f"plan shape {plan.shape} does not match cost shape {dense_cost.shape}")
    _check_cap(plan.shape, DENSE_CAP)
    log_gibbs = -dense_cost / epsilon
    log_gibbs = log_gibbs - logsumexp(log_gibbs)
    support = plan > 0
    if np.any(np.exp(log_gibbs[support]) == 0):
        raise FloatingPointError("plan has mass where the Gibbs kernel underflows to zero")
    p = plan[support]
    return float(np.sum(p * (np.log(p) - log_gibbs[support])))


def marginal_constraint_matrix(shape: tuple[int, ...]) -> np.ndarray:
    """Rows map a flattened tensor to its stacked unimarginal sums."""
    rows = []
    idx = np.indices(shape).reshape(len(shape), -1)
    for s, n in enumerate(shape):
        for i in range(n):
            rows.append((idx[s] == i).astype(float))
    return np.array(rows)


def feasible_perturbations(plan: np.ndarray, count: int, seed: int = 0, max_step: float = 0.9) -> list[np.ndarray]:
    """Random nonnegative tensors sharing every unimarginal sum with ``plan``.

    Directions are drawn from the null space of the marginal constraints and
    scaled to keep all entries nonnegative.
    """
    plan = np.asarray(plan, dtype=float)
    _check_cap(plan.shape, 10**4)
    basis = null_space(marginal_constraint_matrix(plan.shape))
    if basis.shape[1] == 0:
        return [plan.copy() for _ in range(count)]
    rng = np.random.default_rng(seed)
    flat = plan.ravel()
    out = []
    for _ in range(count):
        d = basis @ rng.standard_normal(basis.shape[1])
        neg = d < 0
        limit = np.min(flat[neg] / -d[neg]) if np.any(neg) else 1.0
        step = rng.uniform(0.05, max_step) * limit
        out.append((flat + step * d).reshape(plan.shape))
    return out


# -- serialization ------------------------------------------------------------------


def solution_to_dict(solution: SolverSolution) -> dict:
    return {
        "epsilon": solution.epsilon,
        "log_scale": solution.log_scale,
        "iterations": solution.iterations,
        "final_error": solution.final_error,
        "converged": solution.converged,
        "potentials": [u.tolist() for u in solution.potentials],
    }


def solution_from_dict(doc: dict, path_cost: Sequence[np.ndarray]) -> SolverSolution:
    """Rebuild a solution; kernels are recomputed from ``path_cost``."""
    potentials = [np.asarray(u, dtype=float) for u in doc["potentials"]]
    if len(path_cost) != len(potentials) - 1:
        raise ValueError("stored potentials do not match the cost path length")
    return SolverSolution(
        potentials=potentials,
        kernels=kernels_from_cost(path_cost, float(doc["epsilon"])),
        epsilon=float(doc["epsilon"]),
        log_scale=float(doc["log_scale"]),
        iterations=int(doc["iterations"]),
        final_error=float(doc["final_error"]),
        converged=bool(doc["converged"]),
    )
