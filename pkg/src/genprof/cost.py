"""Squared-Euclidean ground costs with path structure.

The full order-``n_s`` cost tensor is never formed by the solver; it is the
sum of consecutive-snapshot matrices ``C[j][i_j, i_{j+1}]``.  A dense version
is available for small oracle instances only.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DENSE_CAP = 10**6


class OracleCapError(ValueError):
    """Raised when a dense tensor would exceed the oracle size cap."""


def pairwise_cost(points_a, points_b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("pqk,pqk->pq", diff, diff)


def build_path_cost(marginals: Sequence) -> list[np.ndarray]:
    """One cost matrix per consecutive pair of (scaled) marginals.

    Accepts ``EmpiricalMarginal`` objects or bare point arrays.
    """
    clouds = [getattr(mu, "points", mu) for mu in marginals]
    if len(clouds) < 2:
        raise ValueError("need at least two marginals to build a path cost")
    sizes = {np.shape(c)[0] for c in clouds}
    if len(sizes) != 1:
        raise ValueError(f"marginals have unequal point counts {sorted(sizes)}")
    return [pairwise_cost(clouds[j], clouds[j + 1]) for j in range(len(clouds) - 1)]


def _check_cap(shape, cap: int) -> None:
    size = int(np.prod(shape, dtype=object))
    if size > cap:
        raise OracleCapError(f"dense tensor with {size} entries exceeds the cap of {cap}")


def dense_shape(path_cost: Sequence[np.ndarray]) -> tuple[int, ...]:
    return tuple([path_cost[0].shape[0]] + [c.shape[1] for c in path_cost])


def materialize_dense(path_cost: Sequence[np.ndarray], cap: int = DENSE_CAP) -> np.ndarray:
    """Dense cost tensor ``C[i_1, ..., i_ns] = sum_j C^j[i_j, i_{j+1}]``."""
    shape = dense_shape(path_cost)
    _check_cap(shape, cap)
    n_s = len(shape)
    dense = np.zeros(shape)
    for j, c in enumerate(path_cost):
        index = [None] * n_s
        index[j] = index[j + 1] = slice(None)
        dense = dense + c[tuple(index)]
    return dense
