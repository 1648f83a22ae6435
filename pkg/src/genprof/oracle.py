"""Brute-force checks of the path-structured solver on tiny instances.

Each instance has random snapshot clouds (hence a random squared-Euclidean
path cost) and random strictly positive marginal weights.  The path solver
is compared against Sinkhorn on the materialized tensor, its projections
against exhaustive summation, and its plan against feasible perturbations
in relative entropy to the Gibbs distribution.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cost import DENSE_CAP, _check_cap, build_path_cost, materialize_dense
from .solver import (
    SolverConfig,
    assemble_dense_plan,
    dense_sinkhorn_solve,
    feasible_perturbations,
    kl_to_gibbs,
    sinkhorn_solve,
)

EQUIVALENCE_TOL = 1e-9
PROJECTION_TOL = 1e-10
FEASIBILITY_TOL = 1e-8
KL_SLACK = 1e-12


@dataclass
class OracleInstance:
    n_s: int
    n: int
    seed: int
    path_cost: list[np.ndarray]
    weights: list[np.ndarray]


def random_instance(n_s: int, n: int, seed: int, dim: int = 2) -> OracleInstance:
    rng = np.random.default_rng([n_s, n, seed])
    clouds = [rng.random((n, dim)) for _ in range(n_s)]
    weights = []
    for _ in range(n_s):
        w = rng.uniform(0.2, 1.0, n)
        weights.append(w / w.sum())
    return OracleInstance(n_s, n, seed, build_path_cost(clouds), weights)


def brute_unimarginal(plan: np.ndarray, sigma: int) -> np.ndarray:
    """Explicit loop over every multi-index."""
    out = np.zeros(plan.shape[sigma])
    for idx in itertools.product(*(range(k) for k in plan.shape)):
        out[idx[sigma]] += plan[idx]
    return out


def brute_bimarginal(plan: np.ndarray, sigma1: int, sigma2: int) -> np.ndarray:
    out = np.zeros((plan.shape[sigma1], plan.shape[sigma2]))
    for idx in itertools.product(*(range(k) for k in plan.shape)):
        out[idx[sigma1], idx[sigma2]] += plan[idx]
    return out


@dataclass
class OracleResult:
    n_s: int
    n: int
    seed: int
    plan_deviation: float
    projection_deviation: float
    feasibility_l1: float
    kl_margin: float
    converged: bool

    @property
    def passed(self) -> bool:
        return (
            self.converged
            and self.plan_deviation <= EQUIVALENCE_TOL
            and self.projection_deviation <= PROJECTION_TOL
            and self.feasibility_l1 <= FEASIBILITY_TOL
            and self.kl_margin >= -KL_SLACK
        )


def check_instance(inst: OracleInstance, config: SolverConfig = SolverConfig(),
                   perturbations: int = 100, wrong_sign: bool = False,
                   cap: int = DENSE_CAP) -> OracleResult:
    """Run every oracle comparison on one instance.

    ``wrong_sign`` hands the dense reference the negated cost, a negative
    control that must make the equivalence check fail.
    """
    _check_cap((inst.n,) * inst.n_s, cap)
    solution = sinkhorn_solve(inst.path_cost, inst.weights, config)
    dense_cost = materialize_dense(inst.path_cost, cap)
    path_plan = assemble_dense_plan(solution, cap=cap)
    reference = dense_sinkhorn_solve(-dense_cost if wrong_sign else dense_cost, inst.weights, config, cap)
    plan_dev = float(np.max(np.abs(path_plan - reference)))

    proj_dev, feas = 0.0, 0.0
    for s in range(inst.n_s):
        uni = solution.unimarginal(s)
        proj_dev = max(proj_dev, float(np.max(np.abs(uni - brute_unimarginal(path_plan, s)))))
        feas = max(feas, float(np.sum(np.abs(uni - inst.weights[s]))))
        for s2 in range(s + 1, inst.n_s):
            pair = solution.bimarginal(s, s2)
            proj_dev = max(proj_dev, float(np.max(np.abs(pair - brute_bimarginal(path_plan, s, s2)))))

    kl_opt = kl_to_gibbs(path_plan, dense_cost, config.epsilon)
    margin = float("inf")
    for other in feasible_perturbations(path_plan, perturbations, seed=inst.seed):
        margin = min(margin, kl_to_gibbs(other, dense_cost, config.epsilon) - kl_opt)
    return OracleResult(inst.n_s, inst.n, inst.seed, plan_dev, proj_dev, feas, margin, solution.converged)


def run_suite(n_s_values=(2, 3, 4), n_values=(2, 3, 4, 5), seeds=range(10),
              config: SolverConfig = SolverConfig(), perturbations: int = 100,
              wrong_sign: bool = False, cap: int = DENSE_CAP) -> list[OracleResult]:
    for n_s in n_s_values:
        for n in n_values:
            _check_cap((n,) * n_s, cap)
    results = []
    for n_s in n_s_values:
        for n in n_values:
            for seed in seeds:
                inst = random_instance(n_s, n, seed)
                results.append(check_instance(inst, config, perturbations, wrong_sign, cap))
    return results
