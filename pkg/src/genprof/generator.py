"""Synthetic profiles from a solved conditional bridge.

Between snapshots ``sigma`` and ``sigma + 1`` the joint law of the augmented
state is the push-forward of the bimarginal coupling under displacement
interpolation.  Conditioning on a resource context reweights that cloud with
a product Gaussian kernel on the context components.

Interpolated support points are formed from the *raw* snapshot points, so no
inverse scaling of interpolated coordinates is ever needed; scaled coordinates
only enter through the coupling weights.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    TIME_TOL,
    Dataset,
    EmpiricalMarginal,
    ProfileRecord,
    ScalingRecord,
    as_context,
    build_augmented_samples,
    build_empirical_marginals,
    load_dataset,
    scale_marginals,
    snapshot_grid,
)
from .cost import build_path_cost
from .solver import (
    SolverConfig,
    SolverSolution,
    sinkhorn_solve,
    solution_from_dict,
    solution_to_dict,
)

MODES = ("max-likelihood", "mean", "sample")
_MODE_ALIASES = {"maxlik": "max-likelihood", "ml": "max-likelihood", "max-likelihood": "max-likelihood",
                 "mean": "mean", "sample": "sample"}


class OutOfHullError(ValueError):
    """Every kernel weight vanished: the context is far from all training data."""


class OutOfHullWarning(UserWarning):
    pass


class NotConvergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightedCloud:
    points: np.ndarray
    weights: np.ndarray
    m: int | None = None

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.shape[0] != weights.size or weights.size == 0:
            raise ValueError("a weighted cloud needs one weight per point")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError("cloud weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def xi(self) -> np.ndarray:
        return self.points if self.m is None else self.points[:, : self.m]

    @property
    def beta(self) -> np.ndarray:
        if self.m is None:
            raise ValueError("cloud carries no context components")
        return self.points[:, self.m :]


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; choose from {sorted(_MODE_ALIASES)}") from None


def silverman_bandwidth(values, weights=None) -> np.ndarray:
    """Per-column Silverman rule; degenerate columns fall back to std, range, then 1."""
    x = np.atleast_2d(np.asarray(values, dtype=float))
    w = np.full(x.shape[0], 1.0 / x.shape[0]) if weights is None else np.asarray(weights, float) / np.sum(weights)
    n = x.shape[0]
    mean = w @ x
    std = np.sqrt(w @ (x - mean) ** 2)
    q25, q75 = np.percentile(x, [25, 75], axis=0)
    spread = np.minimum(std, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, std)
    spread = np.where(spread > 0, spread, np.ptp(x, axis=0))
    h = 0.9 * spread * n ** (-0.2)
    return np.where(h > 0, h, 1.0)


@dataclass
class ConditionalBridge:
    """A solved conditional bridge plus everything needed to generate profiles."""

    solution: SolverSolution
    marginals: list[EmpiricalMarginal]
    grid: np.ndarray
    scaling: ScalingRecord
    contexts: np.ndarray
    state_names: list[str] = field(default_factory=list)
    context_names: list[str] = field(default_factory=list)
    context_ids: list[str] = field(default_factory=list)
    config: SolverConfig = SolverConfig()
    dataset_hash: str = ""
    _bimarginals: dict = field(default_factory=dict, repr=False)
    _groups: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return self.marginals[0].m

    @property
    def n_s(self) -> int:
        return self.grid.size

    def coupling(self, sigma: int) -> np.ndarray:
        """Normalized bimarginal between snapshots ``sigma`` and ``sigma + 1``."""
        if not 0 <= sigma < self.n_s - 1:
            raise IndexError(f"interval index {sigma} outside [0, {self.n_s - 1})")
        if sigma not in self._bimarginals:
            pair = self.solution.bimarginal(sigma, sigma + 1)
            self._bimarginals[sigma] = pair / pair.sum()
        return self._bimarginals[sigma]

    def context_groups(self, sigma: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct context vectors at snapshot ``sigma`` and each point's group index."""
        if sigma not in self._groups:
            self._groups[sigma] = _context_groups(self.marginals[sigma].beta)
        return self._groups[sigma]

    def default_bandwidth(self) -> np.ndarray:
        return silverman_bandwidth(self.marginals[0].beta)

    def locate(self, t: float) -> tuple[int, float]:
        """Interval index and interpolation fraction for time ``t``."""
        grid = self.grid
        if t < grid[0] - TIME_TOL or t > grid[-1] + TIME_TOL:
            raise ValueError(f"time {t} outside the snapshot range [{grid[0]}, {grid[-1]}]")
        near = np.flatnonzero(np.abs(grid - t) <= TIME_TOL)
        if near.size:
            k = int(near[0])
            return (k, 0.0) if k < grid.size - 1 else (k - 1, 1.0)
        sigma = int(np.searchsorted(grid, t, side="right") - 1)
        return sigma, float((t - grid[sigma]) / (grid[sigma + 1] - grid[sigma]))

    # -- persistence -------------------------------------------------------------

    def to_dict(self, manifest: str | None = None) -> dict:
        doc = solution_to_dict(self.solution)
        doc.update(
            grid=[float(t) for t in self.grid],
            tol=self.config.tol,
            maxiter=self.config.maxiter,
            seed=self.config.seed,
            residuals=[float(r) for r in self.solution.residuals],
            training_contexts=list(self.context_ids),
            dataset_hash=self.dataset_hash,
            manifest=manifest,
        )
        return doc

    def save(self, path, manifest: str | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(manifest), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, dataset: Dataset | None = None) -> "ConditionalBridge":
        """Restore a saved bridge; kernels are rebuilt from the dataset."""
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if dataset is None:
            if not doc.get("manifest"):
                raise ValueError(f"{path} records no dataset manifest; pass the dataset")
            manifest = Path(doc["manifest"])
            if not manifest.is_absolute():
                manifest = path.parent / manifest
            dataset = load_dataset(manifest)
        if doc.get("dataset_hash") and dataset.content_hash and doc["dataset_hash"] != dataset.content_hash:
            raise ValueError("dataset content hash does not match the saved solution")
        train = dataset.restrict(doc["training_contexts"])
        config = SolverConfig(float(doc["epsilon"]), float(doc["tol"]), int(doc["maxiter"]), int(doc["seed"]))
        raw, scaled, scaling = _prepare(train, snapshot_grid(doc["grid"]))
        solution = solution_from_dict(doc, build_path_cost(scaled))
        solution.residuals = list(doc.get("residuals", []))
        return cls(
            solution=solution,
            marginals=raw,
            grid=snapshot_grid(doc["grid"]),
            scaling=scaling,
            contexts=np.array([train.contexts[c] for c in train.contexts]),
            state_names=train.state_names,
            context_names=train.context_names,
            context_ids=list(train.contexts),
            config=config,
            dataset_hash=dataset.content_hash,
        )


def _ordered_records(dataset: Dataset) -> list[ProfileRecord]:
    order = {cid: k for k, cid in enumerate(dataset.contexts)}
    return sorted(dataset.records, key=lambda r: (order[r.context_id], r.run_id))


def _prepare(dataset: Dataset, grid):
    samples = build_augmented_samples(_ordered_records(dataset), grid)
    raw = build_empirical_marginals(samples, dataset.m)
    scaled, scaling = scale_marginals(raw)
    return raw, scaled, scaling


def fit_bridge(dataset: Dataset, grid=None, config: SolverConfig = SolverConfig()) -> ConditionalBridge:
    """Snapshot the training runs, scale, build the path cost and solve."""
    grid = snapshot_grid(dataset.grid if grid is None else grid)
    context_marginal(list(dataset.contexts.values()))
    raw, scaled, scaling = _prepare(dataset, grid)
    solution = sinkhorn_solve(build_path_cost(scaled), scaled, config)
    return ConditionalBridge(
        solution=solution,
        marginals=raw,
        grid=grid,
        scaling=scaling,
        contexts=np.array(list(dataset.contexts.values())),
        state_names=list(dataset.state_names),
        context_names=list(dataset.context_names),
        context_ids=list(dataset.contexts),
        config=config,
        dataset_hash=dataset.content_hash,
    )


def interpolate_joint(bridge: ConditionalBridge, sigma: int, lam: float) -> WeightedCloud:
    """Joint cloud of augmented states at fraction ``lam`` of interval ``sigma``.

    Point ``i * N + j`` is ``(1 - lam) x_i(t_sigma) + lam x_j(t_sigma+1)``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"interpolation fraction must lie in [0, 1], got {lam}")
    coupling = bridge.coupling(sigma)
    a = bridge.marginals[sigma].points
    b = bridge.marginals[sigma + 1].points
    points = ((1.0 - lam) * a[:, None, :] + lam * b[None, :, :]).reshape(-1, a.shape[1])
    return WeightedCloud(points, coupling.ravel() / coupling.sum(), bridge.m)


def context_marginal(known_contexts: Sequence) -> WeightedCloud:
    """Uniform law over distinct known contexts."""
    betas = np.array([as_context(c) for c in known_contexts])
    if betas.shape[0] == 0:
        raise ValueError("need at least one known context")
    if np.unique(betas, axis=0).shape[0] != betas.shape[0]:
        raise ValueError("known contexts must be distinct")
    return WeightedCloud(betas, np.full(betas.shape[0], 1.0 / betas.shape[0]))


def _log_kernel(beta_points: np.ndarray, beta: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    z = (beta_points - beta) / bandwidth
    return -0.5 * np.sum(z * z, axis=-1)


def _check_bandwidth(bandwidth, b: int) -> np.ndarray:
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (b,)).copy()
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise ValueError(f"bandwidths must be positive and finite, got {h.tolist()}")
    return h


def _out_of_hull(beta_points, beta) -> OutOfHullError:
    nearest = float(np.min(np.linalg.norm(beta_points - beta, axis=-1)))
    return OutOfHullError(
        f"context {beta.tolist()} has no kernel mass; nearest support point is {nearest:.4g} away"
    )


def condition_on_context(joint: WeightedCloud, beta, bandwidth) -> WeightedCloud:
    """Kernel-reweighted execution-state cloud given context ``beta``."""
    beta = as_context(beta)
    support = joint.beta
    h = _check_bandwidth(bandwidth, support.shape[1])
    w = joint.weights * np.exp(_log_kernel(support, beta, h))
    total = w.sum()
    if not total > 0:
        raise _out_of_hull(support, beta)
    return WeightedCloud(joint.xi, w / total)


def max_likelihood_state(cond: WeightedCloud) -> np.ndarray:
    return cond.xi[int(np.argmax(cond.weights))].copy()


def mean_state(cond: WeightedCloud) -> np.ndarray:
    return cond.weights @ cond.xi


def sample_states(cond: WeightedCloud, count: int, seed: int = 0, top_k: bool = False) -> np.ndarray:
    """Categorical draws by weight, or the ``count`` heaviest points when ``top_k``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if top_k:
        order = np.argsort(-cond.weights, kind="stable")[:count]
        return cond.xi[order].copy()
    rng = np.random.default_rng(seed)
    return cond.xi[rng.choice(cond.weights.size, size=count, p=cond.weights)]


@dataclass
class SyntheticProfile:
    context: np.ndarray
    mode: str
    times: np.ndarray
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path, state_names: Sequence[str]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_seconds", *state_names])
            for t, state in zip(self.times, self.states):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in state)])

    def write(self, csv_path, state_names: Sequence[str]) -> Path:
        """CSV plus a JSON sidecar next to it; returns the sidecar path."""
        csv_path = Path(csv_path)
        self.to_csv(csv_path, state_names)
        sidecar = csv_path.with_suffix(".json")
        doc = {"beta": [float(v) for v in self.context], "mode": self.mode, **self.metadata}
        sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return sidecar


def read_profile_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:], rows[0][1:]


def time_grid(start: float, end: float, delta_t: float) -> np.ndarray:
    """``start, start + dt, ...`` ending exactly at ``end`` (last step may be shorter)."""
    if not delta_t > 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    n = int(np.floor((end - start) / delta_t + TIME_TOL))
    times = start + delta_t * np.arange(n + 1)
    if end - times[-1] > TIME_TOL:
        times = np.append(times, end)
    else:
        times[-1] = end
    return times


def _context_groups(points_beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    distinct, inverse = np.unique(points_beta, axis=0, return_inverse=True)
    return distinct, inverse.ravel()


def _state_at(bridge: ConditionalBridge, t: float, beta, h, mode: str, rng) -> np.ndarray:
    # Same result as interpolate_joint -> condition_on_context -> extraction,
    # without materializing the N^2 interpolated points.  Context components
    # take few distinct values, so the kernel is evaluated per context pair.
    sigma, lam = bridge.locate(t)
    coupling = bridge.coupling(sigma)
    a, b = bridge.marginals[sigma], bridge.marginals[sigma + 1]
    ga, ia = bridge.context_groups(sigma)
    gb, ib = bridge.context_groups(sigma + 1)
    pair_beta = (1.0 - lam) * ga[:, None, :] + lam * gb[None, :, :]
    kernel = np.exp(_log_kernel(pair_beta, beta, h))
    w = coupling * kernel[ia][:, ib]
    total = w.sum()
    if not total > 0:
        raise _out_of_hull(pair_beta.reshape(-1, beta.size), beta)
    w = w / total
    if mode == "mean":
        return (1.0 - lam) * (w.sum(axis=1) @ a.xi) + lam * (w.sum(axis=0) @ b.xi)
    if mode == "max-likelihood":
        k = int(np.argmax(w))
    else:
        flat = w.ravel()
        k = int(rng.choice(flat.size, p=flat / flat.sum()))
    i, j = divmod(k, coupling.shape[1])
    return (1.0 - lam) * a.xi[i] + lam * b.xi[j]


def generate_profile(
    bridge: ConditionalBridge,
    beta,
    delta_t: float,
    mode: str = "max-likelihood",
    bandwidth=None,
    seed: int = 0,
    allow_unconverged: bool = False,
) -> SyntheticProfile:
    """Synthetic execution profile for context ``beta`` on a ``delta_t`` grid."""
    if not (bridge.solution.converged or allow_unconverged):
        raise NotConvergedError("solver did not converge; pass allow_unconverged=True to proceed")
    mode = normalize_mode(mode)
    beta = as_context(beta)
    h = _check_bandwidth(bridge.default_bandwidth() if bandwidth is None else bandwidth, beta.size)
    lo, hi = bridge.contexts.min(axis=0), bridge.contexts.max(axis=0)
    if np.any(beta < lo) or np.any(beta > hi):
        warnings.warn(f"context {beta.tolist()} lies outside the training hull", OutOfHullWarning, stacklevel=2)
    times = time_grid(bridge.grid[0], bridge.grid[-1], delta_t)
    rng = np.random.default_rng(seed)
    states = np.array([_state_at(bridge, t, beta, h, mode, rng) for t in times])
    metadata = {
        "delta_t": delta_t,
        "bandwidth": [float(v) for v in h],
        "seed": seed,
        "epsilon": bridge.solution.epsilon,
        "converged": bridge.solution.converged,
        "iterations": bridge.solution.iterations,
        "final_error": bridge.solution.final_error,
    }
    return SyntheticProfile(beta, mode, times, states, metadata)
