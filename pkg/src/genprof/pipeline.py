"""End-to-end experiment helpers: choose training contexts, fit, generate, score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .evaluation import AccuracyReport, accuracy_report
from .generator import ConditionalBridge, fit_bridge, generate_profile
from .solver import SolverConfig
from .workloadsim import PhaseModel, simulate_dataset


def extreme_contexts(catalog: dict[str, np.ndarray]) -> list[str]:
    """Ids of the smallest and largest contexts by coordinate sum (ties: lexicographic)."""
    items = list(catalog.items())
    lo = min(items, key=lambda kv: (kv[1].sum(), tuple(kv[1])))[0]
    hi = max(items, key=lambda kv: (kv[1].sum(), tuple(kv[1])))[0]
    return list(dict.fromkeys([lo, hi]))


def select_training_contexts(catalog: dict[str, np.ndarray], fraction: float, seed: int = 0) -> list[str]:
    """``floor(fraction * |catalog|)`` contexts (at least two) including both extremes.

    The extremes guarantee a componentwise bracket for every catalog entry on
    grid-shaped catalogs.  The rest are drawn uniformly without replacement.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"training fraction must lie in (0, 1], got {fraction}")
    ids = list(catalog)
    count = min(len(ids), max(int(np.floor(fraction * len(ids) + 1e-9)), 2))
    chosen = extreme_contexts(catalog)
    rest = [cid for cid in ids if cid not in chosen]
    rng = np.random.default_rng(seed)
    extra = rng.choice(len(rest), size=max(count - len(chosen), 0), replace=False)
    chosen += [rest[k] for k in sorted(extra)]
    order = {cid: k for k, cid in enumerate(ids)}
    return sorted(chosen, key=order.__getitem__)


@dataclass
class ExperimentResult:
    bridge: ConditionalBridge
    train_ids: list[str]
    report: AccuracyReport
    times: np.ndarray
    profiles: dict[str, np.ndarray]


def run_experiment(train: Dataset, truth: Dataset, config: SolverConfig = SolverConfig(),
                   delta_t: float = 0.01, mode: str = "max-likelihood", bandwidth=None,
                   targets=None, seed: int = 0) -> ExperimentResult:
    """Fit on ``train`` and score generated profiles against ``truth``.

    ``targets`` defaults to every context of ``truth`` absent from ``train``.
    The baseline is built from ``train`` alone.
    """
    bridge = fit_bridge(train, truth.grid if train.grid is None else train.grid, config)
    if targets is None:
        targets = [cid for cid in truth.contexts if cid not in train.contexts]
    profiles, times = {}, None
    for cid in targets:
        prof = generate_profile(bridge, truth.contexts[cid], delta_t, mode, bandwidth, seed)
        profiles[cid] = prof.states
        times = prof.times
    report = accuracy_report(truth, train, profiles, times,
                             {"training_contexts": len(train.contexts), "catalog": len(truth.contexts)})
    return ExperimentResult(bridge, list(train.contexts), report, times, profiles)


def simulator_experiment(model: PhaseModel, fraction: float, n_d: int = 10, seed: int = 0,
                         config: SolverConfig = SolverConfig(), **kwargs) -> ExperimentResult:
    """Train on noisy runs of a catalog fraction; score against the noise-free rate laws."""
    train_ids = select_training_contexts(model.catalog, fraction, seed)
    train = simulate_dataset(model, train_ids, n_d=n_d, seed=seed)
    truth = simulate_dataset(model.with_noise(0.0), n_d=1, seed=seed)
    return run_experiment(train, truth, config, seed=seed, **kwargs)
