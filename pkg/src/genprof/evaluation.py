"""Profile accuracy: exact DTW, its normalization, and the bracketing baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, as_context


class NoBracketError(ValueError):
    pass


def dtw_distance(a, b) -> tuple[float, list[tuple[int, int]]]:
    """Exact DTW with Euclidean local cost and steps (1,0), (0,1), (1,1).

    Returns the accumulated cost and the optimal warping path; ties in the
    traceback prefer the diagonal step.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("DTW needs nonempty sequences")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    local = np.hypot.reduce(a[:, None, :] - b[None, :, :], axis=-1)  # no under/overflow in squares
    n, m = local.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        cost = local[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = cost[j - 1] + best

    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        steps = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def normalized_dtw(generated, reference) -> float:
    """DTW divided by (reference length x largest reference state norm)."""
    states = getattr(generated, "states", generated)
    reference = np.asarray(reference, dtype=float)
    if reference.ndim == 1:
        reference = reference[:, None]
    peak = float(np.max(np.linalg.norm(reference, axis=1)))
    if peak == 0:
        raise ValueError("reference profile is identically zero; normalized DTW undefined")
    distance, _ = dtw_distance(states, reference)
    return distance / (reference.shape[0] * peak)


def bracketing_contexts(known: dict[str, np.ndarray], beta) -> tuple[str, str]:
    """Tightest componentwise bracket ``lower <= beta <= upper`` among known contexts.

    The lower context maximizes its coordinate sum and the upper one
    minimizes it; remaining ties go to the lexicographically closest vector.
    """
    beta = as_context(beta)
    lower = [(cid, v) for cid, v in known.items() if np.all(v <= beta)]
    upper = [(cid, v) for cid, v in known.items() if np.all(v >= beta)]
    if not lower or not upper:
        raise NoBracketError(f"no known contexts bracket {beta.tolist()}")
    lo = max(lower, key=lambda kv: (kv[1].sum(), tuple(kv[1])))
    hi = min(upper, key=lambda kv: (kv[1].sum(), tuple(kv[1])))
    return lo[0], hi[0]


def baseline_profile(train: Dataset, beta, grid=None, times=None) -> np.ndarray:
    """Average of the bracketing contexts' mean snapshot profiles.

    The average is formed at the snapshot times; if ``times`` is given the
    result is linearly interpolated onto them.
    """
    grid = np.asarray(train.grid if grid is None else grid, dtype=float)
    lo, hi = bracketing_contexts(train.contexts, beta)
    snap = 0.5 * (train.mean_profile(lo, grid) + train.mean_profile(hi, grid))
    if times is None:
        return snap
    times = np.asarray(times, dtype=float)
    return np.column_stack([np.interp(times, grid, snap[:, k]) for k in range(snap.shape[1])])


def improvement_pct(baseline: float, generative: float) -> float:
    return 100.0 * (baseline - generative) / baseline if baseline > 0 else float("nan")


@dataclass
class ReportRow:
    context_id: str
    beta: np.ndarray
    dtw_generative: float
    dtw_baseline: float

    @property
    def improvement(self) -> float:
        return improvement_pct(self.dtw_baseline, self.dtw_generative)


@dataclass
class AccuracyReport:
    rows: list[ReportRow]
    context_names: list[str]
    metadata: dict = field(default_factory=dict)

    @property
    def mean_generative(self) -> float:
        return float(np.mean([r.dtw_generative for r in self.rows]))

    @property
    def mean_baseline(self) -> float:
        return float(np.mean([r.dtw_baseline for r in self.rows]))

    @property
    def mean_improvement(self) -> float:
        return improvement_pct(self.mean_baseline, self.mean_generative)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["context_id", *self.context_names, "dtw_generative", "dtw_baseline", "improvement_pct"])
            for r in self.rows:
                w.writerow([r.context_id, *(f"{v:.10g}" for v in r.beta), f"{r.dtw_generative:.10g}",
                            f"{r.dtw_baseline:.10g}", f"{r.improvement:.6g}"])
            w.writerow(["mean", *([""] * len(self.context_names)), f"{self.mean_generative:.10g}",
                        f"{self.mean_baseline:.10g}", f"{self.mean_improvement:.6g}"])


def accuracy_report(truth: Dataset, train: Dataset, generated: dict[str, np.ndarray],
                    times, metadata: dict | None = None) -> AccuracyReport:
    """Score generated profiles against each context's mean empirical profile.

    ``generated`` maps context id to a ``(len(times), m)`` array.  The
    baseline is built from ``train`` only and sampled on the same ``times``.
    """
    times = np.asarray(times, dtype=float)
    missing = [cid for cid in generated if cid not in truth.contexts or not truth.records_for(cid)]
    if missing:
        raise KeyError(f"no ground truth for contexts {missing}")
    rows = []
    for cid, states in generated.items():
        beta = truth.contexts[cid]
        reference = truth.mean_profile(cid, times)
        base = baseline_profile(train, beta, times=times)
        rows.append(ReportRow(cid, beta, normalized_dtw(states, reference), normalized_dtw(base, reference)))
    meta = {"path_length": "reference sample count"}
    meta.update(metadata or {})
    return AccuracyReport(rows, list(truth.context_names), meta)


def write_plot_data(path, rows: Sequence[tuple[float, float, float]]) -> None:
    """Rows of (training_fraction, mean_dtw, relative_measurement_time)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["training_fraction", "mean_dtw", "relative_measurement_time"])
        for frac, dtw, rel in rows:
            w.writerow([f"{frac:.6g}", f"{dtw:.10g}", f"{rel:.6g}"])
