"""Dataset representation, snapshot extraction and empirical marginals.

Throughout the package an *augmented state* is a flat vector ``(xi, beta)``:
the ``m`` execution-state rates first, then the ``b`` resource-context
components.  Point clouds are stored as ``(N, m + b)`` float arrays.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Snapshot times are compared to sample times with this absolute slack so
# that 0.05 * 3 lands on the 0.15 sample.
TIME_TOL = 1e-9
WEIGHT_TOL = 1e-12
SCALE_RANGE = 0.1


class DatasetError(ValueError):
    """Raised for malformed or inconsistent profile data."""


def as_context(values: Iterable[float]) -> np.ndarray:
    beta = np.atleast_1d(np.asarray(values, dtype=float))
    if beta.ndim != 1 or beta.size < 1:
        raise DatasetError("a resource context needs at least one component")
    if not np.all(np.isfinite(beta)):
        raise DatasetError(f"non-finite resource context {beta.tolist()}")
    return beta


@dataclass(frozen=True)
class ProfileRecord:
    """One measured run: execution states sampled under a fixed context."""

    run_id: str
    context: np.ndarray
    times: np.ndarray
    states: np.ndarray
    context_id: str | None = None

    def __post_init__(self):
        context = as_context(self.context)
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or times.size == 0:
            raise DatasetError(f"run {self.run_id}: empty profile")
        if states.shape[0] != times.size:
            raise DatasetError(f"run {self.run_id}: {times.size} times but {states.shape[0]} states")
        if abs(times[0]) > TIME_TOL:
            raise DatasetError(f"run {self.run_id}: profile must start at t=0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise DatasetError(f"run {self.run_id}: sample times must be strictly increasing")
        if not np.all(np.isfinite(states)) or np.any(states < 0):
            raise DatasetError(f"run {self.run_id}: states must be finite and nonnegative")
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def m(self) -> int:
        return self.states.shape[1]

    @property
    def b(self) -> int:
        return self.context.size

    def state_at(self, t: float) -> np.ndarray:
        """Zero-order hold lookup; zeros after the last recorded sample."""
        if t > self.times[-1] + TIME_TOL:
            return np.zeros(self.m)
        k = np.searchsorted(self.times, t + TIME_TOL, side="right") - 1
        return self.states[max(k, 0)]

    def resample(self, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times + TIME_TOL, side="right") - 1
        out = self.states[np.clip(idx, 0, None)].copy()
        out[times > self.times[-1] + TIME_TOL] = 0.0
        return out


def snapshot_grid(times: Sequence[float]) -> np.ndarray:
    grid = np.asarray(times, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise DatasetError("a snapshot grid needs at least two times")
    if abs(grid[0]) > TIME_TOL:
        raise DatasetError("the snapshot grid must start at t=0")
    if np.any(np.diff(grid) <= 0):
        raise DatasetError("snapshot times must be strictly increasing")
    return grid


def uniform_grid(step: float, end: float) -> np.ndarray:
    """Times ``0, step, 2 step, ...`` up to and including ``end`` (within tolerance)."""
    n = int(np.floor(end / step + TIME_TOL))
    return step * np.arange(n + 1)


@dataclass
class Dataset:
    """Profiles plus the context catalog they were measured on."""

    records: list[ProfileRecord]
    contexts: dict[str, np.ndarray]
    state_names: list[str]
    context_names: list[str]
    grid: np.ndarray | None = None
    units: dict = field(default_factory=dict)
    content_hash: str = ""

    @property
    def m(self) -> int:
        return len(self.state_names)

    @property
    def b(self) -> int:
        return len(self.context_names)

    def context_id_of(self, beta) -> str:
        beta = as_context(beta)
        for cid, value in self.contexts.items():
            if value.shape == beta.shape and np.array_equal(value, beta):
                return cid
        raise KeyError(f"context {beta.tolist()} is not in the catalog")

    def records_for(self, context_id: str) -> list[ProfileRecord]:
        return [r for r in self.records if r.context_id == context_id]

    def restrict(self, context_ids: Iterable[str]) -> "Dataset":
        keep = list(dict.fromkeys(context_ids))
        missing = [c for c in keep if c not in self.contexts]
        if missing:
            raise KeyError(f"unknown context ids: {missing}")
        wanted = set(keep)
        return Dataset(
            records=[r for r in self.records if r.context_id in wanted],
            contexts={c: self.contexts[c] for c in keep},
            state_names=list(self.state_names),
            context_names=list(self.context_names),
            grid=self.grid,
            units=dict(self.units),
            content_hash=self.content_hash,
        )

    def mean_profile(self, context_id: str, times: Sequence[float]) -> np.ndarray:
        """Pointwise mean over all runs of one context, sampled at ``times``."""
        runs = self.records_for(context_id)
        if not runs:
            raise KeyError(f"no runs recorded for context {context_id!r}")
        return np.mean([r.resample(times) for r in runs], axis=0)


def build_augmented_samples(records: Sequence[ProfileRecord], grid) -> np.ndarray:
    """Augmented states of every run at every snapshot time.

    Returns an array of shape ``(len(records), n_s, m + b)``; row ``k`` holds
    ``(xi_k(t_sigma), beta_k)`` for run ``k``.
    """
    grid = snapshot_grid(grid)
    if len(records) == 0:
        raise DatasetError("empty dataset")
    m, b = records[0].m, records[0].b
    for r in records:
        if r.m != m or r.b != b:
            raise DatasetError(
                f"run {r.run_id} has (m, b) = ({r.m}, {r.b}), expected ({m}, {b})"
            )
    last = max(r.times[-1] for r in records)
    if grid[-1] > last + TIME_TOL:
        raise DatasetError(
            f"snapshot time {grid[-1]} lies beyond every recorded profile (last sample {last})"
        )
    out = np.empty((len(records), grid.size, m + b))
    for k, r in enumerate(records):
        out[k, :, :m] = r.resample(grid)
        out[k, :, m:] = r.context
    return out


@dataclass(frozen=True)
class EmpiricalMarginal:
    """Weighted point cloud of augmented states at one snapshot."""

    points: np.ndarray
    weights: np.ndarray
    m: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if points.ndim != 2 or points.shape[0] != weights.size:
            raise DatasetError("points and weights disagree in length")
        if np.any(weights <= 0):
            raise DatasetError("marginal weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise DatasetError(f"marginal weights sum to {weights.sum()!r}, not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, : self.m]

    @property
    def beta(self) -> np.ndarray:
        return self.points[:, self.m :]


def build_empirical_marginals(samples: np.ndarray, m: int) -> list[EmpiricalMarginal]:
    """Uniform-weight marginals, one per snapshot, from ``build_augmented_samples`` output."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[0] == 0:
        raise DatasetError("expected augmented samples of shape (runs, n_s, m + b)")
    n = samples.shape[0]
    weights = np.full(n, 1.0 / n)
    return [EmpiricalMarginal(samples[:, s, :], weights, m) for s in range(samples.shape[1])]


@dataclass(frozen=True)
class ScalingRecord:
    """Per-snapshot, per-component affine maps into ``[0, SCALE_RANGE]``.

    ``factors`` is zero for degenerate (constant) components; their inverse
    returns the stored offset.
    """

    offsets: np.ndarray
    factors: np.ndarray

    def forward(self, sigma: int, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.offsets[sigma]) * self.factors[sigma]

    def inverse(self, sigma: int, points: np.ndarray) -> np.ndarray:
        factors = self.factors[sigma]
        degenerate = factors == 0
        safe = np.where(degenerate, 1.0, factors)
        raw = np.asarray(points, dtype=float) / safe + self.offsets[sigma]
        return np.where(degenerate, self.offsets[sigma], raw)


def scale_marginals(marginals: Sequence[EmpiricalMarginal]):
    """Map every component of every snapshot into ``[0, 0.1]``.

    Returns the scaled marginals and the ``ScalingRecord`` needed to undo it.
    """
    offsets, factors, scaled = [], [], []
    for mu in marginals:
        if not np.all(np.isfinite(mu.points)):
            raise DatasetError("cannot scale non-finite points")
        lo = mu.points.min(axis=0)
        span = mu.points.max(axis=0) - lo
        factor = np.divide(SCALE_RANGE, span, out=np.zeros_like(span), where=span > 0)
        offsets.append(lo)
        factors.append(factor)
        scaled.append(EmpiricalMarginal((mu.points - lo) * factor, mu.weights, mu.m))
    return scaled, ScalingRecord(np.array(offsets), np.array(factors))


# -- file formats -------------------------------------------------------------


def _sha256_files(*paths: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: missing header row")
    return rows[0], rows[1:]


def load_dataset(manifest_path) -> Dataset:
    """Read a dataset from its JSON manifest (contexts CSV + profiles CSV)."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
    root = manifest_path.parent
    try:
        contexts_path = root / manifest["contexts_file"]
        profiles_path = root / manifest["profiles_file"]
        m, b = int(manifest["m"]), int(manifest["b"])
    except KeyError as exc:
        raise DatasetError(f"manifest lacks field {exc}") from exc

    header, rows = _read_csv(contexts_path)
    if header[0] != "context_id" or len(header) != 1 + b:
        raise DatasetError(f"{contexts_path}: expected context_id plus {b} columns, got {header}")
    contexts: dict[str, np.ndarray] = {}
    for row in rows:
        if row[0] in contexts:
            raise DatasetError(f"duplicate context id {row[0]!r}")
        contexts[row[0]] = as_context([float(v) for v in row[1:]])
    context_names = header[1:]

    header, rows = _read_csv(profiles_path)
    if header[:3] != ["run_id", "context_id", "t_seconds"] or len(header) != 3 + m:
        raise DatasetError(
            f"{profiles_path}: expected run_id, context_id, t_seconds plus {m} columns"
        )
    state_names = header[3:]
    grouped: dict[str, list[list[str]]] = {}
    for row in rows:
        grouped.setdefault(row[0], []).append(row)
    records = []
    for run_id, run_rows in grouped.items():
        cids = {r[1] for r in run_rows}
        if len(cids) != 1:
            raise DatasetError(f"run {run_id} spans several contexts {sorted(cids)}")
        cid = cids.pop()
        if cid not in contexts:
            raise DatasetError(f"run {run_id} refers to unknown context {cid!r}")
        data = np.array([[float(v) for v in r[2:]] for r in run_rows])
        records.append(ProfileRecord(run_id, contexts[cid], data[:, 0], data[:, 1:], cid))

    grid = snapshot_grid(manifest["grid"]) if manifest.get("grid") is not None else None
    return Dataset(
        records=records,
        contexts=contexts,
        state_names=state_names,
        context_names=context_names,
        grid=grid,
        units=dict(manifest.get("units", {})),
        content_hash=_sha256_files(contexts_path, profiles_path),
    )


def write_dataset(dataset: Dataset, out_dir, extra: dict | None = None) -> Path:
    """Write contexts.csv, profiles.csv and manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    contexts_path = out_dir / "contexts.csv"
    profiles_path = out_dir / "profiles.csv"
    with open(contexts_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["context_id", *dataset.context_names])
        for cid, beta in dataset.contexts.items():
            w.writerow([cid, *(repr(float(v)) for v in beta)])
    with open(profiles_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "context_id", "t_seconds", *dataset.state_names])
        for r in dataset.records:
            for t, state in zip(r.times, r.states):
                w.writerow([r.run_id, r.context_id, repr(float(t)), *(repr(float(v)) for v in state)])
    manifest = {
        "contexts_file": contexts_path.name,
        "profiles_file": profiles_path.name,
        "m": dataset.m,
        "b": dataset.b,
        "state_columns": dataset.state_names,
        "context_columns": dataset.context_names,
        "grid": None if dataset.grid is None else [float(t) for t in dataset.grid],
        "units": dataset.units,
    }
    if extra:
        manifest.update(extra)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    dataset.content_hash = _sha256_files(contexts_path, profiles_path)
    return manifest_path
