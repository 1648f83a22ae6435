"""Phase-based synthetic workloads with known ground truth.

A task runs through fixed-duration phases.  In each phase every execution
rate is a piecewise-affine function of the resource context (``min`` of
affine pieces for saturating laws, ``max`` for floors), multiplied by
``1 + noise * N(0, 1)`` per sample and clamped at zero.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TIME_TOL, Dataset, ProfileRecord, as_context, uniform_grid

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, context_index: int, run_index: int) -> int:
    """Per-run seed: splitmix64 chained over (seed, context index, run index)."""
    h = splitmix64(seed & MASK64)
    h = splitmix64(h ^ context_index)
    return splitmix64(h ^ run_index)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RateLaw:
    """``combine`` over affine pieces ``coef . beta + intercept``, clamped at 0.

    ``pieces`` has one row per piece: ``b`` coefficients followed by the intercept.
    """

    pieces: np.ndarray
    combine: str = "min"

    def __post_init__(self):
        pieces = np.atleast_2d(np.asarray(self.pieces, dtype=float))
        if self.combine not in ("min", "max"):
            raise ModelError(f"combine must be 'min' or 'max', got {self.combine!r}")
        if not np.all(np.isfinite(pieces)):
            raise ModelError("rate-law coefficients must be finite")
        object.__setattr__(self, "pieces", pieces)

    def __call__(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        values = self.pieces[:, :-1] @ beta + self.pieces[:, -1]
        value = values.min() if self.combine == "min" else values.max()
        return max(float(value), 0.0)


@dataclass(frozen=True)
class Phase:
    duration: float
    laws: tuple[RateLaw, ...]
    noise: float = 0.0
    name: str = ""

    def rates(self, beta) -> np.ndarray:
        return np.array([law(beta) for law in self.laws])


@dataclass
class PhaseModel:
    phases: list[Phase]
    catalog: dict[str, np.ndarray]
    state_names: list[str]
    context_names: list[str]
    sample_dt: float = 0.01
    snapshot_dt: float = 0.05
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.phases:
            raise ModelError("a model needs at least one phase")
        m, b = len(self.state_names), len(self.context_names)
        for p in self.phases:
            if not p.duration > 0:
                raise ModelError(f"phase {p.name!r} has nonpositive duration")
            if p.noise < 0:
                raise ModelError(f"phase {p.name!r} has negative noise")
            if len(p.laws) != m:
                raise ModelError(f"phase {p.name!r} has {len(p.laws)} rate laws, expected {m}")
            for law in p.laws:
                if law.pieces.shape[1] != b + 1:
                    raise ModelError(f"phase {p.name!r}: rate-law pieces need {b + 1} entries")
        if not self.catalog:
            raise ModelError("empty context catalog")
        for cid, beta in self.catalog.items():
            if as_context(beta).size != b:
                raise ModelError(f"context {cid} has wrong dimension")

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.phases))

    def sample_times(self, sample_dt: float | None = None) -> np.ndarray:
        return uniform_grid(sample_dt or self.sample_dt, self.duration)

    def phase_index(self, times) -> np.ndarray:
        ends = np.cumsum([p.duration for p in self.phases])
        idx = np.searchsorted(ends, np.asarray(times) + TIME_TOL, side="right")
        return np.minimum(idx, len(self.phases) - 1)

    def true_profile(self, beta, times) -> np.ndarray:
        """Noise-free rates at ``times``; the expected profile up to clamping."""
        beta = as_context(beta)
        table = np.array([p.rates(beta) for p in self.phases])
        return table[self.phase_index(times)]

    # -- json -----------------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "PhaseModel":
        try:
            context_names = list(doc["context_names"])
            state_names = list(doc["state_names"])
            catalog_doc = doc["catalog"]
            if "axes" in catalog_doc:
                axes = [catalog_doc["axes"][name] for name in context_names]
                catalog = {
                    f"ctx{k:03d}": as_context(v) for k, v in enumerate(itertools.product(*axes))
                }
            else:
                catalog = {cid: as_context(v) for cid, v in catalog_doc["contexts"].items()}
            phases = [
                Phase(
                    duration=float(p["duration"]),
                    laws=tuple(RateLaw(r["pieces"], r.get("combine", "min")) for r in p["rates"]),
                    noise=float(p.get("noise", 0.0)),
                    name=p.get("name", ""),
                )
                for p in doc["phases"]
            ]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed phase model: {exc!r}") from exc
        return cls(
            phases=phases,
            catalog=catalog,
            state_names=state_names,
            context_names=context_names,
            sample_dt=float(doc.get("sample_dt", 0.01)),
            snapshot_dt=float(doc.get("snapshot_dt", 0.05)),
            units=dict(doc.get("units", {})),
        )

    @classmethod
    def load(cls, path) -> "PhaseModel":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read model file {path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_noise(self, noise: float) -> "PhaseModel":
        phases = [Phase(p.duration, p.laws, noise, p.name) for p in self.phases]
        return PhaseModel(phases, dict(self.catalog), list(self.state_names), list(self.context_names),
                          self.sample_dt, self.snapshot_dt, dict(self.units))


def default_model_path() -> Path:
    return Path(str(resources.files("genprof") / "data" / "default_model.json"))


def default_model() -> PhaseModel:
    return PhaseModel.load(default_model_path())


def simulate_profile(model: PhaseModel, beta, sample_dt: float | None = None, seed: int = 0,
                     run_id: str = "run", context_id: str | None = None) -> ProfileRecord:
    times = model.sample_times(sample_dt)
    truth = model.true_profile(beta, times)
    noise = np.array([model.phases[k].noise for k in model.phase_index(times)])
    rng = np.random.default_rng(seed)
    states = np.clip(truth * (1.0 + noise[:, None] * rng.standard_normal(truth.shape)), 0.0, None)
    return ProfileRecord(run_id, beta, times, states, context_id)


def simulate_dataset(model: PhaseModel, contexts: Sequence[str] | None = None, n_d: int = 10,
                     sample_dt: float | None = None, seed: int = 0) -> Dataset:
    """``n_d`` seeded runs for every requested catalog context."""
    if n_d < 1:
        raise ValueError("n_d must be at least 1")
    ids = list(model.catalog) if contexts is None else list(contexts)
    if not ids:
        raise ValueError("no contexts requested")
    index = {cid: k for k, cid in enumerate(model.catalog)}
    records = []
    for cid in ids:
        beta = model.catalog[cid]
        for r in range(n_d):
            s = derive_seed(seed, index[cid], r)
            records.append(simulate_profile(model, beta, sample_dt, s, f"{cid}_r{r:03d}", cid))
    last = records[0].times[-1]
    return Dataset(
        records=records,
        contexts={cid: model.catalog[cid] for cid in ids},
        state_names=list(model.state_names),
        context_names=list(model.context_names),
        grid=uniform_grid(model.snapshot_dt, last),
        units=dict(model.units),
    )
