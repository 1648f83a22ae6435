"""Command-line front end: simulate, ingest, solve, generate, evaluate, oracle-check.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags.  Exit codes: 0 success, 2 bad input,
3 solver non-convergence.  ``GENPROF_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .core import DatasetError, load_dataset, write_dataset
from .cost import OracleCapError
from .evaluation import NoBracketError, accuracy_report, write_plot_data
from .generator import (
    ConditionalBridge,
    NotConvergedError,
    OutOfHullError,
    fit_bridge,
    generate_profile,
    normalize_mode,
    read_profile_csv,
)
from .oracle import run_suite
from .pipeline import select_training_contexts
from .solver import SinkhornUnderflowError, SolverConfig
from .workloadsim import ModelError, PhaseModel, default_model_path, simulate_dataset

log = logging.getLogger("genprof")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 2, 3

DEFAULTS = {
    "seed": 0,
    "epsilon": 0.1,
    "tol": 1e-12,
    "maxiter": 10_000,
    "delta_t": 0.01,
    "mode": "maxlik",
    "bandwidth": None,
    "train_fraction": 0.15,
    "train_contexts": None,
    "n_d": 10,
    "noise": None,
    "out": None,
}


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _split(value) -> list[str] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _bandwidth(value):
    if value is None:
        return None
    try:
        if isinstance(value, str):
            return np.array([float(v) for v in value.split(",")])
        return np.atleast_1d(np.asarray(value, dtype=float))
    except ValueError as exc:
        raise InputError(f"bad bandwidth {value!r}: {exc}") from exc


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError("config file must hold a JSON object")
        settings.update({k.replace("-", "_"): v for k, v in doc.items()})
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "func", "config"):
            settings[key] = value
    return settings


def _solver_config(s: dict) -> SolverConfig:
    try:
        return SolverConfig(float(s["epsilon"]), float(s["tol"]), int(s["maxiter"]), int(s["seed"]))
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _require(s: dict, key: str):
    if not s.get(key):
        raise InputError(f"missing required setting --{key.replace('_', '-')}")
    return s[key]


def _out_dir(s: dict) -> Path:
    out = Path(s.get("out") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


def _sidecar(out: Path, command: str, s: dict, extra: dict | None = None) -> None:
    # The only file carrying a timestamp.
    doc = {"command": command, "seed": s["seed"], "settings": s,
           "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    doc.update(extra or {})
    _write_json(out / f"{command}_run.json", doc)


def _load(path):
    try:
        return load_dataset(path)
    except (DatasetError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _training_ids(s: dict, catalog: dict) -> list[str]:
    explicit = _split(s.get("train_contexts"))
    if explicit:
        unknown = [c for c in explicit if c not in catalog]
        if unknown:
            raise InputError(f"training contexts not in the catalog: {unknown}")
        if len(set(explicit)) != len(explicit):
            raise InputError("training contexts must be distinct")
        return explicit
    try:
        return select_training_contexts(catalog, float(s["train_fraction"]), int(s["seed"]))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# -- subcommands ---------------------------------------------------------------------


def cmd_simulate(s: dict) -> int:
    path = s.get("model") or default_model_path()
    try:
        model = PhaseModel.load(path)
    except ModelError as exc:
        raise InputError(str(exc)) from exc
    if s.get("noise") is not None:
        model = model.with_noise(float(s["noise"]))
    contexts = _split(s.get("contexts"))
    if contexts:
        unknown = [c for c in contexts if c not in model.catalog]
        if unknown:
            raise InputError(f"contexts not in the model catalog: {unknown}")
    dataset = simulate_dataset(model, contexts, int(s["n_d"]), seed=int(s["seed"]))
    out = _out_dir(s)
    manifest = write_dataset(dataset, out, {"seed": int(s["seed"]), "n_d": int(s["n_d"])})
    _sidecar(out, "simulate", s, {"model": str(path)})
    print(f"wrote {len(dataset.records)} runs over {len(dataset.contexts)} contexts to {manifest}")
    return EXIT_OK


def cmd_ingest(s: dict) -> int:
    dataset = _load(_require(s, "manifest"))
    runs = {cid: len(dataset.records_for(cid)) for cid in dataset.contexts}
    summary = {
        "contexts": len(dataset.contexts),
        "runs": len(dataset.records),
        "runs_per_context": sorted(set(runs.values())),
        "state_names": dataset.state_names,
        "context_names": dataset.context_names,
        "snapshots": None if dataset.grid is None else len(dataset.grid),
        "content_hash": dataset.content_hash,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_solve(s: dict) -> int:
    manifest = Path(_require(s, "manifest"))
    dataset = _load(manifest)
    if dataset.grid is None:
        raise InputError("the dataset manifest defines no snapshot grid")
    train_ids = _training_ids(s, dataset.contexts)
    config = _solver_config(s)
    try:
        bridge = fit_bridge(dataset.restrict(train_ids), dataset.grid, config)
    except SinkhornUnderflowError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(s)
    bridge.save(out / "solution.json", os.path.relpath(manifest.resolve(), out.resolve()))
    with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "max_hilbert_residual"])
        for k, r in enumerate(bridge.solution.residuals, start=1):
            w.writerow([k, repr(float(r))])
    sol = bridge.solution
    _sidecar(out, "solve", s, {"training_contexts": train_ids, "converged": sol.converged})
    print(f"{len(train_ids)} training contexts, N={sol.size}, n_s={sol.n_s}: "
          f"{sol.iterations} sweeps, residual {sol.final_error:.3e}, converged={sol.converged}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _load_bridge(solution_path: Path):
    try:
        doc = json.loads(solution_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read solution {solution_path}: {exc}") from exc
    if not doc.get("manifest"):
        raise InputError(f"{solution_path} records no dataset manifest")
    dataset = _load(solution_path.parent / doc["manifest"])
    try:
        return ConditionalBridge.load(solution_path, dataset), dataset
    except (KeyError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def cmd_generate(s: dict) -> int:
    solution_path = Path(_require(s, "solution"))
    bridge, dataset = _load_bridge(solution_path)
    if s.get("all_contexts"):
        targets = list(dataset.contexts)
    else:
        targets = _split(s.get("contexts")) or [c for c in dataset.contexts if c not in bridge.context_ids]
    unknown = [c for c in targets if c not in dataset.contexts]
    if unknown:
        raise InputError(f"unknown context ids: {unknown}")
    try:
        mode = normalize_mode(s["mode"])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(s)
    entries = []
    for cid in targets:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prof = generate_profile(bridge, dataset.contexts[cid], float(s["delta_t"]), mode,
                                        _bandwidth(s.get("bandwidth")), int(s["seed"]),
                                        bool(s.get("allow_unconverged")))
        except NotConvergedError as exc:
            log.error("%s", exc)
            return EXIT_NOT_CONVERGED
        except (OutOfHullError, ValueError) as exc:
            raise InputError(f"context {cid}: {exc}") from exc
        prof.metadata["context_id"] = cid
        prof.write(out / f"{cid}.csv", bridge.state_names)
        entries.append({"context_id": cid, "file": f"{cid}.csv", "beta": [float(v) for v in prof.context]})
    _write_json(out / "outputs.json", {
        "solution": os.path.relpath(solution_path.resolve(), out.resolve()),
        "training_contexts": bridge.context_ids,
        "mode": mode,
        "delta_t": float(s["delta_t"]),
        "seed": int(s["seed"]),
        "profiles": entries,
    })
    _sidecar(out, "generate", s)
    print(f"wrote {len(entries)} {mode} profiles to {out}")
    return EXIT_OK


def cmd_evaluate(s: dict) -> int:
    gen_dir = Path(_require(s, "generated"))
    try:
        outputs = json.loads((gen_dir / "outputs.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {gen_dir / 'outputs.json'}: {exc}") from exc
    truth = _load(_require(s, "manifest"))
    ids = [e["context_id"] for e in outputs["profiles"]]
    missing = [c for c in ids if c not in truth.contexts or not truth.records_for(c)]
    if missing:
        raise InputError(f"no ground truth for generated contexts: {missing}")
    train_ids = outputs["training_contexts"]
    unknown = [c for c in train_ids if c not in truth.contexts]
    if unknown:
        raise InputError(f"training contexts missing from ground truth: {unknown}")
    generated, times = {}, None
    for entry in outputs["profiles"]:
        t, states, _ = read_profile_csv(gen_dir / entry["file"])
        if times is not None and not np.array_equal(t, times):
            raise InputError("generated profiles use different time grids")
        generated[entry["context_id"]], times = states, t
    meta = {"training_contexts": len(train_ids), "catalog": len(truth.contexts)}
    try:
        report = accuracy_report(truth, truth.restrict(train_ids), generated, times, meta)
    except NoBracketError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(s)
    report.write_csv(out / "report.csv")
    fraction = len(train_ids) / len(truth.contexts)
    write_plot_data(out / "plot_data.csv", [(fraction, report.mean_generative, fraction)])
    _sidecar(out, "evaluate", s)
    print(f"mean normalized DTW {report.mean_generative:.4f} (baseline {report.mean_baseline:.4f}, "
          f"improvement {report.mean_improvement:.1f}%)")
    return EXIT_OK


def cmd_oracle_check(s: dict) -> int:
    n_s_values = [int(v) for v in _split(s.get("n_s") or "2,3,4")]
    n_values = [int(v) for v in _split(s.get("n") or "2,3,4,5")]
    seeds = range(int(s.get("seeds") or 10))
    config = _solver_config(s)
    try:
        results = run_suite(n_s_values, n_values, seeds, config, int(s.get("perturbations") or 100),
                            bool(s.get("inject_wrong_sign")))
    except OracleCapError as exc:
        raise InputError(str(exc)) from exc
    print("n_s  N  seed  plan_dev   proj_dev   feas_l1    kl_margin  status")
    for r in results:
        print(f"{r.n_s:3d} {r.n:2d} {r.seed:5d}  {r.plan_deviation:.3e}  {r.projection_deviation:.3e}  "
              f"{r.feasibility_l1:.3e}  {r.kl_margin:+.3e}  {'pass' if r.passed else 'FAIL'}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} instances passed")
    if s.get("out"):
        out = _out_dir(s)
        with open(out / "oracle_report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_s", "N", "seed", "max_abs_plan_deviation", "max_abs_projection_deviation",
                        "feasibility_l1", "kl_margin", "passed"])
            for r in results:
                w.writerow([r.n_s, r.n, r.seed, repr(r.plan_deviation), repr(r.projection_deviation),
                            repr(r.feasibility_l1), repr(r.kl_margin), r.passed])
    return EXIT_OK if failed == 0 else 1


# -- parser -----------------------------------------------------------------------------


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, help="entropic regularization (default 0.1)")
    p.add_argument("--tol", type=float, help="Hilbert residual tolerance (default 1e-12)")
    p.add_argument("--maxiter", type=int, help="maximum Sinkhorn sweeps (default 10000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genprof", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags take precedence")
    common.add_argument("--seed", type=int, help="top-level random seed (default 0)")
    common.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset from a phase model")
    p.add_argument("--model", help="phase-model JSON (default: bundled model)")
    p.add_argument("--n-d", dest="n_d", type=int, help="runs per context (default 10)")
    p.add_argument("--noise", type=float, help="override the relative noise of every phase")
    p.add_argument("--contexts", help="comma-separated context ids (default: whole catalog)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", parents=[common], help="validate a dataset and print a summary")
    p.add_argument("--manifest", help="dataset manifest.json")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("solve", parents=[common], help="fit the conditional bridge")
    p.add_argument("--manifest", help="dataset manifest.json")
    _add_solver_flags(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--train-fraction", type=float, help="fraction of the catalog to train on")
    group.add_argument("--train-contexts", help="comma-separated training context ids")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", parents=[common], help="synthesize profiles from a solution")
    p.add_argument("--solution", help="solution.json written by solve")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--contexts", help="comma-separated context ids (default: held-out contexts)")
    group.add_argument("--all-contexts", action="store_true", default=None, help="every catalog context")
    p.add_argument("--delta-t", dest="delta_t", type=float, help="output sampling step in seconds")
    p.add_argument("--mode", choices=["maxlik", "mean", "sample"])
    p.add_argument("--bandwidth", help="kernel bandwidth X or X,X,... per context component")
    p.add_argument("--allow-unconverged", action="store_true", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="score generated profiles")
    p.add_argument("--generated", help="directory written by generate")
    p.add_argument("--manifest", help="ground-truth dataset manifest.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle-check", parents=[common], help="compare the solver with brute force")
    _add_solver_flags(p)
    p.add_argument("--n-s", dest="n_s", help="snapshot counts (default 2,3,4)")
    p.add_argument("--n", help="points per snapshot (default 2,3,4,5)")
    p.add_argument("--seeds", type=int, help="instances per size (default 10)")
    p.add_argument("--perturbations", type=int, help="KL perturbations per instance (default 100)")
    p.add_argument("--inject-wrong-sign", action="store_true", default=None,
                   help="negate the reference cost; the check must then fail")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GENPROF_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        return args.func(settings)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
