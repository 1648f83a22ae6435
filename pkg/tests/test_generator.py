import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genprof.core import Dataset, ProfileRecord, snapshot_grid
from genprof.cost import build_path_cost, materialize_dense
from genprof.generator import (
    ConditionalBridge,
    NotConvergedError,
    OutOfHullError,
    OutOfHullWarning,
    WeightedCloud,
    _prepare,
    condition_on_context,
    context_marginal,
    fit_bridge,
    generate_profile,
    interpolate_joint,
    max_likelihood_state,
    mean_state,
    read_profile_csv,
    sample_states,
    silverman_bandwidth,
    time_grid,
)
from genprof.solver import SolverConfig, dense_bimarginal, dense_sinkhorn_solve
from genprof.workloadsim import default_model, simulate_dataset

TRAIN = ["ctx000", "ctx011", "ctx036", "ctx047", "ctx144", "ctx155", "ctx180", "ctx191"]


@pytest.fixture(scope="module")
def model():
    return default_model()


@pytest.fixture(scope="module")
def small_bridge(model):
    data = simulate_dataset(model, TRAIN, n_d=3, seed=1)
    return fit_bridge(data)


@pytest.fixture(scope="module")
def tiny_bridge(model):
    # N = 6 points on 3 snapshots: small enough for the dense oracle
    data = simulate_dataset(model, ["ctx000", "ctx191"], n_d=3, seed=2)
    return fit_bridge(data, grid=[0.0, 0.1, 0.2]), data


def grouped(points, weights):
    out = {}
    for p, w in zip(map(tuple, points), weights):
        out[p] = out.get(p, 0.0) + w
    return out


def test_endpoint_lambda_zero(small_bridge):
    for sigma in (0, 5):
        cloud = interpolate_joint(small_bridge, sigma, 0.0)
        mu = small_bridge.marginals[sigma]
        got = grouped(cloud.points, cloud.weights)
        want = grouped(mu.points, small_bridge.solution.unimarginal(sigma))
        assert got.keys() == want.keys()
        assert sum(abs(got[k] - want[k]) for k in got) <= 1e-9
        assert sum(abs(got[k] - v) for k, v in grouped(mu.points, mu.weights).items()) <= 1e-9


def test_endpoint_lambda_one(small_bridge):
    cloud = interpolate_joint(small_bridge, 3, 1.0)
    mu = small_bridge.marginals[4]
    got = grouped(cloud.points, cloud.weights)
    want = grouped(mu.points, small_bridge.coupling(3).sum(axis=0))
    assert got.keys() == want.keys()
    assert sum(abs(got[k] - want[k]) for k in got) <= 1e-12


def test_midpoint_matches_dense_oracle(tiny_bridge):
    bridge, data = tiny_bridge
    raw, scaled, _ = _prepare(data, bridge.grid)
    cost = materialize_dense(build_path_cost(scaled))
    plan = dense_sinkhorn_solve(cost, scaled)
    pair = dense_bimarginal(plan, 1, 2)
    pair /= pair.sum()
    cloud = interpolate_joint(bridge, 1, 0.5)
    n = raw[1].size
    for i in range(n):
        for j in range(n):
            point = 0.5 * raw[1].points[i] + 0.5 * raw[2].points[j]
            assert np.allclose(cloud.points[i * n + j], point, rtol=1e-15)
            assert abs(cloud.weights[i * n + j] - pair[i, j]) < 1e-9


def test_raw_extraction_matches_scaled_then_inverse(small_bridge, model):
    # weights never depend on state coordinates, so argmax picks the same support
    # index either way; at snapshot times the inverse map recovers the raw point
    beta = model.catalog["ctx040"]
    h = silverman_bandwidth(small_bridge.marginals[0].beta)
    for sigma in (0, 5):
        cloud = interpolate_joint(small_bridge, sigma, 0.0)
        cond = condition_on_context(cloud, beta, h)
        k = int(np.argmax(cond.weights))
        i = k // small_bridge.marginals[sigma].size
        scaled = small_bridge.scaling.forward(sigma, small_bridge.marginals[sigma].points)
        back = small_bridge.scaling.inverse(sigma, scaled[i])
        m = len(small_bridge.state_names)
        assert np.allclose(back[:m], max_likelihood_state(cond), rtol=1e-12)


def test_interpolate_rejects_bad_lambda(small_bridge):
    with pytest.raises(ValueError):
        interpolate_joint(small_bridge, 0, 1.5)
    with pytest.raises(IndexError):
        small_bridge.coupling(small_bridge.n_s - 1)


def test_context_marginal():
    one = context_marginal([[1.0, 2.0]])
    assert one.weights.tolist() == [1.0]
    many = context_marginal([[float(k)] for k in range(125)])
    assert np.allclose(many.weights, 1 / 125)
    with pytest.raises(ValueError):
        context_marginal([[1.0], [1.0]])


def test_single_context_conditioning_is_xi_marginal():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.random((5, 2)), np.full((5, 1), 3.0)])
    w = rng.random(5)
    joint = WeightedCloud(pts, w / w.sum(), 2)
    cond = condition_on_context(joint, [3.0], 0.5)
    assert np.allclose(cond.weights, joint.weights, atol=1e-15)
    assert np.array_equal(cond.points, joint.xi)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 15), st.floats(0.05, 10))
def test_conditioning_preserves_mass(beta, h):
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.random((8, 1)), np.linspace(0, 10, 8)])
    joint = WeightedCloud(pts, np.full(8, 1 / 8), 1)
    try:
        cond = condition_on_context(joint, [beta], h)
    except OutOfHullError:
        return
    assert abs(cond.weights.sum() - 1.0) < 1e-12
    assert np.all(cond.weights >= 0)


def test_large_bandwidth_limit(small_bridge):
    joint = interpolate_joint(small_bridge, 4, 0.3)
    span = np.ptp(joint.beta, axis=0)
    cond = condition_on_context(joint, [8.0, 14.0, 1.7], 1e3 * span)
    assert np.sum(np.abs(cond.weights - joint.weights)) <= 1e-6


def test_out_of_hull_error_on_vanishing_mass():
    joint = WeightedCloud(np.array([[1.0, 0.0], [2.0, 1.0]]), np.array([0.5, 0.5]), 1)
    with pytest.raises(OutOfHullError, match="nearest"):
        condition_on_context(joint, [1e6], 1e-3)
    with pytest.raises(ValueError):
        condition_on_context(joint, [0.5], -1.0)


def test_max_likelihood_examples():
    cloud = WeightedCloud(np.array([[1.0], [2.0], [3.0]]), np.array([0.2, 0.5, 0.3]))
    assert max_likelihood_state(cloud).tolist() == [2.0]
    tie = WeightedCloud(np.array([[1.0], [2.0], [3.0]]), np.full(3, 1 / 3))
    assert max_likelihood_state(tie).tolist() == [1.0]


def test_mean_examples():
    assert mean_state(WeightedCloud(np.array([[4.0, 5.0]]), [1.0])).tolist() == [4.0, 5.0]
    assert mean_state(WeightedCloud(np.array([[0.0], [1.0]]), [0.5, 0.5])).tolist() == [0.5]


def test_single_point_modes_coincide():
    cloud = WeightedCloud(np.array([[2.5, 7.0]]), [1.0])
    ml, mean = max_likelihood_state(cloud), mean_state(cloud)
    draws = sample_states(cloud, 50, seed=3)
    assert np.array_equal(ml, mean)
    assert np.all(draws == ml)


def test_top_k():
    cloud = WeightedCloud(np.arange(4.0)[:, None], [0.5, 0.3, 0.1, 0.1])
    assert sample_states(cloud, 3, top_k=True).ravel().tolist() == [0.0, 1.0, 2.0]


def test_sampling_frequencies():
    w = np.array([0.1, 0.25, 0.05, 0.6])
    cloud = WeightedCloud(np.arange(4.0)[:, None], w)
    n = 10**5
    draws = sample_states(cloud, n, seed=11).ravel().astype(int)
    counts = np.bincount(draws, minlength=4)
    sigma = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(counts - n * w) <= 3 * sigma)


def test_silverman_positive():
    h = silverman_bandwidth(np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]]))
    assert np.all(h > 0)
    assert h[1] == 1.0


def bimodal_bridge():
    # one context, three runs at 1 and two at 10 during the second snapshot
    times = np.array([0.0, 0.05])
    recs = []
    for r, level in enumerate([1.0, 1.0, 1.0, 10.0, 10.0]):
        recs.append(ProfileRecord(f"r{r}", [1.0], times, np.array([[5.0], [level]]), "c"))
    data = Dataset(recs, {"c": np.array([1.0])}, ["x"], ["f"], snapshot_grid([0.0, 0.05]))
    return fit_bridge(data)


def test_mean_differs_from_max_likelihood_on_bimodal():
    bridge = bimodal_bridge()
    ml = generate_profile(bridge, [1.0], 0.05, "max-likelihood").states[-1, 0]
    mean = generate_profile(bridge, [1.0], 0.05, "mean").states[-1, 0]
    assert ml in (1.0, 10.0)
    assert abs(mean - 4.6) < 1e-9
    assert abs(mean - ml) > 3


def test_fast_path_matches_explicit_pipeline(small_bridge):
    beta = np.array([8.0, 14.0, 1.5])
    h = small_bridge.default_bandwidth()
    prof = generate_profile(small_bridge, beta, 0.02, "max-likelihood")
    mean = generate_profile(small_bridge, beta, 0.02, "mean")
    for k, t in enumerate(prof.times):
        sigma, lam = small_bridge.locate(t)
        cond = condition_on_context(interpolate_joint(small_bridge, sigma, lam), beta, h)
        # exhaustive argmax scan
        best = 0
        for i in range(cond.weights.size):
            if cond.weights[i] > cond.weights[best]:
                best = i
        assert np.allclose(prof.states[k], cond.points[best], rtol=1e-12)
        assert np.allclose(mean.states[k], mean_state(cond), rtol=1e-9)


def test_profile_grid_choices(small_bridge):
    prof = generate_profile(small_bridge, [8.0, 8.0, 1.8], 0.05)
    assert np.allclose(prof.times, small_bridge.grid)
    for t in prof.times[:-1]:
        assert small_bridge.locate(t)[1] == 0.0
    fine = generate_profile(small_bridge, [8.0, 8.0, 1.8], 0.01)
    assert fine.times.size == 81
    assert np.allclose(np.diff(fine.times), 0.01)


def test_time_grid():
    assert np.allclose(time_grid(0.0, 0.1, 0.03), [0.0, 0.03, 0.06, 0.09, 0.1])
    with pytest.raises(ValueError):
        time_grid(0.0, 1.0, 0.0)


def test_generated_profile_tracks_truth(model):
    from genprof.pipeline import select_training_contexts

    train = select_training_contexts(model.catalog, 0.15, seed=0)
    bridge = fit_bridge(simulate_dataset(model, train, n_d=3, seed=1))
    held = [c for c in model.catalog if c not in train][::7]
    errors = []
    for cid in held:
        beta = model.catalog[cid]
        prof = generate_profile(bridge, beta, 0.01)
        truth = model.true_profile(beta, prof.times)
        # away from phase switches
        inside = np.array([np.min(np.abs(t - np.array([0.1, 0.35, 0.65]))) > 0.06 for t in prof.times])
        errors.append(np.median(np.abs(prof.states[inside] - truth[inside]) / truth[inside], axis=0))
    assert np.all(np.median(errors, axis=0) < 0.15)


def test_determinism(small_bridge):
    for mode in ("max-likelihood", "mean", "sample"):
        a = generate_profile(small_bridge, [8.0, 14.0, 2.1], 0.01, mode, seed=5)
        b = generate_profile(small_bridge, [8.0, 14.0, 2.1], 0.01, mode, seed=5)
        assert np.array_equal(a.states, b.states)


def test_out_of_hull_warning(small_bridge):
    with pytest.warns(OutOfHullWarning):
        generate_profile(small_bridge, [8.0, 14.0, 2.5], 0.05)


def test_unconverged_guard(model):
    data = simulate_dataset(model, ["ctx000", "ctx191"], n_d=2, seed=0)
    bridge = fit_bridge(data, config=SolverConfig(maxiter=2))
    assert not bridge.solution.converged
    with pytest.raises(NotConvergedError):
        generate_profile(bridge, [2.0, 2.0, 1.2], 0.05)
    prof = generate_profile(bridge, [2.0, 2.0, 1.2], 0.05, allow_unconverged=True)
    assert prof.metadata["converged"] is False


def test_unknown_mode(small_bridge):
    with pytest.raises(ValueError):
        generate_profile(small_bridge, [8.0, 8.0, 1.8], 0.05, "median")


def test_csv_round_trip(tmp_path, small_bridge):
    prof = generate_profile(small_bridge, [8.0, 8.0, 1.8], 0.01, seed=2)
    sidecar = prof.write(tmp_path / "p.csv", small_bridge.state_names)
    times, states, names = read_profile_csv(tmp_path / "p.csv")
    assert names == small_bridge.state_names
    assert np.array_equal(times, prof.times)
    assert np.array_equal(states, prof.states)
    meta = json.loads(sidecar.read_text())
    assert meta["mode"] == "max-likelihood"
    assert meta["seed"] == 2
    assert meta["beta"] == [8.0, 8.0, 1.8]
    assert len(meta["bandwidth"]) == 3


def test_save_load_round_trip(tmp_path, model):
    from genprof.core import load_dataset, write_dataset

    data = simulate_dataset(model, TRAIN[:4], n_d=2, seed=0)
    manifest = write_dataset(data, tmp_path / "data")
    data = load_dataset(manifest)
    bridge = fit_bridge(data)
    bridge.save(tmp_path / "sol.json", "data/manifest.json")
    back = ConditionalBridge.load(tmp_path / "sol.json")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = generate_profile(bridge, [5.0, 5.0, 1.5], 0.01)
        b = generate_profile(back, [5.0, 5.0, 1.5], 0.01)
    assert np.allclose(a.states, b.states, rtol=1e-12)
    doc = json.loads((tmp_path / "sol.json").read_text())
    assert "kernels" not in doc and doc["dataset_hash"] == data.content_hash
