import csv
import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genprof.evaluation import (
    AccuracyReport,
    NoBracketError,
    ReportRow,
    accuracy_report,
    baseline_profile,
    bracketing_contexts,
    dtw_distance,
    improvement_pct,
    normalized_dtw,
    write_plot_data,
)
from genprof.workloadsim import Phase, PhaseModel, RateLaw, default_model, simulate_dataset


def all_paths_dtw(a, b):
    """Minimum over every monotone warping path, by plain recursion."""
    a = np.atleast_2d(np.asarray(a, float).T).T
    b = np.atleast_2d(np.asarray(b, float).T).T

    @functools.lru_cache(maxsize=None)
    def best(i, j):
        d = float(np.sqrt(np.sum((a[i] - b[j]) ** 2)))
        if i == 0 and j == 0:
            return d
        options = []
        if i > 0:
            options.append(best(i - 1, j))
        if j > 0:
            options.append(best(i, j - 1))
        if i > 0 and j > 0:
            options.append(best(i - 1, j - 1))
        return d + min(options)

    return best(len(a) - 1, len(b) - 1)


def test_dtw_identity_and_diagonal_path():
    a = np.array([[1.0, 2.0], [3.0, 1.0], [0.0, 0.5]])
    d, path = dtw_distance(a, a)
    assert d == 0.0
    assert path == [(0, 0), (1, 1), (2, 2)]


def test_dtw_scalar_case():
    assert dtw_distance([0.0], [1.0])[0] == 1.0


def test_dtw_hand_table():
    # local costs |a_i - b_j| for a=(0,1,2), b=(0,2):
    #   [[0, 2], [1, 1], [2, 0]]
    # accumulated: [[0, 2], [1, 1], [3, 1]] -> D = 1
    d, path = dtw_distance([0.0, 1.0, 2.0], [0.0, 2.0])
    assert d == 1.0
    assert path[0] == (0, 0) and path[-1] == (2, 1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)),
       arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)))
def test_dtw_matches_path_enumeration(a, b):
    d, path = dtw_distance(a, b)
    assert abs(d - all_paths_dtw(a, b)) <= 1e-9 * max(1.0, d)
    along = sum(abs(a[i] - b[j]) for i, j in path)
    assert abs(along - d) <= 1e-9 * max(1.0, d)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.just(2)), elements=st.floats(-5, 5)),
       arrays(np.float64, st.tuples(st.integers(1, 7), st.just(2)), elements=st.floats(-5, 5)))
def test_dtw_symmetric(a, b):
    assert abs(dtw_distance(a, b)[0] - dtw_distance(b, a)[0]) <= 1e-12
    if dtw_distance(a, b)[0] == 0:
        # zero distance means every aligned pair coincides
        assert all(np.array_equal(a[i], b[j]) for i, j in dtw_distance(a, b)[1])


def test_dtw_errors():
    with pytest.raises(ValueError):
        dtw_distance([], [1.0])
    with pytest.raises(ValueError):
        dtw_distance(np.zeros((2, 2)), np.zeros((2, 3)))


def test_normalized_dtw_hand_value():
    gen = np.array([[0.0, 0.0], [3.0, 4.0]])
    ref = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
    # DTW = 5 (last generated point absorbs the extra reference sample)
    # normalization: 3 reference samples x max norm 10
    assert abs(normalized_dtw(gen, ref) - 5.0 / 30.0) < 1e-15
    assert normalized_dtw(ref, ref) == 0.0
    with pytest.raises(ValueError):
        normalized_dtw(gen, np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(0, 10)),
       arrays(np.float64, (4, 2), elements=st.floats(0.1, 10)),
       st.floats(1e-3, 1e3))
def test_normalized_dtw_scale_invariant(gen, ref, c):
    base = normalized_dtw(gen, ref)
    assert abs(normalized_dtw(c * gen, c * ref) - base) <= 1e-9 * max(base, 1e-12)


def test_improvement_formula():
    assert round(improvement_pct(0.0227, 0.0027), 1) == 88.1
    assert np.isnan(improvement_pct(0.0, 0.1))
    row = ReportRow("c", np.array([1.0]), 0.0027, 0.0227)
    assert abs(row.improvement - 100 * 0.02 / 0.0227) < 1e-12


def linear_model(noise=0.0):
    phases = [
        Phase(0.1, (RateLaw([[1e5, 2e5, 3e6, 1e6]]), RateLaw([[0, 0, 0, 5e5]])), noise),
        Phase(0.1, (RateLaw([[-1e4, 5e4, 1e6, 2e6]]), RateLaw([[3e3, 0, 0, 1e5]])), noise),
    ]
    catalog = {"lo": np.array([2.0, 2.0, 1.2]), "hi": np.array([20.0, 20.0, 2.3]),
               "mid": np.array([11.0, 11.0, 1.75])}
    return PhaseModel(phases, catalog, ["x", "y"], ["c", "w", "f"], 0.01, 0.05)


def test_baseline_exact_at_midpoint_of_affine_model():
    model = linear_model()
    data = simulate_dataset(model, n_d=1)
    train = data.restrict(["lo", "hi"])
    base = baseline_profile(train, model.catalog["mid"])
    truth = model.true_profile(model.catalog["mid"], data.grid)
    assert np.allclose(base, truth, rtol=1e-12)


def test_baseline_inside_training_set_is_own_mean():
    model = default_model()
    data = simulate_dataset(model, ["ctx000", "ctx050", "ctx191"], n_d=3)
    base = baseline_profile(data, model.catalog["ctx050"])
    assert np.array_equal(base, data.mean_profile("ctx050", data.grid))


def test_baseline_interpolates_between_snapshots():
    model = default_model()
    data = simulate_dataset(model, ["ctx000", "ctx191"], n_d=2)
    snap = baseline_profile(data, model.catalog["ctx000"])
    fine = baseline_profile(data, model.catalog["ctx000"], times=[0.0, 0.025, 0.05])
    assert np.allclose(fine[1], 0.5 * (snap[0] + snap[1]))
    assert np.array_equal(fine[[0, 2]], snap[:2])


def test_bracket_choice_and_failure():
    known = {"a": np.array([0.0, 0.0]), "b": np.array([1.0, 0.0]), "c": np.array([1.0, 1.0]),
             "d": np.array([3.0, 3.0])}
    assert bracketing_contexts(known, [1.0, 0.5]) == ("b", "c")
    with pytest.raises(NoBracketError):
        bracketing_contexts(known, [4.0, 0.0])


def test_report_on_training_contexts_noiseless():
    model = linear_model()
    data = simulate_dataset(model, n_d=2)
    times = data.grid
    generated = {cid: model.true_profile(beta, times) for cid, beta in data.contexts.items()}
    report = accuracy_report(data, data, generated, times)
    for row in report.rows:
        assert row.dtw_generative < 1e-12
        assert row.dtw_baseline < 1e-12
    assert report.metadata["path_length"] == "reference sample count"
    with pytest.raises(KeyError):
        accuracy_report(data, data, {"nope": generated["lo"]}, times)


def test_report_csv_layout(tmp_path):
    rows = [ReportRow("c1", np.array([1.0, 2.0]), 0.0027, 0.0227), ReportRow("c2", np.array([3.0, 4.0]), 0.01, 0.02)]
    report = AccuracyReport(rows, ["p", "q"])
    report.write_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["context_id", "p", "q", "dtw_generative", "dtw_baseline", "improvement_pct"]
    assert float(table[1][-1]) == pytest.approx(88.1057, abs=1e-3)
    assert table[-1][0] == "mean"
    assert float(table[-1][3]) == pytest.approx((0.0027 + 0.01) / 2)
    write_plot_data(tmp_path / "p.csv", [(0.05, 0.1, 0.05), (0.1, 0.08, 0.1)])
    with open(tmp_path / "p.csv", newline="") as fh:
        plot = list(csv.reader(fh))
    assert plot[0] == ["training_fraction", "mean_dtw", "relative_measurement_time"]
    assert len(plot) == 3
