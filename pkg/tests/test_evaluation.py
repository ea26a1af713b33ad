import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decgan.classifier import ClassifierConfig
from decgan.dataset import Dataset, SurrogateSpec, generate_surrogate
from decgan.evaluation import (
    ConfusionCounts,
    EvaluationError,
    ExperimentReport,
    ProvenanceError,
    RunResult,
    box_stats,
    emit_report,
    load_runs,
    metrics,
    monte_carlo,
    optimal_frequency,
    p_value_from_z,
    proportion_test,
    summary_rows,
)

FAST = ClassifierConfig(max_epochs=100, patience=10)


def brute_force(y_true, y_pred):
    """Metrics from per-element comparisons using exact fractions."""
    n = len(y_true)
    correct = sum(t == p for t, p in zip(y_true, y_pred))
    pos = [p for t, p in zip(y_true, y_pred) if t == 1]
    neg = [p for t, p in zip(y_true, y_pred) if t == 0]
    predicted_pos = [t for t, p in zip(y_true, y_pred) if p == 1]
    sens = Fraction(sum(pos), len(pos)) if pos else Fraction(0)
    spec = Fraction(sum(1 - p for p in neg), len(neg)) if neg else Fraction(0)
    prec = Fraction(sum(predicted_pos), len(predicted_pos)) if predicted_pos else Fraction(0)
    f1 = 2 * prec * sens / (prec + sens) if prec + sens else Fraction(0)
    return float(Fraction(correct, n)), float((sens + spec) / 2), float(f1)


def test_metrics_perfect():
    assert metrics(ConfusionCounts(5, 5, 0, 0)) == (1.0, 1.0, 1.0)


def test_metrics_hand_example():
    acc, bal, f1 = metrics(ConfusionCounts(tp=3, tn=2, fp=1, fn=2))
    assert acc == pytest.approx(0.625, abs=1e-12)
    assert bal == pytest.approx(0.5 * (0.6 + 2 / 3), abs=1e-12)
    assert bal == pytest.approx(0.63333, abs=1e-5)
    assert f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-12)
    assert f1 == pytest.approx(0.66667, abs=1e-5)


def test_metrics_degenerate():
    acc, bal, f1 = metrics(ConfusionCounts(tp=0, tn=7, fp=0, fn=3))
    assert acc == pytest.approx(0.7)
    assert f1 == 0.0
    with pytest.raises(EvaluationError):
        metrics(ConfusionCounts(0, 0, 0, 0))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 50).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n))))
def test_metrics_match_brute_force(pair):
    y, p = pair
    got = metrics(ConfusionCounts.from_labels(y, p))
    want = brute_force(y, p)
    assert all(abs(a - b) <= 1e-12 for a, b in zip(got, want))


@pytest.mark.parametrize("counts", [ConfusionCounts(4, 4, 1, 1), ConfusionCounts(8, 8, 2, 2),
                                    ConfusionCounts(3, 3, 0, 0)])
def test_balanced_equals_accuracy_when_symmetric(counts):
    acc, bal, _ = metrics(counts)
    assert bal == pytest.approx(acc, abs=1e-15)


def test_proportion_test_hand_example():
    r = proportion_test(100, 80, 200)
    assert r.p_gan == 0.5 and r.p_dist == 0.4
    assert math.sqrt(0.25 / 200) == pytest.approx(0.035355, abs=1e-6)
    assert r.z == pytest.approx(2.8284, abs=1e-4)
    assert r.p_value == pytest.approx(0.004678, abs=1e-6)
    assert r.significant


@pytest.mark.parametrize("z,p,sig", [(-2.1779, 0.02926, True)])
def test_p_value_exact_cdf_published(z, p, sig):
    # the only published pair whose printed p agrees with an exact CDF at 5e-4
    got = p_value_from_z(z)
    assert abs(got - p) <= 5e-4
    assert (got < 0.05) == sig


def test_p_value_known_values():
    assert p_value_from_z(1.959963984540054) == pytest.approx(0.05, abs=1e-12)
    assert p_value_from_z(0.0) == 1.0
    # scipy-independent reference: 2*(1 - Phi(3)) from tabulated Phi(3) = 0.998650101968370
    assert p_value_from_z(3.0) == pytest.approx(2 * (1 - 0.998650101968370), abs=1e-12)


def test_p_value_table_rounding():
    assert p_value_from_z(-2.1779, table_decimals=2) == pytest.approx(p_value_from_z(2.18), abs=0)
    assert p_value_from_z(0.4344, table_decimals=2) == p_value_from_z(0.43)


@settings(max_examples=100, deadline=None)
@given(st.floats(-8, 8))
def test_p_value_symmetric(z):
    assert p_value_from_z(z) == p_value_from_z(-z)
    assert 0 <= p_value_from_z(z) <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 199), st.integers(0, 200))
def test_proportion_test_invariants(a, b):
    r = proportion_test(a, b, 200)
    assert r.p_value == pytest.approx(math.erfc(abs(r.z) / math.sqrt(2)), abs=1e-15)
    assert r.significant == (r.p_value < 0.05)
    mirrored = proportion_test(a, 2 * a - b, 200) if 0 <= 2 * a - b <= 200 else None
    if mirrored is not None:
        assert mirrored.z == pytest.approx(-r.z, abs=1e-9)
        assert mirrored.p_value == pytest.approx(r.p_value, abs=1e-12)


def test_proportion_test_degenerate_and_squared():
    with pytest.raises(EvaluationError):
        proportion_test(0, 3, 10)
    with pytest.raises(EvaluationError):
        proportion_test(10, 3, 10)
    sq = proportion_test(100, 80, 200, squared=True)
    assert sq.z == pytest.approx(0.01 / math.sqrt(0.25 / 200))
    assert sq.squared


def _report(accs, name="m"):
    runs = [RunResult(i, i, a, a, a, 0, 0, 0, 0) for i, a in enumerate(accs)]
    return ExperimentReport(name, runs)


def test_optimal_frequency():
    assert optimal_frequency(_report([1.0, 1.0])) == 2
    r = _report([0.85, 0.9, 0.95])
    assert optimal_frequency(r, 0.9) == 2
    for accs in ([1.0, 0.5], [0.2], [1.0, 1.0, 0.99]):
        rep = _report(accs)
        assert optimal_frequency(rep) == optimal_frequency(rep, 1.0)


def test_single_run_std_convention():
    r = _report([0.7])
    assert r.summary("accuracy") == (0.7, 0.0)
    assert r.to_dict()["std_defined"] is False


def test_box_stats_midpoint():
    b = box_stats([0.8, 0.9, 1.0])
    assert b["median"] == pytest.approx(0.9)
    assert b["q1"] == pytest.approx(0.85)
    assert b["q3"] == pytest.approx(0.95)
    out = box_stats([0.5, 0.9, 0.91, 0.92, 0.93])
    assert out["outliers"] == [0.5]
    assert out["min"] == 0.9


def test_emit_report(tmp_path):
    reports = [_report([0.8, 0.9, 1.0], "A"), _report([1.0, 1.0, 0.9], "B")]
    tests = [proportion_test(2, 1, 3, model="B")]
    paths = emit_report(reports, tests, tmp_path / "out")
    for name in ("summary.csv", "proportion_tests.csv", "boxplot.csv", "optimal_freq.csv", "runs.json"):
        assert paths[name].exists()
    with paths["boxplot.csv"].open() as fh:
        row = next(csv.DictReader(fh))
    assert (row["median"], row["q1"], row["q3"]) == ("0.9", "0.85", "0.95")
    with paths["optimal_freq.csv"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["optimal_count"] for r in rows] == ["1", "2"]
    with pytest.raises(EvaluationError):
        emit_report([], [], tmp_path / "x")


def test_runs_json_reproduces_summary(tmp_path):
    reports = [_report([0.81234567, 0.9, 0.97], "A"), _report([0.5, 0.6], "B")]
    paths = emit_report(reports, [], tmp_path)
    reloaded = load_runs(paths["runs.json"])
    with paths["summary.csv"].open() as fh:
        rows = list(csv.reader(fh))[1:]
    assert [list(map(str, r)) for r in summary_rows(reloaded)] == rows
    doc = json.loads(paths["runs.json"].read_text())
    for d, r in zip(doc["reports"], reports):
        assert d["accuracy_mean"] == r.summary("accuracy")[0]
        assert d["accuracy_std"] == r.summary("accuracy")[1]


def test_emit_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(EvaluationError):
        emit_report([_report([1.0])], [], blocker / "sub")


@pytest.fixture(scope="module")
def small_split():
    d = generate_surrogate(SurrogateSpec(120, seed=3))
    return d.subset(np.arange(96)), d.subset(np.arange(96, 120))


def test_monte_carlo_deterministic(small_split):
    train, test = small_split
    a = monte_carlo(train, test, FAST, runs=2, base_seed=5)
    b = monte_carlo(train, test, FAST, runs=2, base_seed=5)
    assert a.to_dict() == b.to_dict()
    assert [r.seed for r in a.runs] == [5, 6]


def test_monte_carlo_jobs_invariant(small_split):
    train, test = small_split
    a = monte_carlo(train, test, FAST, runs=3, base_seed=1, jobs=1)
    b = monte_carlo(train, test, FAST, runs=3, base_seed=1, jobs=2)
    assert a.to_dict() == b.to_dict()


def test_monte_carlo_single_run(small_split):
    train, test = small_split
    r = monte_carlo(train, test, FAST, runs=1, base_seed=0)
    assert r.summary("accuracy")[1] == 0.0 and not r.std_defined


def test_monte_carlo_rejects_synthetic_test(small_split):
    train, test = small_split
    tainted = test.replace(synthetic=np.r_[True, np.zeros(len(test) - 1, bool)])
    with pytest.raises(ProvenanceError) as err:
        monte_carlo(train, tainted, FAST, runs=1)
    assert err.value.n_synthetic == 1
    with pytest.raises(EvaluationError):
        monte_carlo(train, Dataset.empty(), FAST, runs=1)
