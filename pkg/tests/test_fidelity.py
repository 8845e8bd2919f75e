import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mulch.fidelity import (
    FidelitySweep,
    correlation_score,
    normalize,
    precision_score,
    read_sweep,
    recall_score,
    score_table,
    top_indices,
    write_scores,
    write_sweep,
)
from oracles import minmax, pearson, precision, recall, top_decile

Y0 = [0.5, 0.7, 0.6, 0.9, 0.8]
Y1 = [0.6, 0.9, 0.5, 0.7, 0.8]

lists = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=100)


def test_worked_example():
    assert list(top_indices(Y0)) == [3]
    assert precision_score(Y0, Y1) == 0.5
    assert recall_score(Y0, Y1) == 0.5


def test_normalize_examples():
    assert list(normalize([1, 2, 3])) == [0, 0.5, 1]
    assert list(normalize([4.0, 4.0, 4.0])) == [1, 1, 1]
    y = np.random.default_rng(0).normal(size=50)
    np.testing.assert_allclose(normalize(y), minmax(list(y)), atol=1e-12)


def test_correlation_examples():
    y = list(np.linspace(0, 1, 11))
    assert correlation_score(y, y) == pytest.approx(1.0)
    assert correlation_score(y, y[::-1]) == pytest.approx(-1.0)
    rng = np.random.default_rng(1)
    a, b = rng.random(50), rng.random(50)
    assert abs(correlation_score(a, b) - pearson(list(a), list(b))) <= 1e-10
    with pytest.raises(ValueError):
        correlation_score([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_ties_go_to_lower_index():
    assert list(top_indices([1, 5, 5, 5, 0, 0, 0, 0, 0, 0, 0, 5])) == [1, 2]
    assert list(top_indices([2.0] * 25)) == [0, 1, 2]


def test_precision_self():
    y = list(np.random.default_rng(2).random(10))
    assert precision_score(y, y) == 1.0 and recall_score(y, y) == 1.0


@given(lists, st.data())
def test_against_brute_force(y0, data):
    y1 = data.draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=len(y0), max_size=len(y0)))
    assert list(top_indices(y0)) == top_decile(y0)
    assert abs(precision_score(y0, y1) - precision(y0, y1)) <= 1e-10
    assert abs(recall_score(y0, y1) - recall(y0, y1)) <= 1e-10
    if max(y0) > min(y0) and max(y1) > min(y1):
        assume(np.std(y0) > 1e-6 and np.std(y1) > 1e-6)
        assert abs(correlation_score(y0, y1) - pearson(y0, y1)) <= 1e-10


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=10))
def test_self_scores_are_one(y):
    # with at most 10 entries the top set is the single argmax
    assume(max(y) > min(y))
    assert precision_score(y, y) == 1.0 and recall_score(y, y) == 1.0


@given(lists)
def test_self_scores_general(y):
    # beyond 10 entries the top set holds several points; self-precision is their normalized mean
    assume(max(y) > min(y))
    z = minmax(y)
    top = top_decile(y)
    expected = sum(z[i] for i in top) / len(top)
    assert precision_score(y, y) == pytest.approx(expected, abs=1e-12)
    assert (precision_score(y, y) == 1.0) == all(y[i] == max(y) for i in top)


@given(lists, st.data())
def test_swap_exchanges_precision_and_recall(y0, data):
    y1 = data.draw(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=len(y0), max_size=len(y0)))
    assert precision_score(y0, y1) == recall_score(y1, y0)
    assert recall_score(y0, y1) == precision_score(y1, y0)


@given(st.integers(0, 10_000), st.integers(2, 100), st.sampled_from([0.5, 2.0, 3.0, 10.0]),
       st.sampled_from([-7.0, 0.0, 1.5, 100.0]))
def test_common_affine_invariance(seed, m, a, b):
    rng = np.random.default_rng(seed)
    y0, y1 = rng.random(m), rng.random(m)
    t0, t1 = a * y0 + b, a * y1 + b
    assert precision_score(t0, t1) == pytest.approx(precision_score(y0, y1), abs=1e-12)
    assert recall_score(t0, t1) == pytest.approx(recall_score(y0, y1), abs=1e-12)
    assert correlation_score(t0, t1) == pytest.approx(correlation_score(y0, y1), abs=1e-12)


def test_identical_sweep_rows():
    y = tuple(np.random.default_rng(3).random(10))
    sweep = FidelitySweep(tuple(map(str, range(10))), {0.1: y, 0.5: y, 1.0: y})
    for row in score_table(sweep):
        assert (row.correlation, row.precision, row.recall) == pytest.approx((1.0, 1.0, 1.0))


def test_noise_sweep_monte_carlo():
    # precision of unrelated lists is the mean of a normalized uniform sample over ~m/10 points
    rng = np.random.default_rng(4)
    m = 1000
    rows = [score_table(FidelitySweep(tuple(map(str, range(m))), {0.1: tuple(rng.random(m)),
                                                                 1.0: tuple(rng.random(m))}))[0]
            for _ in range(20)]
    assert abs(np.mean([r.correlation for r in rows])) < 0.02
    assert np.mean([r.precision for r in rows]) == pytest.approx(0.5, abs=0.02)
    assert np.mean([r.recall for r in rows]) == pytest.approx(0.5, abs=0.02)


def test_missing_full_fidelity():
    with pytest.raises(ValueError):
        score_table(FidelitySweep(("a", "b"), {0.1: (1.0, 2.0)}))
    with pytest.raises(ValueError):
        FidelitySweep(("a", "b"), {1.0: (1.0,)})


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    sweep = FidelitySweep(tuple(f"c{i}" for i in range(12)),
                          {p: tuple(rng.random(12)) for p in (0.1, 0.3, 1.0)})
    write_sweep(tmp_path / "s.csv", sweep)
    back = read_sweep(tmp_path / "s.csv")
    assert back == sweep
    write_scores(tmp_path / "o.csv", score_table(back))
    assert (tmp_path / "o.csv").read_text().splitlines()[0] == "p,correlation,precision,recall"
