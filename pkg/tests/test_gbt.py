import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mulch.gbt import (
    EarlyStopConfig,
    GbtHyperparams,
    load_csv,
    make_dataset,
    make_synthetic,
    objective,
    save_csv,
    subsample_fidelity,
    train,
)
from mulch.gbt.train import logistic_grad_hess
from mulch.space import default_space, sample
from mulch.tasks import resolve_task

CLEAN = make_synthetic({"m": 600, "p": 4, "noise": 0.0, "seed": 3})


def brute_force_stump(X, y, base, eta, lam, mcw):
    """Depth-1 second-order tree by enumeration; returns training margins."""
    p = 1 / (1 + np.exp(-base))
    g, h = p - y, np.full(len(y), p * (1 - p))
    G, H = g.sum(), h.sum()
    best = (0.0, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, f] < thr
            gl, hl = g[left].sum(), h[left].sum()
            gr, hr = G - gl, H - hl
            if hl < mcw or hr < mcw:
                continue
            gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - G**2 / (H + lam))
            if gain > best[0]:
                best = (gain, f, thr)
    if best[1] is None:
        return np.full(len(y), base - eta * G / (H + lam))
    left = X[:, best[1]] < best[2]
    out = np.empty(len(y))
    for mask in (left, ~left):
        out[mask] = base - eta * g[mask].sum() / (h[mask].sum() + lam)
    return out


@pytest.mark.parametrize("seed", range(3))
def test_stump_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(80, 3))
    y = (X[:, 1] + 0.3 * rng.normal(size=80) > 0).astype(float)
    data = make_dataset(X, y, seed=seed)
    hp = GbtHyperparams(eta=0.4, max_depth=1, num_boost_round=1, lam=1.0, min_child_weight=1.0)
    res = train(data, hp)
    prior = data.y_train.mean()
    base = math.log(prior / (1 - prior))
    ref = brute_force_stump(data.X_train, data.y_train, base, 0.4, 1.0, 1.0)
    np.testing.assert_allclose(res.model.predict_margin(data.X_train), ref, atol=1e-10)


def test_stump_beats_majority():
    X = np.linspace(-1, 1, 200)[:, None]
    y = (X[:, 0] > 0.1).astype(float)
    data = make_dataset(np.hstack([X, np.zeros_like(X)]), y)
    res = train(data, GbtHyperparams(eta=1.0, max_depth=1, num_boost_round=1))
    majority = max(data.y_val.mean(), 1 - data.y_val.mean())
    assert res.accuracy >= majority


def test_zero_eta_is_majority():
    task = resolve_task("synthetic:clusters-a")
    res = objective(task, GbtHyperparams(eta=0.0, num_boost_round=20))
    train_major = float(task.y_train.mean() > 0.5)
    assert res.accuracy == pytest.approx(float(np.mean(task.y_val == train_major)))
    assert res.accuracy == pytest.approx(max(task.y_val.mean(), 1 - task.y_val.mean()))


@given(st.floats(-30, 30), st.integers(0, 1))
def test_grad_hess_finite_differences(m, y):
    def loss(t):
        return math.log1p(math.exp(t)) - y * t if t < 30 else t - y * t + math.log1p(math.exp(-t))

    g, h = logistic_grad_hess(np.array([m]), np.array([float(y)]))
    e = 1e-4
    fd_g = (loss(m + e) - loss(m - e)) / (2 * e)
    fd_h = (loss(m + e) - 2 * loss(m) + loss(m - e)) / e**2
    assert abs(g[0] - fd_g) <= 1e-6
    assert abs(h[0] - fd_h) <= 1e-6


@given(st.integers(0, 10_000))
def test_training_loss_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    hp = GbtHyperparams(eta=float(rng.uniform(0.01, 1.0)), max_depth=int(rng.integers(1, 8)),
                        num_boost_round=30, gamma=0.0, min_child_weight=float(rng.uniform(0, 5)),
                        lam=float(rng.uniform(0, 5)), subsample=1.0)
    res = train(CLEAN, hp, seed=seed)
    assert np.all(np.diff(res.train_loss) <= 1e-12)


def test_patience_never_binding_is_identical():
    hp = GbtHyperparams(eta=0.3, max_depth=4, num_boost_round=60, subsample=0.8)
    off = train(CLEAN, hp, EarlyStopConfig(enabled=False), seed=5)
    on = train(CLEAN, hp, EarlyStopConfig(patience=60, enabled=True), seed=5)
    assert on.rounds_used == off.rounds_used == 60
    assert on.curve.tobytes() == off.curve.tobytes()
    assert on.model.value.tobytes() == off.model.value.tobytes()
    assert on.model.threshold.tobytes() == off.model.threshold.tobytes()


@given(st.integers(1, 15), st.integers(0, 1000))
def test_early_stop_bound(patience, seed):
    rng = np.random.default_rng(seed)
    hp = GbtHyperparams(eta=float(rng.uniform(0.05, 1)), max_depth=int(rng.integers(1, 6)), num_boost_round=80)
    res = train(CLEAN, hp, EarlyStopConfig(patience=patience, enabled=True), seed=seed)
    best_round = int(np.argmax(res.curve)) + 1
    assert res.rounds_used <= best_round + patience
    assert res.rounds_used <= hp.num_boost_round


def test_deterministic_pipeline():
    task = resolve_task("synthetic:moons")
    hp = {"eta": 0.2, "max_depth": 5, "num_boost_round": 40, "gamma": 0.1, "min_child_weight": 2.0, "subsample": 0.7}
    a = objective(task, hp, 0.3, EarlyStopConfig(enabled=True), seed=9)
    b = objective(task, hp, 0.3, EarlyStopConfig(enabled=True), seed=9)
    assert (a.accuracy, a.rounds_used, a.work) == (b.accuracy, b.rounds_used, b.work)
    assert 0 <= a.accuracy <= 1


def test_low_fidelity_is_cheaper():
    task = resolve_task("synthetic:clusters-a")
    configs = sample(default_space("mulch5"), 64, "quasi", seed=0)
    work, wall = 0, 0
    for c in configs:
        lo, hi = objective(task, c, 0.1), objective(task, c, 1.0)
        work += lo.work < hi.work
        wall += lo.wall_time < hi.wall_time
    assert work == 64
    assert wall >= 0.9 * 64


def test_clean_task_learnable():
    res = train(CLEAN, GbtHyperparams(eta=0.3, max_depth=8, num_boost_round=200))
    assert res.accuracy >= 0.95


def test_noise_ceiling():
    hps = [GbtHyperparams(eta=e, max_depth=d, num_boost_round=n) for e, d, n in
           [(0.3, 6, 100), (0.05, 3, 200), (1.0, 10, 50)]]
    for seed in range(10):
        data = make_synthetic({"m": 1000, "p": 4, "noise": 0.5, "seed": seed})
        se = math.sqrt(0.25 / len(data.val_idx))
        for hp in hps:
            assert train(data, hp).accuracy <= 0.6 + 3 * se


def test_synthetic_properties():
    a = make_synthetic({"m": 500, "p": 3, "noise": 0.1, "seed": 2, "positive": 0.45})
    b = make_synthetic({"m": 500, "p": 3, "noise": 0.1, "seed": 2, "positive": 0.45})
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert 0.4 <= a.labels.mean() <= 0.6
    with pytest.raises(ValueError):
        make_synthetic({"m": 40, "p": 3})
    with pytest.raises(ValueError):
        make_synthetic({"m": 100, "p": 3, "positive": 0.7})


def test_subsample_fidelity():
    task = resolve_task("synthetic:large-a")
    assert subsample_fidelity(task, 1.0, 0).train_idx.tobytes() == task.train_idx.tobytes()
    sub = subsample_fidelity(task, 0.1, 3)
    assert len(sub.train_idx) == math.ceil(0.1 * len(task.train_idx))
    assert abs(sub.y_train.mean() - task.y_train.mean()) <= 0.05
    assert sub.val_idx.tobytes() == task.val_idx.tobytes()
    assert np.array_equal(subsample_fidelity(task, 0.5, 1).train_idx, subsample_fidelity(task, 0.5, 1).train_idx)
    with pytest.raises(ValueError):
        subsample_fidelity(task, 0.0, 0)


def test_csv_ingestion(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("x,color,label\n1.0,red,a\n2.0,blue,a\n3.0,red,b\n4.0,blue,b\n")
    data = load_csv(p)
    assert list(data.labels) == [0, 0, 1, 1]
    assert list(data.features[:, 1]) == [1, 0, 1, 0]
    assert set(data.labels[data.train_idx]) == {0, 1} and set(data.labels[data.val_idx]) == {0, 1}
    p.write_text("x,label\n1,a\n2,b\n3,c\n")
    with pytest.raises(ValueError):
        load_csv(p)
    p.write_text("")
    with pytest.raises(ValueError):
        load_csv(p)
    p.write_text("x,label\n1,a\nfoo,b\n2,a\n3,b\n")
    with pytest.raises(ValueError):
        load_csv(p)


def test_csv_round_trip(tmp_path):
    task = resolve_task("synthetic:moons")
    save_csv(task, tmp_path / "m.csv")
    back = load_csv(tmp_path / "m.csv", seed=11)
    assert back.features.tobytes() == task.features.tobytes()
    assert back.labels.tobytes() == task.labels.tobytes()
    assert back.train_idx.tobytes() == task.train_idx.tobytes()


def test_hyperparam_bounds_and_ignored():
    with pytest.raises(ValueError):
        GbtHyperparams(max_depth=0)
    hp = GbtHyperparams.from_config({"eta": 0.1, "max_bin": 256, "tree_method": "hist", "lambda": 2.0})
    assert hp.lam == 2.0
    with pytest.raises(KeyError):
        GbtHyperparams.from_config({"bogus": 1})


def test_single_class_rejected():
    with pytest.raises(ValueError):
        make_dataset(np.zeros((10, 2)), np.zeros(10))
