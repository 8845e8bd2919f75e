import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from mulch import engine
from mulch.engine import (
    BenchmarkSettings,
    ExperimentConfig,
    ExperimentHistory,
    Observation,
    best_seen,
    fsl_warm_start,
    run_experiment,
)
from mulch.priors import LengthscaleBox, full_domain_uniform, load_default_priors
from mulch.space import Configuration, default_space
from mulch.tasks import resolve_task

MULCH5 = default_space("mulch5")
PRIORS, BOX = load_default_priors()


def toy(config, fidelity, seed):
    x = math.log10(config["eta"])
    return 1 - 0.05 * (x + 1) ** 2 - 0.02 * config["gamma"] + 0.01 * fidelity, config["num_boost_round"] * fidelity * 1e-3


def cfg(strategy, budget, **kw):
    kw.setdefault("n_candidates", 32)
    kw.setdefault("n_starts", 2)
    if strategy == "fsl-bo":
        kw.setdefault("priors", PRIORS)
        kw.setdefault("lengthscale_box", BOX)
    return ExperimentConfig(MULCH5, strategy, budget, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(MULCH5, "grid", 10)
    with pytest.raises(ValueError):
        ExperimentConfig(MULCH5, "fsl-bo", 10)
    with pytest.raises(ValueError):
        ExperimentConfig(MULCH5, "bo", 0.5)
    with pytest.raises(ValueError):
        ExperimentConfig(MULCH5, "random", 10, direction="min")


def test_warm_start():
    assert len(fsl_warm_start(PRIORS)) == 8
    one = fsl_warm_start(PRIORS, k=1, seed=4)
    assert len(one) == 1 and MULCH5.is_valid(one[0])
    assert fsl_warm_start(PRIORS, seed=3) == fsl_warm_start(PRIORS, seed=3)


def test_random_bookkeeping():
    hist = run_experiment(cfg("random", 50), toy)
    assert len(hist.observations) == 50
    assert all(o.fidelity == 1.0 for o in hist.observations)


@pytest.mark.parametrize("strategy,budget", [("random", 12), ("bo", 12), ("fsl-bo", 12), ("mulch-mf", 9)])
def test_budget_conservation_and_determinism(strategy, budget, tmp_path):
    a = run_experiment(cfg(strategy, budget, seed=2), toy, tmp_path / "h.jsonl")
    b = run_experiment(cfg(strategy, budget, seed=2), toy)
    assert [o.to_json() for o in a.observations] == [o.to_json() for o in b.observations]
    total = sum((Fraction(str(o.cost)) for o in a.observations), Fraction(0))
    assert total == Fraction(str(a.observations[-1].budget_after))
    if strategy != "mulch-mf":
        assert total == budget
    else:
        assert Fraction(budget) <= total < Fraction(budget) + Fraction("1.1")
    back = ExperimentHistory.read(tmp_path / "h.jsonl")
    assert [o.to_json() for o in back.observations] == [o.to_json() for o in a.observations]


def test_fsl_with_uniform_priors_equals_bo():
    a = run_experiment(cfg("bo", 14, seed=5), toy)
    b = run_experiment(cfg("fsl-bo", 14, seed=5, priors=full_domain_uniform(MULCH5),
                           lengthscale_box=LengthscaleBox.default(5)), toy)
    assert [o.to_json() for o in a.observations] == [o.to_json() for o in b.observations]


def test_failures_are_charged():
    def flaky(c, p, s):
        if c["max_depth"] > 20:
            raise RuntimeError("boom")
        return toy(c, p, s)

    hist = run_experiment(cfg("random", 20, seed=1), flaky)
    assert any(o.failed for o in hist.observations)
    assert hist.consumed == 20
    assert all(math.isfinite(v) or v == float("-inf") for v in hist.best_seen_trace())


def _obs(metric, fidelity, budget_after, failed=False):
    return Observation(Configuration({"x": metric}), fidelity, metric, fidelity, 0.0, 0.0, budget_after, 0, failed)


def scan(history, at):
    best = None
    for o in history.observations:
        if o.budget_after <= at and o.fidelity == 1.0 and not o.failed:
            if best is None or o.metric > best[1]:
                best = (o.config, o.metric)
    return best


@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0.1, 1.0]), st.booleans()), min_size=1, max_size=30),
       st.floats(0, 40))
def test_best_seen_matches_scan(rows, at):
    hist = ExperimentHistory("x")
    b = Fraction(0)
    for m, p, failed in rows:
        b += Fraction(str(p))
        hist.observations.append(_obs(m, p, float(b), failed))
    ref = scan(hist, at)
    if ref is None:
        with pytest.raises(ValueError):
            best_seen(hist, at)
    else:
        assert best_seen(hist, at) == ref


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(1, 20), st.floats(0, 20))
def test_best_seen_monotone(ms, a, d):
    hist = ExperimentHistory("x", [_obs(m, 1.0, i + 1.0) for i, m in enumerate(ms)])
    assert best_seen(hist, a + d)[1] >= best_seen(hist, a)[1]


def test_best_seen_examples():
    hist = ExperimentHistory("x", [_obs(0.1 * i, 1.0, float(i)) for i in range(1, 6)])
    assert best_seen(hist, 5)[1] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        best_seen(hist, 0.5)
    ties = ExperimentHistory("x", [_obs(0.3, 1.0, 1.0), _obs(0.3, 1.0, 2.0)])
    ties.observations[1] = Observation(Configuration({"x": 9}), 1.0, 0.3, 1.0, 0.0, 0.0, 2.0)
    assert best_seen(ties, 2)[0] == Configuration({"x": 0.3})


def test_parse_strategy():
    assert engine.parse_strategy("mulch-mf-0.25") == ("mulch-mf", 0.25)
    assert engine.parse_strategy("bo") == ("bo", 0.1)
    with pytest.raises(ValueError):
        engine.parse_strategy("hyperband")


def test_benchmark_shape_and_self_normalization(tmp_path):
    task = resolve_task("synthetic:moons")
    settings = BenchmarkSettings(MULCH5, budget=4, repeats=1, n_starts=2, n_candidates=16)
    report = engine.benchmark([task], ["random"], settings, run_dir=tmp_path / "runs")
    assert len(report["rows"]) == 1 and report["rows"][0]["time_normalized"] == 1.0
    settings = BenchmarkSettings(MULCH5, budget=10, repeats=2, n_starts=2, n_candidates=16)
    report = engine.benchmark([task], ["bo", "mulch-mf-0.1"], settings)
    assert [(r["task"], r["strategy"]) for r in report["rows"]] == [("moons", "bo"), ("moons", "mulch-mf-0.1")]
    csv_path, json_path = engine.write_report(report, tmp_path)
    assert len(csv_path.read_text().splitlines()) == 3
    assert json.loads(json_path.read_text())["rows"][1]["strategy"] == "mulch-mf-0.1"


def test_gbt_objective_clock():
    task = resolve_task("synthetic:moons")
    c = MULCH5.make({"eta": 0.1, "gamma": 0.0, "max_depth": 4, "min_child_weight": 1.0, "num_boost_round": 30})
    work = engine.GbtObjective(task, clock="work")
    assert work(c, 1.0, 0) == work(c, 1.0, 0)
    acc, secs = engine.GbtObjective(task, clock="wall")(c, 1.0, 0)
    assert acc == work(c, 1.0, 0)[0] and secs > 0
    with pytest.raises(ValueError):
        engine.GbtObjective(task, clock="cpu")


def test_learn_priors_from_histories():
    hists = {f"t{s}": run_experiment(cfg("random", 20, seed=s), toy) for s in range(3)}
    ens, box = engine.learn_priors(hists, MULCH5, per_task_count=4)
    assert ens.space == MULCH5 and box.d == 5
