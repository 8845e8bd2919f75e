"""Two-fidelity Bayesian optimization with cost-probability assignment.

Each iteration fits one GP to the low-fidelity observations and one to the
full-fidelity observations, takes the EI argmax of each, and sends one of the
two candidates to each fidelity. Cheap configurations (few boosting rounds)
are favored for the low fidelity and expensive ones for the full fidelity.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from mulch import gp as gpm
from mulch.priors import LengthscaleBox, PriorEnsemble, full_domain_uniform, sample_prior
from mulch.space import Configuration, SearchSpace

log = logging.getLogger(__name__)

FULL_FIDELITY = 1.0

# objective(config, fidelity, seed) -> (metric, cost seconds); the run seed is passed unchanged
Objective = Callable[[Configuration, float, int], tuple[float, float]]


@dataclass(frozen=True)
class MulchMfConfig:
    budget: float
    r_low: float = 0.1
    n_low: int = 4
    n_high: int = 4
    cost_key: str = "num_boost_round"
    seed: int = 0
    n_candidates: int = 256
    n_starts: int = 8

    def __post_init__(self) -> None:
        if not 0 < self.r_low < 1:
            raise ValueError("r_low must be in (0, 1)")
        if self.n_low < 1 or self.n_high < 1:
            raise ValueError("n_low and n_high must be >= 1")
        if not self.budget > self.n_low * self.r_low + self.n_high:
            raise ValueError(f"budget {self.budget} does not cover the initial design "
                             f"({self.n_low} x {self.r_low} + {self.n_high})")

    @property
    def r_frac(self) -> Fraction:
        return Fraction(str(self.r_low))


@dataclass(frozen=True)
class FidelityObservation:
    config: Configuration
    fidelity: float
    metric: float
    wall_time: float
    iteration: int = 0
    budget_after: float = 0.0
    failed: bool = False

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "config": self.config.as_dict(), "fidelity": self.fidelity,
                "metric": None if self.failed else self.metric, "wall_time": self.wall_time,
                "budget_after": self.budget_after, "failed": self.failed}

    @classmethod
    def from_json(cls, d: Mapping) -> "FidelityObservation":
        failed = bool(d.get("failed", False)) or d["metric"] is None
        return cls(Configuration(d["config"]), float(d["fidelity"]),
                   float("-inf") if failed else float(d["metric"]), float(d["wall_time"]),
                   int(d["iteration"]), float(d["budget_after"]), failed)


@dataclass
class BudgetLedger:
    total: Fraction
    consumed: Fraction = Fraction(0)

    def charge(self, amount: Fraction) -> None:
        self.consumed += amount

    @property
    def exhausted(self) -> bool:
        return self.consumed >= self.total


@dataclass
class MulchMfState:
    config: MulchMfConfig
    space: SearchSpace
    ledger: BudgetLedger
    history: list[FidelityObservation] = field(default_factory=list)
    iteration: int = 0
    box: LengthscaleBox | None = None
    candidate_source: Any = "uniform"
    trace: list[dict] = field(default_factory=list)  # per-iteration cost probabilities

    def observations(self, fidelity: float) -> list[FidelityObservation]:
        return [o for o in self.history if o.fidelity == fidelity and not o.failed]


def cost_probs(from_low: Mapping[str, Any], from_high: Mapping[str, Any],
               cost_key: str = "num_boost_round") -> tuple[tuple[float, float], tuple[float, float]]:
    """Low-fidelity probabilities proportional to cost, full-fidelity inversely proportional."""
    if cost_key not in from_low or cost_key not in from_high:
        return (0.5, 0.5), (0.5, 0.5)
    v1, v2 = float(from_low[cost_key]), float(from_high[cost_key])
    if not (v1 > 0 and v2 > 0):
        raise ValueError(f"{cost_key} must be positive, got {v1}, {v2}")
    low1 = v1 / (v1 + v2)
    high1 = (1 / v1) / (1 / v1 + 1 / v2)
    return (low1, 1.0 - low1), (high1, 1.0 - high1)


def choose(probs: tuple[float, float], rng: np.random.Generator) -> int:
    """Index 0 with probability ``probs[0]``, else 1."""
    return 0 if rng.random() < probs[0] else 1


def _evaluate(objective: Objective, config: Configuration, fidelity: float, seed: int,
              iteration: int, ledger_after: float) -> FidelityObservation:
    try:
        metric, cost = objective(config, fidelity, seed)
        metric = float(metric)
        if not np.isfinite(metric):
            raise ValueError(f"non-finite metric {metric}")
        return FidelityObservation(config, fidelity, metric, float(cost), iteration, ledger_after)
    except Exception as exc:  # recorded, budget still charged
        log.warning("evaluation failed at fidelity %s: %s", fidelity, exc)
        return FidelityObservation(config, fidelity, float("-inf"), 0.0, iteration, ledger_after, True)


def _propose_from(state: MulchMfState, obs: list[FidelityObservation], seed: int) -> Configuration:
    if not obs:
        source = state.candidate_source if isinstance(state.candidate_source, PriorEnsemble) \
            else full_domain_uniform(state.space)
        return sample_prior(source, 1, seed, space=state.space)[0]
    model = gpm.fit_configs(state.space, [o.config for o in obs], [o.metric for o in obs],
                            state.box, state.config.n_starts, seed)
    best = max(o.metric for o in obs)
    return gpm.suggest(model, state.space, best, state.config.n_candidates, seed, state.candidate_source)


def step(state: MulchMfState, objective: Objective, rng: np.random.Generator) -> MulchMfState:
    cfg = state.config
    state.iteration += 1
    seed = cfg.seed * 100_003 + state.iteration
    from_low = _propose_from(state, state.observations(cfg.r_low), seed)
    from_high = _propose_from(state, state.observations(FULL_FIDELITY), seed + 50_000)
    low, high = cost_probs(from_low, from_high, cfg.cost_key)
    pool = (from_low, from_high)
    pick_low, pick_high = choose(low, rng), choose(high, rng)
    state.trace.append({"iteration": state.iteration, "low": low, "high": high,
                        "pick_low": pick_low, "pick_high": pick_high})
    state.ledger.charge(cfg.r_frac)
    state.history.append(_evaluate(objective, pool[pick_low], cfg.r_low, cfg.seed, state.iteration,
                                   float(state.ledger.consumed)))
    state.ledger.charge(Fraction(1))
    state.history.append(_evaluate(objective, pool[pick_high], FULL_FIDELITY, cfg.seed, state.iteration,
                                   float(state.ledger.consumed)))
    return state


def initialize(config: MulchMfConfig, space: SearchSpace, objective: Objective,
               priors: PriorEnsemble | None = None, box: LengthscaleBox | None = None,
               candidate_source: Any = "uniform") -> MulchMfState:
    state = MulchMfState(config, space, BudgetLedger(Fraction(str(config.budget))), box=box,
                         candidate_source=candidate_source)
    source = priors if priors is not None else full_domain_uniform(space)
    init = sample_prior(source, config.n_low + config.n_high, config.seed, space=space)
    for i, c in enumerate(init):
        fidelity = config.r_low if i < config.n_low else FULL_FIDELITY
        state.ledger.charge(config.r_frac if i < config.n_low else Fraction(1))
        state.history.append(_evaluate(objective, c, fidelity, config.seed, 0,
                                       float(state.ledger.consumed)))
    return state


def run(config: MulchMfConfig, space: SearchSpace, objective: Objective,
        priors: PriorEnsemble | None = None, box: LengthscaleBox | None = None,
        candidate_source: Any = "uniform",
        on_observation: Callable[[FidelityObservation], None] | None = None) -> MulchMfState:
    """Run to budget exhaustion; the last iteration may start with budget just below the total."""
    state = initialize(config, space, objective, priors, box, candidate_source)
    if on_observation:
        for o in state.history:
            on_observation(o)
    rng = np.random.default_rng(config.seed)
    while not state.ledger.exhausted:
        n = len(state.history)
        step(state, objective, rng)
        if on_observation:
            for o in state.history[n:]:
                on_observation(o)
    return state


def write_history(path: str | Path, history: Sequence[FidelityObservation]) -> None:
    with Path(path).open("w") as fh:
        for o in history:
            fh.write(json.dumps(o.to_json(), sort_keys=True) + "\n")


def read_history(path: str | Path) -> list[FidelityObservation]:
    with Path(path).open() as fh:
        return [FidelityObservation.from_json(json.loads(line)) for line in fh if line.strip()]
