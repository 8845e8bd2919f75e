"""Suggestion service: synchronous serving from a ranked store, asynchronous refits.

Requests only re-rank stored suggestions under the current model snapshot
(or draw a fallback prior sample when the store is empty); GP fitting happens
in a per-experiment background job triggered by observation reports.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mulch import gp as gpm
from mulch.priors import (
    LengthscaleBox,
    PriorEnsemble,
    full_domain_uniform,
    load_default_priors,
    load_priors,
    sample_prior,
)
from mulch.space import Configuration, SearchSpace, default_space, encode_unchecked

log = logging.getLogger(__name__)

OPEN, SERVED, CLOSED = "open", "served", "closed"
N_PREPOPULATE = 8
K_FRESH = 4


class ServiceError(Exception):
    status = 400
    code = "invalid_request"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_json(self) -> dict:
        return {"code": self.code, "message": self.message}


class NotFound(ServiceError):
    status, code = 404, "not_found"


class Conflict(ServiceError):
    status, code = 409, "conflict"


class BudgetExhausted(ServiceError):
    status, code = 409, "budget_exhausted"


class InvalidRequest(ServiceError):
    status, code = 422, "invalid_request"


@dataclass
class SuggestionRecord:
    id: str
    config: Configuration
    score: float | None
    model_version: int
    state: str = OPEN

    def to_json(self) -> dict:
        return {"id": self.id, "config": self.config.as_dict(), "score": self.score,
                "model_version": self.model_version, "state": self.state}

    @classmethod
    def from_json(cls, d: Mapping) -> "SuggestionRecord":
        return cls(d["id"], Configuration(d["config"]), d["score"], int(d["model_version"]), d["state"])


@dataclass(frozen=True)
class ServiceConfig:
    space: SearchSpace
    budget: int
    seed: int = 0
    priors: str = "default"  # "default", "uniform" or a priors.json path
    n_candidates: int = 256
    n_starts: int = 8

    @classmethod
    def from_json(cls, d: Mapping) -> "ServiceConfig":
        if not isinstance(d, Mapping):
            raise InvalidRequest("experiment config must be a JSON object")
        try:
            raw = d.get("space", "mulch5")
            space = default_space(raw) if isinstance(raw, str) else SearchSpace.from_dict(raw)
            budget = d.get("budget")
            if isinstance(budget, bool) or not isinstance(budget, int) or budget < 1:
                raise InvalidRequest("budget must be a positive integer")
            return cls(space, budget, int(d.get("seed", 0)), str(d.get("priors", "default")),
                       int(d.get("n_candidates", 256)), int(d.get("n_starts", 8)))
        except ServiceError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRequest(f"invalid experiment config: {exc}") from None

    def to_json(self) -> dict:
        return {"space": self.space.to_dict(), "budget": self.budget, "seed": self.seed,
                "priors": self.priors, "n_candidates": self.n_candidates, "n_starts": self.n_starts}


def _resolve_priors(name: str, space: SearchSpace) -> tuple[PriorEnsemble, LengthscaleBox | None]:
    if name == "uniform":
        return full_domain_uniform(space), None
    ensemble, box = load_default_priors() if name == "default" else load_priors(name)
    if ensemble.space.names != space.names:
        log.info("priors do not cover this space, falling back to uniform")
        return full_domain_uniform(space), None
    return ensemble, box


@dataclass
class ServiceExperiment:
    id: str
    config: ServiceConfig
    space: SearchSpace
    priors: PriorEnsemble
    box: LengthscaleBox | None
    observations: list[dict] = field(default_factory=list)
    store: list[SuggestionRecord] = field(default_factory=list)
    model: gpm.GpModel | None = None
    model_version: int = 0
    next_suggestion: int = 0
    fallback_draws: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock)
    job_running: bool = False
    job_pending: bool = False
    idle: threading.Event = field(default_factory=threading.Event)
    directory: Path | None = None

    @property
    def outstanding(self) -> int:
        return sum(r.state == SERVED for r in self.store)

    def new_id(self) -> str:
        self.next_suggestion += 1
        return f"{self.id}-s{self.next_suggestion:05d}"

    def best_y(self) -> float:
        return max(o["metric"] for o in self.observations)


class SuggestionService:
    """In-process service; ``inline=True`` runs refit jobs synchronously (deterministic)."""

    def __init__(self, data_dir: str | Path | None = None, inline: bool = False):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.inline = inline
        self._experiments: dict[str, ServiceExperiment] = {}
        self._lock = threading.Lock()
        self._counter = 0
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- persistence ---------------------------------------------------------
    def _persist_store(self, exp: ServiceExperiment) -> None:
        if exp.directory is None:
            return
        doc = {"model_version": exp.model_version, "next_suggestion": exp.next_suggestion,
               "fallback_draws": exp.fallback_draws, "space": exp.space.to_dict(),
               "budget": exp.config.budget, "records": [r.to_json() for r in exp.store]}
        tmp = exp.directory / "store.json.tmp"
        tmp.write_text(json.dumps(doc, sort_keys=True))
        tmp.replace(exp.directory / "store.json")

    def _append_log(self, exp: ServiceExperiment, obs: dict) -> None:
        if exp.directory is None:
            return
        with (exp.directory / "observations.jsonl").open("a") as fh:
            fh.write(json.dumps(obs, sort_keys=True) + "\n")
            fh.flush()

    def _recover(self) -> None:
        for d in sorted(p for p in self.data_dir.iterdir() if (p / "config.json").exists()):
            cfg = ServiceConfig.from_json(json.loads((d / "config.json").read_text()))
            exp = self._new_experiment(d.name, cfg, d)
            log_path = d / "observations.jsonl"
            if log_path.exists():
                exp.observations = [json.loads(line) for line in log_path.read_text().splitlines() if line]
            store_path = d / "store.json"
            if store_path.exists():
                doc = json.loads(store_path.read_text())
                exp.store = [SuggestionRecord.from_json(r) for r in doc["records"]]
                exp.next_suggestion = doc["next_suggestion"]
                exp.fallback_draws = doc["fallback_draws"]
                exp.space = SearchSpace.from_dict(doc["space"])
                exp.config = ServiceConfig(exp.space, doc["budget"], cfg.seed, cfg.priors,
                                           cfg.n_candidates, cfg.n_starts)
            if exp.observations:
                self._refit(exp, regenerate=False)
            self._experiments[exp.id] = exp
            num = d.name.rsplit("-", 1)[-1]
            if num.isdigit():
                self._counter = max(self._counter, int(num))

    # -- helpers -------------------------------------------------------------
    def _new_experiment(self, exp_id: str, cfg: ServiceConfig, directory: Path | None) -> ServiceExperiment:
        priors, box = _resolve_priors(cfg.priors, cfg.space)
        if box is not None and box.d != cfg.space.d:
            box = None
        exp = ServiceExperiment(exp_id, cfg, cfg.space, priors, box, directory=directory)
        exp.idle.set()
        return exp

    def _get(self, exp_id: str) -> ServiceExperiment:
        exp = self._experiments.get(exp_id)
        if exp is None:
            raise NotFound(f"unknown experiment {exp_id!r}")
        return exp

    def _fit_seed(self, exp: ServiceExperiment, n: int) -> int:
        return exp.config.seed * 100_003 + n

    # -- API -----------------------------------------------------------------
    def create_experiment(self, config: ServiceConfig | Mapping) -> str:
        cfg = config if isinstance(config, ServiceConfig) else ServiceConfig.from_json(config)
        if cfg.budget < 1:
            raise InvalidRequest("budget must be >= 1")
        with self._lock:
            self._counter += 1
            exp_id = f"exp-{self._counter:04d}"
        directory = None
        if self.data_dir is not None:
            directory = self.data_dir / exp_id
            directory.mkdir()
            (directory / "config.json").write_text(json.dumps(cfg.to_json(), sort_keys=True))
        exp = self._new_experiment(exp_id, cfg, directory)
        for c in sample_prior(exp.priors, N_PREPOPULATE, cfg.seed, space=exp.space):
            exp.store.append(SuggestionRecord(exp.new_id(), c, None, 0))
        self._persist_store(exp)
        with self._lock:
            self._experiments[exp_id] = exp
        return exp_id

    def request_suggestion(self, exp_id: str) -> SuggestionRecord:
        exp = self._get(exp_id)
        with exp.lock:
            if len(exp.observations) + exp.outstanding >= exp.config.budget:
                raise BudgetExhausted(f"experiment {exp_id} has no budget left")
            open_recs = [r for r in exp.store if r.state == OPEN]
            if open_recs:
                if exp.model is not None and exp.model_version > 0:
                    X = np.array([encode_unchecked(exp.space, r.config) for r in open_recs])
                    scores = gpm.ei_many(exp.model, X, exp.best_y())
                    for r, s in zip(open_recs, scores):
                        r.score = float(s)
                        r.model_version = exp.model_version
                    rec = open_recs[int(np.argmax(scores))]
                else:
                    rec = open_recs[0]
            else:
                exp.fallback_draws += 1
                seed = exp.config.seed * 7919 + exp.fallback_draws
                config = sample_prior(exp.priors, 1, seed, space=exp.space)[0]
                rec = SuggestionRecord(exp.new_id(), config, None, exp.model_version)
                exp.store.append(rec)
            rec.state = SERVED
            self._persist_store(exp)
            return SuggestionRecord(rec.id, rec.config, rec.score, rec.model_version, rec.state)

    def report_observation(self, exp_id: str, suggestion_id: str, metric: float) -> dict:
        exp = self._get(exp_id)
        if isinstance(metric, bool) or not isinstance(metric, (int, float)) or not math.isfinite(metric):
            raise InvalidRequest("metric must be a finite number")
        with exp.lock:
            rec = next((r for r in exp.store if r.id == suggestion_id), None)
            if rec is None:
                raise NotFound(f"unknown suggestion {suggestion_id!r}")
            if rec.state == CLOSED:
                raise Conflict(f"suggestion {suggestion_id!r} already closed")
            if rec.state != SERVED:
                raise Conflict(f"suggestion {suggestion_id!r} was never served")
            rec.state = CLOSED
            obs = {"suggestion_id": rec.id, "config": rec.config.as_dict(), "metric": float(metric)}
            exp.observations.append(obs)
            self._append_log(exp, obs)
            self._persist_store(exp)
            n = len(exp.observations)
            start = False
            if exp.job_running:
                exp.job_pending = True
            else:
                exp.job_running = True
                exp.idle.clear()
                start = True
        if start:
            if self.inline:
                self._job(exp)
            else:
                threading.Thread(target=self._job, args=(exp,), daemon=True).start()
        return {"accepted": True, "suggestion_id": suggestion_id, "n_observations": n}

    def update_experiment(self, exp_id: str, patch: Mapping[str, Any]) -> dict:
        exp = self._get(exp_id)
        if not isinstance(patch, Mapping) or not set(patch) <= {"bounds", "budget"}:
            raise InvalidRequest("patch may contain only 'bounds' and 'budget'")
        with exp.lock:
            space, budget = exp.space, exp.config.budget
            if patch.get("bounds") is not None:
                try:
                    space = exp.space.with_bounds({k: tuple(v) for k, v in patch["bounds"].items()})
                except (KeyError, ValueError, TypeError, AttributeError) as exc:
                    raise InvalidRequest(f"invalid bounds: {exc}") from None
            if patch.get("budget") is not None:
                budget = patch["budget"]
                if isinstance(budget, bool) or not isinstance(budget, int):
                    raise InvalidRequest("budget must be an integer")
                if budget < len(exp.observations) + exp.outstanding:
                    raise InvalidRequest("budget below what has already been consumed")
            closed = []
            for r in exp.store:
                if r.state == OPEN and not space.is_valid(r.config):
                    r.state = CLOSED
                    closed.append(r.id)
            exp.space = space
            exp.config = ServiceConfig(space, budget, exp.config.seed, exp.config.priors,
                                       exp.config.n_candidates, exp.config.n_starts)
            if exp.directory is not None:
                (exp.directory / "config.json").write_text(json.dumps(exp.config.to_json(), sort_keys=True))
            self._persist_store(exp)
            return {"accepted": True, "closed": closed}

    def get_best(self, exp_id: str) -> tuple[Configuration, float]:
        exp = self._get(exp_id)
        with exp.lock:
            if not exp.observations:
                raise Conflict("no observations yet")
            best = max(exp.observations, key=lambda o: o["metric"])  # first max wins
            return Configuration(best["config"]), best["metric"]

    def experiment(self, exp_id: str) -> ServiceExperiment:
        return self._get(exp_id)

    def wait_idle(self, exp_id: str, timeout: float | None = 60.0) -> bool:
        return self._get(exp_id).idle.wait(timeout)

    # -- async refit ---------------------------------------------------------
    def _refit(self, exp: ServiceExperiment, regenerate: bool = True) -> None:
        with exp.lock:
            obs = list(exp.observations)
            space, box = exp.space, exp.box
        n = len(obs)
        seed = self._fit_seed(exp, n)
        model = gpm.fit_configs(space, [o["config"] for o in obs], [o["metric"] for o in obs], box,
                                exp.config.n_starts, seed)
        fresh = []
        if regenerate:
            best = max(o["metric"] for o in obs)
            fresh = gpm.propose(model, space, best, exp.config.n_candidates, seed, "uniform", k=K_FRESH)
        with exp.lock:
            if n < exp.model_version:
                return
            exp.model, exp.model_version = model, n
            if regenerate:
                exp.store = [r for r in exp.store if not (r.state == OPEN and r.model_version < n)]
                for config, score in fresh:
                    exp.store.append(SuggestionRecord(exp.new_id(), config, score, n))
            self._persist_store(exp)

    def _job(self, exp: ServiceExperiment) -> None:
        while True:
            try:
                self._refit(exp)
            except Exception:  # keep serving from the store / fallback
                log.exception("refit failed for %s", exp.id)
            with exp.lock:
                if exp.job_pending:
                    exp.job_pending = False
                    continue
                exp.job_running = False
                exp.idle.set()
                return
