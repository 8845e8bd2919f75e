"""Metalearned per-parameter prior densities and lengthscale boxes.

Densities live on a parameter's *transformed* coordinate: base-10 exponents
for log-scaled parameters, the native value otherwise. Integer parameters use
the continuous relaxation ``[lower - 0.5, upper + 0.5]`` and samples are
rounded half-up, so a full-domain uniform is exactly uniform over the integers.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import optimize, special

from mulch.space import (
    CATEGORICAL,
    INTEGER,
    Configuration,
    Parameter,
    SearchSpace,
    unit_points,
)

log = logging.getLogger(__name__)

QUANTILE_UNIFORM = "quantile-uniform"
BETA = "beta"
GAMMA = "gamma"
HALF_CAUCHY = "half-cauchy"
CATEGORICAL_FAMILY = "categorical"
MLE_FAMILIES = (BETA, GAMMA, HALF_CAUCHY)

DEFAULT_QUANTILES = (0.05, 0.95)
MIN_MLE_SAMPLES = 8
DIVERGENCE = 1e4


class FitError(RuntimeError):
    """A density family could not be fitted; ``best`` holds the best partial fit, if any."""

    def __init__(self, message: str, best: "ParamDensity | None" = None):
        super().__init__(message)
        self.best = best


def support_of(param: Parameter) -> tuple[float, float]:
    """Transformed-coordinate support of a numeric parameter."""
    if param.kind == CATEGORICAL:
        return (0.0, float(param.n_choices))
    if param.kind == INTEGER:
        return (param.lower - 0.5, param.upper + 0.5)
    return (float(param.lower), float(param.upper))


@dataclass(frozen=True)
class ParamDensity:
    family: str
    params: Mapping[str, Any]
    support: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "support", (float(self.support[0]), float(self.support[1])))
        if self.family == QUANTILE_UNIFORM and not self.params["lower"] < self.params["upper"]:
            raise ValueError("quantile-uniform needs lower < upper")

    # -- untruncated family ------------------------------------------------
    def _logpdf_raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == QUANTILE_UNIFORM:
                lo, hi = p["lower"], p["upper"]
                return np.where((x >= lo) & (x <= hi), -math.log(hi - lo), -np.inf)
            if self.family == BETA:
                lo, hi = self.support
                z = (x - lo) / (hi - lo)
                a, b = p["a"], p["b"]
                out = ((a - 1) * np.log(z) + (b - 1) * np.log1p(-z)
                       - special.betaln(a, b) - math.log(hi - lo))
                return np.where((z > 0) & (z < 1), out, -np.inf)
            if self.family == GAMMA:
                shape, scale, loc = p["shape"], p["scale"], p["loc"]
                z = x - loc
                out = (shape - 1) * np.log(z) - z / scale - special.gammaln(shape) - shape * math.log(scale)
                return np.where(z > 0, out, -np.inf)
            if self.family == HALF_CAUCHY:
                loc, s = p["loc"], p["scale"]
                z = (x - loc) / s
                out = math.log(2 / (math.pi * s)) - np.log1p(z * z)
                return np.where(z >= 0, out, -np.inf)
        raise ValueError(f"no continuous density for family {self.family!r}")

    def _cdf_raw(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == QUANTILE_UNIFORM:
            return np.clip((x - p["lower"]) / (p["upper"] - p["lower"]), 0.0, 1.0)
        if self.family == BETA:
            lo, hi = self.support
            return special.betainc(p["a"], p["b"], np.clip((x - lo) / (hi - lo), 0.0, 1.0))
        if self.family == GAMMA:
            return special.gammainc(p["shape"], np.maximum(x - p["loc"], 0.0) / p["scale"])
        if self.family == HALF_CAUCHY:
            return 2 / math.pi * np.arctan(np.maximum(x - p["loc"], 0.0) / p["scale"])
        raise ValueError(f"no cdf for family {self.family!r}")

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse cdf of the untruncated family."""
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.family == QUANTILE_UNIFORM:
            return p["lower"] + u * (p["upper"] - p["lower"])
        if self.family == BETA:
            lo, hi = self.support
            return lo + (hi - lo) * special.betaincinv(p["a"], p["b"], u)
        if self.family == GAMMA:
            return p["loc"] + p["scale"] * special.gammaincinv(p["shape"], u)
        if self.family == HALF_CAUCHY:
            return p["loc"] + p["scale"] * np.tan(np.pi * u / 2)
        raise ValueError(f"no ppf for family {self.family!r}")

    # -- truncated to the support ------------------------------------------
    def mass(self) -> float:
        lo, hi = self.support
        return float(self._cdf_raw(hi) - self._cdf_raw(lo))

    def pdf(self, x) -> np.ndarray:
        """Density renormalized over the support; zero outside it."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        mass = self.mass()
        dens = np.exp(self._logpdf_raw(x)) / mass if mass > 0 else np.zeros_like(x)
        return np.where((x >= lo) & (x <= hi), dens, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "support": list(self.support)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamDensity":
        return cls(d["family"], d["params"], tuple(d["support"]))


@dataclass(frozen=True)
class CategoricalDensity:
    probs: tuple[float, ...]
    family: str = field(default=CATEGORICAL_FAMILY, init=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("categorical probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in probs))

    @property
    def params(self) -> dict:
        return {"probs": list(self.probs)}

    def pmf(self, idx: int) -> float:
        return self.probs[idx] if 0 <= idx < len(self.probs) else 0.0

    def ppf(self, u: float) -> int:
        cum = np.cumsum(self.probs)
        return int(min(np.searchsorted(cum, u, side="right"), len(self.probs) - 1))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params}


Component = ParamDensity | CategoricalDensity


# ---------------------------------------------------------------------------
# fitting


def _widen(lo: float, hi: float, support: tuple[float, float] | None) -> tuple[float, float]:
    width = (support[1] - support[0]) if support else 0.0
    delta = max(1e-6, 1e-3 * width)
    lo, hi = lo - delta, hi + delta
    if support:
        lo, hi = max(lo, support[0]), min(hi, support[1])
    return lo, hi


def fit_quantile_uniform(samples: Sequence[float], q_lo: float = DEFAULT_QUANTILES[0],
                         q_hi: float = DEFAULT_QUANTILES[1],
                         support: tuple[float, float] | None = None) -> ParamDensity:
    """Uniform density between two sample quantiles (linear interpolation).

    A degenerate interval is widened by ``max(1e-6, 1e-3 * support width)`` on
    each side and clamped to the support.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples to fit")
    if x.size < 2:
        raise ValueError("quantile-uniform needs at least 2 samples")
    if not 0 <= q_lo < q_hi <= 1:
        raise ValueError("need 0 <= q_lo < q_hi <= 1")
    lo, hi = (float(v) for v in np.quantile(x, [q_lo, q_hi]))
    if support is None:
        support = (float(x.min()), float(x.max()))
    if hi <= lo:
        lo, hi = _widen(lo, hi, support if support[1] > support[0] else None)
    if support[1] <= support[0] or lo < support[0] or hi > support[1]:
        support = (min(support[0], lo), max(support[1], hi))
    return ParamDensity(QUANTILE_UNIFORM, {"lower": lo, "upper": hi}, support)


def _family_from_log_params(family: str, log_params: np.ndarray, support: tuple[float, float]) -> ParamDensity:
    lo = support[0]
    if family == BETA:
        params = {"a": float(np.exp(log_params[0])), "b": float(np.exp(log_params[1]))}
    elif family == GAMMA:
        params = {"shape": float(np.exp(log_params[0])), "scale": float(np.exp(log_params[1])), "loc": lo}
    elif family == HALF_CAUCHY:
        params = {"loc": lo, "scale": float(np.exp(log_params[0]))}
    else:
        raise ValueError(f"unknown MLE family {family!r}")
    return ParamDensity(family, params, support)


def _starts(family: str, z: np.ndarray, width: float, n_starts: int) -> list[np.ndarray]:
    """Initial log-parameters: a moment-matched point plus deterministic spreads."""
    mean, var = float(z.mean()), float(z.var()) + 1e-12
    if family == BETA:
        m = min(max(mean / width, 1e-3), 1 - 1e-3)
        v = var / width**2
        common = max(m * (1 - m) / v - 1, 1e-2)
        base = np.log([m * common, (1 - m) * common])
    elif family == GAMMA:
        base = np.log([max(mean**2 / var, 1e-2), max(var / max(mean, 1e-12), 1e-12)])
    else:
        base = np.log([max(float(np.median(z)), 1e-6 * width)])
    offsets = [0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5, 3.0]
    return [base + offsets[i % len(offsets)] for i in range(n_starts)]


def fit_family_mle(samples: Sequence[float], family: str, support: tuple[float, float],
                   n_starts: int = 5) -> ParamDensity:
    """Maximum-likelihood fit of one family, truncated to ``support``.

    Beta lives on the whole support; gamma and half-Cauchy are anchored at the
    support's lower end (location fixed) and fit their shape/scale.
    """
    if family not in MLE_FAMILIES:
        raise ValueError(f"unknown MLE family {family!r}")
    x = np.asarray(samples, dtype=float)
    if x.size < MIN_MLE_SAMPLES:
        raise FitError(f"{family}: need at least {MIN_MLE_SAMPLES} samples, got {x.size}")
    lo, hi = support
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("samples must lie inside the support")
    if np.ptp(x) == 0:
        raise FitError(f"{family}: constant samples, no family fits a point mass")
    width = hi - lo
    eps = 1e-6 * width
    if family == BETA:
        x = np.clip(x, lo + eps, hi - eps)
    else:
        x = np.maximum(x, lo + eps)
    n_starts = max(int(n_starts), 5)

    def nll(log_params: np.ndarray) -> float:
        if not np.all(np.isfinite(log_params)) or np.any(np.abs(log_params) > 50):
            return np.inf
        dens = _family_from_log_params(family, log_params, support)
        mass = dens.mass()
        if not mass > 0:
            return np.inf
        val = -float(np.sum(dens._logpdf_raw(x))) + x.size * math.log(mass)
        return val if np.isfinite(val) else np.inf

    best, best_val = None, np.inf
    for start in _starts(family, x - lo, width, n_starts):
        if not np.isfinite(nll(start)):
            continue
        res = optimize.minimize(nll, start, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = res.x, res.fun
    if best is None:
        raise FitError(f"{family}: optimizer failed from every start")
    fitted = _family_from_log_params(family, best, support)
    if np.any(np.exp(best) > DIVERGENCE * max(1.0, width)):
        # the likelihood supremum sits at an infinite parameter (e.g. a flat limit)
        raise FitError(f"{family}: fit diverged to a degenerate limit", best=fitted)
    if not fitted.mass() > 1e-12:
        raise FitError(f"{family}: fitted density has no mass on the support", best=fitted)
    return fitted


# ---------------------------------------------------------------------------
# pool and ensemble


@dataclass(frozen=True)
class TopConfigPool:
    configs: tuple[Configuration, ...]
    tasks: tuple[str, ...]
    metrics: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.configs)


def aggregate_top_configs(histories: Mapping[str, Sequence[tuple[Mapping, float]]] | Sequence,
                          per_task_count: int | None = None,
                          top_fraction: float | None = None) -> TopConfigPool:
    """Take the best-metric configurations of every history (maximization).

    Either ``per_task_count`` (equal count per task) or ``top_fraction`` (same
    fraction of each history) must be given.
    """
    if (per_task_count is None) == (top_fraction is None):
        raise ValueError("give exactly one of per_task_count and top_fraction")
    if not isinstance(histories, Mapping):
        histories = {f"task{i}": h for i, h in enumerate(histories)}
    configs, tasks, metrics = [], [], []
    for name, records in histories.items():
        records = list(records)
        ys = np.array([float(m) for _, m in records])
        if not np.all(np.isfinite(ys)):
            raise ValueError(f"{name}: non-finite metric values")
        count = per_task_count if per_task_count is not None else max(1, math.ceil(top_fraction * len(records)))
        if len(records) < count:
            raise ValueError(f"{name}: history has {len(records)} evaluations, need {count}")
        order = np.argsort(-ys, kind="stable")[:count]
        for i in order:
            configs.append(Configuration(records[i][0]))
            tasks.append(name)
            metrics.append(float(ys[i]))
    return TopConfigPool(tuple(configs), tuple(tasks), tuple(metrics))


@dataclass(frozen=True)
class PriorEnsemble:
    """Independent per-parameter equal-weight mixtures."""

    space: SearchSpace
    components: tuple[tuple[Component, ...], ...]
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.components) != self.space.d or len(self.weights) != self.space.d:
            raise ValueError("one component list per parameter required")
        for comps, w in zip(self.components, self.weights):
            if len(comps) != len(w) or not comps:
                raise ValueError("weights must align with components")
            if any(x < 0 for x in w) or not math.isclose(sum(w), 1.0, abs_tol=1e-12):
                raise ValueError("mixture weights must be nonnegative and sum to 1")

    @property
    def d(self) -> int:
        return self.space.d

    def to_dict(self) -> dict:
        return {
            "parameters": self.space.to_dict()["parameters"],
            "priors": [
                {
                    "parameter": p.name,
                    "components": [dict(c.to_dict(), weight=w) for c, w in zip(comps, ws)],
                }
                for p, comps, ws in zip(self.space.parameters, self.components, self.weights)
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PriorEnsemble":
        space = SearchSpace.from_dict(d)
        by_name = {entry["parameter"]: entry for entry in d["priors"]}
        components, weights = [], []
        for p in space.parameters:
            comps, ws = [], []
            for c in by_name[p.name]["components"]:
                if c["family"] == CATEGORICAL_FAMILY:
                    comps.append(CategoricalDensity(tuple(c["params"]["probs"])))
                else:
                    comps.append(ParamDensity.from_dict(c))
                ws.append(float(c["weight"]))
            components.append(tuple(comps))
            weights.append(tuple(ws))
        return cls(space, tuple(components), tuple(weights))


def _equal(n: int) -> tuple[float, ...]:
    w = [1.0 / n] * n
    w[-1] = 1.0 - sum(w[:-1])
    return tuple(w)


def full_domain_uniform(space: SearchSpace) -> PriorEnsemble:
    components = []
    for p in space.parameters:
        if p.kind == CATEGORICAL:
            components.append((CategoricalDensity(_equal(p.n_choices)),))
        else:
            lo, hi = support_of(p)
            components.append((ParamDensity(QUANTILE_UNIFORM, {"lower": lo, "upper": hi}, (lo, hi)),))
    return PriorEnsemble(space, tuple(components), tuple((1.0,) for _ in components))


def build_ensemble(pool: TopConfigPool, space: SearchSpace,
                   quantile_pairs: Mapping[str, tuple[float, float]] | None = None) -> PriorEnsemble:
    if len(pool) == 0:
        raise ValueError("empty configuration pool")
    quantile_pairs = quantile_pairs or {}
    fallback = full_domain_uniform(space)
    components, weights = [], []
    for j, p in enumerate(space.parameters):
        values = [c[p.name] for c in pool.configs]
        if p.kind == CATEGORICAL:
            counts = np.array([values.count(ch) for ch in p.choices], dtype=float) + 1.0
            components.append((CategoricalDensity(tuple(counts / counts.sum())),))
            weights.append((1.0,))
            continue
        z = np.array([p.to_transformed(v) for v in values])
        support = support_of(p)
        fits: list[Component] = []
        q_lo, q_hi = quantile_pairs.get(p.name, DEFAULT_QUANTILES)
        try:
            fits.append(fit_quantile_uniform(z, q_lo, q_hi, support))
        except ValueError as exc:
            log.debug("%s: quantile-uniform fit failed: %s", p.name, exc)
        for family in MLE_FAMILIES:
            try:
                fits.append(fit_family_mle(z, family, support))
            except FitError as exc:
                log.debug("%s: %s", p.name, exc)
        if not fits:
            log.warning("%s: every density fit failed, using the full-domain uniform", p.name)
            components.append(fallback.components[j])
            weights.append((1.0,))
            continue
        components.append(tuple(fits))
        weights.append(_equal(len(fits)))
    return PriorEnsemble(space, tuple(components), tuple(weights))


def _to_native(param: Parameter, t: float) -> Any:
    if param.kind == INTEGER:
        return int(min(max(math.floor(t + 0.5), param.lower), param.upper))
    t = min(max(t, param.lower), param.upper)
    return param.from_transformed(t)


def _truncated_draw(comp: ParamDensity, u: float, lo: float, hi: float) -> float:
    """Inverse-cdf draw from ``comp`` conditioned on ``[lo, hi]``."""
    f_lo, f_hi = float(comp._cdf_raw(lo)), float(comp._cdf_raw(hi))
    if not f_hi - f_lo > 1e-12:
        return lo + u * (hi - lo)  # no mass inside: uniform over the domain
    t = float(comp.ppf(f_lo + u * (f_hi - f_lo)))
    return min(max(t, lo), hi)


def sample_prior(ensemble: PriorEnsemble, n: int, seed: int = 0,
                 space: SearchSpace | None = None) -> list[Configuration]:
    """Draw ``n`` configurations from the ensemble.

    Per parameter a mixture component is picked by weight, then a value is
    drawn from that component conditioned on the domain via its inverse cdf
    (the distribution rejection sampling would target). The uniforms come from
    a scrambled Sobol sequence, so a full-domain-uniform ensemble reproduces
    quasi-random sampling of the space exactly. ``space`` optionally narrows
    the domain (e.g. after a bounds update).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    space = space or ensemble.space
    rng = np.random.default_rng(seed)
    base = unit_points(ensemble.d, n, "quasi", seed)
    out = []
    for i in range(n):
        values = {}
        for j, p in enumerate(ensemble.space.parameters):
            target = space[p.name]
            comps, w = ensemble.components[j], ensemble.weights[j]
            k = 0 if len(comps) == 1 else int(rng.choice(len(comps), p=w))
            comp = comps[k]
            u = float(base[i, j])
            if isinstance(comp, CategoricalDensity):
                values[p.name] = p.choices[comp.ppf(u)]
                continue
            lo, hi = support_of(target)
            values[p.name] = _to_native(target, _truncated_draw(comp, u, lo, hi))
        out.append(Configuration(values))
    return out


def mixture_pdf(ensemble: PriorEnsemble, j: int, t: float) -> float:
    """Mixture density of parameter ``j`` at transformed value (or category index) ``t``."""
    total = 0.0
    for comp, w in zip(ensemble.components[j], ensemble.weights[j]):
        if isinstance(comp, CategoricalDensity):
            total += w * comp.pmf(int(t))
        else:
            total += w * float(comp.pdf(t))
    return total


def density_at(ensemble: PriorEnsemble, config: Mapping[str, Any]) -> float:
    dens = 1.0
    for j, p in enumerate(ensemble.space.parameters):
        if p.name not in config or not p.contains(config[p.name]):
            return 0.0
        dens *= mixture_pdf(ensemble, j, p.to_transformed(config[p.name]))
        if dens == 0.0:
            return 0.0
    return dens


# ---------------------------------------------------------------------------
# lengthscale boxes


@dataclass(frozen=True)
class LengthscaleBox:
    """Per-dimension bounds on natural-log lengthscales."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi):
            raise ValueError("box bounds must have equal length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box needs lower <= upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return len(self.lower)

    @classmethod
    def default(cls, d: int) -> "LengthscaleBox":
        return cls((math.log(1e-2),) * d, (math.log(1e2),) * d)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LengthscaleBox":
        return cls(tuple(d["lower"]), tuple(d["upper"]))


def learn_lengthscale_box(best_lengthscales: Sequence[Sequence[float]], q_lo: float = DEFAULT_QUANTILES[0],
                          q_hi: float = DEFAULT_QUANTILES[1]) -> LengthscaleBox:
    ls = np.asarray(best_lengthscales, dtype=float)
    if ls.size == 0:
        raise ValueError("no lengthscale vectors given")
    if ls.ndim != 2 or ls.shape[0] < 2:
        raise ValueError("need at least 2 lengthscale vectors")
    if np.any(ls <= 0):
        raise ValueError("lengthscales must be positive")
    logs = np.log(ls)
    ref = LengthscaleBox.default(ls.shape[1])
    lower, upper = [], []
    for j in range(ls.shape[1]):
        lo, hi = (float(v) for v in np.quantile(logs[:, j], [q_lo, q_hi]))
        if hi <= lo:
            lo, hi = _widen(lo, hi, None)
            delta = 1e-3 * (ref.upper[j] - ref.lower[j])
            lo, hi = min(lo, lo - delta), max(hi, hi + delta)
        lower.append(lo)
        upper.append(hi)
    return LengthscaleBox(tuple(lower), tuple(upper))


# ---------------------------------------------------------------------------
# persistence


def save_priors(path: str | Path, ensemble: PriorEnsemble, box: LengthscaleBox | None = None) -> None:
    doc = ensemble.to_dict()
    if box is not None:
        doc["lengthscale_box"] = box.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_priors(path: str | Path) -> tuple[PriorEnsemble, LengthscaleBox | None]:
    doc = json.loads(Path(path).read_text())
    box = LengthscaleBox.from_dict(doc["lengthscale_box"]) if "lengthscale_box" in doc else None
    return PriorEnsemble.from_dict(doc), box


def default_priors_path() -> Path:
    return Path(__file__).parent / "data" / "priors.json"


def load_default_priors() -> tuple[PriorEnsemble, LengthscaleBox | None]:
    return load_priors(default_priors_path())
