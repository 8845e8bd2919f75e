"""Typed hyperparameter domains, configurations and sampling.

Every parameter has a *native* scale (what the trainer sees), a *transformed*
scale (base-10 exponent for log-scaled parameters, identity otherwise) and an
*encoded* scale in ``[0, 1]`` used as Gaussian-process input.
"""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import qmc

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)

NO_TRANSFORM = "none"
LOG10 = "log10-exponent"
TRANSFORMS = (NO_TRANSFORM, LOG10)

# Slack when checking membership of values that went through 10**x.
_DOMAIN_TOL = 1e-9


class DomainError(ValueError):
    """A value or configuration does not lie in its parameter's domain."""


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    choices: tuple[str, ...] | None = None
    transform: str = NO_TRANSFORM

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs choices")
            object.__setattr__(self, "choices", tuple(self.choices))
            if len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.name}: duplicate choices")
            if self.transform != NO_TRANSFORM:
                raise ValueError(f"{self.name}: transform only for continuous")
            return
        if self.lower is None or self.upper is None:
            raise ValueError(f"{self.name}: bounds required")
        if self.kind == CONTINUOUS:
            if not self.lower < self.upper:
                raise ValueError(f"{self.name}: need lower < upper")
        else:
            if self.transform != NO_TRANSFORM:
                raise ValueError(f"{self.name}: transform only for continuous")
            if int(self.lower) != self.lower or int(self.upper) != self.upper:
                raise ValueError(f"{self.name}: integer bounds must be integral")
            if self.lower > self.upper:
                raise ValueError(f"{self.name}: need lower <= upper")
            object.__setattr__(self, "lower", int(self.lower))
            object.__setattr__(self, "upper", int(self.upper))

    @property
    def is_log(self) -> bool:
        return self.transform == LOG10

    @property
    def n_choices(self) -> int:
        return len(self.choices) if self.choices else 0

    def to_transformed(self, value: Any) -> float:
        """Native value -> transformed coordinate (categoricals map to their index)."""
        if self.kind == CATEGORICAL:
            try:
                return float(self.choices.index(value))
            except ValueError:
                raise DomainError(f"{self.name}: {value!r} not in {self.choices}") from None
        value = float(value)
        if self.is_log:
            if value <= 0:
                raise DomainError(f"{self.name}: log-scaled value must be positive")
            return math.log10(value)
        return value

    def from_transformed(self, t: float) -> Any:
        if self.kind == CATEGORICAL:
            return self.choices[int(t)]
        if self.kind == INTEGER:
            return int(t)
        return float(10.0**t) if self.is_log else float(t)

    def contains(self, value: Any) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        if self.kind == INTEGER and float(value) != int(value):
            return False
        try:
            t = self.to_transformed(value)
        except DomainError:
            return False
        return self.lower - _DOMAIN_TOL <= t <= self.upper + _DOMAIN_TOL

    def encode(self, value: Any) -> float:
        if not self.contains(value):
            raise DomainError(f"{self.name}: {value!r} outside domain")
        return self.encode_unchecked(value)

    def encode_unchecked(self, value: Any) -> float:
        """Affine map to the unit interval without a domain check (may leave [0, 1])."""
        if self.kind == CATEGORICAL:
            k = self.n_choices
            return 0.0 if k == 1 else self.choices.index(value) / (k - 1)
        width = self.upper - self.lower
        if width == 0:
            return 0.0
        return (self.to_transformed(value) - self.lower) / width

    def decode(self, u: float) -> Any:
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == CATEGORICAL:
            idx = int(np.round(u * (self.n_choices - 1)))  # ties to even
            return self.choices[min(max(idx, 0), self.n_choices - 1)]
        t = self.lower + u * (self.upper - self.lower)
        if self.kind == INTEGER:
            return int(min(max(int(np.round(t)), self.lower), self.upper))
        t = min(max(t, self.lower), self.upper)
        return self.from_transformed(t)

    def from_unit_sample(self, u: float) -> Any:
        """Map a uniform draw on [0, 1) to a uniformly distributed native value."""
        if self.kind == CATEGORICAL:
            return self.choices[min(int(u * self.n_choices), self.n_choices - 1)]
        if self.kind == INTEGER:
            span = self.upper - self.lower + 1
            return int(min(self.lower + math.floor(u * span), self.upper))
        return self.from_transformed(self.lower + u * (self.upper - self.lower))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "lower": self.lower,
            "upper": self.upper,
            "choices": list(self.choices) if self.choices else None,
            "transform": self.transform,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Parameter":
        return cls(
            name=d["name"],
            kind=d["kind"],
            lower=d.get("lower"),
            upper=d.get("upper"),
            choices=tuple(d["choices"]) if d.get("choices") else None,
            transform=d.get("transform") or NO_TRANSFORM,
        )


class Configuration(Mapping):
    """Immutable name -> native value map."""

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Mapping):
            return self._values == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(sorted(self._values.items())))

    def __repr__(self) -> str:
        return f"Configuration({self._values!r})"

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)


@dataclass(frozen=True)
class SearchSpace:
    parameters: tuple[Parameter, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameters", tuple(self.parameters))
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        if not names:
            raise ValueError("search space needs at least one parameter")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def d(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def __getitem__(self, name: str) -> Parameter:
        return self.parameters[self._index[name]]

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        return self._index[name]

    def validate(self, config: Mapping[str, Any]) -> None:
        if set(config) != set(self._index):
            missing = set(self._index) - set(config)
            extra = set(config) - set(self._index)
            raise DomainError(f"config keys mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
        for p in self.parameters:
            if not p.contains(config[p.name]):
                raise DomainError(f"{p.name}={config[p.name]!r} outside domain")

    def is_valid(self, config: Mapping[str, Any]) -> bool:
        try:
            self.validate(config)
        except DomainError:
            return False
        return True

    def make(self, values: Mapping[str, Any]) -> Configuration:
        self.validate(values)
        return Configuration(values)

    def with_bounds(self, bounds: Mapping[str, Sequence[float]]) -> "SearchSpace":
        """Copy with some parameters' (transformed) bounds replaced."""
        unknown = set(bounds) - set(self._index)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        params = []
        for p in self.parameters:
            if p.name in bounds:
                if p.kind == CATEGORICAL:
                    raise ValueError(f"{p.name}: cannot set bounds on a categorical")
                lo, hi = bounds[p.name]
                p = Parameter(p.name, p.kind, lo, hi, None, p.transform)
            params.append(p)
        return SearchSpace(tuple(params))

    def to_dict(self) -> dict:
        return {"parameters": [p.to_dict() for p in self.parameters]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchSpace":
        return cls(tuple(Parameter.from_dict(p) for p in d["parameters"]))

    @classmethod
    def from_json(cls, text: str) -> "SearchSpace":
        return cls.from_dict(json.loads(text))


# Rows of the 12-d XGBoost table, ordered by importance rank.
_XGB12 = (
    Parameter("eta", CONTINUOUS, -5.0, 1.0, transform=LOG10),
    Parameter("max_depth", INTEGER, 1, 32),
    Parameter("max_delta_step", CONTINUOUS, 0.0, 10.0),
    Parameter("alpha", CONTINUOUS, 0.0, 10.0),
    Parameter("num_boost_round", INTEGER, 1, 500),
    Parameter("gamma", CONTINUOUS, 0.0, 5.0),
    Parameter("lambda", CONTINUOUS, 0.0, 10.0),
    Parameter("subsample", CONTINUOUS, 0.5, 1.0),
    Parameter("min_child_weight", CONTINUOUS, 1.0, 5.0),
    Parameter("tree_method", CATEGORICAL, choices=("approx", "hist")),
    Parameter("max_bin", INTEGER, 128, 512),
    Parameter("grow_policy", CATEGORICAL, choices=("depthwise", "lossguide")),
)
_MULCH5 = ("eta", "gamma", "max_depth", "min_child_weight", "num_boost_round")


def default_space(preset: str) -> SearchSpace:
    """Built-in spaces: ``xgb12``, ``mulch5`` or ``top<k>`` / ``top(k)``."""
    rows = {p.name: p for p in _XGB12}
    if preset == "xgb12":
        return SearchSpace(_XGB12)
    if preset == "mulch5":
        return SearchSpace(tuple(rows[n] for n in _MULCH5))
    if preset.startswith("top"):
        digits = preset[3:].strip("()-:")
        if not digits.isdigit():
            raise ValueError(f"unknown preset {preset!r}")
        k = int(digits)
        if not 1 <= k <= len(_XGB12):
            raise ValueError(f"top(k) needs 1 <= k <= {len(_XGB12)}, got {k}")
        return SearchSpace(_XGB12[:k])
    raise ValueError(f"unknown preset {preset!r}")


def load_space(spec: str) -> SearchSpace:
    """Resolve a preset name or a path to a JSON space document."""
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        return SearchSpace.from_json(path.read_text())
    return default_space(spec)


def unit_points(d: int, n: int, mode: str, seed: int) -> np.ndarray:
    """``n x d`` points in [0, 1)^d, i.i.d. uniform or scrambled Sobol."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "pseudo":
        return np.random.default_rng(seed).random((n, d))
    if mode == "quasi":
        sobol = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed))
        with warnings.catch_warnings():
            # balance warning for non-power-of-two n
            warnings.simplefilter("ignore", UserWarning)
            return sobol.random(n)
    raise ValueError(f"unknown sampling mode {mode!r}")


def sample(space: SearchSpace, n: int, mode: str = "pseudo", seed: int = 0) -> list[Configuration]:
    u = unit_points(space.d, n, mode, seed)
    return [configuration_from_unit(space, row) for row in u]


def configuration_from_unit(space: SearchSpace, u: Sequence[float]) -> Configuration:
    return Configuration({p.name: p.from_unit_sample(float(x)) for p, x in zip(space.parameters, u)})


def encode(space: SearchSpace, config: Mapping[str, Any]) -> np.ndarray:
    space.validate(config)
    return np.array([p.encode(config[p.name]) for p in space.parameters])


def encode_unchecked(space: SearchSpace, config: Mapping[str, Any]) -> np.ndarray:
    return np.array([p.encode_unchecked(config[p.name]) for p in space.parameters])


def decode(space: SearchSpace, vector: Sequence[float]) -> Configuration:
    vector = np.asarray(vector, dtype=float).ravel()
    if vector.shape[0] != space.d:
        raise ValueError(f"expected a {space.d}-vector, got {vector.shape[0]}")
    return Configuration({p.name: p.decode(u) for p, u in zip(space.parameters, vector)})
