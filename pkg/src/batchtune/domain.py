"""Search-space definitions: parsing, sampling and unit-cube encoding.

A search space maps parameter names to one of three domain kinds:

* :class:`Continuous` -- ``uniform`` on ``[loc, loc + scale]`` or base-10
  ``loguniform`` where ``log10(v)`` is uniform on ``[loc, loc + scale]``.
* :class:`IntRange` -- integers in the half-open interval ``[lo, hi)``.
* :class:`Categorical` -- an ordered list of distinct strings.

New kinds are added by subclassing :class:`ParameterDomain` and teaching
:func:`parse_space`, :func:`serialize_space` and the encoder about them.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Union

import numpy as np

Value = Union[float, int, str]
Configuration = dict[str, Value]

#: Monte-Carlo acquisition budget: samples per encoded dimension and clamps.
MC_SAMPLES_PER_DIM = 1000
MC_BUDGET_MIN = 2000
MC_BUDGET_MAX = 20000

_CONTINUOUS_KINDS = ("uniform", "loguniform")


class SpaceError(ValueError):
    """Raised for malformed or invalid search-space definitions."""

    def __init__(self, message: str, param: str | None = None):
        self.param = param
        if param is not None:
            message = f"parameter {param!r}: {message}"
        super().__init__(message)


class DomainValueError(ValueError):
    """Raised when a configuration value lies outside its parameter domain."""


class ParameterDomain:
    """Base class for the closed set of supported parameter domains."""

    #: number of columns this domain occupies in the encoded vector
    width: int = 1

    def validate(self, name: str) -> None:
        raise NotImplementedError

    def contains(self, value: Any) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Continuous(ParameterDomain):
    dist: str
    loc: float
    scale: float

    def validate(self, name: str) -> None:
        if self.dist not in _CONTINUOUS_KINDS:
            raise SpaceError(f"unknown distribution {self.dist!r}", name)
        if not (math.isfinite(self.loc) and math.isfinite(self.scale)):
            raise SpaceError("loc and scale must be finite", name)
        if self.scale <= 0:
            raise SpaceError(f"scale must be > 0, got {self.scale}", name)

    @property
    def bounds(self) -> tuple[float, float]:
        """Inclusive value bounds."""
        if self.dist == "loguniform":
            return 10.0**self.loc, 10.0 ** (self.loc + self.scale)
        return self.loc, self.loc + self.scale

    def contains(self, value: Any) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
            return False
        lo, hi = self.bounds
        return math.isfinite(value) and lo <= value <= hi


@dataclass(frozen=True)
class IntRange(ParameterDomain):
    lo: int
    hi: int

    def validate(self, name: str) -> None:
        if self.lo >= self.hi:
            raise SpaceError(f"empty range: lo ({self.lo}) >= hi ({self.hi})", name)

    def contains(self, value: Any) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            return False
        return self.lo <= value < self.hi


@dataclass(frozen=True)
class Categorical(ParameterDomain):
    choices: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))

    @property
    def width(self) -> int:  # type: ignore[override]
        return len(self.choices)

    def validate(self, name: str) -> None:
        if not self.choices:
            raise SpaceError("choices must be non-empty", name)
        if not all(isinstance(c, str) for c in self.choices):
            raise SpaceError("choices must be strings", name)
        if len(set(self.choices)) != len(self.choices):
            raise SpaceError("choices must be distinct", name)

    def contains(self, value: Any) -> bool:
        return isinstance(value, str) and value in self.choices


def uniform(loc: float, scale: float) -> Continuous:
    """Uniform on ``[loc, loc + scale]`` (scipy.stats loc/scale convention)."""
    return Continuous("uniform", float(loc), float(scale))


def loguniform(loc: float, scale: float) -> Continuous:
    """``10**u`` with ``u`` uniform on ``[loc, loc + scale]``."""
    return Continuous("loguniform", float(loc), float(scale))


class SearchSpace(Mapping[str, ParameterDomain]):
    """Ordered, validated mapping from parameter names to domains.

    Plain Python constructs are accepted as shorthand: a ``range`` becomes an
    :class:`IntRange` and a list/tuple of strings a :class:`Categorical`.

        >>> space = SearchSpace({"gamma": uniform(0.1, 4), "C": loguniform(-7, 7),
        ...                      "depth": range(1, 10), "kernel": ["rbf", "linear"]})
        >>> space.encoded_dim
        5
    """

    def __init__(self, params: Mapping[str, Any]):
        if not params:
            raise SpaceError("search space needs at least one parameter")
        self._params: dict[str, ParameterDomain] = {}
        for name, dom in params.items():
            if not isinstance(name, str) or not name:
                raise SpaceError("parameter names must be non-empty strings", str(name))
            dom = _coerce_domain(name, dom)
            dom.validate(name)
            self._params[name] = dom
        offsets = []
        pos = 0
        for dom in self._params.values():
            offsets.append(pos)
            pos += dom.width
        self._offsets = offsets
        self._encoded_dim = pos

    def __getitem__(self, name: str) -> ParameterDomain:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SearchSpace):
            return NotImplemented
        return list(self._params.items()) == list(other._params.items())

    def __repr__(self) -> str:
        return f"SearchSpace({self._params!r})"

    @property
    def encoded_dim(self) -> int:
        """Length of an encoded point (one-hot categoricals counted per choice)."""
        return self._encoded_dim

    def validate(self, cfg: Mapping[str, Any]) -> None:
        """Raise :class:`DomainValueError` unless ``cfg`` is a valid configuration."""
        if set(cfg) != set(self._params):
            missing = set(self._params) - set(cfg)
            extra = set(cfg) - set(self._params)
            raise DomainValueError(f"configuration keys mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, dom in self._params.items():
            if not dom.contains(cfg[name]):
                raise DomainValueError(f"value {cfg[name]!r} outside domain of {name!r}")

    def is_valid(self, cfg: Mapping[str, Any]) -> bool:
        try:
            self.validate(cfg)
        except DomainValueError:
            return False
        return True


def _coerce_domain(name: str, dom: Any) -> ParameterDomain:
    if isinstance(dom, ParameterDomain):
        return dom
    if isinstance(dom, range):
        if dom.step != 1:
            raise SpaceError("only unit-step ranges are supported", name)
        return IntRange(dom.start, dom.stop)
    if isinstance(dom, (list, tuple)):
        return Categorical(tuple(dom))
    raise SpaceError(f"unsupported domain {dom!r}", name)


# ---------------------------------------------------------------------------
# Space file format


def _no_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, val in pairs:
        if key in out:
            raise SpaceError("duplicate parameter name", key)
        out[key] = val
    return out


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _domain_from_entry(name: str, entry: Any) -> ParameterDomain:
    if not isinstance(entry, dict):
        raise SpaceError("definition must be an object", name)
    keys = set(entry)
    if "dist" in entry:
        if keys != {"dist", "loc", "scale"}:
            raise SpaceError(f"distribution needs exactly dist/loc/scale, got {sorted(keys)}", name)
        if entry["dist"] not in _CONTINUOUS_KINDS:
            raise SpaceError(f"unknown distribution {entry['dist']!r}", name)
        if not (_is_number(entry["loc"]) and _is_number(entry["scale"])):
            raise SpaceError("loc and scale must be numbers", name)
        return Continuous(entry["dist"], float(entry["loc"]), float(entry["scale"]))
    if "range" in entry:
        bounds = entry["range"]
        if keys != {"range"} or not isinstance(bounds, list) or len(bounds) != 2:
            raise SpaceError("range must be [lo, hi]", name)
        if not all(isinstance(b, int) and not isinstance(b, bool) for b in bounds):
            raise SpaceError("range bounds must be integers", name)
        return IntRange(bounds[0], bounds[1])
    if "choices" in entry:
        choices = entry["choices"]
        if keys != {"choices"} or not isinstance(choices, list):
            raise SpaceError("choices must be a list", name)
        return Categorical(tuple(choices))
    raise SpaceError(f"unrecognised definition keys {sorted(keys)}", name)


def parse_space(text: str | bytes) -> SearchSpace:
    """Parse a JSON space document into a validated :class:`SearchSpace`."""
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SpaceError(f"malformed space document: {exc}") from exc
    if not isinstance(doc, dict):
        raise SpaceError("space document must be a JSON object")
    return SearchSpace({name: _domain_from_entry(name, entry) for name, entry in doc.items()})


def load_space(path: str) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        return parse_space(fh.read())


def space_to_dict(space: SearchSpace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for name, dom in space.items():
        if isinstance(dom, Continuous):
            out[name] = {"dist": dom.dist, "loc": dom.loc, "scale": dom.scale}
        elif isinstance(dom, IntRange):
            out[name] = {"range": [dom.lo, dom.hi]}
        elif isinstance(dom, Categorical):
            out[name] = {"choices": list(dom.choices)}
        else:
            raise TypeError(f"cannot serialise domain {dom!r}")
    return out


def serialize_space(space: SearchSpace) -> str:
    return json.dumps(space_to_dict(space), indent=2)


# ---------------------------------------------------------------------------
# Sampling and encoding


class SampleSet:
    """A batch of random configurations held column-wise with their encoding.

    Acquisition scores thousands of samples per call, so configurations are
    only materialised as dicts on demand via :meth:`config`.
    """

    def __init__(self, space: SearchSpace, columns: dict[str, np.ndarray], encoded: np.ndarray):
        self.space = space
        self.columns = columns
        self.encoded = encoded

    def __len__(self) -> int:
        return self.encoded.shape[0]

    def config(self, i: int) -> Configuration:
        out: Configuration = {}
        for name, dom in self.space.items():
            v = self.columns[name][i]
            if isinstance(dom, Continuous):
                out[name] = float(v)
            elif isinstance(dom, IntRange):
                out[name] = int(v)
            else:
                out[name] = dom.choices[int(v)]
        return out

    def configs(self) -> list[Configuration]:
        return [self.config(i) for i in range(len(self))]


def draw_samples(space: SearchSpace, n: int, rng: np.random.Generator) -> SampleSet:
    """Draw ``n`` i.i.d. configurations; categorical columns hold choice indices."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    columns: dict[str, np.ndarray] = {}
    enc = np.zeros((n, space.encoded_dim))
    for (name, dom), off in zip(space.items(), space._offsets):
        if isinstance(dom, Continuous):
            u = rng.uniform(0.0, 1.0, size=n)
            raw = dom.loc + dom.scale * u
            columns[name] = 10.0**raw if dom.dist == "loguniform" else raw
            enc[:, off] = u
        elif isinstance(dom, IntRange):
            vals = rng.integers(dom.lo, dom.hi, size=n)
            columns[name] = vals
            enc[:, off] = _int_unit(dom, vals)
        elif isinstance(dom, Categorical):
            idx = rng.integers(0, len(dom.choices), size=n)
            columns[name] = idx
            enc[np.arange(n), off + idx] = 1.0
        else:
            raise TypeError(f"unsupported domain {dom!r}")
    return SampleSet(space, columns, enc)


def sample_configurations(space: SearchSpace, n: int, rng: np.random.Generator) -> list[Configuration]:
    """Draw ``n`` i.i.d. valid configurations, deterministic given ``rng`` state."""
    return draw_samples(space, n, rng).configs()


def _int_unit(dom: IntRange, v: Any) -> Any:
    span = dom.hi - 1 - dom.lo
    if span == 0:
        return np.zeros_like(np.asarray(v, dtype=float))
    return (np.asarray(v, dtype=float) - dom.lo) / span


def encode(space: SearchSpace, cfg: Mapping[str, Any]) -> np.ndarray:
    """Map a configuration into the unit hypercube ``[0, 1]**encoded_dim``."""
    space.validate(cfg)
    out = np.zeros(space.encoded_dim)
    for (name, dom), off in zip(space.items(), space._offsets):
        v = cfg[name]
        if isinstance(dom, Continuous):
            if dom.dist == "loguniform":
                c = (math.log10(v) - dom.loc) / dom.scale
            else:
                c = (v - dom.loc) / dom.scale
            out[off] = min(max(c, 0.0), 1.0)
        elif isinstance(dom, IntRange):
            out[off] = float(_int_unit(dom, v))
        else:
            out[off + dom.choices.index(v)] = 1.0
    return out


def decode(space: SearchSpace, point: Sequence[float] | np.ndarray) -> Configuration:
    """Inverse of :func:`encode`.

    Integers round to the nearest valid value; categorical blocks take the
    argmax with ties resolved to the lowest index.
    """
    p = np.asarray(point, dtype=float)
    if p.shape != (space.encoded_dim,):
        raise DomainValueError(f"expected point of dimension {space.encoded_dim}, got shape {p.shape}")
    out: Configuration = {}
    for (name, dom), off in zip(space.items(), space._offsets):
        if isinstance(dom, Continuous):
            c = min(max(float(p[off]), 0.0), 1.0)
            raw = dom.loc + c * dom.scale
            v = 10.0**raw if dom.dist == "loguniform" else raw
            lo, hi = dom.bounds
            out[name] = min(max(v, lo), hi)
        elif isinstance(dom, IntRange):
            span = dom.hi - 1 - dom.lo
            c = min(max(float(p[off]), 0.0), 1.0)
            out[name] = dom.lo + int(math.floor(c * span + 0.5))
        else:
            block = p[off : off + dom.width]
            if not np.any(block > 0):
                raise DomainValueError(f"categorical block for {name!r} has no positive entry")
            out[name] = dom.choices[int(np.argmax(block))]
    return out


def default_mc_budget(space: SearchSpace) -> int:
    """Monte-Carlo sample count used to maximise the acquisition function."""
    return int(min(max(MC_SAMPLES_PER_DIM * space.encoded_dim, MC_BUDGET_MIN), MC_BUDGET_MAX))
