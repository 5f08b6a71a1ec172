"""Bounded STL/weighted-STL formula trees over multi-drone traces.

Formulas are immutable after construction and safe to share between
threads. Temporal intervals are given in seconds and converted to sample
indices on demand; conversion is strict by default (off-grid endpoints
are rejected, not shifted) with opt-in round-to-nearest.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, DegenerateSegment, IntervalError, NonPositiveWeight

# Node kinds. Implication is stored explicitly but lowered to
# Or(Not(lhs), rhs) before any evaluation, so only one semantics exists.
TRUE = "true"
ATOM = "atom"
NOT = "not"
AND = "and"
OR = "or"
ALWAYS = "always"
EVENTUALLY = "eventually"
NEXT = "next"
UNTIL = "until"
IMPLIES = "implies"

TEMPORAL_KINDS = (ALWAYS, EVENTUALLY, NEXT, UNTIL)
_ARITY = {TRUE: 0, ATOM: 0, NOT: 1, ALWAYS: 1, EVENTUALLY: 1, NEXT: 1,
          UNTIL: 2, IMPLIES: 2}

_node_counter = itertools.count()

_GRID_RTOL = 1e-6


@dataclass(frozen=True)
class Interval:
    """Closed time interval [lo, hi] in seconds, both endpoints finite."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise IntervalError(f"interval endpoints must be finite, got [{self.lo}, {self.hi}]")
        if self.lo < 0:
            raise IntervalError(f"interval start must be >= 0, got {self.lo}")
        if self.hi < self.lo:
            raise IntervalError(f"interval reversed: [{self.lo}, {self.hi}]")

    def to_steps(self, ts: float, snap: bool = False) -> tuple[int, int]:
        """Convert to inclusive sample-index offsets on the grid with period ts.

        Raises IntervalError if an endpoint is off the grid, unless
        ``snap`` opts into round-to-nearest.
        """
        return (_seconds_to_steps(self.lo, ts, snap),
                _seconds_to_steps(self.hi, ts, snap))

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _seconds_to_steps(seconds: float, ts: float, snap: bool) -> int:
    if ts <= 0:
        raise IntervalError(f"sampling period must be positive, got {ts}")
    raw = seconds / ts
    k = int(round(raw))
    if not snap and abs(raw - k) > _GRID_RTOL * max(1.0, abs(raw)):
        raise IntervalError(
            f"time {seconds} s is not a multiple of the sampling period {ts} s "
            f"(off by {abs(raw - k) * ts:.3g} s); pass snap=True to round")
    return k


# Predicate kinds.
BOX_INSIDE = "box_inside"
BOX_OUTSIDE = "box_outside"
MIN_SEPARATION = "min_separation"
SEGMENT_BAND = "segment_band"
VELOCITY_BOX = "velocity_box"


@dataclass(frozen=True)
class Predicate:
    """Atomic proposition with a real-valued margin over one fleet state.

    ``subject`` is a drone index, or an (i, j) pair for min_separation.
    Geometry fields are used per kind:
      box_inside / box_outside / velocity_box: lower, upper (per-axis)
      min_separation: threshold (meters)
      segment_band: seg_start, seg_end, standoff, tolerance
    """

    name: str
    kind: str
    subject: tuple
    lower: tuple = None
    upper: tuple = None
    threshold: float = None
    seg_start: tuple = None
    seg_end: tuple = None
    standoff: float = None
    tolerance: float = None
    scale: float = 1.0  # multiplies the margin; lets callers re-balance units

    def __post_init__(self):
        if self.scale <= 0 or not math.isfinite(self.scale):
            raise ValueError(f"{self.name}: margin scale must be finite and > 0")
        if self.kind in (BOX_INSIDE, BOX_OUTSIDE, VELOCITY_BOX):
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if lo.shape != (3,) or hi.shape != (3,):
                raise ValueError(f"{self.name}: box bounds must be 3-vectors")
            if not np.all(lo < hi):
                raise ValueError(f"{self.name}: box must satisfy lower < upper on every axis")
        elif self.kind == MIN_SEPARATION:
            if self.threshold is None or self.threshold <= 0:
                raise ValueError(f"{self.name}: separation threshold must be positive")
            if len(self.subject) != 2 or self.subject[0] == self.subject[1]:
                raise ValueError(f"{self.name}: min_separation needs two distinct drones")
        elif self.kind == SEGMENT_BAND:
            a = np.asarray(self.seg_start, float)
            b = np.asarray(self.seg_end, float)
            if np.linalg.norm(b - a) == 0.0:
                raise DegenerateSegment(f"{self.name}: segment endpoints coincide")
            if self.standoff - self.tolerance <= 0:
                raise ValueError(
                    f"{self.name}: band must satisfy 0 < standoff - tolerance "
                    f"(got {self.standoff} - {self.tolerance})")
        else:
            raise ValueError(f"unknown predicate kind {self.kind!r}")

    # Factories ------------------------------------------------------------

    @staticmethod
    def box_inside(name, drone, lower, upper):
        return Predicate(name, BOX_INSIDE, (int(drone),),
                         lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @staticmethod
    def box_outside(name, drone, lower, upper):
        return Predicate(name, BOX_OUTSIDE, (int(drone),),
                         lower=tuple(map(float, lower)), upper=tuple(map(float, upper)))

    @staticmethod
    def min_separation(name, drone_a, drone_b, threshold):
        return Predicate(name, MIN_SEPARATION, (int(drone_a), int(drone_b)),
                         threshold=float(threshold))

    @staticmethod
    def segment_band(name, drone, seg_start, seg_end, standoff, tolerance):
        return Predicate(name, SEGMENT_BAND, (int(drone),),
                         seg_start=tuple(map(float, seg_start)),
                         seg_end=tuple(map(float, seg_end)),
                         standoff=float(standoff), tolerance=float(tolerance))

    @staticmethod
    def velocity_box(name, drone, lower, upper, scale=1.0):
        return Predicate(name, VELOCITY_BOX, (int(drone),),
                         lower=tuple(map(float, lower)), upper=tuple(map(float, upper)),
                         scale=float(scale))

    @property
    def drones(self) -> tuple:
        return self.subject


@dataclass(frozen=True)
class Formula:
    """Immutable formula tree node.

    ``node_id`` is unique in the tree (enforced at composition) and is
    the key for weight attachment and per-node robustness reports.
    """

    kind: str
    children: tuple = ()
    interval: Interval = None
    predicate: Predicate = None
    node_id: str = None
    all_ids: frozenset = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.node_id is None:
            object.__setattr__(self, "node_id", f"n{next(_node_counter)}")
        ids = {self.node_id}
        for child in self.children:
            if ids & child.all_ids:
                raise ArityError(
                    f"duplicate node_id under {self.node_id!r}: "
                    f"{sorted(ids & child.all_ids)} (formulas are trees, not DAGs)")
            ids |= child.all_ids
        object.__setattr__(self, "all_ids", frozenset(ids))

    def __iter__(self):
        yield self
        for child in self.children:
            yield from child


def compose(kind: str, children, interval=None, predicate=None, label=None) -> Formula:
    """Build a formula node, checking arity and interval presence."""
    children = tuple(children)
    if kind in (AND, OR):
        if not children:
            raise ArityError(f"{kind} needs at least one operand")
    elif kind in _ARITY:
        if len(children) != _ARITY[kind]:
            raise ArityError(f"{kind} takes {_ARITY[kind]} children, got {len(children)}")
    else:
        raise ArityError(f"unknown node kind {kind!r}")

    if kind in TEMPORAL_KINDS:
        if interval is None:
            raise IntervalError(f"{kind} requires an interval")
        if not isinstance(interval, Interval):
            interval = Interval(float(interval[0]), float(interval[1]))
    elif interval is not None:
        raise IntervalError(f"{kind} does not take an interval")

    if kind == ATOM and predicate is None:
        raise ArityError("atom requires a predicate")

    return Formula(kind, children, interval, predicate, node_id=label)


# Convenience constructors used throughout the package and tests.

def true(label=None):
    return compose(TRUE, [], label=label)


def atom(predicate, label=None):
    return compose(ATOM, [], predicate=predicate, label=label or predicate.name)


def neg(child, label=None):
    return compose(NOT, [child], label=label)


def land(*children, label=None):
    return compose(AND, children, label=label)


def lor(*children, label=None):
    return compose(OR, children, label=label)


def always(interval, child, label=None):
    return compose(ALWAYS, [child], interval=interval, label=label)


def eventually(interval, child, label=None):
    return compose(EVENTUALLY, [child], interval=interval, label=label)


def next_step(interval, child, label=None):
    return compose(NEXT, [child], interval=interval, label=label)


def until(interval, lhs, rhs, label=None):
    return compose(UNTIL, [lhs, rhs], interval=interval, label=label)


def implies(lhs, rhs, label=None):
    return compose(IMPLIES, [lhs, rhs], label=label)


def horizon(formula: Formula) -> float:
    """Minimal trace duration (seconds) needed to evaluate the formula at t=0."""
    k = formula.kind
    if k in (TRUE, ATOM):
        return 0.0
    if k in (NOT,):
        return horizon(formula.children[0])
    if k in (AND, OR, IMPLIES):
        return max(horizon(c) for c in formula.children)
    if k in (ALWAYS, EVENTUALLY, NEXT):
        return formula.interval.hi + horizon(formula.children[0])
    if k == UNTIL:
        return formula.interval.hi + max(horizon(c) for c in formula.children)
    raise ArityError(f"unknown node kind {k!r}")


class WeightMap:
    """Positive weights attached to formula nodes by node_id.

    A Boolean node's weights are per operand; a temporal node's weights
    are per sample of its window. Missing entries default to all-ones,
    which makes weighted evaluation coincide with the unweighted one.
    """

    def __init__(self, mapping=None):
        self._map = {}
        for node_id, weights in (mapping or {}).items():
            self.set(node_id, weights)

    def set(self, node_id: str, weights):
        arr = np.atleast_1d(np.asarray(weights, float))
        if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
            raise NonPositiveWeight(f"weights for {node_id!r} must be finite and > 0: {arr}")
        self._map[node_id] = arr

    def get(self, node_id: str, arity: int) -> np.ndarray:
        arr = self._map.get(node_id)
        if arr is None:
            return np.ones(arity)
        if arr.size == 1 and arity != 1:
            return np.full(arity, arr[0])
        if arr.size != arity:
            raise NonPositiveWeight(
                f"weights for {node_id!r} have size {arr.size}, node arity is {arity}")
        return arr

    def has(self, node_id: str) -> bool:
        return node_id in self._map

    def items(self):
        return self._map.items()

    def __len__(self):
        return len(self._map)


# JSON round trip -----------------------------------------------------------

def _predicate_to_dict(p: Predicate) -> dict:
    d = {"name": p.name, "kind": p.kind, "subject": list(p.subject)}
    for key in ("lower", "upper", "seg_start", "seg_end"):
        value = getattr(p, key)
        if value is not None:
            d[key] = list(value)
    for key in ("threshold", "standoff", "tolerance"):
        value = getattr(p, key)
        if value is not None:
            d[key] = value
    if p.scale != 1.0:
        d["scale"] = p.scale
    return d


def _predicate_from_dict(d: dict) -> Predicate:
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
              if k not in ("name", "kind", "subject")}
    return Predicate(d["name"], d["kind"], tuple(d["subject"]), **kwargs)


def formula_to_dict(f: Formula) -> dict:
    d = {"kind": f.kind, "node_id": f.node_id}
    if f.interval is not None:
        d["interval"] = [f.interval.lo, f.interval.hi]
    if f.predicate is not None:
        d["predicate"] = _predicate_to_dict(f.predicate)
    if f.children:
        d["children"] = [formula_to_dict(c) for c in f.children]
    return d


def formula_from_dict(d: dict) -> Formula:
    children = [formula_from_dict(c) for c in d.get("children", [])]
    interval = Interval(*d["interval"]) if "interval" in d else None
    predicate = _predicate_from_dict(d["predicate"]) if "predicate" in d else None
    return compose(d["kind"], children, interval=interval, predicate=predicate,
                   label=d["node_id"])


def formula_to_json(f: Formula, indent=None) -> str:
    return json.dumps(formula_to_dict(f), indent=indent)


def formula_from_json(text: str) -> Formula:
    return formula_from_dict(json.loads(text))
