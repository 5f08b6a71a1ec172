"""Scenario model and compilation into the mission formula.

The mission conjoins, per drone, an always-clause over workspace,
obstacle, and mutual-separation predicates; per target, an eventually
clause demanding some capable drone hold the target box for the dwell
time; per blade side, the same with a box-plus-distance-band predicate;
and per drone, a return-home clause plus a stay-home clause (once home
after the first second, remain home at the next sample).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import stl
from .dynamics import DroneLimits, Trace
from .errors import InfeasibleWindow, NoCapableDrone, ValidationError


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValidationError(f"box bounds must be 3-vectors: {self.lower}, {self.upper}")
        if not np.all(lo < hi):
            raise ValidationError(f"degenerate box: {self.lower} !< {self.upper}")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point)
        return bool(np.all(p > np.asarray(self.lower) + margin)
                    and np.all(p < np.asarray(self.upper) - margin))


@dataclass(frozen=True)
class BladeSide:
    """One inspectable side of a blade: the blade segment plus the corridor
    box the drone must occupy while holding the standoff band."""

    seg_start: tuple  # leading-edge end of the blade segment
    seg_end: tuple    # rotor-shaft end
    box: Box
    blade_id: int = 0

    def __post_init__(self):
        a = np.asarray(self.seg_start, float)
        b = np.asarray(self.seg_end, float)
        if np.linalg.norm(b - a) == 0.0:
            raise ValidationError("blade segment endpoints coincide")
        object.__setattr__(self, "seg_start", tuple(a))
        object.__setattr__(self, "seg_end", tuple(b))


@dataclass(frozen=True)
class Target:
    box: Box
    yaw: float = 0.0  # camera heading held while dwelling in this box


@dataclass
class Scenario:
    """Everything the planner needs: geometry, fleet, timing, weights."""

    workspace: Box
    obstacles: list
    targets: list
    blades: list
    depots: np.ndarray          # (drones, 3)
    limits: list                # DroneLimits per drone
    home_boxes: list            # Box per drone
    mission_duration: float
    inspect_duration: float
    blade_duration: float
    ts: float
    min_separation: float
    blade_standoff: float
    standoff_tolerance: float
    margin: float = 0.2         # smooth-robustness buffer demanded of a plan
    sharpness: float = 10.0
    trigger_radius: float = 1.0
    weights: dict = field(default_factory=dict)
    capability: list = None     # per drone: {"targets": set | None, "blades": set | None}

    def __post_init__(self):
        self.depots = np.asarray(self.depots, float)
        if self.depots.ndim != 2 or self.depots.shape[1] != 3:
            raise ValidationError("fleet.depots must be a list of 3-D points")
        if len(self.limits) != self.n_drones or len(self.home_boxes) != self.n_drones:
            raise ValidationError("fleet.limits and fleet.home_boxes must match depot count")
        if self.capability is None:
            self.capability = [{"targets": None, "blades": None}] * self.n_drones
        for label, value in (("timing.mission", self.mission_duration),
                             ("timing.inspect", self.inspect_duration),
                             ("timing.blade", self.blade_duration)):
            if value <= 0:
                raise ValidationError(f"{label} must be positive")
            steps = value / self.ts
            if abs(steps - round(steps)) > 1e-6:
                raise ValidationError(f"{label} = {value} is not a multiple of ts = {self.ts}")
        if self.inspect_duration > self.mission_duration:
            raise ValidationError("timing.inspect exceeds timing.mission")
        if self.blade_duration > self.mission_duration:
            raise ValidationError("timing.blade exceeds timing.mission")
        if self.blade_standoff - self.standoff_tolerance <= 0:
            raise ValidationError("thresholds: blade_standoff - standoff_tolerance must be > 0")
        for d, depot in enumerate(self.depots):
            if not self.workspace.contains(depot):
                raise ValidationError(f"fleet.depots[{d}] lies outside the workspace")
            for q, obstacle in enumerate(self.obstacles):
                if obstacle.contains(depot):
                    raise ValidationError(f"fleet.depots[{d}] lies inside obstacles[{q}]")

    @property
    def n_drones(self) -> int:
        return self.depots.shape[0]

    @property
    def n_samples(self) -> int:
        """Mission sample count N; a mission trace has N+1 states."""
        return int(round(self.mission_duration / self.ts))

    def capable_drones(self, kind: str, index: int) -> list:
        allowed = []
        for d in range(self.n_drones):
            mask = self.capability[d].get(kind)
            if mask is None or index in mask:
                allowed.append(d)
        return allowed

    def class_weight(self, name: str) -> float:
        return float(self.weights.get(name, 1.0))


# ---------------------------------------------------------------------------
# Geometry helpers


def dist_to_blade(point, seg_start, seg_end) -> float:
    """Euclidean distance from a point to the blade segment (projection
    clamped to the segment)."""
    p = np.asarray(point, float)
    a = np.asarray(seg_start, float)
    u = np.asarray(seg_end, float) - a
    denom = float(u @ u)
    if denom == 0.0:
        from .errors import DegenerateSegment
        raise DegenerateSegment("blade segment endpoints coincide")
    s = min(1.0, max(0.0, float((p - a) @ u) / denom))
    return float(np.linalg.norm(p - (a + s * u)))


def band_robustness(dist: float, standoff: float, tolerance: float) -> float:
    """Signed margin of being strictly inside the standoff band."""
    if standoff - tolerance <= 0:
        raise ValidationError("band requires 0 < standoff - tolerance")
    return min(dist - (standoff - tolerance), (standoff + tolerance) - dist)


# ---------------------------------------------------------------------------
# Mission compilation


def _safety_clause(scenario, d, duration):
    """Always-clause over workspace, obstacles, and pairwise separation.

    An empty obstacle (or single-drone separation) conjunct is pruned
    rather than carried as a vacuous truth.
    """
    conjuncts = []
    weights = []
    ws = stl.atom(stl.Predicate.box_inside(
        f"in_workspace[{d}]", d, scenario.workspace.lower, scenario.workspace.upper),
        label=f"workspace[{d}]")
    conjuncts.append(ws)
    weights.append(scenario.class_weight("workspace"))
    if scenario.obstacles:
        atoms = [stl.atom(stl.Predicate.box_outside(
            f"clear_obstacle[{d},{q}]", d, box.lower, box.upper))
            for q, box in enumerate(scenario.obstacles)]
        conjuncts.append(stl.land(*atoms, label=f"obstacles[{d}]"))
        weights.append(scenario.class_weight("obstacle"))
    if scenario.n_drones > 1:
        pairs = [stl.atom(stl.Predicate.min_separation(
            f"separation[{d},{m}]", d, m, scenario.min_separation))
            for m in range(scenario.n_drones) if m != d]
        conjuncts.append(stl.land(*pairs, label=f"separation[{d}]"))
        weights.append(scenario.class_weight("separation"))
    if len(conjuncts) == 1:
        body = conjuncts[0]
        safety_weights = {}
    else:
        body = stl.land(*conjuncts, label=f"safety_body[{d}]")
        safety_weights = {body.node_id: weights}
    clause = stl.always(stl.Interval(0.0, duration), body, label=f"safety[{d}]")
    return clause, safety_weights


def _target_clause(scenario, q):
    window = scenario.mission_duration - scenario.inspect_duration
    if window < 0:
        raise InfeasibleWindow(f"targets[{q}]: inspect duration exceeds the mission")
    capable = scenario.capable_drones("targets", q)
    if not capable:
        raise NoCapableDrone(f"targets[{q}] has no capable drone")
    box = scenario.targets[q].box
    dwells = [stl.always(stl.Interval(0.0, scenario.inspect_duration),
                         stl.atom(stl.Predicate.box_inside(
                             f"in_target[{q},{d}]", d, box.lower, box.upper)))
              for d in capable]
    body = dwells[0] if len(dwells) == 1 else stl.lor(*dwells, label=f"target_any[{q}]")
    return stl.eventually(stl.Interval(0.0, window), body, label=f"target[{q}]")


def _blade_clause(scenario, q):
    window = scenario.mission_duration - scenario.blade_duration
    if window < 0:
        raise InfeasibleWindow(f"blades[{q}]: blade duration exceeds the mission")
    capable = scenario.capable_drones("blades", q)
    if not capable:
        raise NoCapableDrone(f"blades[{q}] has no capable drone")
    side = scenario.blades[q]
    dwells = []
    for d in capable:
        inside = stl.atom(stl.Predicate.box_inside(
            f"in_blade_box[{q},{d}]", d, side.box.lower, side.box.upper))
        band = stl.atom(stl.Predicate.segment_band(
            f"blade_band[{q},{d}]", d, side.seg_start, side.seg_end,
            scenario.blade_standoff, scenario.standoff_tolerance))
        hold = stl.land(inside, band)
        dwells.append(stl.always(stl.Interval(0.0, scenario.blade_duration), hold))
    body = dwells[0] if len(dwells) == 1 else stl.lor(*dwells, label=f"blade_any[{q}]")
    return stl.eventually(stl.Interval(0.0, window), body, label=f"blade[{q}]")


def _home_clauses(scenario, d):
    box = scenario.home_boxes[d]
    t_end = scenario.mission_duration
    home_pred = lambda tag: stl.atom(stl.Predicate.box_inside(  # noqa: E731
        f"in_home[{d}]{tag}", d, box.lower, box.upper))
    arrive = stl.eventually(stl.Interval(1.0, t_end), home_pred(""), label=f"home[{d}]")
    # Once home (after the first second), be home again within the
    # lookahead. The successor is a window, not a single sample: a
    # one-sample successor would cap the robustness of any plan at
    # roughly v * ts, the signed distance reachable between adjacent
    # samples while crossing the box boundary, and a short window caps
    # it at the distance coverable within the window. Leaving at the
    # very end stays allowed; the overall horizon stays the mission end.
    lookahead = min(2.0, t_end - 1.0)
    lookahead = round(lookahead / scenario.ts) * scenario.ts
    stay = stl.always(stl.Interval(1.0, t_end - lookahead),
                      stl.implies(home_pred("@now"),
                                  stl.eventually(stl.Interval(scenario.ts, lookahead),
                                                 home_pred("@next"))),
                      label=f"stay_home[{d}]")
    return arrive, stay


def compile_mission(scenario: Scenario):
    """Compile the scenario into (formula, weights).

    The top-level conjunction carries the task-class weights; each
    per-drone safety conjunction carries the workspace/obstacle/
    separation class weights.
    """
    duration = scenario.mission_duration
    conjuncts = []
    top_weights = []
    weight_entries = {}

    for d in range(scenario.n_drones):
        clause, extra = _safety_clause(scenario, d, duration)
        conjuncts.append(clause)
        top_weights.append(1.0)
        weight_entries.update(extra)
    for q in range(len(scenario.targets)):
        conjuncts.append(_target_clause(scenario, q))
        top_weights.append(scenario.class_weight("target"))
    for q in range(len(scenario.blades)):
        conjuncts.append(_blade_clause(scenario, q))
        top_weights.append(scenario.class_weight("blade"))
    for d in range(scenario.n_drones):
        arrive, stay = _home_clauses(scenario, d)
        conjuncts.extend([arrive, stay])
        top_weights.extend([scenario.class_weight("home")] * 2)

    mission = stl.land(*conjuncts, label="mission")
    weight_entries[mission.node_id] = top_weights
    return mission, stl.WeightMap(weight_entries)


def safety_class_robustness(scenario: Scenario, trace: Trace) -> dict:
    """Exact robustness of each safety class held over the whole mission.

    Complements the per-node report: mission clauses nest the classes
    inside one always, so the per-class minimum over the window is
    computed here from dedicated monitor formulas.
    """
    from .robustness import eval_exact

    duration = min(scenario.mission_duration, trace.duration)
    out = {}
    specs = {"workspace": [], "obstacle": [], "separation": []}
    for d in range(scenario.n_drones):
        specs["workspace"].append(stl.atom(stl.Predicate.box_inside(
            f"mon_ws[{d}]", d, scenario.workspace.lower, scenario.workspace.upper)))
        for q, box in enumerate(scenario.obstacles):
            specs["obstacle"].append(stl.atom(stl.Predicate.box_outside(
                f"mon_obs[{d},{q}]", d, box.lower, box.upper)))
        for m in range(d + 1, scenario.n_drones):
            specs["separation"].append(stl.atom(stl.Predicate.min_separation(
                f"mon_dis[{d},{m}]", d, m, scenario.min_separation)))
    for name, atoms in specs.items():
        if not atoms:
            continue
        body = atoms[0] if len(atoms) == 1 else stl.land(*atoms)
        out[name] = eval_exact(stl.always(stl.Interval(0.0, duration), body), trace)
    return out


# ---------------------------------------------------------------------------
# Heading annotation


def assign_headings(trace: Trace, scenario: Scenario, plan=None,
                    speed_floor: float = 0.05) -> np.ndarray:
    """Post-hoc yaw per (drone, sample); not an optimized degree of freedom.

    Inside an assigned target box the configured target yaw is held;
    inside an assigned blade corridor the drone faces the closest blade
    point; in transit above the speed floor the yaw follows the
    horizontal velocity; otherwise the last valid heading is held.
    """
    n_drones, n_samples = trace.pos.shape[0], trace.pos.shape[1]
    yaw = np.zeros((n_drones, n_samples))
    allowed_targets, allowed_blades = _allowed_tasks(scenario, plan)
    for d in range(n_drones):
        current = 0.0
        for k in range(n_samples):
            p = trace.pos[d, k]
            target_q = next((q for q in allowed_targets[d]
                             if scenario.targets[q].box.contains(p)), None)
            blade_q = next((q for q in allowed_blades[d]
                            if scenario.blades[q].box.contains(p)), None)
            if target_q is not None:
                current = scenario.targets[target_q].yaw
            elif blade_q is not None:
                side = scenario.blades[blade_q]
                a = np.asarray(side.seg_start)
                u = np.asarray(side.seg_end) - a
                s = min(1.0, max(0.0, float((p - a) @ u) / float(u @ u)))
                closest = a + s * u
                current = math.atan2(closest[1] - p[1], closest[0] - p[0])
            elif math.hypot(trace.vel[d, k, 0], trace.vel[d, k, 1]) > speed_floor:
                current = math.atan2(trace.vel[d, k, 1], trace.vel[d, k, 0])
            yaw[d, k] = current
    return yaw


def _allowed_tasks(scenario, plan):
    """Targets/blades each drone may claim while annotating headings."""
    n = scenario.n_drones
    if plan is None:
        targets = [list(range(len(scenario.targets)))] * n
        blades = [list(range(len(scenario.blades)))] * n
        return targets, blades
    targets = [[] for _ in range(n)]
    blades = [[] for _ in range(n)]
    for d in range(n):
        for kind, index in plan.assigned_tasks(d):
            if kind == "target":
                targets[d].append(index)
            else:
                blades[d].extend(index if isinstance(index, (list, tuple)) else [index])
    return targets, blades


def headings_to_csv(yaw: np.ndarray, ts: float) -> str:
    lines = ["t,drone,yaw"]
    for k in range(yaw.shape[1]):
        for d in range(yaw.shape[0]):
            lines.append(f"{k * ts:.6g},{d},{yaw[d, k]:.9g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Scenario JSON schema (strict: unknown keys are rejected with their path)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "workspace": {"lower": list(s.workspace.lower), "upper": list(s.workspace.upper)},
        "obstacles": [{"lower": list(b.lower), "upper": list(b.upper)} for b in s.obstacles],
        "targets": [{"lower": list(t.box.lower), "upper": list(t.box.upper), "yaw": t.yaw}
                    for t in s.targets],
        "blades": [{"leading_edge": list(b.seg_start), "rotor_shaft": list(b.seg_end),
                    "box": {"lower": list(b.box.lower), "upper": list(b.box.upper)},
                    "blade_id": b.blade_id} for b in s.blades],
        "fleet": {
            "depots": [list(p) for p in s.depots],
            "limits": [{"v_max": list(l.v_max), "a_max": list(l.a_max),
                        "v_max_relaxed": list(l.v_max_relaxed),
                        "a_max_relaxed": list(l.a_max_relaxed)} for l in s.limits],
            "home_boxes": [{"lower": list(b.lower), "upper": list(b.upper)}
                           for b in s.home_boxes],
            "capability": [
                {"targets": sorted(c["targets"]) if c.get("targets") is not None else "all",
                 "blades": sorted(c["blades"]) if c.get("blades") is not None else "all"}
                for c in s.capability],
        },
        "timing": {"mission": s.mission_duration, "inspect": s.inspect_duration,
                   "blade": s.blade_duration, "sample": s.ts},
        "thresholds": {"min_separation": s.min_separation,
                       "blade_standoff": s.blade_standoff,
                       "standoff_tolerance": s.standoff_tolerance,
                       "margin": s.margin, "sharpness": s.sharpness,
                       "trigger_radius": s.trigger_radius},
        "weights": dict(s.weights),
    }


_SCHEMA = {
    "": {"workspace", "obstacles", "targets", "blades", "fleet", "timing",
         "thresholds", "weights"},
    "workspace": {"lower", "upper"},
    "obstacles[]": {"lower", "upper", "name"},
    "targets[]": {"lower", "upper", "yaw", "name"},
    "blades[]": {"leading_edge", "rotor_shaft", "box", "blade_id", "name"},
    "blades[].box": {"lower", "upper"},
    "fleet": {"depots", "limits", "home_boxes", "capability"},
    "fleet.limits[]": {"v_max", "a_max", "v_max_relaxed", "a_max_relaxed"},
    "fleet.home_boxes[]": {"lower", "upper"},
    "fleet.capability[]": {"targets", "blades"},
    "timing": {"mission", "inspect", "blade", "sample"},
    "thresholds": {"min_separation", "blade_standoff", "standoff_tolerance",
                   "margin", "sharpness", "trigger_radius"},
}


def _check_keys(mapping, schema_key, path):
    from .errors import ParseError
    allowed = _SCHEMA[schema_key]
    for key in mapping:
        if key not in allowed:
            raise ParseError(f"unknown key {key!r} at {path or '<root>'} "
                             f"(allowed: {sorted(allowed)})")


def scenario_from_dict(data: dict) -> Scenario:
    from .errors import ParseError

    if not isinstance(data, dict):
        raise ParseError("scenario root must be a JSON object")
    _check_keys(data, "", "")
    try:
        _check_keys(data["workspace"], "workspace", "workspace")
        workspace = Box(tuple(data["workspace"]["lower"]), tuple(data["workspace"]["upper"]))
        obstacles = []
        for i, raw in enumerate(data.get("obstacles", [])):
            _check_keys(raw, "obstacles[]", f"obstacles[{i}]")
            obstacles.append(Box(tuple(raw["lower"]), tuple(raw["upper"])))
        targets = []
        for i, raw in enumerate(data.get("targets", [])):
            _check_keys(raw, "targets[]", f"targets[{i}]")
            targets.append(Target(Box(tuple(raw["lower"]), tuple(raw["upper"])),
                                  yaw=float(raw.get("yaw", 0.0))))
        blades = []
        for i, raw in enumerate(data.get("blades", [])):
            _check_keys(raw, "blades[]", f"blades[{i}]")
            _check_keys(raw["box"], "blades[].box", f"blades[{i}].box")
            blades.append(BladeSide(tuple(raw["leading_edge"]), tuple(raw["rotor_shaft"]),
                                    Box(tuple(raw["box"]["lower"]), tuple(raw["box"]["upper"])),
                                    blade_id=int(raw.get("blade_id", 0))))
        fleet = data["fleet"]
        _check_keys(fleet, "fleet", "fleet")
        limits = []
        for i, raw in enumerate(fleet["limits"]):
            _check_keys(raw, "fleet.limits[]", f"fleet.limits[{i}]")
            limits.append(DroneLimits(
                v_max=_limit(raw["v_max"]), a_max=_limit(raw["a_max"]),
                v_max_relaxed=_limit(raw.get("v_max_relaxed")),
                a_max_relaxed=_limit(raw.get("a_max_relaxed"))))
        home_boxes = []
        for i, raw in enumerate(fleet["home_boxes"]):
            _check_keys(raw, "fleet.home_boxes[]", f"fleet.home_boxes[{i}]")
            home_boxes.append(Box(tuple(raw["lower"]), tuple(raw["upper"])))
        capability = None
        if "capability" in fleet:
            capability = []
            for i, raw in enumerate(fleet["capability"]):
                _check_keys(raw, "fleet.capability[]", f"fleet.capability[{i}]")
                capability.append({
                    "targets": None if raw.get("targets", "all") == "all"
                    else set(raw["targets"]),
                    "blades": None if raw.get("blades", "all") == "all"
                    else set(raw["blades"])})
        timing = data["timing"]
        _check_keys(timing, "timing", "timing")
        thresholds = data["thresholds"]
        _check_keys(thresholds, "thresholds", "thresholds")
    except KeyError as exc:
        raise ParseError(f"missing required key {exc}") from exc

    return Scenario(
        workspace=workspace, obstacles=obstacles, targets=targets, blades=blades,
        depots=np.asarray(fleet["depots"], float), limits=limits, home_boxes=home_boxes,
        mission_duration=float(timing["mission"]),
        inspect_duration=float(timing["inspect"]),
        blade_duration=float(timing["blade"]), ts=float(timing["sample"]),
        min_separation=float(thresholds["min_separation"]),
        blade_standoff=float(thresholds["blade_standoff"]),
        standoff_tolerance=float(thresholds["standoff_tolerance"]),
        margin=float(thresholds.get("margin", 0.2)),
        sharpness=float(thresholds.get("sharpness", 10.0)),
        trigger_radius=float(thresholds.get("trigger_radius", 1.0)),
        weights={k: float(v) for k, v in data.get("weights", {}).items()},
        capability=capability)


def _limit(value):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    return tuple(float(x) for x in value)


def scenario_to_json(s: Scenario, indent=2) -> str:
    return json.dumps(scenario_to_dict(s), indent=indent)


def scenario_from_json(text: str) -> Scenario:
    from .errors import ParseError
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data)
