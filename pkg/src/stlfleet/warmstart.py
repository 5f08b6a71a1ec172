"""Routing warm-start: graph construction, exact assignment, seed synthesis.

The routing problem (multi-depot coverage with per-drone symmetric
time-of-flight weights) is solved exactly at desk scale: a dynamic
program over task subsets per drone (Held-Karp with a completion table)
combined with a partition dynamic program across drones. Because the
weights are metric, restricting to visit-once closed routes loses
nothing, and ties are broken toward the lexicographically smallest
route sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trace, min_steps_rest_to_rest, rollout, steer_rest_to_rest, time_of_flight
from .errors import HorizonOverflow, LengthMismatch, Uncoverable
from .mission import Scenario

INFEASIBLE_EDGE = 1.0e6  # sentinel weight for edges a drone may not use
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class TaskNode:
    """Graph vertex for one task: a target box or a merged blade."""

    vertex: int
    kind: str              # "target" or "blade"
    index: object          # target index, or blade_id for merged blades
    position: tuple
    sides: tuple = ()      # blade only: scenario blade-side indices, in order

    @property
    def name(self) -> str:
        return f"{self.kind}[{self.index}]"


@dataclass
class InspectionGraph:
    """Task and depot vertices with per-drone symmetric edge weights.

    Vertices 0..n_tasks-1 are tasks (blade nodes first, then targets);
    vertex n_tasks + d is the depot of drone d. Depots are mutually
    unconnected.
    """

    tasks: list
    depots: np.ndarray            # (drones, 3)
    w_task: np.ndarray            # (drones, tasks, tasks), symmetric, 0 diagonal
    w_depot: np.ndarray           # (drones, tasks)
    capable: np.ndarray           # (drones, tasks) bool

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_drones(self) -> int:
        return self.depots.shape[0]

    def depot_vertex(self, d: int) -> int:
        return self.n_tasks + d

    def weight(self, i: int, j: int, d: int) -> float:
        """Weight of edge i->j for drone d; vertices may include depots."""
        n = self.n_tasks
        if i == j:
            return 0.0
        if i >= n and j >= n:
            raise LengthMismatch("depots are mutually unconnected")
        if i >= n:
            return float(self.w_depot[d, j]) if i == self.depot_vertex(d) else INFEASIBLE_EDGE
        if j >= n:
            return float(self.w_depot[d, i]) if j == self.depot_vertex(d) else INFEASIBLE_EDGE
        return float(self.w_task[d, i, j])

    def to_csv(self) -> str:
        lines = ["drone,from,to,weight"]
        for d in range(self.n_drones):
            for i in range(self.n_tasks):
                lines.append(f"{d},{self.depot_vertex(d)},{i},{self.w_depot[d, i]:.9g}")
                for j in range(i + 1, self.n_tasks):
                    lines.append(f"{d},{i},{j},{self.w_task[d, i, j]:.9g}")
        return "\n".join(lines) + "\n"


@dataclass
class RoutePlan:
    """Closed routes per drone, as lists of cycles over graph vertices.

    Each cycle [v0, v1, ..., vk] closes back to v0; the first cycle of a
    drone starts at its depot. A drone with nothing to do keeps the
    degenerate cycle [depot], a self-loop that counts as its single
    departure and arrival.
    """

    tours: list                   # per drone: list of cycles
    objective: float
    tasks: list = field(default_factory=list)

    def sequence(self, d: int) -> list:
        if len(self.tours[d]) != 1:
            raise LengthMismatch(f"drone {d} has {len(self.tours[d])} cycles; stitch first")
        cycle = self.tours[d][0]
        return list(cycle) + [cycle[0]]

    def z_counts(self) -> dict:
        counts = {}
        for d, cycles in enumerate(self.tours):
            for cycle in cycles:
                if len(cycle) == 1:
                    key = (cycle[0], cycle[0], d)
                    counts[key] = counts.get(key, 0) + 1
                    continue
                for a, b in zip(cycle, cycle[1:] + [cycle[0]]):
                    counts[(a, b, d)] = counts.get((a, b, d), 0) + 1
        return counts

    def assigned_tasks(self, d: int):
        """Visit-ordered (kind, index) pairs for drone d."""
        by_vertex = {task.vertex: task for task in self.tasks}
        out = []
        for cycle in self.tours[d]:
            for v in cycle:
                if v in by_vertex:
                    task = by_vertex[v]
                    if task.kind == "blade":
                        out.append(("blade", task.sides))
                    else:
                        out.append(("target", task.index))
        return out

    def to_dict(self) -> dict:
        return {
            "objective_seconds": self.objective,
            "routes": [{"drone": d,
                        "cycles": [[int(v) for v in cycle] for cycle in cycles]}
                       for d, cycles in enumerate(self.tours)],
            "tasks": [{"vertex": t.vertex, "kind": t.kind, "index": t.index,
                       "position": list(t.position)} for t in self.tasks],
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


# ---------------------------------------------------------------------------
# Graph construction


def build_graph(scenario: Scenario) -> InspectionGraph:
    """Task vertices (merged blade nodes first, then target centroids) with
    per-drone time-of-flight weights; incapable edges carry the sentinel."""
    tasks = []
    blade_groups = {}
    for q, side in enumerate(scenario.blades):
        blade_groups.setdefault(side.blade_id, []).append(q)
    for blade_id in sorted(blade_groups):
        sides = blade_groups[blade_id]
        midpoints = [(np.asarray(scenario.blades[q].seg_start)
                      + np.asarray(scenario.blades[q].seg_end)) / 2.0 for q in sides]
        position = tuple(np.mean(midpoints, axis=0))
        tasks.append(TaskNode(len(tasks), "blade", blade_id, position, tuple(sides)))
    for q, target in enumerate(scenario.targets):
        tasks.append(TaskNode(len(tasks), "target", q, tuple(target.box.center)))

    n_tasks, n_drones = len(tasks), scenario.n_drones
    positions = np.array([t.position for t in tasks]).reshape(n_tasks, 3)
    w_task = np.zeros((n_drones, n_tasks, n_tasks))
    w_depot = np.zeros((n_drones, n_tasks))
    capable = np.ones((n_drones, n_tasks), dtype=bool)
    for d in range(n_drones):
        limits = scenario.limits[d]
        for i in range(n_tasks):
            w_depot[d, i] = time_of_flight(scenario.depots[d], positions[i], limits)
            for j in range(i + 1, n_tasks):
                w = time_of_flight(positions[i], positions[j], limits)
                w_task[d, i, j] = w_task[d, j, i] = w
        for task in tasks:
            if task.kind == "target":
                ok = d in scenario.capable_drones("targets", task.index)
            else:
                # a blade node is served only by drones allowed on every side
                ok = all(d in scenario.capable_drones("blades", q) for q in task.sides)
            if not ok:
                capable[d, task.vertex] = False
                w_depot[d, task.vertex] = INFEASIBLE_EDGE
                w_task[d, task.vertex, :] = INFEASIBLE_EDGE
                w_task[d, :, task.vertex] = INFEASIBLE_EDGE
                w_task[d, task.vertex, task.vertex] = 0.0
    return InspectionGraph(tasks, np.asarray(scenario.depots, float), w_task, w_depot, capable)


# ---------------------------------------------------------------------------
# Exact assignment


class _DroneRouter:
    """Held-Karp tables for one drone: optimal closed tours over subsets."""

    def __init__(self, graph: InspectionGraph, d: int):
        self.d = d
        self.n = graph.n_tasks
        self.depot = graph.depot_vertex(d)
        w_task = graph.w_task[d].copy()
        w_depot = graph.w_depot[d].copy()
        blocked = ~graph.capable[d]
        w_task[blocked, :] = np.inf
        w_task[:, blocked] = np.inf
        w_depot[blocked] = np.inf
        self.w_task = np.where(w_task >= INFEASIBLE_EDGE, np.inf, w_task)
        self.w_depot = np.where(w_depot >= INFEASIBLE_EDGE, np.inf, w_depot)
        # completion[S][v]: cheapest way to leave task v, visit set S, return home
        self.completion = np.full((1 << self.n, self.n), np.inf)
        self.completion[0, :] = self.w_depot
        for subset in range(1, 1 << self.n):
            members = [u for u in range(self.n) if subset & (1 << u)]
            for v in range(self.n):
                if subset & (1 << v):
                    continue
                best = np.inf
                for u in members:
                    cost = self.w_task[v, u] + self.completion[subset ^ (1 << u), u]
                    if cost < best:
                        best = cost
                self.completion[subset, v] = best
        self.tour_cost = np.full(1 << self.n, np.inf)
        self.tour_cost[0] = 0.0
        for subset in range(1, 1 << self.n):
            best = np.inf
            for u in range(self.n):
                if subset & (1 << u):
                    cost = self.w_depot[u] + self.completion[subset ^ (1 << u), u]
                    if cost < best:
                        best = cost
            self.tour_cost[subset] = best

    def lex_min_tour(self, subset: int) -> list:
        """Lexicographically smallest optimal tour over the subset."""
        tour = [self.depot]
        budget = self.tour_cost[subset]
        current = None
        while subset:
            for u in range(self.n):
                if not subset & (1 << u):
                    continue
                hop = self.w_depot[u] if current is None else self.w_task[current, u]
                remaining = self.completion[subset ^ (1 << u), u]
                if abs((hop + remaining) - budget) <= _TIE_TOL * max(1.0, abs(budget)):
                    tour.append(u)
                    budget -= hop
                    subset ^= 1 << u
                    current = u
                    break
            else:
                raise AssertionError("tour reconstruction failed")
        return tour


def solve_assignment(graph: InspectionGraph) -> RoutePlan:
    """Exact optimum over task partitions and per-drone closed tours.

    Uncoverable tasks raise; a drone with no tasks keeps the degenerate
    stay-home cycle at zero cost.
    """
    for task in graph.tasks:
        if not graph.capable[:, task.vertex].any():
            raise Uncoverable(f"{task.name} has no capable drone")

    n, drones = graph.n_tasks, graph.n_drones
    routers = [_DroneRouter(graph, d) for d in range(drones)]
    full = (1 << n) - 1

    # best[d][S]: cheapest cost for drones d.. to cover exactly set S
    best = np.full((drones + 1, 1 << n), np.inf)
    best[drones, 0] = 0.0
    for d in range(drones - 1, -1, -1):
        for covered in range(1 << n):
            subset = covered
            while True:
                tail = best[d + 1, covered ^ subset]
                if np.isfinite(tail):
                    cost = routers[d].tour_cost[subset] + tail
                    if cost < best[d, covered]:
                        best[d, covered] = cost
                if subset == 0:
                    break
                subset = (subset - 1) & covered
    objective = best[0, full]
    if not np.isfinite(objective):
        raise Uncoverable("no feasible partition covers all tasks")

    tours = []
    remaining = full
    for d in range(drones):
        candidates = []
        subset = remaining
        while True:
            total = routers[d].tour_cost[subset] + best[d + 1, remaining ^ subset]
            if np.isfinite(total) and abs(total - best[d, remaining]) <= _TIE_TOL * max(
                    1.0, abs(best[d, remaining])):
                candidates.append(subset)
            if subset == 0:
                break
            subset = (subset - 1) & remaining
        chosen = min(candidates, key=lambda s: tuple(routers[d].lex_min_tour(s)))
        tours.append([routers[d].lex_min_tour(chosen)])
        remaining ^= chosen
    return RoutePlan(tours=tours, objective=float(objective), tasks=list(graph.tasks))


# ---------------------------------------------------------------------------
# Constraint verification (coverage, flow conservation, depot degree)


def verify_plan(plan: RoutePlan, graph: InspectionGraph):
    """Check the implied integer edge counts against the routing constraints."""
    z = plan.z_counts()
    violations = []
    for task in graph.tasks:
        arrivals = sum(count for (i, j, d), count in z.items()
                       if j == task.vertex and i != j)
        if arrivals < 1:
            violations.append(f"coverage: {task.name} (vertex {task.vertex}) is never visited")
    for d in range(graph.n_drones):
        for task in graph.tasks:
            v = task.vertex
            inflow = sum(c for (i, j, dd), c in z.items() if dd == d and j == v and i != j)
            outflow = sum(c for (i, j, dd), c in z.items() if dd == d and i == v and i != j)
            if inflow != outflow:
                violations.append(
                    f"flow: drone {d} at {task.name}: in {inflow} != out {outflow}")
        depot = graph.depot_vertex(d)
        departures = sum(c for (i, j, dd), c in z.items() if dd == d and i == depot)
        arrivals = sum(c for (i, j, dd), c in z.items() if dd == d and j == depot)
        if departures != 1:
            violations.append(f"depot: drone {d} departs {departures} times, expected 1")
        if arrivals != 1:
            violations.append(f"depot: drone {d} arrives {arrivals} times, expected 1")
    return len(violations) == 0, violations


# ---------------------------------------------------------------------------
# Subtour stitching


def _cycle_edges(cycle):
    if len(cycle) == 1:
        return [(cycle[0], cycle[0])]
    return list(zip(cycle, cycle[1:] + [cycle[0]]))


def stitch_subtours(plan: RoutePlan, graph: InspectionGraph) -> RoutePlan:
    """Splice disconnected cycles of each drone into one closed route.

    Every (edge, edge, orientation) junction pair is tried and the
    cheapest splice wins; already-connected plans come back unchanged.
    """
    tours = []
    for d, cycles in enumerate(plan.tours):
        cycles = [list(c) for c in cycles]
        while len(cycles) > 1:
            base, extra = cycles[0], cycles[1]
            best = None
            for i, (a, b) in enumerate(_cycle_edges(base)):
                for rotation in range(len(extra)):
                    rotated = extra[rotation:] + extra[:rotation]
                    for candidate in (rotated, rotated[::-1]):
                        c, e = candidate[0], candidate[-1]
                        delta = (graph.weight(a, c, d) + graph.weight(e, b, d)
                                 - graph.weight(a, b, d))
                        merged = base[:i + 1] + candidate + base[i + 1:]
                        key = (delta, tuple(merged))
                        if best is None or key < best[0]:
                            best = (key, merged)
            cycles = [best[1]] + cycles[2:]
        tours.append(cycles)
    objective = 0.0
    for d, cycles in enumerate(tours):
        for cycle in cycles:
            if len(cycle) > 1:
                objective += sum(graph.weight(a, b, d) for a, b in _cycle_edges(cycle))
    return RoutePlan(tours=tours, objective=objective, tasks=list(plan.tasks))


# ---------------------------------------------------------------------------
# Seed trajectory synthesis


@dataclass
class ScheduleEntry:
    kind: str        # "target", "blade_side", "home"
    index: int
    arrive: int      # sample index
    depart: int


def _sweep_geometry(side, standoff):
    a = np.asarray(side.seg_start)
    b = np.asarray(side.seg_end)
    center = side.box.center
    u = b - a
    s = min(1.0, max(0.0, float((center - a) @ u) / float(u @ u)))
    normal = center - (a + s * u)
    norm = np.linalg.norm(normal)
    if norm < 1e-9:
        raise Uncoverable("blade corridor box center lies on the blade axis")
    offset = standoff * normal / norm
    return a + offset, b + offset


def _sweep_leg(start_options, current, n_steps, ts, v_max, a_max, seg_length):
    """Pick the nearer sweep endpoint, then move along the blade for the
    largest distance a rest-to-rest profile covers in exactly n_steps."""
    d0 = np.linalg.norm(start_options[0] - current)
    d1 = np.linalg.norm(start_options[1] - current)
    start, other = (start_options if d0 <= d1 else (start_options[1], start_options[0]))
    direction = (other - start) / np.linalg.norm(other - start)
    m = n_steps // 2
    cap = seg_length
    for axis in range(3):
        share = abs(direction[axis])
        if share < 1e-12:
            continue
        cap = min(cap,
                  a_max[axis] * ts * ts * m * (n_steps - m) / share,
                  v_max[axis] * ts * (n_steps - m) / share)
    sweep = steer_rest_to_rest(cap * direction, n_steps, ts, v_max, a_max)
    if sweep is None:
        raise AssertionError("sweep profile infeasible despite feasibility cap")
    return start, start + cap * direction, sweep


def _drone_program(plan, scenario, d, derate=0.9):
    """Acceleration pieces and schedule for one drone's route.

    Legs are planned against slightly derated limits so the seed carries
    a velocity and acceleration reserve for the optimizer to spend.
    """
    limits = scenario.limits[d]
    v_max, a_max = limits.bounds()
    v_max = derate * v_max
    a_max = derate * a_max
    ts = scenario.ts
    dwell_steps = int(round(scenario.inspect_duration / ts))
    sweep_steps = int(round(scenario.blade_duration / ts))
    by_vertex = {task.vertex: task for task in plan.tasks}

    pieces = []
    schedule = []
    clock = 0
    current = np.asarray(scenario.depots[d], float)

    def transit(goal):
        nonlocal clock, current
        goal = np.asarray(goal, float)
        if np.allclose(goal, current, atol=1e-12):
            return
        steps, acc = min_steps_rest_to_rest(goal - current, ts, v_max, a_max)
        pieces.append(acc)
        clock += steps
        current = goal

    route = plan.sequence(d)[1:-1]
    for vertex in route:
        task = by_vertex[vertex]
        if task.kind == "target":
            transit(scenario.targets[task.index].box.center)
            pieces.append(np.zeros((dwell_steps, 3)))
            schedule.append(ScheduleEntry("target", task.index, clock, clock + dwell_steps))
            clock += dwell_steps
        else:
            for q in task.sides:
                side = scenario.blades[q]
                endpoints = _sweep_geometry(side, scenario.blade_standoff)
                seg_length = float(np.linalg.norm(np.asarray(side.seg_end)
                                                  - np.asarray(side.seg_start)))
                start, end, sweep = _sweep_leg(endpoints, current, sweep_steps, ts,
                                               v_max, a_max, seg_length)
                transit(start)
                pieces.append(sweep)
                schedule.append(ScheduleEntry("blade_side", q, clock, clock + sweep_steps))
                clock += sweep_steps
                current = end
    # park deep inside the home box; an idle drone already inside just hovers
    if route or not scenario.home_boxes[d].contains(current):
        transit(scenario.home_boxes[d].center)
    schedule.append(ScheduleEntry("home", d, clock, clock))
    acc = np.concatenate(pieces) if pieces else np.zeros((0, 3))
    return acc, schedule


def _compress(acc, n_steps, a_max):
    """Time-scale an acceleration sequence into n_steps samples and clamp.

    The compressed profile demands 1/s^2 times the acceleration; clamping
    keeps the seed feasible in acceleration at the price of accuracy,
    which is acceptable for a warm start.
    """
    total = acc.shape[0]
    index = np.minimum((np.arange(n_steps) * total) // n_steps, total - 1)
    scaled = acc[index] * (total / n_steps) ** 2
    return np.clip(scaled, -np.asarray(a_max), np.asarray(a_max))


def seed_with_schedule(plan: RoutePlan, scenario: Scenario, min_scale: float = 0.2,
                       derate: float = 0.9):
    """Seed trace plus the per-drone task schedule it realizes.

    Legs are planned against ``derate``-scaled limits so the seed keeps a
    kinematic reserve. Routes that cannot fit the mission duration are
    time-scaled into it (accelerations clamped); below ``min_scale``
    compression the route is hopeless even at limit speeds and
    HorizonOverflow carries the unscaled trace for diagnosis.
    """
    n_steps = scenario.n_samples
    programs = [_drone_program(plan, scenario, d, derate) for d in range(scenario.n_drones)]
    longest = max(max(acc.shape[0] for acc, _ in programs), n_steps)
    worst = n_steps / longest
    if worst < min_scale:
        padded = [np.vstack([acc, np.zeros((longest - acc.shape[0], 3))])
                  for acc, _ in programs]
        unscaled = rollout(scenario.depots, np.zeros_like(scenario.depots),
                           np.stack(padded), scenario.ts)
        raise HorizonOverflow(
            f"route needs {longest * scenario.ts:.2f} s but the mission allows "
            f"{scenario.mission_duration:.2f} s (scale {worst:.2f} < {min_scale})",
            trace=unscaled)

    accs = []
    schedules = []
    for d, (acc, schedule) in enumerate(programs):
        total = acc.shape[0]
        if total <= n_steps:
            accs.append(np.vstack([acc, np.zeros((n_steps - total, 3))]))
            schedules.append(schedule)
        else:
            scale = n_steps / total
            _, drone_a_max = scenario.limits[d].bounds()
            accs.append(_compress(acc, n_steps, drone_a_max))
            schedules.append([ScheduleEntry(e.kind, e.index, int(e.arrive * scale),
                                            int(e.depart * scale)) for e in schedule])
    trace = rollout(scenario.depots, np.zeros_like(scenario.depots),
                    np.stack(accs), scenario.ts)
    return trace, schedules


def seed_trajectories(plan: RoutePlan, scenario: Scenario, derate: float = 0.9) -> Trace:
    """Dynamically feasible warm-start trace realizing the route plan."""
    trace, _ = seed_with_schedule(plan, scenario, derate=derate)
    return trace
