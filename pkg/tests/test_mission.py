import math

import numpy as np
import pytest

from stlfleet import stl
from stlfleet.dynamics import DroneLimits, rollout
from stlfleet.errors import (InfeasibleWindow, NoCapableDrone, ParseError,
                             ValidationError)
from stlfleet.mission import (BladeSide, Box, Scenario, Target, assign_headings,
                              band_robustness, compile_mission, dist_to_blade,
                              safety_class_robustness, scenario_from_json,
                              scenario_to_json)
from stlfleet.robustness import eval_exact

from conftest import scalar_trace


def make_scenario(n_drones=1, targets=((0.0, 0.0, 1.0),), blade=False,
                  obstacles=(), mission=8.0, v=1.0, capability=None,
                  min_separation=1.0, ws_half=8.0, home_offset=(0.0, 0.0, 0.0),
                  home_half=0.35):
    depots = [(-3.0 + 1.5 * d, -3.0, 1.0) for d in range(n_drones)]
    half = 0.6
    home_centers = [np.add(p, home_offset) for p in depots]
    return Scenario(
        workspace=Box((-ws_half, -ws_half, 0), (ws_half, ws_half, 8)),
        obstacles=[Box(lo, hi) for lo, hi in obstacles],
        targets=[Target(Box(tuple(np.subtract(c, half)), tuple(np.add(c, half))), yaw=0.3)
                 for c in targets],
        blades=[BladeSide((3.0, 2.0, 0.8), (3.0, 2.0, 4.2),
                          Box((0.2, 0.8, 0.6), (2.8, 3.2, 4.0)))] if blade else [],
        depots=np.array(depots),
        limits=[DroneLimits(v, v, 2.0 * v, 5.0 * v) for _ in range(n_drones)],
        home_boxes=[Box(tuple(np.subtract(c, home_half)), tuple(np.add(c, home_half)))
                    for c in home_centers],
        mission_duration=mission, inspect_duration=1.0, blade_duration=1.0, ts=0.05,
        min_separation=min_separation, blade_standoff=1.5, standoff_tolerance=0.75,
        weights={"workspace": 2.0, "obstacle": 4.0, "separation": 3.0},
        capability=capability)


def test_full_scale_mission_has_twenty_conjuncts():
    scenario = make_scenario(n_drones=3,
                             targets=[(x, y, 1.0) for x in (-2.0, 0.0, 2.0)
                                      for y in (2.0, 3.5, 5.0)],
                             blade=True)
    scenario.blades.append(BladeSide((3.0, 2.0, 0.8), (3.0, 2.0, 4.2),
                                     Box((3.2, 0.8, 0.6), (5.8, 3.2, 4.0))))
    formula, weights = compile_mission(scenario)
    # 3 safety + 9 targets + 2 blade sides + 3 home + 3 stay-home
    assert len(formula.children) == 20
    assert stl.horizon(formula) == pytest.approx(scenario.mission_duration)
    top = weights.get(formula.node_id, 20)
    assert list(top) == [1.0] * 20  # task classes default to weight 1 here


def test_safety_weights_attached_to_inner_conjunction():
    scenario = make_scenario(n_drones=2, obstacles=[((-1, -1, 0), (1, 1, 2))])
    formula, weights = compile_mission(scenario)
    bodies = [n for n in formula if n.node_id.startswith("safety_body")]
    assert len(bodies) == 2
    for body in bodies:
        assert list(weights.get(body.node_id, 3)) == [2.0, 4.0, 3.0]


def test_zero_obstacles_prunes_clause():
    scenario = make_scenario(n_drones=2)
    formula, _ = compile_mission(scenario)
    assert not any(n.node_id.startswith("obstacles[") for n in formula)
    assert any(n.node_id.startswith("separation[") for n in formula)


def test_single_capable_drone_degenerate_disjunction():
    scenario = make_scenario(n_drones=1)
    formula, _ = compile_mission(scenario)
    target = next(n for n in formula if n.node_id == "target[0]")
    assert target.kind == stl.EVENTUALLY
    assert target.children[0].kind == stl.ALWAYS  # no disjunction wrapper


def test_compile_errors():
    scenario = make_scenario()
    scenario.inspect_duration = scenario.mission_duration + 1.0
    with pytest.raises(InfeasibleWindow):
        compile_mission(scenario)
    bad = make_scenario(n_drones=2, capability=[{"targets": set(), "blades": None}] * 2)
    with pytest.raises(NoCapableDrone):
        compile_mission(bad)


def test_dist_to_blade_examples():
    assert dist_to_blade((3, 2.5, 0), (0, 0, 0), (7, 0, 0)) == pytest.approx(2.5)
    assert dist_to_blade((4, 0, 0), (0, 0, 0), (7, 0, 0)) == 0.0
    assert dist_to_blade((8, 0, 1), (0, 0, 0), (7, 0, 0)) == pytest.approx(math.sqrt(2))


def test_band_robustness_examples_and_concavity():
    assert band_robustness(2.5, 2.5, 1.0) == pytest.approx(1.0)
    assert band_robustness(1.5, 2.5, 1.0) == 0.0
    assert band_robustness(4.0, 2.5, 1.0) == pytest.approx(-0.5)
    distances = np.linspace(0.0, 5.0, 201)
    values = np.array([band_robustness(x, 2.5, 1.0) for x in distances])
    assert distances[np.argmax(values)] == pytest.approx(2.5)
    assert values.max() == pytest.approx(1.0)
    second_diff = np.diff(values, 2)
    assert np.all(second_diff <= 1e-9)  # concave in the distance


def test_target_clause_brute_force_window_scan():
    scenario = make_scenario(mission=3.0)
    formula, _ = compile_mission(scenario)
    steps = scenario.n_samples
    dwell = int(round(scenario.inspect_duration / scenario.ts))
    center = scenario.targets[0].box.center

    inside = scalar_trace(np.zeros(steps + 1), ts=scenario.ts)
    inside.pos[0, :] = center
    clause = next(n for n in formula if n.node_id == "target[0]")
    assert eval_exact(clause, inside, 0) > 0

    # push one sample out of the box inside every candidate dwell window
    broken = inside.copy()
    for start in range(0, steps - dwell + 1, dwell):
        broken.pos[0, start + dwell // 2] = center + np.array([5.0, 0, 0])
    brute = max(min(1.0 if scenario.targets[0].box.contains(broken.pos[0, k]) else -1.0
                    for k in range(s, s + dwell + 1))
                for s in range(0, steps - dwell + 1))
    assert brute < 0
    assert eval_exact(clause, broken, 0) <= 0


def test_separation_clause_matches_pairwise_scan(rng):
    scenario = make_scenario(n_drones=2, mission=2.0)
    formula, _ = compile_mission(scenario)
    steps = scenario.n_samples
    pos = rng.uniform(-4, 4, size=(2, steps + 1, 3))
    trace = scalar_trace(np.zeros(steps + 1), ts=scenario.ts, n_drones=2)
    trace.pos[:] = pos
    clause = next(n for n in formula if n.node_id == "separation[0]")
    wrapped = stl.always(stl.Interval(0.0, scenario.mission_duration), clause)
    got = eval_exact(wrapped, trace, 0)
    brute = min(np.linalg.norm(pos[0, k] - pos[1, k]) for k in range(steps + 1))
    assert got == pytest.approx(brute - scenario.min_separation, abs=1e-12)


def test_safety_class_robustness_monitor(rng):
    scenario = make_scenario(n_drones=2, obstacles=[((-1, -1, 0), (1, 1, 2))], mission=2.0)
    steps = scenario.n_samples
    trace = scalar_trace(np.zeros(steps + 1), ts=scenario.ts, n_drones=2)
    trace.pos[0, :] = (-3.0, -3.0, 1.0)
    trace.pos[1, :] = (3.0, 3.0, 1.0)
    values = safety_class_robustness(scenario, trace)
    assert set(values) == {"workspace", "obstacle", "separation"}
    assert values["separation"] == pytest.approx(np.linalg.norm([6.0, 6.0]) - 1.0)
    assert values["obstacle"] == pytest.approx(2.0)  # 3 - 1 on each axis, min margin 2
    assert values["workspace"] == pytest.approx(1.0)  # z margin binds


def test_assign_headings_rules():
    scenario = make_scenario()
    # transit along +x: yaw 0
    acc = np.zeros((1, 40, 3))
    acc[0, :10, 0] = 1.0
    trace = rollout(np.array([[-3.0, -3.0, 1.0]]), np.zeros((1, 3)), acc, 0.05)
    yaw = assign_headings(trace, scenario, plan=None)
    assert yaw[0, 20] == pytest.approx(0.0)

    # dwell inside the target: configured yaw held
    hover = scalar_trace(np.zeros(30), ts=0.05)
    hover.pos[0, :] = scenario.targets[0].box.center
    scenario.targets[0] = Target(scenario.targets[0].box, yaw=math.pi / 2)
    yaw = assign_headings(hover, scenario, plan=None)
    assert np.allclose(yaw[0], math.pi / 2)

    # blade coverage: face the closest blade point
    blade_scenario = Scenario(
        workspace=Box((-10, -10, -1), (10, 10, 5)),
        obstacles=[], targets=[],
        blades=[BladeSide((0, 0, 0), (7, 0, 0), Box((1, 1.4, -1), (6, 3.6, 1)))],
        depots=np.array([[0.0, 5.0, 0.0]]),
        limits=[DroneLimits(1.0, 1.0)],
        home_boxes=[Box((-0.5, 4.5, -0.5), (0.5, 5.5, 0.5))],
        mission_duration=8.0, inspect_duration=1.0, blade_duration=1.0, ts=0.05,
        min_separation=1.0, blade_standoff=2.5, standoff_tolerance=1.0)
    at_blade = scalar_trace(np.zeros(10), ts=0.05)
    at_blade.pos[0, :] = (3.0, 2.5, 0.0)
    yaw = assign_headings(at_blade, blade_scenario, plan=None)
    assert yaw[0, 0] == pytest.approx(-math.pi / 2)


def test_scenario_json_round_trip_and_strictness():
    scenario = make_scenario(n_drones=2, blade=True,
                             obstacles=[((-1, -1, 0), (1, 1, 2))])
    text = scenario_to_json(scenario)
    back = scenario_from_json(text)
    assert scenario_to_json(back) == text

    import json
    raw = json.loads(text)
    raw["unexpected"] = 1
    with pytest.raises(ParseError, match="unexpected"):
        scenario_from_json(json.dumps(raw))
    raw = json.loads(text)
    raw["timing"]["bogus"] = 2
    with pytest.raises(ParseError, match="timing"):
        scenario_from_json(json.dumps(raw))
    raw = json.loads(text)
    raw["timing"]["inspect"] = raw["timing"]["mission"] + 1
    with pytest.raises(ValidationError, match="timing.inspect"):
        scenario_from_json(json.dumps(raw))


def test_scenario_invariants():
    with pytest.raises(ValidationError, match="depots"):
        make_scenario(obstacles=[((-4, -4, 0), (-2, -2, 2))])  # depot inside obstacle
    with pytest.raises(ValidationError):
        Box((0, 0, 0), (0, 1, 1))
    scenario = make_scenario()
    assert scenario.n_samples == 160
