import itertools

import numpy as np
import pytest

from hltamp.errors import Infeasible
from hltamp.handover import (PLACED, UNPICKED, HandoverEvent, ObjectSpec,
                             PossessionState, PossessionStep, check_bigM,
                             min_pair_distance, possession_dp)
from hltamp.geometry import HPolytope


def step(labels, capable=()):
    return PossessionStep(tuple(frozenset(l) for l in labels),
                          frozenset(capable))


OBJ = ObjectSpec("obj", "src", "dst")


def test_single_robot_pick_and_place():
    steps = [step([{"src"}]), step([set()]), step([{"dst"}]), step([set()])]
    res = possession_dp(steps, [OBJ], 1)
    assert res is not None
    holders, events = res
    assert events == ()
    assert [h[0] for h in holders] == [UNPICKED, 0, 0, PLACED]


def test_handover_required_with_split_capability():
    # robot 0 picks, only robot 1 can place; they can meet at position 1
    steps = [step([{"src"}, set()]),
             step([set(), set()], capable=[(0, 1)]),
             step([set(), {"dst"}]),
             step([set(), set()])]
    res = possession_dp(steps, [OBJ], 2)
    assert res is not None
    holders, events = res
    assert len(events) == 1
    assert events[0].giver == 0 and events[0].receiver == 1
    assert events[0].vertex == 1
    assert holders[-1][0] == PLACED


def test_no_handover_when_not_needed():
    # both robots could do everything; the plan with zero handovers wins
    steps = [step([{"src"}, set()], capable=[(0, 1)]),
             step([set(), set()], capable=[(0, 1)]),
             step([{"dst"}, set()], capable=[(0, 1)]),
             step([set(), set()])]
    holders, events = possession_dp(steps, [OBJ], 2)
    assert events == ()


def test_infeasible_without_meeting_point():
    steps = [step([{"src"}, set()]),
             step([set(), set()]),
             step([set(), {"dst"}]),
             step([set(), set()])]
    assert possession_dp(steps, [OBJ], 2) is None


def test_one_robot_two_objects_conflict():
    o1 = ObjectSpec("o1", "s1", "d1")
    o2 = ObjectSpec("o2", "s2", "d2")
    # both pickups happen before either delivery: one robot cannot do it
    steps = [step([{"s1"}]), step([{"s2"}]), step([{"d1"}]), step([{"d2"}]),
             step([set()])]
    assert possession_dp(steps, [o1, o2], 1) is None
    # delivering the first object before picking the second is fine
    steps_ok = [step([{"s1"}]), step([{"d1"}]), step([{"s2"}]), step([{"d2"}]),
                step([set()])]
    assert possession_dp(steps_ok, [o1, o2], 1) is not None


def brute_force_feasible(steps, objects, n_robots):
    """Exhaustive search over holder assignments filtered edge-locally by
    the carry/toggle, conflict, and labeled-pin rules; shares nothing with
    the DP implementation."""
    n_pos = len(steps)
    statuses = [UNPICKED, PLACED] + list(range(n_robots))

    def conflict(state):
        held = [h for h in state if h >= 0]
        return len(held) != len(set(held))

    def edge_ok(state, state2, t):
        labels = steps[t].labels_by_robot
        capable = steps[t].capable_pairs
        for k, obj in enumerate(objects):
            h, h2 = state[k], state2[k]
            if h == UNPICKED:
                pickers = [r for r in range(n_robots) if obj.start_region in labels[r]]
                if pickers:
                    if h2 not in pickers:
                        return False
                elif h2 != UNPICKED:
                    return False
            elif h == PLACED:
                if h2 != PLACED:
                    return False
            else:
                if obj.goal_region in labels[h]:
                    if h2 != PLACED:
                        return False
                elif h2 == h:
                    pass
                elif h2 >= 0 and (min(h, h2), max(h, h2)) in capable:
                    pass
                else:
                    return False
        return True

    def walk(t, state):
        if conflict(state):
            return False
        if t == n_pos - 1:
            return all(h == PLACED for h in state)
        return any(walk(t + 1, s2)
                   for s2 in itertools.product(statuses, repeat=len(objects))
                   if edge_ok(state, s2, t))

    return walk(0, tuple(UNPICKED for _ in objects))


def random_steps(rng, n_pos, n_robots, objects):
    regions = sorted({o.start_region for o in objects}
                     | {o.goal_region for o in objects})
    steps = []
    for _ in range(n_pos):
        labels = [set() for _ in range(n_robots)]
        for region in regions:
            if rng.random() < 0.3:
                labels[rng.integers(n_robots)].add(region)
        pairs = set()
        for i in range(n_robots):
            for j in range(i + 1, n_robots):
                if rng.random() < 0.4:
                    pairs.add((i, j))
        steps.append(step(labels, pairs))
    return steps


def test_dp_matches_brute_force_randomized():
    rng = np.random.default_rng(12)
    o1 = ObjectSpec("o1", "s1", "d1")
    o2 = ObjectSpec("o2", "s2", "d2")
    cases = 0
    feasible = 0
    for _ in range(250):
        n_robots = int(rng.integers(1, 4))
        n_pos = int(rng.integers(2, 9))
        objs = [o1] if rng.random() < 0.5 else [o1, o2]
        steps = random_steps(rng, n_pos, n_robots, objs)
        got = possession_dp(steps, objs, n_robots) is not None
        want = brute_force_feasible(steps, objs, n_robots)
        assert got == want, (steps, objs, n_robots)
        cases += 1
        feasible += got
    assert cases == 250
    assert 0 < feasible < cases


def test_object_conservation_along_plan():
    rng = np.random.default_rng(21)
    o1 = ObjectSpec("o1", "s1", "d1")
    for _ in range(100):
        steps = random_steps(rng, int(rng.integers(3, 9)), 2, [o1])
        res = possession_dp(steps, [o1], 2)
        if res is None:
            continue
        holders, events = res
        seq = [h[0] for h in holders]
        pick = next(i for i, h in enumerate(seq) if h >= 0)
        place = next(i for i, h in enumerate(seq) if h == PLACED)
        assert all(h == UNPICKED for h in seq[:pick])
        assert all(h >= 0 for h in seq[pick:place])
        assert all(h == PLACED for h in seq[place:])
        changes = [(i, seq[i], seq[i + 1]) for i in range(len(seq) - 1)
                   if seq[i] >= 0 and seq[i + 1] >= 0 and seq[i] != seq[i + 1]]
        assert len(changes) == len(events)


def test_check_bigM_passes_on_valid_plan():
    steps = [step([{"src"}, set()]),
             step([set(), set()], capable=[(0, 1)]),
             step([set(), {"dst"}]),
             step([set(), set()])]
    holders, events = possession_dp(steps, [OBJ], 2)
    pstate = PossessionState(holders, [OBJ], 2)
    assert check_bigM(pstate, events, M=2)
    assert not check_bigM(pstate, events, M=1)


def test_check_bigM_rejects_forged_toggle():
    steps = [step([{"src"}]), step([set()]), step([{"dst"}]), step([set()])]
    holders, events = possession_dp(steps, [OBJ], 1)
    # forge: drop possession on a carry edge without any handover event
    forged = [list(h) for h in holders]
    forged[1][0] = UNPICKED
    pstate = PossessionState(forged, [OBJ], 1)
    assert not check_bigM(pstate, events, M=2)


def test_min_pair_distance_box():
    # two robots confined to separated boxes inside a 4-D joint box
    A = np.zeros((8, 4))
    b = np.zeros(8)
    rows = [(0, 1, 0.3), (0, -1, 0.0), (1, 1, 1.0), (1, -1, -0.7),
            (2, 1, 1.0), (2, -1, 0.0), (3, 1, 1.0), (3, -1, 0.0)]
    for r, (k, sgn, off) in enumerate(rows):
        A[r, k] = sgn
        b[r] = off
    poly = HPolytope(A, b, interior_point=[0.1, 0.9, 0.5, 0.5])
    d = min_pair_distance(poly, 0, 1)
    assert abs(d - 0.4) < 1e-4
