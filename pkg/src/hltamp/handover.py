"""Object possession along a candidate path.

Binary possession variables are factored into a per-path dynamic program:
with the path fixed, the Big-M coupled formulation collapses to hard
per-edge rules (carry unchanged, or toggle between two robots that can meet
inside the current set), plus the labeled-set pins that force a robot
standing at an object's location to hold it. The DP is exact and returns
the assignment with the fewest handovers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible
from .geometry import project

UNPICKED = -1
PLACED = -2

DEFAULT_GRASP = 0.3
BIG_M = 2


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    start_region: str
    goal_region: str

    @staticmethod
    def from_json(obj):
        return ObjectSpec(obj["name"], obj["start"], obj["goal"])

    def to_json(self):
        return {"name": self.name, "start": self.start_region, "goal": self.goal_region}


@dataclass(frozen=True, order=True)
class HandoverEvent:
    """Object `obj` passes from giver to receiver while traversing the edge
    out of path position `vertex` (the robots meet inside that set)."""

    vertex: int
    obj: str
    giver: int
    receiver: int

    def to_json(self):
        return {"vertex": self.vertex, "object": self.obj,
                "from": self.giver, "to": self.receiver}


@dataclass(frozen=True)
class PossessionStep:
    """Abstract view of one path position: which robot generates which
    labels when the position is left, and which robot pairs could exchange
    an object inside the set."""

    labels_by_robot: tuple
    capable_pairs: frozenset


class PossessionState:
    """Holder of every object at every path position, exposed as the binary
    possession matrix b."""

    def __init__(self, holders, objects, n_robots):
        self.holders = tuple(tuple(h) for h in holders)
        self.objects = tuple(objects)
        self.n_robots = n_robots

    def b(self, pos, robot, obj_index):
        return 1 if self.holders[pos][obj_index] == robot else 0

    def holder(self, pos, obj_index):
        return self.holders[pos][obj_index]

    def to_json(self):
        names = {UNPICKED: "unpicked", PLACED: "placed"}
        return [[names.get(h, h) for h in step] for step in self.holders]


def min_pair_distance(poly, i, j, iters=250):
    """Minimum distance between two robots' slices over one joint set, by
    projected gradient descent on the squared distance."""
    x = np.array(poly.interior_point, float)
    si, sj = slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2)
    for _ in range(iters):
        grad = np.zeros_like(x)
        d = x[si] - x[sj]
        grad[si] = d
        grad[sj] = -d
        x_new = project(poly, x - 0.5 * grad)
        if np.linalg.norm(x_new - x) < 1e-10:
            x = x_new
            break
        x = x_new
    return float(np.linalg.norm(x[si] - x[sj]))


def capable_pairs_for_set(world, poly, grasp=DEFAULT_GRASP):
    pairs = set()
    for i in range(world.n_robots):
        for j in range(i + 1, world.n_robots):
            if min_pair_distance(poly, i, j) <= grasp + 1e-9:
                pairs.add((i, j))
    return frozenset(pairs)


def steps_from_path(path_vertices, pa, world, grasp=DEFAULT_GRASP, _cap_cache=None):
    ts = pa.ts
    cache = _cap_cache if _cap_cache is not None else {}
    steps = []
    for v in path_vertices:
        s = pa.states[v].set_index
        if s not in cache:
            cache[s] = capable_pairs_for_set(world, ts.polytope(s), grasp)
        steps.append(PossessionStep(ts.labels_by_robot(s), cache[s]))
    return steps


def possession_dp(steps, objects, n_robots):
    """Exact search over possession assignments for a fixed path.

    Per-edge rules: a robot consuming an object's start label picks it up
    (hands permitting), the holder consuming the goal label places it,
    otherwise possession either carries over or toggles across a capable
    pair. Returns (holder sequence, events) minimizing the handover count
    with lexicographically earliest events, or None.
    """
    n_pos = len(steps)
    l = len(objects)
    start0 = tuple(UNPICKED for _ in objects)
    if not _conflict_free(start0, n_robots):
        return None
    # best[state] = (handover_count, events tuple, holder history)
    best = {start0: (0, (), (start0,))}
    for t in range(n_pos - 1):
        labels = steps[t].labels_by_robot
        capable = steps[t].capable_pairs
        nxt = {}
        for state, (count, events, hist) in best.items():
            for state2, new_events in _successors(state, labels, capable,
                                                  objects, n_robots, t):
                if not _conflict_free(state2, n_robots):
                    continue
                cand = (count + len(new_events), events + tuple(new_events),
                        hist + (state2,))
                cur = nxt.get(state2)
                if cur is None or (cand[0], cand[1]) < (cur[0], cur[1]):
                    nxt[state2] = cand
        best = nxt
        if not best:
            return None
    done = {s: v for s, v in best.items() if all(h == PLACED for h in s)}
    if not done:
        return None
    _, (count, events, hist) = min(done.items(), key=lambda kv: (kv[1][0], kv[1][1]))
    return hist, events


def _conflict_free(state, n_robots):
    held = [h for h in state if h >= 0]
    return len(held) == len(set(held))


def _successors(state, labels, capable, objects, n_robots, t):
    """Per-object options across one edge, combined into joint successors."""
    per_obj = []
    for k, obj in enumerate(objects):
        h = state[k]
        options = []
        if h == UNPICKED:
            pickers = [r for r in range(n_robots) if obj.start_region in labels[r]]
            if pickers:
                # the object sits here and an aligned robot must take it
                options = [(r, ()) for r in pickers]
            else:
                options = [(UNPICKED, ())]
        elif h == PLACED:
            options = [(PLACED, ())]
        else:
            if obj.goal_region in labels[h]:
                options = [(PLACED, ())]
            else:
                options = [(h, ())]
                for (i, j) in capable:
                    other = j if i == h else (i if j == h else None)
                    if other is not None:
                        options.append(
                            (other, (HandoverEvent(t, obj.name, h, other),)))
        per_obj.append(options)

    def combine(k, acc_state, acc_events):
        if k == len(per_obj):
            yield tuple(acc_state), tuple(acc_events)
            return
        for holder, events in per_obj[k]:
            yield from combine(k + 1, acc_state + [holder],
                               list(acc_events) + list(events))

    yield from combine(0, [], [])


def possession_plan(path_vertices, objects, pa, world, grasp=DEFAULT_GRASP,
                    _cap_cache=None):
    """Possession assignment and handover schedule for a PA path, or
    Infeasible when no assignment satisfies the constraints."""
    objects = tuple(objects)
    if not objects:
        empty = PossessionState([()] * max(1, len(path_vertices)), (), world.n_robots)
        return empty, ()
    steps = steps_from_path(path_vertices, pa, world, grasp, _cap_cache)
    res = possession_dp(steps, objects, world.n_robots)
    if res is None:
        raise Infeasible("no possession assignment fits this path")
    holders, events = res
    return PossessionState(holders, objects, world.n_robots), events


def check_bigM(pstate, events, M=BIG_M):
    """Verify the Big-M reformulation against a concrete possession plan.

    On-path edges (indicator one) must collapse the inequalities to the
    carry equalities, or to the toggle equalities across a handover; edges
    off the path (indicator zero) must be strictly vacuous for every binary
    assignment, which needs M strictly above the largest possible
    difference of possession variables, hence M = 2.
    """
    if M <= 1:
        return False  # off-path inequalities would bind at |b - b'| = 1
    by_edge = {}
    for e in events:
        by_edge.setdefault(e.vertex, []).append(e)
    n_pos = len(pstate.holders)
    for t in range(n_pos - 1):
        evs = {e.obj: e for e in by_edge.get(t, ())}
        for k, obj in enumerate(pstate.objects):
            ev = evs.get(obj.name)
            if ev is not None:
                # y_e = 1 collapses M(y-1) <= diff <= M(1-y) to diff = 0
                if pstate.b(t + 1, ev.receiver, k) - pstate.b(t, ev.giver, k) != 0:
                    return False
                if pstate.b(t, ev.giver, k) != 1 or pstate.b(t + 1, ev.receiver, k) != 1:
                    return False
                if pstate.b(t + 1, ev.giver, k) != 0 or pstate.b(t, ev.receiver, k) != 0:
                    return False
                others = [r for r in range(pstate.n_robots)
                          if r not in (ev.giver, ev.receiver)]
            else:
                others = range(pstate.n_robots)
            for r in others:
                if pstate.b(t + 1, r, k) - pstate.b(t, r, k) != 0:
                    return False
    # conflict constraints at every position
    for t in range(n_pos):
        for r in range(pstate.n_robots):
            if sum(pstate.b(t, r, k) for k in range(len(pstate.objects))) > 1:
                return False
        for k in range(len(pstate.objects)):
            if sum(pstate.b(t, r, k) for r in range(pstate.n_robots)) > 1:
                return False
    return True
