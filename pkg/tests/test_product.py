import numpy as np
import pytest

from hltamp.errors import EmptyLanguage, VerificationFailed
from hltamp.geometry import HPolytope
from hltamp.hierarchy import HierarchicalSpec, SpecId, compile_tpdfa
from hltamp.product import (Allocation, ModelStepper, ProductState, build_pa,
                            essential_pa, extract_and_verify, model_check)
from hltamp.regions import Robot, Target, World
from hltamp.transition_system import build_ts

from .worlds import split_rooms_world, two_targets_world


def goal_world():
    ws = HPolytope.box([0, 0], [1, 1])
    targets = {"goal": Target("goal", "any", HPolytope.box([0.7, 0.4], [0.85, 0.6]))}
    return World([Robot((0.1, 0.5), 0.0, ws)], [], targets, clearance=0.0)


def abc_world():
    ws = HPolytope.box([0, 0], [1, 1])
    targets = {
        "a": Target("a", "any", HPolytope.box([0.25, 0.1], [0.35, 0.25])),
        "b": Target("b", "any", HPolytope.box([0.65, 0.1], [0.75, 0.25])),
        "c": Target("c", "any", HPolytope.box([0.45, 0.7], [0.55, 0.85])),
    }
    return World([Robot((0.1, 0.5), 0.0, ws)], [], targets, clearance=0.0)


HSCLTL = """
L1:
phi_1_1 = F phi_2_1 & (!phi_2_1 U phi_2_2)
L2:
phi_2_1 = F a & F b
phi_2_2 = F c
"""


def leaf_states(tpdfa, q):
    return tuple(q[tpdfa.pos[sid]] for sid in tpdfa.leaf_specs)


def test_model_check_single_robot_until():
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "!door1 U key1"}))
    sid = t.leaf_specs[0]
    dfa = t.dfas[sid]
    accept = next(iter(dfa.accepting))
    allocs = model_check(t, ({"key1"},), (dfa.initial,), (accept,))
    assert len(allocs) == 1
    assert allocs[0].active == ((sid, frozenset({0})),)
    assert allocs[0].idle == frozenset()


def test_model_check_idle_robot_and_no_all_idle():
    t = compile_tpdfa(HierarchicalSpec.from_dict({
        "phi_1_1": "F phi_2_1 & F phi_2_2",
        "phi_2_1": "F target1",
        "phi_2_2": "F target2",
    }))
    s1, s2 = t.leaf_specs
    d1, d2 = t.dfas[s1], t.dfas[s2]
    q = (d1.initial, d2.initial)
    q2 = (next(iter(d1.accepting)), d2.initial)
    allocs = model_check(t, ({"target1"}, set()), q, q2)
    assert any(a.active == ((s1, frozenset({0})),) and a.idle == frozenset({1})
               for a in allocs)
    # the advancing leaf always needs a group: no all-idle model exists
    assert all(a.active_robots for a in allocs)


def test_model_check_falsified_guard_is_empty():
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "!obstacle U target"}))
    dfa = t.dfas[t.leaf_specs[0]]
    # trying to hold the specification while the label set contains obstacle
    allocs = model_check(t, ({"obstacle"},), (dfa.initial,), (dfa.initial,))
    assert allocs == []


def test_model_check_joint_label_group():
    # a conjunction guard needs both robots' labels in one group
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "F (left & right)"}))
    sid = t.leaf_specs[0]
    dfa = t.dfas[sid]
    accept = next(iter(dfa.accepting))
    allocs = model_check(t, ({"left"}, {"right"}), (dfa.initial,), (accept,))
    assert allocs
    assert all(a.active == ((sid, frozenset({0, 1})),) for a in allocs)


def test_build_pa_trivial_goal(ts_cache):
    world, ts = ts_cache("goal", goal_world, ("goal",), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "F goal"}))
    pa = build_pa(ts, t)
    # a path initial -> goal set -> accepting exists
    assert pa.accepting
    seen = {pa.initial}
    stack = [pa.initial]
    reached = False
    while stack:
        u = stack.pop()
        if u in pa.accepting:
            reached = True
            break
        for v in pa.adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    assert reached


def _sample_accepting_paths(pa, limit=300):
    paths = []

    def walk(u, path):
        if len(paths) >= limit:
            return
        if u in pa.accepting:
            paths.append(tuple(path))
            return
        for v in pa.adj.get(u, ()):
            if v not in path:
                path.append(v)
                walk(v, path)
                path.pop()

    walk(pa.initial, [pa.initial])
    return paths


def test_build_pa_hscltl_c_before_last(ts_cache):
    world, ts = ts_cache("abc", abc_world, ("a", "b", "c"), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_text(HSCLTL))
    pa = build_pa(ts, t)
    # exhaustive over reachable states: the first leaf (a and b) may never
    # be fulfilled while the second (c) is still open, so c cannot be last
    s1, s2 = t.leaf_specs
    for s in pa.states:
        done_ab = t.leaf_accepting(s.q, s1)
        done_c = t.leaf_accepting(s.q, s2)
        assert not (done_ab and not done_c)
    # and word-level check on a sample of accepting paths
    paths = _sample_accepting_paths(pa)
    assert paths
    for path in paths:
        word = [ts.label_of(pa.states[u].set_index) for u in path[:-1]]
        first = {}
        for i, sigma in enumerate(word):
            for p in sigma:
                first.setdefault(p, i)
        assert {"a", "b", "c"} <= set(first)
        assert first["c"] < max(first["a"], first["b"])


def test_build_pa_empty_language_blocked_target(ts_cache):
    world, ts = ts_cache("split", split_rooms_world, ("t1", "t2"), (0.1, 0.1))
    spec = HierarchicalSpec.from_dict({
        "phi_1_1": "F phi_2_1 & F phi_2_2",
        "phi_2_1": "F t1",
        "phi_2_2": "!t1 U t2",
    })
    t = compile_tpdfa(spec)
    with pytest.raises(EmptyLanguage) as err:
        build_pa(ts, t)
    assert err.value.blocking.level == 2
    assert "phi_2_2" in str(err.value)


def test_pa_edge_allocations_revalidate(ts_cache):
    world, ts = ts_cache("two_targets", two_targets_world, ("t1", "t2"), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_dict({
        "phi_1_1": "F phi_2_1 & F phi_2_2",
        "phi_2_1": "F t1",
        "phi_2_2": "F t2",
    }))
    pa = build_pa(ts, t)
    checked = 0
    for (u, v), alloc in pa.edge_alloc.items():
        su, sv = pa.states[u], pa.states[v]
        allocs = model_check(t, ts.labels_by_robot(su.set_index),
                             leaf_states(t, su.q), leaf_states(t, sv.q))
        assert alloc in allocs
        checked += 1
    assert checked == len(pa.edge_alloc)


def test_essential_pa_prunes_and_preserves_reachability(ts_cache):
    world, ts = ts_cache("abc", abc_world, ("a", "b", "c"), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_text(HSCLTL))
    pa = build_pa(ts, t)
    pruned = essential_pa(pa, ts)
    assert pruned.n_vertices <= pa.n_vertices
    assert pruned.accepting
    paths = _sample_accepting_paths(pruned, limit=5)
    assert paths


def test_extract_and_verify_roundtrip(ts_cache):
    world, ts = ts_cache("goal", goal_world, ("goal",), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "F goal"}))
    pa = build_pa(ts, t)
    # find a shortest accepting state sequence by BFS
    prev = {pa.initial: None}
    queue = [pa.initial]
    goal_vertex = None
    while queue:
        u = queue.pop(0)
        if u in pa.accepting:
            goal_vertex = u
            break
        for v in pa.adj.get(u, ()):
            if v not in prev:
                prev[v] = u
                queue.append(v)
    assert goal_vertex is not None
    order = [goal_vertex]
    while prev[order[-1]] is not None:
        order.append(prev[order[-1]])
    order.reverse()

    path = []
    for u in order:
        s = pa.states[u]
        wp = ts.polytope(s.set_index).interior_point
        path.append((s, np.asarray(wp, float)))
    seq = extract_and_verify(path, ts, t)
    assert len(seq.steps) == len(path) - 1

    # tampering with the automaton run must fail
    bad = list(path)
    bad[-1] = (ProductState(path[-1][0].set_index, t.q0), path[-1][1])
    with pytest.raises(VerificationFailed):
        extract_and_verify(bad, ts, t)

    # waypoint outside its set must fail
    bad2 = list(path)
    bad2[0] = (bad2[0][0], np.array([5.0, 5.0]))
    with pytest.raises(VerificationFailed):
        extract_and_verify(bad2, ts, t)


def test_extract_zero_length_initially_accepting(ts_cache):
    world, ts = ts_cache("goal", goal_world, ("goal",), (0.1, 0.5))
    t = compile_tpdfa(HierarchicalSpec.from_dict({"phi_1_1": "true"}))
    s0 = ProductState(ts.initial_index, t.q0)
    seq = extract_and_verify([(s0, np.array([0.1, 0.5]))], ts, t)
    assert seq.steps == ()
