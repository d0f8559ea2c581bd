"""Product of the convex-set transition system with the layered automaton.

Task allocation lives on the edges: a move out of a set consumes the set's
labels, and the automaton step it forces is admitted only when the robots
can be partitioned into groups that generate exactly the labels each
advancing leaf specification needs, with the remaining leaves trivially
satisfied by the empty symbol and the remaining robots idle.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product as iproduct

from .errors import EmptyLanguage, VerificationFailed
from .hierarchy import SpecId


@dataclass(frozen=True)
class ProductState:
    set_index: int
    q: tuple


@dataclass(frozen=True)
class Allocation:
    """Task assignment for one transition: which robots serve which leaf
    specification, which leaves are on hold, and who is idle."""

    active: tuple   # ((SpecId, frozenset of robot indices), ...)
    held: tuple     # SpecIds advanced by the empty symbol
    idle: frozenset

    @property
    def active_robots(self):
        out = set()
        for _, robots in self.active:
            out |= robots
        return frozenset(out)

    def spec_of(self, robot):
        for sid, robots in self.active:
            if robot in robots:
                return sid
        return None

    def to_json(self):
        return {
            "active": [[sid.name, sorted(robots)] for sid, robots in self.active],
            "held": [sid.name for sid in self.held],
            "idle": sorted(self.idle),
        }


class ModelStepper:
    """Forced automaton step plus canonical allocation, cached per
    (per-robot label sets, automaton state).

    Determinism makes the successor unique: the full label set enables at
    most one transition per component, and a held leaf whose empty-symbol
    move disagrees with it is ruled out by the no-falsification condition.
    What remains is the existence of a robot partition, searched exhaustively
    at desk scale (n <= 4 robots, m <= 6 leaf specifications).
    """

    def __init__(self, tpdfa, n_robots):
        self.tpdfa = tpdfa
        self.n_robots = n_robots
        self.leaves = tpdfa.leaf_specs
        self._cache = {}

    def step(self, labels_by_robot, q):
        key = (labels_by_robot, q)
        if key not in self._cache:
            self._cache[key] = self._compute(labels_by_robot, q)
        return self._cache[key]

    def _compute(self, labels_by_robot, q):
        sigma = frozenset().union(*labels_by_robot) if labels_by_robot else frozenset()
        q2 = self.tpdfa.step(q, sigma)
        if q2 is None:
            return None
        allocs = _search_allocations(self.tpdfa, labels_by_robot, q, q2,
                                     first_only=True)
        if not allocs:
            return None
        return q2, allocs[0]


def _leaf_target(tpdfa, sid, q, q2):
    pos = tpdfa.pos[sid]
    return q[pos], q2[pos]


def _search_allocations(tpdfa, labels_by_robot, q, q2, first_only=False):
    """All (or the canonical first) robot partitions under which the leaf
    transitions forced by the full label set are a model."""
    n = len(labels_by_robot)
    leaves = tpdfa.leaf_specs
    m = len(leaves)
    holdable = []
    for sid in leaves:
        qi, qi2 = _leaf_target(tpdfa, sid, q, q2)
        dfa = tpdfa.dfas[sid]
        holdable.append(dfa.step(qi, frozenset()) == qi2)

    options = []
    seen = set()
    # assignment[r] = m means idle; canonical order scans fewest-active first
    for assignment in sorted(iproduct(range(m + 1), repeat=n),
                             key=lambda a: (sum(1 for x in a if x < m), a)):
        groups = [frozenset(r for r in range(n) if assignment[r] == i)
                  for i in range(m)]
        ok = True
        for i, sid in enumerate(leaves):
            qi, qi2 = _leaf_target(tpdfa, sid, q, q2)
            dfa = tpdfa.dfas[sid]
            if groups[i]:
                group_labels = frozenset().union(
                    *(labels_by_robot[r] for r in groups[i]))
                if dfa.step(qi, group_labels) != qi2:
                    ok = False
                    break
            elif not holdable[i]:
                ok = False
                break
        if not ok:
            continue
        active = tuple((sid, groups[i]) for i, sid in enumerate(leaves) if groups[i])
        held = tuple(sid for i, sid in enumerate(leaves) if not groups[i])
        idle = frozenset(r for r in range(n) if assignment[r] == m)
        alloc = Allocation(active, held, idle)
        if alloc not in seen:
            seen.add(alloc)
            options.append(alloc)
            if first_only:
                return options
    return options


def model_check(tpdfa, labels_by_robot, q_leaf, q_leaf_next):
    """All allocations under which the per-robot labels model the given
    leaf-level transition; empty when the transition is not enabled.

    The leaf states are given as tuples aligned with tpdfa.leaf_specs.
    """
    labels_by_robot = tuple(frozenset(l) for l in labels_by_robot)
    sigma = frozenset().union(*labels_by_robot) if labels_by_robot else frozenset()
    leaves = tpdfa.leaf_specs
    if len(q_leaf) != len(leaves) or len(q_leaf_next) != len(leaves):
        raise ValueError("leaf state tuples must align with tpdfa.leaf_specs")
    # condition 1: the full label set must not falsify any taken transition
    for sid, qi, qi2 in zip(leaves, q_leaf, q_leaf_next):
        if tpdfa.dfas[sid].step(qi, sigma) != qi2:
            return []
    # embed the leaf states into total states so the shared search applies
    q = list(tpdfa.q0)
    q2 = list(tpdfa.q0)
    for sid, qi, qi2 in zip(leaves, q_leaf, q_leaf_next):
        q[tpdfa.pos[sid]] = qi
        q2[tpdfa.pos[sid]] = qi2
    return _search_allocations(tpdfa, labels_by_robot, tuple(q), tuple(q2))


class ProductAutomaton:
    """Reachable product graph; the virtual target vertex collects every
    accepting state with zero-cost edges."""

    def __init__(self, states, adj, edge_alloc, initial, accepting, tpdfa, ts):
        self.states = list(states)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.adj = {i: tuple(vs) for i, vs in adj.items()}
        self.edge_alloc = dict(edge_alloc)
        self.initial = initial
        self.accepting = frozenset(accepting)
        self.tpdfa = tpdfa
        self.ts = ts
        self.target = len(self.states)

    @property
    def n_vertices(self):
        return len(self.states)

    @property
    def n_edges(self):
        return sum(len(v) for v in self.adj.values())

    def out_edges(self, u):
        if u == self.target:
            return ()
        edges = list(self.adj.get(u, ()))
        if u in self.accepting:
            edges.append(self.target)
        return edges

    def state(self, u):
        return self.states[u]

    def allocation(self, u, v):
        return self.edge_alloc.get((u, v))

    def to_dot(self, name="pa"):
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for i, s in enumerate(self.states):
            shape = "doublecircle" if i in self.accepting else "circle"
            q = ",".join(str(c) for c in s.q)
            labels = ",".join(sorted(self.ts.label_of(s.set_index))) or "-"
            lines.append(
                f'  v{i} [shape={shape}, label="S{s.set_index}[{labels}] q=({q})"];')
        lines.append(f"  init [shape=point]; init -> v{self.initial};")
        for u, vs in sorted(self.adj.items()):
            for v in vs:
                lines.append(f"  v{u} -> v{v};")
        lines.append("}")
        return "\n".join(lines)


def build_pa(ts, tpdfa):
    """Breadth-first product construction from the initial set and state."""
    stepper = ModelStepper(tpdfa, ts.world.n_robots)
    init = ProductState(ts.initial_index, tpdfa.q0)
    states = [init]
    index = {init: 0}
    adj = {}
    edge_alloc = {}
    frontier = [0]
    while frontier:
        u = frontier.pop()
        s = states[u]
        res = stepper.step(ts.labels_by_robot(s.set_index), s.q)
        if res is None:
            adj[u] = ()
            continue
        q2, alloc = res
        outs = []
        for s2 in tuple(ts.adjacency.get(s.set_index, ())) + (s.set_index,):
            v_state = ProductState(s2, q2)
            if v_state == s:
                continue
            if v_state not in index:
                index[v_state] = len(states)
                states.append(v_state)
                frontier.append(index[v_state])
            v = index[v_state]
            outs.append(v)
            edge_alloc[(u, v)] = alloc
        adj[u] = tuple(outs)

    accepting = [i for i, s in enumerate(states) if tpdfa.accepting(s.q)]
    if not accepting:
        never = []
        for sid in tpdfa.order:
            pos = tpdfa.pos[sid]
            if not any(s.q[pos] in tpdfa.dfas[sid].accepting for s in states):
                never.append(sid)
        blocking = max(never, key=lambda sid: sid.level, default=None)
        raise EmptyLanguage(
            "no accepting product state is reachable; "
            f"unsatisfied specifications: {[str(s) for s in never]}",
            blocking=blocking)
    return ProductAutomaton(states, adj, edge_alloc, 0, accepting, tpdfa, ts)


def _ts_bfs_path(ts, a, b):
    if a == b:
        return (a,)
    prev = {a: None}
    queue = [a]
    while queue:
        u = queue.pop(0)
        for v in ts.adjacency.get(u, ()):
            if v not in prev:
                prev[v] = u
                if v == b:
                    path = [b]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return tuple(reversed(path))
                queue.append(v)
    return None


def essential_pa(pa, ts, world=None):
    """Prune the product automaton to the task skeleton.

    Essential states are the sources of automaton-changing edges, extended
    with the initial and accepting states; between compatible skeleton pairs
    the connector chain (or a shortest hop path) is re-inserted with the
    automaton component fixed at the later state. Falls back to the
    unpruned automaton when pruning disconnects the target.
    """
    essential = set()
    for (u, v), _ in pa.edge_alloc.items():
        if pa.states[u].q != pa.states[v].q:
            essential.add(u)
    keep = set(essential) | {pa.initial} | set(pa.accepting)

    stepper = ModelStepper(pa.tpdfa, ts.world.n_robots)
    skeleton = sorted(keep)
    retained = set(keep)
    for a in skeleton:
        sa = pa.states[a]
        res = stepper.step(ts.labels_by_robot(sa.set_index), sa.q)
        next_q = res[0] if res is not None else None
        for b in skeleton:
            if a == b:
                continue
            sb = pa.states[b]
            if sb.q != sa.q and sb.q != next_q:
                continue
            chain = ts.chain_between(sa.set_index, sb.set_index)
            if chain is None:
                chain = _ts_bfs_path(ts, sa.set_index, sb.set_index)
            if chain is None:
                continue
            for set_idx in chain:
                cand = ProductState(set_idx, sb.q)
                if cand in pa.index:
                    retained.add(pa.index[cand])

    old_ids = sorted(retained)
    remap = {old: new for new, old in enumerate(old_ids)}
    states = [pa.states[i] for i in old_ids]
    adj = {}
    edge_alloc = {}
    for old in old_ids:
        outs = [remap[v] for v in pa.adj.get(old, ()) if v in retained]
        adj[remap[old]] = tuple(outs)
        for v in pa.adj.get(old, ()):
            if v in retained:
                edge_alloc[(remap[old], remap[v])] = pa.edge_alloc[(old, v)]
    accepting = [remap[i] for i in pa.accepting if i in retained]
    pruned = ProductAutomaton(states, adj, edge_alloc, remap[pa.initial],
                              accepting, pa.tpdfa, ts)

    # sanity: the target must stay reachable, otherwise pruning was too eager
    seen = {pruned.initial}
    stack = [pruned.initial]
    ok = pruned.initial in pruned.accepting
    while stack and not ok:
        u = stack.pop()
        if u in pruned.accepting:
            ok = True
            break
        for v in pruned.adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return pruned if ok else pa


@dataclass(frozen=True)
class StateSpecSequence:
    """Per-step pairing of each robot's configuration with the leaf
    specification it is executing, or None when idle."""

    steps: tuple

    def to_json(self):
        return [[[list(map(float, cfg)), sid.name if sid else None]
                 for cfg, sid in step] for step in self.steps]


def extract_and_verify(path, ts, tpdfa):
    """Re-derive the allocation of every step, replay the label word through
    the automaton, and check waypoint membership; raises VerificationFailed
    on any mismatch. This is the executable soundness certificate."""
    if not path:
        raise VerificationFailed("empty path")
    world = ts.world
    states = [ps for ps, _ in path]
    points = [wp for _, wp in path]
    for (ps, wp) in path:
        if not ts.polytope(ps.set_index).contains(wp, tol=1e-6):
            raise VerificationFailed(
                f"waypoint {list(map(float, wp))} outside set {ps.set_index}")
    if states[0].q != tpdfa.q0:
        raise VerificationFailed("path does not start at the initial automaton state")

    word = []
    steps = []
    q = states[0].q
    for t in range(len(path) - 1):
        sigma = ts.label_of(states[t].set_index)
        labels_by_robot = ts.labels_by_robot(states[t].set_index)
        q2 = tpdfa.step(q, sigma)
        if q2 is None or q2 != states[t + 1].q:
            raise VerificationFailed(f"automaton step mismatch at position {t}")
        allocs = _search_allocations(tpdfa, labels_by_robot, q, q2, first_only=True)
        if not allocs:
            raise VerificationFailed(f"no valid task allocation at position {t}")
        alloc = allocs[0]
        step = []
        for r in range(world.n_robots):
            cfg = tuple(world.robot_slice(points[t], r))
            step.append((cfg, alloc.spec_of(r)))
        steps.append(tuple(step))
        word.append(sigma)
        q = q2
    if not tpdfa.accepts(word):
        raise VerificationFailed("label word is not accepted by the specification")
    return StateSpecSequence(tuple(steps))
