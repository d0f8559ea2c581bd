"""Hierarchical co-safe specifications: multi-level formulas over composite
propositions, validation of the hierarchy rules, and compilation into a
layered product automaton whose non-leaf levels read child acceptance.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ltl
from .errors import NotCoSafeError, Rule1Violation, Rule2Violation, Rule3Violation
from .ltl import (And, Eventually, Formula, Not, Or, Prop, Until,
                  formula_to_dfa, mk_and, mk_eventually, mk_next, mk_or,
                  mk_until, normalize, parse)


@dataclass(frozen=True, order=True)
class SpecId:
    level: int
    index: int

    @property
    def name(self):
        return f"phi_{self.level}_{self.index}"

    def __str__(self):
        return self.name


class HierarchicalSpec:
    """A set of formulas indexed by (level, index)."""

    def __init__(self, formulas):
        self.formulas = dict(formulas)
        if not self.formulas:
            raise Rule1Violation("specification has no formulas")

    @staticmethod
    def from_dict(named_formulas):
        """Build from a mapping of phi_<level>_<index> names to formula text."""
        formulas = {}
        for name, text in named_formulas.items():
            m = ltl.COMPOSITE_NAME.match(name)
            if not m:
                raise Rule2Violation(f"formula name {name!r} is not of the form phi_<level>_<index>")
            sid = SpecId(int(m.group(1)), int(m.group(2)))
            formulas[sid] = parse(text) if isinstance(text, str) else text
        return HierarchicalSpec(formulas)

    @staticmethod
    def from_text(text):
        """Parse the level-sectioned format:

            L1:
            phi_1_1 = F phi_2_1 & F phi_2_2
            L2:
            phi_2_1 = F a & F b
            phi_2_2 = F c
        """
        named = {}
        current_level = None
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.endswith(":") and line[:-1].lstrip("L").isdigit():
                current_level = int(line[:-1].lstrip("L"))
                continue
            if "=" not in line:
                raise Rule2Violation(f"expected 'name = formula', got {line!r}")
            name, _, body = line.partition("=")
            name = name.strip()
            m = ltl.COMPOSITE_NAME.match(name)
            if not m:
                raise Rule2Violation(f"formula name {name!r} is not of the form phi_<level>_<index>")
            if current_level is not None and int(m.group(1)) != current_level:
                raise Rule2Violation(f"{name} declared under section L{current_level}")
            named[name] = body.strip()
        return HierarchicalSpec.from_dict(named)

    def levels(self):
        return sorted({sid.level for sid in self.formulas})

    def at_level(self, k):
        return sorted(sid for sid in self.formulas if sid.level == k)

    def atomic_props(self):
        out = set()
        for f in self.formulas.values():
            out |= {p for p in ltl.props(f) if not ltl.COMPOSITE_NAME.match(p)}
        return frozenset(out)


@dataclass(frozen=True)
class SpecTree:
    root: SpecId
    children: dict
    parent: dict
    leaves: tuple

    def is_leaf(self, sid):
        return sid in set(self.leaves)


def _classify(spec, sid):
    """Split a formula's propositions into atomic names and child SpecIds."""
    atomics, composites = set(), set()
    for name in ltl.props(spec.formulas[sid]):
        m = ltl.COMPOSITE_NAME.match(name)
        if m:
            composites.add(SpecId(int(m.group(1)), int(m.group(2))))
        else:
            atomics.add(name)
    return atomics, composites


def validate(spec):
    """Check the three hierarchy rules and return the specification tree."""
    levels = spec.levels()
    top = levels[0]
    top_formulas = spec.at_level(top)
    if len(top_formulas) != 1:
        raise Rule1Violation(
            f"level L{top} must contain exactly one formula, found "
            f"{[str(s) for s in top_formulas]}")
    root = top_formulas[0]

    children = {}
    leaves = []
    for sid in sorted(spec.formulas):
        atomics, composites = _classify(spec, sid)
        if atomics and composites:
            raise Rule2Violation(f"{sid} mixes atomic propositions with composite ones")
        if composites:
            bad_level = [c for c in composites if c.level != sid.level + 1]
            if bad_level:
                raise Rule2Violation(
                    f"{sid} references {bad_level[0]} which is not at level {sid.level + 1}")
            undeclared = [c for c in composites if c not in spec.formulas]
            if undeclared:
                raise Rule2Violation(f"{sid} references undeclared formula {undeclared[0]}")
            children[sid] = tuple(sorted(composites))
        else:
            children[sid] = ()
            leaves.append(sid)

    parent = {}
    for sid, kids in children.items():
        for c in kids:
            if c in parent:
                raise Rule3Violation(
                    f"{c} appears in both {parent[c]} and {sid}")
            parent[c] = sid
    for sid in spec.formulas:
        if sid != root and sid not in parent:
            raise Rule3Violation(f"{sid} is not referenced by any higher-level formula")
    if root in parent:
        raise Rule3Violation(f"root {root} may not appear as a composite proposition")

    return SpecTree(root, children, parent, tuple(sorted(leaves)))


class Tpdfa:
    """Total product of per-specification DFAs across all hierarchy levels.

    A total state is a tuple of component states, ordered deepest level
    first. Leaf components consume atomic label sets; each non-leaf
    component consumes the set of its children that are accepting after the
    same step, so task-level progress propagates bottom-up within a single
    transition. The product accepts whenever the root component accepts.
    """

    def __init__(self, spec, tree, dfas, order):
        self.spec = spec
        self.tree = tree
        self.dfas = dfas
        self.order = order
        self.pos = {sid: i for i, sid in enumerate(order)}
        self.leaf_set = frozenset(tree.leaves)
        self.q0 = tuple(dfas[sid].initial for sid in order)
        self._root_pos = self.pos[tree.root]

    @property
    def leaf_specs(self):
        return self.tree.leaves

    def leaf_formula(self, sid):
        return self.spec.formulas[sid]

    def step(self, q, sigma):
        """Advance every component on one atomic label set; None if stuck."""
        new = list(q)
        for i, sid in enumerate(self.order):
            if sid in self.leaf_set:
                sym = sigma
            else:
                sym = frozenset(
                    c.name for c in self.tree.children[sid]
                    if new[self.pos[c]] in self.dfas[c].accepting)
            nq = self.dfas[sid].step(q[i], sym)
            if nq is None:
                return None
            new[i] = nq
        return tuple(new)

    def step_with_leaf_symbols(self, q, leaf_symbols):
        """Advance with an explicit per-leaf symbol (task-allocation reading)."""
        new = list(q)
        for i, sid in enumerate(self.order):
            if sid in self.leaf_set:
                sym = leaf_symbols.get(sid, frozenset())
            else:
                sym = frozenset(
                    c.name for c in self.tree.children[sid]
                    if new[self.pos[c]] in self.dfas[c].accepting)
            nq = self.dfas[sid].step(q[i], sym)
            if nq is None:
                return None
            new[i] = nq
        return tuple(new)

    def accepting(self, q):
        return q[self._root_pos] in self.dfas[self.tree.root].accepting

    def accepts(self, word):
        q = self.q0
        for sigma in word:
            q = self.step(q, sigma)
            if q is None:
                return False
        return self.accepting(q)

    def leaf_component(self, q, sid):
        return q[self.pos[sid]]

    def leaf_accepting(self, q, sid):
        return q[self.pos[sid]] in self.dfas[sid].accepting

    def default_alphabet(self, max_props=14):
        props = sorted(self.spec.atomic_props())
        if len(props) > max_props:
            raise ValueError(f"alphabet over {len(props)} propositions; pass one explicitly")
        out = []
        for mask in range(1 << len(props)):
            out.append(frozenset(p for k, p in enumerate(props) if mask & (1 << k)))
        return out

    def reachable(self, alphabet=None):
        """Reachable total states and edges under the given input alphabet."""
        if alphabet is None:
            alphabet = self.default_alphabet()
        seen = {self.q0}
        edges = {}
        frontier = [self.q0]
        while frontier:
            q = frontier.pop()
            for sigma in alphabet:
                q2 = self.step(q, sigma)
                if q2 is None:
                    continue
                edges.setdefault((q, q2), set()).add(sigma)
                if q2 not in seen:
                    seen.add(q2)
                    frontier.append(q2)
        return seen, edges

    def simple_accepting_paths(self, alphabet=None):
        """All simple paths from the initial total state to an accepting one."""
        states, edges = self.reachable(alphabet)
        adj = {}
        for (a, b) in edges:
            if a != b:
                adj.setdefault(a, []).append(b)
        paths = []

        def walk(node, path):
            if self.accepting(node):
                paths.append(tuple(path))
                return
            for nxt in adj.get(node, ()):
                if nxt not in path:
                    path.append(nxt)
                    walk(nxt, path)
                    path.pop()

        walk(self.q0, [self.q0])
        return paths

    @property
    def state_space_bound(self):
        n = 1
        for sid in self.order:
            n *= self.dfas[sid].n_states
        return n

    @property
    def construction_expansions(self):
        return sum(self.dfas[sid].build_stats.expansions for sid in self.order)

    @property
    def construction_states(self):
        return sum(self.dfas[sid].build_stats.states_touched for sid in self.order)

    def to_dot(self, alphabet=None, name="tpdfa"):
        states, edges = self.reachable(alphabet)
        ids = {q: i for i, q in enumerate(sorted(states))}
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for q, i in ids.items():
            shape = "doublecircle" if self.accepting(q) else "circle"
            label = ",".join(str(c) for c in q)
            lines.append(f'  n{i} [shape={shape}, label="({label})"];')
        lines.append(f"  init [shape=point]; init -> n{ids[self.q0]};")
        for (a, b), syms in sorted(edges.items(), key=lambda kv: (ids[kv[0][0]], ids[kv[0][1]])):
            label = "|".join("{" + ",".join(sorted(s)) + "}" for s in sorted(syms, key=sorted))
            lines.append(f'  n{ids[a]} -> n{ids[b]} [label="{label}"];')
        lines.append("}")
        return "\n".join(lines)


def compile_tpdfa(spec, state_cap=ltl.DEFAULT_STATE_CAP):
    """Compile every formula to a DFA and assemble the total product.

    Leaf alphabets range over atomic propositions, non-leaf alphabets over
    the names of their child specifications.
    """
    tree = validate(spec)
    order = tuple(sorted(spec.formulas, key=lambda s: (-s.level, s.index)))
    dfas = {}
    for sid in order:
        f = spec.formulas[sid]
        if tree.is_leaf(sid):
            alphabet = ltl.props(f)
        else:
            alphabet = frozenset(c.name for c in tree.children[sid])
        dfas[sid] = formula_to_dfa(f, alphabet, state_cap=state_cap)
    return Tpdfa(spec, tree, dfas, order)


def tpdfa_accepts(tpdfa, word):
    return tpdfa.accepts(word)


def single_formula_tpdfa(formula, state_cap=ltl.DEFAULT_STATE_CAP):
    """Wrap a flat formula as a degenerate one-level hierarchy."""
    spec = HierarchicalSpec({SpecId(1, 1): formula})
    return compile_tpdfa(spec, state_cap=state_cap)


# ---------------------------------------------------------------------------
# flattening (baseline oracle)


def flatten(spec):
    """Substitute leaf formulas for composite propositions, collapsing
    `F phi_k_i` to the child formula where the child acceptance is anchored
    at time zero.

    Exact only for hierarchies whose composite propositions occur in
    monotone positions (conjunctions, disjunctions and eventualities); used
    as a comparison baseline, never by the planner itself. Raises
    NotCoSafeError when substitution leaves the co-safe fragment or when an
    occurrence cannot be re-anchored soundly.
    """
    tree = validate(spec)
    unsafe = []

    def expand(sid):
        return _subst(spec.formulas[sid], ("root",))

    def _subst(f, ctx):
        match f:
            case Eventually(Prop(p)) if p.is_composite:
                body = expand(SpecId(p.level, p.index))
                if any(c not in ("and", "or") for c in ctx[1:]):
                    unsafe.append(p.name)
                return body
            case Prop(p) if p.is_composite:
                body = expand(SpecId(p.level, p.index))
                if not isinstance(normalize(body), Eventually) or any(
                        c not in ("and", "or", "ev") for c in ctx[1:]):
                    unsafe.append(p.name)
                return body
            case ltl.TrueF() | ltl.FalseF() | Prop():
                return f
            case Not(x):
                return Not(_subst(x, ctx + ("not",)))
            case And(l, r):
                return And(_subst(l, ctx + ("and",)), _subst(r, ctx + ("and",)))
            case Or(l, r):
                return Or(_subst(l, ctx + ("or",)), _subst(r, ctx + ("or",)))
            case ltl.Next(x):
                return ltl.Next(_subst(x, ctx + ("next",)))
            case Eventually(x):
                return Eventually(_subst(x, ctx + ("ev",)))
            case Until(l, r):
                return Until(_subst(l, ctx + ("until",)), _subst(r, ctx + ("until",)))
        raise TypeError(f"not a formula: {f!r}")

    flat = normalize(expand(tree.root))
    if unsafe:
        raise NotCoSafeError(
            "hierarchy is not flattenable: composite proposition(s) "
            f"{sorted(set(unsafe))} occur outside monotone contexts")
    return flat
