"""Independent reference semantics used by the test suite.

Everything here is written directly from the recursive definitions and
deliberately shares no machinery with the package: no progression, no
automata, no canonical simplification.
"""

from hltamp import ltl
from hltamp.ltl import (And, Eventually, FalseF, Formula, Next, Not, Or,
                        Prop, TrueF, Until)


def push_negations(f, neg=False):
    """Minimal local PNF used only so the evaluator sees negation at atoms."""
    if isinstance(f, TrueF):
        return FalseF() if neg else f
    if isinstance(f, FalseF):
        return TrueF() if neg else f
    if isinstance(f, Prop):
        return Not(f) if neg else f
    if isinstance(f, Not):
        return push_negations(f.arg, not neg)
    if isinstance(f, And):
        l, r = push_negations(f.left, neg), push_negations(f.right, neg)
        return Or(l, r) if neg else And(l, r)
    if isinstance(f, Or):
        l, r = push_negations(f.left, neg), push_negations(f.right, neg)
        return And(l, r) if neg else Or(l, r)
    if isinstance(f, Next):
        return Next(push_negations(f.arg, neg))
    if isinstance(f, Eventually):
        if neg:
            raise ValueError("not co-safe: negated eventually")
        return Eventually(push_negations(f.arg, False))
    if isinstance(f, Until):
        if neg:
            raise ValueError("not co-safe: negated until")
        return Until(push_negations(f.left, False), push_negations(f.right, False))
    raise TypeError(f"not a formula: {f!r}")


def good_prefix(f, word):
    """Whether the finite word is already committed to satisfy the formula.

    Direct recursion over positions; positions at or past the end of the
    word carry no letter, so atoms evaluate false there while `true` and
    fulfilled right-hand sides still succeed.
    """
    g = push_negations(f)
    n = len(word)

    def sat(h, i):
        if isinstance(h, TrueF):
            return True
        if isinstance(h, FalseF):
            return False
        if isinstance(h, Prop):
            return i < n and h.prop.name in word[i]
        if isinstance(h, Not):
            return i < n and h.arg.prop.name not in word[i]
        if isinstance(h, And):
            return sat(h.left, i) and sat(h.right, i)
        if isinstance(h, Or):
            return sat(h.left, i) or sat(h.right, i)
        if isinstance(h, Next):
            return sat(h.arg, i + 1)
        if isinstance(h, Eventually):
            return any(sat(h.arg, j) for j in range(i, max(i, n) + 1))
        if isinstance(h, Until):
            for j in range(i, max(i, n) + 1):
                if sat(h.right, j) and all(sat(h.left, t) for t in range(i, j)):
                    return True
            return False
        raise TypeError(f"not a formula: {h!r}")

    return sat(g, 0)


def all_words(props, max_len, letters=None):
    """Every word up to max_len over the full label-set alphabet of props."""
    if letters is None:
        letters = []
        props = sorted(props)
        for mask in range(1 << len(props)):
            letters.append(frozenset(p for k, p in enumerate(props) if mask & (1 << k)))
    words = [()]
    frontier = [()]
    for _ in range(max_len):
        nxt = []
        for w in frontier:
            for a in letters:
                nxt.append(w + (a,))
        words.extend(nxt)
        frontier = nxt
    return words


def enumerate_formulas(size, prop_names):
    """All raw formula trees with exactly `size` nodes over the grammar."""
    leaves = [ltl.TRUE] + [ltl.atom(p) for p in prop_names]
    table = {1: list(leaves)}

    def of(n):
        if n in table:
            return table[n]
        out = []
        for sub in of_all(n - 1):
            out.append(Not(sub))
            out.append(Next(sub))
            out.append(Eventually(sub))
        for k in range(1, n - 1):
            for l in table_get(k):
                for r in table_get(n - 1 - k):
                    out.append(And(l, r))
                    out.append(Or(l, r))
                    out.append(Until(l, r))
        table[n] = out
        return out

    def table_get(n):
        if n not in table:
            of(n)
        return table[n]

    def of_all(n):
        return table_get(n)

    for k in range(1, size + 1):
        of(k)
    return table


def hierarchy_eval(spec_formulas, tree_children, root, word):
    """Compositional evaluation of a hierarchy: a composite proposition is
    true at step t when the prefix up to t is a good prefix of its formula,
    and non-leaf formulas are evaluated over the induced composite word.
    """
    def induced_word(sid):
        f = spec_formulas[sid]
        kids = tree_children.get(sid, ())
        if not kids:
            return word
        sub = induced = []
        for t in range(len(word)):
            sym = set()
            for c in kids:
                if satisfied_by(c, t):
                    sym.add(c.name)
            induced.append(frozenset(sym))
        return induced

    cache = {}

    def satisfied_by(sid, t):
        key = (sid, t)
        if key not in cache:
            w = induced_word(sid)
            cache[key] = good_prefix(spec_formulas[sid], list(w[:t + 1]))
        return cache[key]

    w = induced_word(root)
    return good_prefix(spec_formulas[root], list(w))
