"""Syntactically co-safe LTL: parsing, positive normal form, and compilation
to deterministic finite automata with symbolic propositional guards.

The automaton construction is based on formula progression: states are
canonical residual formulas, transitions are computed by progressing the
residual through every valuation of its mentioned propositions, and guards
are recovered from the grouped valuations. Accepting states are collapsed
into a single absorbing state, which matches the finite-prefix reading of
co-safe formulas.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

from .errors import LtlSyntaxError, NotCoSafeError, StateCapExceeded

COMPOSITE_NAME = re.compile(r"^phi_(\d+)_(\d+)$")
IDENT = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")
RESERVED = {"true", "false", "U", "F", "X"}

DEFAULT_STATE_CAP = 10**5


@dataclass(frozen=True)
class Proposition:
    """Atomic or composite proposition. Composite names follow phi_<level>_<index>."""

    name: str
    level: int | None = None
    index: int | None = None

    @staticmethod
    def from_name(name):
        m = COMPOSITE_NAME.match(name)
        if m:
            return Proposition(name, int(m.group(1)), int(m.group(2)))
        return Proposition(name)

    @property
    def is_composite(self):
        return self.level is not None

    def __str__(self):
        return self.name


class Formula:
    """Base class for formula nodes; subclasses are immutable and hashable."""

    __slots__ = ()

    def __and__(self, other):
        return mk_and([self, other])

    def __or__(self, other):
        return mk_or([self, other])


@dataclass(frozen=True)
class TrueF(Formula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class FalseF(Formula):
    """Unsatisfiable residual. Produced by progression, never by the parser."""

    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Prop(Formula):
    prop: Proposition

    def __str__(self):
        return self.prop.name


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def __str__(self):
        return f"!{self.arg}"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def __str__(self):
        return f"X {self.arg}"


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula

    def __str__(self):
        return f"F {self.arg}"


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def __str__(self):
        return f"({self.left} U {self.right})"


TRUE = TrueF()
FALSE = FalseF()


def atom(name):
    return Prop(Proposition.from_name(name))


_RANK = {TrueF: 0, FalseF: 1, Prop: 2, Not: 3, Next: 4, Eventually: 5, Until: 6, And: 7, Or: 8}


def _key(f):
    match f:
        case TrueF() | FalseF():
            return (_RANK[type(f)],)
        case Prop(p):
            return (2, p.name)
        case Not(x) | Next(x) | Eventually(x):
            return (_RANK[type(f)], _key(x))
        case Until(l, r):
            return (6, _key(l), _key(r))
        case And(l, r) | Or(l, r):
            return (_RANK[type(f)], tuple(_key(t) for t in _terms(f, type(f))))
    raise TypeError(f"not a formula: {f!r}")


def _terms(f, op):
    """Flatten nested binary nodes of the same operator into a list."""
    if isinstance(f, op):
        return _terms(f.left, op) + _terms(f.right, op)
    return [f]


def _fold(op, items):
    out = items[0]
    for t in items[1:]:
        out = op(out, t)
    return out


def mk_and(items):
    flat = []
    for f in items:
        flat.extend(_terms(f, And))
    if any(isinstance(f, FalseF) for f in flat):
        return FALSE
    flat = [f for f in flat if not isinstance(f, TrueF)]
    seen, uniq = set(), []
    for f in flat:
        if f not in seen:
            seen.add(f)
            uniq.append(f)
    # absorption: A & (A | B) == A
    kept = [f for f in uniq
            if not (isinstance(f, Or) and any(t in seen for t in _terms(f, Or)))]
    if not kept:
        return TRUE
    kept.sort(key=_key)
    return _fold(And, kept)


def mk_or(items):
    flat = []
    for f in items:
        flat.extend(_terms(f, Or))
    if any(isinstance(f, TrueF) for f in flat):
        return TRUE
    flat = [f for f in flat if not isinstance(f, FalseF)]
    seen, uniq = set(), []
    for f in flat:
        if f not in seen:
            seen.add(f)
            uniq.append(f)
    # absorption: A | (A & B) == A
    kept = [f for f in uniq
            if not (isinstance(f, And) and any(t in seen for t in _terms(f, And)))]
    if not kept:
        return FALSE
    kept.sort(key=_key)
    return _fold(Or, kept)


def mk_next(f):
    if isinstance(f, (TrueF, FalseF)):
        return f
    return Next(f)


def mk_eventually(f):
    if isinstance(f, (TrueF, FalseF, Eventually)):
        return f if not isinstance(f, Eventually) else Eventually(f.arg)
    return Eventually(f)


def mk_until(l, r):
    if isinstance(r, (TrueF, FalseF)):
        return r
    if isinstance(l, FalseF) or l == r:
        return r
    if isinstance(l, TrueF):
        return mk_eventually(r)
    return Until(l, r)


# ---------------------------------------------------------------------------
# parsing


class _Lexer:
    _TOKEN = re.compile(r"\s*(?:(->)|([a-zA-Z_][a-zA-Z0-9_]*)|([!&|()])|(\S))")

    def __init__(self, text):
        self.tokens = []
        line, col = 1, 1
        pos = 0
        while pos < len(text):
            m = self._TOKEN.match(text, pos)
            if not m:
                break
            ws = text[pos:m.start(m.lastindex)]
            for ch in ws:
                if ch == "\n":
                    line, col = line + 1, 1
                else:
                    col += 1
            tok = m.group(m.lastindex)
            if m.lastindex == 4:
                raise LtlSyntaxError(f"unknown operator {tok!r}", line, col)
            self.tokens.append((tok, line, col))
            col += len(tok)
            pos = m.end()
        self.tokens.append((None, line, col))
        self.i = 0

    def peek(self):
        return self.tokens[self.i][0]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def loc(self):
        _, line, col = self.tokens[self.i]
        return line, col


def parse(text):
    """Parse concrete sc-LTL syntax into a raw (non-normalized) formula.

    Operators: ! & | -> U F X, constant true; precedence is
    ! > U > & > | > ->, and the prefix operators F/X bind like !.
    """
    lex = _Lexer(text)
    f = _parse_impl(lex)
    if lex.peek() is not None:
        tok, line, col = lex.next()
        raise LtlSyntaxError(f"unexpected token {tok!r}", line, col)
    return f


def _parse_impl(lex):
    left = _parse_or(lex)
    if lex.peek() == "->":
        lex.next()
        right = _parse_impl(lex)
        return Or(Not(left), right)
    return left


def _parse_or(lex):
    f = _parse_and(lex)
    while lex.peek() == "|":
        lex.next()
        f = Or(f, _parse_and(lex))
    return f


def _parse_and(lex):
    f = _parse_until(lex)
    while lex.peek() == "&":
        lex.next()
        f = And(f, _parse_until(lex))
    return f


def _parse_until(lex):
    f = _parse_unary(lex)
    if lex.peek() == "U":
        lex.next()
        return Until(f, _parse_until(lex))
    return f


def _parse_unary(lex):
    tok = lex.peek()
    if tok == "!":
        lex.next()
        return Not(_parse_unary(lex))
    if tok == "F":
        lex.next()
        return Eventually(_parse_unary(lex))
    if tok == "X":
        lex.next()
        return Next(_parse_unary(lex))
    return _parse_atom(lex)


def _parse_atom(lex):
    tok, line, col = lex.next()
    if tok == "(":
        f = _parse_impl(lex)
        closing, line, col = lex.next()
        if closing != ")":
            raise LtlSyntaxError("expected ')'", line, col)
        return f
    if tok == "true":
        return TRUE
    if tok is None:
        raise LtlSyntaxError("unexpected end of formula", line, col)
    if tok in RESERVED or not IDENT.fullmatch(tok):
        raise LtlSyntaxError(f"unexpected token {tok!r}", line, col)
    return atom(tok)


# ---------------------------------------------------------------------------
# normal form and semantics helpers


def normalize(f):
    """Rewrite into positive normal form and canonical shape.

    Raises NotCoSafeError when a negation cannot be pushed down to atoms
    without leaving the eventually/until/next fragment.
    """
    return _canon(_pnf(f, False))


def _pnf(f, neg):
    match f:
        case TrueF():
            return FALSE if neg else TRUE
        case FalseF():
            return TRUE if neg else FALSE
        case Prop():
            return Not(f) if neg else f
        case Not(x):
            return _pnf(x, not neg)
        case And(l, r):
            l2, r2 = _pnf(l, neg), _pnf(r, neg)
            return Or(l2, r2) if neg else And(l2, r2)
        case Or(l, r):
            l2, r2 = _pnf(l, neg), _pnf(r, neg)
            return And(l2, r2) if neg else Or(l2, r2)
        case Next(x):
            return Next(_pnf(x, neg))
        case Eventually(x):
            if neg:
                raise NotCoSafeError(f"negation over eventually: !F {x}")
            return Eventually(_pnf(x, False))
        case Until(l, r):
            if neg:
                raise NotCoSafeError(f"negation over until: !({l} U {r})")
            return Until(_pnf(l, False), _pnf(r, False))
    raise TypeError(f"not a formula: {f!r}")


def _canon(f):
    match f:
        case TrueF() | FalseF() | Prop() | Not():
            return f
        case And(l, r):
            return mk_and([_canon(l), _canon(r)])
        case Or(l, r):
            return mk_or([_canon(l), _canon(r)])
        case Next(x):
            return mk_next(_canon(x))
        case Eventually(x):
            return mk_eventually(_canon(x))
        case Until(l, r):
            return mk_until(_canon(l), _canon(r))
    raise TypeError(f"not a formula: {f!r}")


def props(f):
    """The set of proposition names mentioned in the formula."""
    match f:
        case TrueF() | FalseF():
            return frozenset()
        case Prop(p):
            return frozenset({p.name})
        case Not(x) | Next(x) | Eventually(x):
            return props(x)
        case And(l, r) | Or(l, r) | Until(l, r):
            return props(l) | props(r)
    raise TypeError(f"not a formula: {f!r}")


def progress(f, sigma):
    """One-step progression of a PNF formula through the label set sigma."""
    match f:
        case TrueF() | FalseF():
            return f
        case Prop(p):
            return TRUE if p.name in sigma else FALSE
        case Not(Prop(p)):
            return FALSE if p.name in sigma else TRUE
        case And(l, r):
            return mk_and([progress(l, sigma), progress(r, sigma)])
        case Or(l, r):
            return mk_or([progress(l, sigma), progress(r, sigma)])
        case Next(x):
            return x
        case Eventually(x):
            return mk_or([progress(x, sigma), f])
        case Until(l, r):
            return mk_or([progress(r, sigma),
                          mk_and([progress(l, sigma), f])])
    raise TypeError(f"progression needs PNF, got: {f!r}")


def dnf_canonical(f):
    """Rewrite a PNF formula as a pruned disjunction of conjunctions over its
    non-boolean subformulas. Progression residuals are boolean combinations
    of closure elements, so this keeps automaton states in a bounded shape.
    """
    cubes = _cubes(f)
    cubes = [c for c in cubes if not any(o < c for o in cubes)]
    if not cubes:
        return FALSE
    return mk_or([mk_and(sorted(c, key=_key)) for c in cubes])


def _cubes(f):
    match f:
        case TrueF():
            return [frozenset()]
        case FalseF():
            return []
        case And(l, r):
            return list({a | b for a in _cubes(l) for b in _cubes(r)})
        case Or(l, r):
            return list(set(_cubes(l) + _cubes(r)))
        case _:
            return [frozenset({f})]


def empty_accepts(f):
    """Whether the residual is already fulfilled with no further letters.

    This is satisfaction at the end of a finite word: atoms have no letter
    to hold on, so only the purely positive skeleton can evaluate true.
    """
    match f:
        case TrueF():
            return True
        case FalseF() | Prop() | Not():
            return False
        case And(l, r):
            return empty_accepts(l) and empty_accepts(r)
        case Or(l, r):
            return empty_accepts(l) or empty_accepts(r)
        case Next(x) | Eventually(x):
            return empty_accepts(x)
        case Until(_, r):
            return empty_accepts(r)
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# guards


class Guard:
    """Propositional guard stored as a set of valuations over relevant props.

    Evaluation projects a label set onto the guard's propositions; props the
    guard never mentions cannot affect the verdict.
    """

    __slots__ = ("props", "minterms")

    def __init__(self, prop_names, minterms):
        props_t = tuple(prop_names)
        terms = frozenset(minterms)
        # drop propositions whose value never changes the verdict
        changed = True
        while changed and props_t:
            changed = False
            for k in range(len(props_t)):
                bit = 1 << k
                if all((m ^ bit) in terms for m in terms):
                    terms = frozenset(self._drop_bit(m, k) for m in terms)
                    props_t = props_t[:k] + props_t[k + 1:]
                    changed = True
                    break
        self.props = props_t
        self.minterms = terms

    @staticmethod
    def _drop_bit(mask, k):
        low = mask & ((1 << k) - 1)
        return low | ((mask >> (k + 1)) << k)

    @staticmethod
    def true():
        return Guard((), [0])

    def eval(self, sigma):
        mask = 0
        for k, name in enumerate(self.props):
            if name in sigma:
                mask |= 1 << k
        return mask in self.minterms

    @property
    def is_true(self):
        return not self.props and 0 in self.minterms

    @property
    def is_false(self):
        return not self.minterms

    def to_formula(self):
        if self.is_false:
            return FALSE
        if len(self.minterms) == (1 << len(self.props)):
            return TRUE
        cubes = []
        for m in sorted(self.minterms):
            lits = []
            for k, name in enumerate(self.props):
                lits.append(atom(name) if m & (1 << k) else Not(atom(name)))
            cubes.append(mk_and(lits))
        return mk_or(cubes)

    def __str__(self):
        return str(self.to_formula())

    def __eq__(self, other):
        return (isinstance(other, Guard) and self.props == other.props
                and self.minterms == other.minterms)

    def __hash__(self):
        return hash((self.props, self.minterms))


def guard_eval(g, sigma):
    return g.eval(sigma)


# ---------------------------------------------------------------------------
# DFA


@dataclass(frozen=True)
class DfaBuildStats:
    states_touched: int
    expansions: int


class Dfa:
    """Deterministic finite automaton over label sets with symbolic guards.

    Transitions are partial: a label set that enables no outgoing guard
    rejects the word (the run is stuck). Accepting states are absorbing.
    """

    def __init__(self, n_states, initial, accepting, edges, state_names, build_stats):
        self.n_states = n_states
        self.initial = initial
        self.accepting = frozenset(accepting)
        self.guards_on_edges = dict(edges)
        self.state_names = list(state_names)
        self.build_stats = build_stats
        self._out = [[] for _ in range(n_states)]
        for (q, q2), g in self.guards_on_edges.items():
            self._out[q].append((g, q2))

    @property
    def states(self):
        return range(self.n_states)

    def step(self, q, sigma):
        for g, q2 in self._out[q]:
            if g.eval(sigma):
                return q2
        return None

    def accepts(self, word):
        q = self.initial
        for sigma in word:
            q = self.step(q, sigma)
            if q is None:
                return False
        return q in self.accepting

    def to_dot(self, name="dfa"):
        lines = [f"digraph {name} {{", "  rankdir=LR;"]
        for q in self.states:
            shape = "doublecircle" if q in self.accepting else "circle"
            label = self.state_names[q].replace('"', "'")
            lines.append(f'  q{q} [shape={shape}, label="q{q}: {label}"];')
        lines.append(f"  init [shape=point]; init -> q{self.initial};")
        for (q, q2), g in sorted(self.guards_on_edges.items()):
            lines.append(f'  q{q} -> q{q2} [label="{g}"];')
        lines.append("}")
        return "\n".join(lines)


def dfa_accepts(dfa, word):
    return dfa.accepts(word)


def formula_to_dfa(f, alphabet_props=None, state_cap=DEFAULT_STATE_CAP):
    """Compile a co-safe formula to a DFA accepting exactly the finite words
    whose every continuation is already committed to satisfy the formula.

    The construction progresses canonical residuals; residuals fulfilled at
    word end collapse into the single absorbing accepting state, and false
    residuals are dropped so rejection shows up as a stuck run.
    """
    f0 = dnf_canonical(normalize(f))
    if alphabet_props is not None:
        missing = props(f0) - {getattr(p, "name", p) for p in alphabet_props}
        if missing:
            raise ValueError(f"formula mentions propositions outside the alphabet: {sorted(missing)}")
    if empty_accepts(f0):
        f0 = TRUE

    states = {f0: 0}
    order = [f0]
    raw_edges = {}
    expansions = 0
    frontier = [f0]
    while frontier:
        q = frontier.pop()
        qi = states[q]
        if q == TRUE:
            raw_edges[(qi, qi)] = Guard.true()
            continue
        rel = sorted(props(q))
        by_target = {}
        for mask in range(1 << len(rel)):
            sigma = frozenset(rel[k] for k in range(len(rel)) if mask & (1 << k))
            expansions += 1
            r = dnf_canonical(progress(q, sigma))
            if isinstance(r, FalseF):
                continue
            if empty_accepts(r):
                r = TRUE
            if r not in states:
                if len(states) >= state_cap:
                    raise StateCapExceeded(
                        f"DFA construction exceeded {state_cap} states for {f}")
                states[r] = len(states)
                order.append(r)
                frontier.append(r)
            by_target.setdefault(states[r], []).append(mask)
        for target, masks in by_target.items():
            raw_edges[(qi, target)] = Guard(rel, masks)

    touched = len(states)
    # prune states that cannot reach acceptance (keep the initial state)
    acc = {states[TRUE]} if TRUE in states else set()
    rev = {}
    for (a, b) in raw_edges:
        rev.setdefault(b, set()).add(a)
    alive = set(acc)
    stack = list(acc)
    while stack:
        b = stack.pop()
        for a in rev.get(b, ()):
            if a not in alive:
                alive.add(a)
                stack.append(a)
    alive.add(0)

    keep = [i for i in range(len(order)) if i in alive]
    remap = {old: new for new, old in enumerate(keep)}
    edges = {(remap[a], remap[b]): g for (a, b), g in raw_edges.items()
             if a in alive and b in alive}
    accepting = [remap[i] for i in acc if i in alive]
    names = [str(order[i]) for i in keep]
    return Dfa(len(keep), remap[0], accepting, edges, names,
               DfaBuildStats(touched, expansions))
