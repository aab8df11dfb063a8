"""Deterministic automata for temporally relaxed formulas.

Window deadlines are not encoded: the compiled automaton accepts a word as
soon as some prefix satisfies the formula with every deadline relaxed away,
and deadlines are enforced by the episode clock instead.  Consequently the
automaton is the same for every choice of deadlines.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .twtl import Concat, Disjunct, Formula, Hold, literal_alphabet

Symbol = frozenset


class UnknownSymbol(KeyError):
    pass


def powerset_alphabet(atoms: Iterable[str]) -> tuple[Symbol, ...]:
    atoms = sorted(set(atoms))
    subsets = itertools.chain.from_iterable(
        itertools.combinations(atoms, r) for r in range(len(atoms) + 1)
    )
    return tuple(frozenset(s) for s in subsets)


def symbol_key(symbol: Symbol) -> tuple:
    return (len(symbol), tuple(sorted(symbol)))


def symbol_text(symbol: Symbol) -> str:
    return "&".join(sorted(symbol)) if symbol else "{}"


@dataclass(frozen=True)
class Fsa:
    """Total deterministic automaton over label sets.

    ``delta[q]`` maps every symbol of ``alphabet`` to a successor state.
    """

    n_states: int
    initial: int
    accepting: frozenset
    alphabet: tuple
    delta: tuple

    @property
    def accept(self) -> int:
        (q,) = self.accepting
        return q

    def step(self, state: int, symbol: Iterable[str]) -> int:
        symbol = frozenset(symbol)
        try:
            return self.delta[state][symbol]
        except KeyError:
            raise UnknownSymbol(f"label set {sorted(symbol)} not in the alphabet") from None

    def run(self, word: Sequence[Iterable[str]]) -> tuple[list[int], bool]:
        trajectory = [self.initial]
        for symbol in word:
            trajectory.append(self.step(trajectory[-1], symbol))
        return trajectory, trajectory[-1] in self.accepting

    def accepts(self, word: Sequence[Iterable[str]]) -> bool:
        return self.run(word)[1]

    def shortest_accepting_word(self) -> list[Symbol] | None:
        parent: dict[int, tuple[int, Symbol] | None] = {self.initial: None}
        queue = deque([self.initial])
        while queue:
            q = queue.popleft()
            if q in self.accepting:
                word = []
                while parent[q] is not None:
                    q, sym = parent[q]
                    word.append(sym)
                return word[::-1]
            for sym in self.alphabet:
                nxt = self.delta[q][sym]
                if nxt not in parent:
                    parent[nxt] = (q, sym)
                    queue.append(nxt)
        return None

    def to_json(self) -> str:
        triples = [
            [q, sorted(sym), self.delta[q][sym]]
            for q in range(self.n_states)
            for sym in self.alphabet
        ]
        return json.dumps(
            {
                "n_states": self.n_states,
                "initial": self.initial,
                "accepting": sorted(self.accepting),
                "alphabet": [sorted(s) for s in self.alphabet],
                "transitions": triples,
            },
            indent=1,
        )


def trivial_fsa(alphabet: Iterable[Symbol]) -> Fsa:
    """One accepting state looping on everything (no constraint)."""
    alphabet = tuple(sorted({frozenset(s) for s in alphabet}, key=symbol_key))
    return Fsa(1, 0, frozenset({0}), alphabet, ({s: 0 for s in alphabet},))


# Compilation works on fragments: a list of per-state transition dicts with
# a single accepting state that loops on every symbol.


@dataclass
class _Fragment:
    delta: list
    initial: int
    accept: int


def _hold(node: Hold, alphabet) -> _Fragment:
    a, d = node.start, node.duration
    chain = a
    acc = a + d + 1
    delta = []
    for q in range(a):
        delta.append({s: q + 1 for s in alphabet})
    for i in range(d + 1):
        delta.append({s: (chain + i + 1 if node.literal.holds(s) else chain) for s in alphabet})
    delta.append({s: acc for s in alphabet})
    return _Fragment(delta, 0, acc)


def _concat(first: _Fragment, second: _Fragment) -> _Fragment:
    # first.accept is dropped and its incoming edges go to second.initial
    keep = [q for q in range(len(first.delta)) if q != first.accept]
    renum = {q: i for i, q in enumerate(keep)}
    offset = len(keep)
    renum[first.accept] = second.initial + offset
    delta = [{s: renum[t] for s, t in first.delta[q].items()} for q in keep]
    delta += [{s: t + offset for s, t in row.items()} for row in second.delta]
    return _Fragment(delta, renum[first.initial], second.accept + offset)


def _disjunct(left: _Fragment, right: _Fragment, alphabet) -> _Fragment:
    accept = 0
    ids: dict[tuple[int, int], int] = {}
    delta: list[dict] = [{s: accept for s in alphabet}]

    def state_id(pair):
        if pair[0] == left.accept or pair[1] == right.accept:
            return accept
        if pair not in ids:
            ids[pair] = len(delta)
            delta.append({})
            queue.append(pair)
        return ids[pair]

    queue: deque = deque()
    init = state_id((left.initial, right.initial))
    while queue:
        x, y = queue.popleft()
        row = delta[ids[(x, y)]]
        for s in alphabet:
            row[s] = state_id((left.delta[x][s], right.delta[y][s]))
    return _Fragment(delta, init, accept)


def _compile(node: Formula, alphabet) -> _Fragment:
    if isinstance(node, Hold):
        return _hold(node, alphabet)
    left = _compile(node.left, alphabet)
    right = _compile(node.right, alphabet)
    if isinstance(node, Concat):
        return _concat(left, right)
    if isinstance(node, Disjunct):
        return _disjunct(left, right, alphabet)
    raise TypeError(f"not a formula node: {node!r}")


def compile_relaxed(ast: Formula, alphabet: Iterable[Iterable[str]] | None = None) -> Fsa:
    """Compile ``ast`` into the relaxed automaton with an absorbing accept state.

    ``alphabet`` lists the label sets the automaton must read; it defaults to
    every subset of the formula's atoms.  Labels may mention atoms the
    formula does not use.
    """
    if alphabet is None:
        symbols = powerset_alphabet(literal_alphabet(ast))
    else:
        symbols = tuple(sorted({frozenset(s) for s in alphabet}, key=symbol_key))
    frag = _compile(ast, symbols)

    # breadth-first renumbering drops unreachable states
    order = {frag.initial: 0}
    queue = deque([frag.initial])
    while queue:
        q = queue.popleft()
        for s in symbols:
            t = frag.delta[q][s]
            if t not in order:
                order[t] = len(order)
                queue.append(t)
    delta = [None] * len(order)
    for q, i in order.items():
        delta[i] = {s: order[t] for s, t in frag.delta[q].items()}
    accepting = frozenset({order[frag.accept]}) if frag.accept in order else frozenset()
    return Fsa(len(order), 0, accepting, symbols, tuple(delta))


def _edge_label(symbols: list[Symbol], alphabet: tuple) -> str:
    if len(symbols) == len(alphabet):
        return "true"
    return " | ".join(symbol_text(s) for s in sorted(symbols, key=symbol_key))


def export_dot(fsa: Fsa, name: str = "fsa") -> str:
    lines = [f"digraph {name} {{", "  rankdir=LR;", "  __start [label=\"\", style=invis];"]
    for q in range(fsa.n_states):
        shape = "doublecircle" if q in fsa.accepting else "circle"
        lines.append(f"  q{q} [shape={shape}];")
    lines.append(f"  __start -> q{fsa.initial};")
    for q in range(fsa.n_states):
        grouped: dict[int, list[Symbol]] = {}
        for s in fsa.alphabet:
            grouped.setdefault(fsa.delta[q][s], []).append(s)
        for t in sorted(grouped):
            lines.append(f'  q{q} -> q{t} [label="{_edge_label(grouped[t], fsa.alphabet)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
