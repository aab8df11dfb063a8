import random
import sys
from fractions import Fraction

import numpy as np
import pytest

from shieldq.automaton import compile_relaxed
from shieldq.harness import pickup_formula, prepare, preset
from shieldq.model import Mdp
from shieldq.twtl import Concat, Disjunct, Hold, Literal, parse

SMALL_FORMULA = "[H^1 P]^[0,8] . ([H^1 D1]^[0,8] | [H^1 D2]^[0,8]) . [H^1 Base]^[0,8]"


def make_mdp(transitions, labels, n_actions=None, rewards=None):
    """Mdp from ``transitions[s][a] = [(s', p), ...]`` with generic action names."""
    n_actions = n_actions or len(transitions[0])
    names = tuple(f"a{i}" for i in range(n_actions))
    if rewards is None:
        rewards = np.zeros((len(transitions), n_actions))
    return Mdp(transitions, np.asarray(rewards, dtype=float), [frozenset(l) for l in labels], names)


def chain_mdp(n=3, label_last="A", p=1.0):
    """``s0 -> s1 -> ... -> s_{n-1}`` on action 0 (forward), action 1 stays put."""
    rows = []
    for s in range(n):
        nxt = min(s + 1, n - 1)
        if p == 1 or nxt == s:
            fwd = [(nxt, 1.0)]
        else:
            fwd = [(nxt, p), (s, 1 - p)]
        rows.append([fwd, [(s, 1.0)]])
    labels = [set() for _ in range(n)]
    labels[-1] = {label_last}
    return make_mdp(rows, labels)


def random_mdp(rng: random.Random, n_states: int, n_actions: int, atoms=("A",), exact=False):
    """Random MDP with one dominant successor per row (so likely sets are non-trivial)."""
    rows = []
    for _ in range(n_states):
        row = []
        for _ in range(n_actions):
            k = rng.randint(1, min(3, n_states))
            succ = rng.sample(range(n_states), k)
            weights = [rng.randint(1, 10) for _ in succ]
            weights[0] += rng.choice([0, 30])
            total = sum(weights)
            if exact:
                row.append([(t, Fraction(w, total)) for t, w in zip(succ, weights)])
            else:
                row.append([(t, w / total) for t, w in zip(succ, weights)])
        rows.append(row)
    labels = [{a for a in atoms if rng.random() < 0.3} for _ in range(n_states)]
    return make_mdp(rows, labels)


def random_formula(rng: random.Random, atoms=("A", "B"), depth=2):
    if depth == 0 or rng.random() < 0.4:
        d = rng.randint(0, 2)
        a = rng.randint(0, 2)
        lit = Literal(rng.choice(atoms), rng.random() < 0.25)
        return Hold(d, lit, a, a + d + rng.randint(0, 3))
    left = random_formula(rng, atoms, depth - 1)
    right = random_formula(rng, atoms, depth - 1)
    return Concat(left, right) if rng.random() < 0.5 else Disjunct(left, right)


def semantic_ends(ast, i: int, word) -> set:
    """End positions ``e`` such that ``word[i..e]`` satisfies the relaxed formula.

    Written directly from the semantics: a hold needs ``d + 1`` consecutive
    matching observations starting at least ``a`` steps after ``i``, with no
    deadline; concatenation starts the right side one step after the left
    side finishes; disjunction takes either.
    """
    n = len(word)
    if isinstance(ast, Hold):
        out = set()
        for s in range(i + ast.start, n - ast.duration):
            if all(ast.literal.holds(word[j]) for j in range(s, s + ast.duration + 1)):
                out.add(s + ast.duration)
        return out
    if isinstance(ast, Concat):
        out = set()
        for e in semantic_ends(ast.left, i, word):
            out |= semantic_ends(ast.right, e + 1, word)
        return out
    return semantic_ends(ast.left, i, word) | semantic_ends(ast.right, i, word)


def semantic_accepts(ast, word) -> bool:
    return bool(semantic_ends(ast, 0, word))


@pytest.fixture(scope="session")
def pickup_ast():
    return parse(pickup_formula())


@pytest.fixture(scope="session")
def pickup_fsa(pickup_ast):
    return compile_relaxed(pickup_ast)


@pytest.fixture(scope="session")
def small_setup():
    return prepare(preset("small"))


@pytest.fixture(scope="session")
def small_exact():
    return prepare(preset("small"), exact=True)


@pytest.fixture(scope="session")
def case1_setup():
    return prepare(preset("case1"))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
