"""Product and time-product MDPs, epsilon-stochastic distances, assumption checks.

A product state ``(s, q)`` pairs an MDP state with an automaton state.  The
automaton reads the label of the state being *entered*; the first product
state of an episode has already read the label of the start state, so an
episode of T actions consumes T + 1 labels.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .automaton import Fsa
from .model import KnowledgeSets, Mdp

INF = 2**62  # distance of states that cannot reach the accepting set


class AlphabetMismatch(ValueError):
    pass


@dataclass
class ProductMdp:
    mdp: Mdp
    fsa: Fsa
    knowledge: KnowledgeSets
    states: list  # (s, q) pairs
    index: dict
    initial: list  # product id of (s, delta(q_init, l(s))) for each MDP state s
    transitions: list  # [p][a] -> [(p', prob)]
    feasible: list  # [p][a] -> frozenset of p'
    accepting: np.ndarray  # bool per product state
    _likely_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def reward(self, p: int, a: int) -> float:
        return float(self.mdp.rewards[self.states[p][0], a])

    def lift(self, q: int, s_next: int) -> int:
        return self.index[(s_next, self.fsa.step(q, self.mdp.labels[s_next]))]

    def likely(self, eps) -> list:
        """``[p][a]`` -> product successors with probability >= 1 - eps."""
        key = (type(eps).__name__, eps)
        if key not in self._likely_cache:
            base = self.knowledge.likely(eps)
            table = []
            for s, q in self.states:
                table.append([
                    frozenset(self.lift(q, t) for t in base[s][a]) for a in range(self.n_actions)
                ])
            self._likely_cache[key] = table
        return self._likely_cache[key]

    def to_json(self) -> str:
        return json.dumps({
            "states": [list(st) for st in self.states],
            "initial": self.initial,
            "accepting": [int(i) for i in np.flatnonzero(self.accepting)],
            "transitions": [
                [[[t, float(pr)] for t, pr in entries] for entries in row]
                for row in self.transitions
            ],
        })


def build_product(mdp: Mdp, fsa: Fsa, knowledge: KnowledgeSets | None = None) -> ProductMdp:
    """Reachable part of ``mdp x fsa`` from every start state."""
    alphabet = set(fsa.alphabet)
    for s, label in enumerate(mdp.labels):
        if frozenset(label) not in alphabet:
            raise AlphabetMismatch(f"label {sorted(label)} of state {s} not in automaton alphabet")
    knowledge = knowledge or KnowledgeSets.from_mdp(mdp)

    states: list = []
    index: dict = {}
    queue: deque = deque()

    def visit(pair):
        if pair not in index:
            index[pair] = len(states)
            states.append(pair)
            queue.append(pair)
        return index[pair]

    initial = [visit((s, fsa.step(fsa.initial, mdp.labels[s]))) for s in range(mdp.n_states)]
    rows: dict[int, list] = {}
    while queue:
        s, q = queue.popleft()
        row = []
        for entries in mdp.transitions[s]:
            row.append([(visit((t, fsa.step(q, mdp.labels[t]))), pr) for t, pr in entries])
        rows[index[(s, q)]] = row
    transitions = [rows[p] for p in range(len(states))]
    # feasibility comes from the knowledge sets, not from the probabilities
    feasible = [
        [frozenset(index[(t, fsa.step(q, mdp.labels[t]))] for t in succ) for succ in knowledge.feasible[s]]
        for s, q in states
    ]
    accepting = np.array([q in fsa.accepting for _, q in states], dtype=bool)
    return ProductMdp(mdp, fsa, knowledge, states, index, initial, transitions, feasible, accepting)


def epsilon_neighborhood(product: ProductMdp, p: int, eps) -> set:
    return set().union(*product.likely(eps)[p])


def distance_to_accepting(product: ProductMdp, eps) -> np.ndarray:
    """Fewest epsilon-stochastic transitions to an accepting state (INF if none)."""
    likely = product.likely(eps)
    preds: list[list[int]] = [[] for _ in range(product.n_states)]
    for p, row in enumerate(likely):
        for succ in row:
            for t in succ:
                preds[t].append(p)
    dist = np.full(product.n_states, INF, dtype=np.int64)
    queue = deque(int(p) for p in np.flatnonzero(product.accepting))
    dist[list(queue)] = 0
    while queue:
        t = queue.popleft()
        for p in preds[t]:
            if dist[p] == INF:
                dist[p] = dist[t] + 1
                queue.append(p)
    return dist


def layer_distance(dist: np.ndarray, p: int, t: int, horizon: int) -> int:
    """Distance of time-product state ``(p, t)``: INF when the clock runs out first."""
    d = int(dist[p])
    return d if d != INF and t + d <= horizon else INF


@dataclass
class TimeProductMdp:
    """``product`` unrolled over the episode clock.

    Layers ``0..T-1`` carry actions; layer ``T`` is terminal.  States are
    addressed as ``(p, t)``; only sizes are ever materialized.
    """

    product: ProductMdp
    horizon: int

    @property
    def n_states(self) -> int:
        return self.product.n_states * self.horizon

    @property
    def n_layers(self) -> int:
        return self.horizon + 1

    @property
    def initial(self) -> list:
        return [(p, 0) for p in sorted(set(self.product.initial))]

    def state_id(self, p: int, t: int) -> int:
        return t * self.product.n_states + p

    def successors(self, p: int, t: int, a: int) -> list:
        if t >= self.horizon:
            return []
        return [((q, t + 1), pr) for q, pr in self.product.transitions[p][a]]


def build_time_product(product: ProductMdp, horizon: int) -> TimeProductMdp:
    if horizon < 1:
        raise ValueError("episode length must be at least 1")
    return TimeProductMdp(product, horizon)


@dataclass
class AssumptionReport:
    jumps: list  # (p, a, p') with d(p') > d(p) + 1
    unreachable: list  # product states with infinite distance
    distances: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return not self.jumps and not self.unreachable

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "distance_jumps": len(self.jumps),
            "unreachable_states": len(self.unreachable),
            "max_distance": int(max((d for d in self.distances if d != INF), default=0)),
            "examples": {
                "jumps": [list(map(int, j)) for j in self.jumps[:10]],
                "unreachable": [int(p) for p in self.unreachable[:10]],
            },
        }


def check_assumptions(product: ProductMdp, eps, distances: np.ndarray | None = None) -> AssumptionReport:
    dist = distance_to_accepting(product, eps) if distances is None else distances
    jumps = []
    for p in range(product.n_states):
        if dist[p] == INF:
            continue
        for a, succ in enumerate(product.feasible[p]):
            for t in sorted(succ):
                if dist[t] > dist[p] + 1:
                    jumps.append((p, a, t))
    unreachable = [int(p) for p in np.flatnonzero(dist == INF)]
    return AssumptionReport(jumps, unreachable, dist)


def check_initial_condition(time_product: TimeProductMdp, eps, pr_des, distances: np.ndarray) -> bool:
    from .shield import bound_meets

    horizon = time_product.horizon
    return all(
        bound_meets(horizon, int(distances[p]), eps, pr_des) for p, _ in time_product.initial
    )
