"""Finite MDPs, the 8-connected grid world, and transition knowledge sets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW", "Stay")
MOVES = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 0))

# absolute slack for float probability thresholds
PROB_TOL = 1e-12


class SpecError(ValueError):
    pass


class NoSuchAction(KeyError):
    pass


@dataclass
class Mdp:
    """Finite MDP with labels.

    ``transitions[s][a]`` is a list of ``(successor, probability)`` pairs;
    probabilities may be floats or Fractions.
    """

    transitions: list
    rewards: np.ndarray
    labels: list
    action_names: tuple = ACTIONS
    cells: list | None = None

    def __post_init__(self):
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.transitions)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    def validate(self):
        if len(self.labels) != self.n_states:
            raise SpecError("labeling must cover every state")
        if self.rewards.shape != (self.n_states, self.n_actions):
            raise SpecError(f"reward table has shape {self.rewards.shape}")
        for s, row in enumerate(self.transitions):
            if len(row) != self.n_actions:
                raise SpecError(f"state {s} has {len(row)} action rows")
            for a, entries in enumerate(row):
                if not entries:
                    continue
                if any(p <= 0 for _, p in entries):
                    raise SpecError(f"non-positive probability at ({s}, {a})")
                if abs(float(sum(p for _, p in entries)) - 1.0) > 1e-9:
                    raise SpecError(f"row ({s}, {a}) does not sum to one")
                if any(not 0 <= t < self.n_states for t, _ in entries):
                    raise SpecError(f"successor out of range at ({s}, {a})")

    def atoms(self) -> set[str]:
        return set().union(*self.labels) if self.labels else set()

    def state_of(self, cell) -> int:
        return self.cells.index(tuple(cell))


def sample_transition(mdp: Mdp, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    if not 0 <= a < mdp.n_actions or not mdp.transitions[s][a]:
        raise NoSuchAction((s, a))
    entries = mdp.transitions[s][a]
    u = rng.random()
    acc = 0.0
    for succ, p in entries:
        acc += float(p)
        if u < acc:
            return succ, float(mdp.rewards[s, a])
    return entries[-1][0], float(mdp.rewards[s, a])


@dataclass
class KnowledgeSets:
    """What the learner may know about the dynamics without probabilities.

    ``feasible[s][a]`` holds successors with positive probability;
    ``likely(eps)[s][a]`` those with probability at least ``1 - eps``.
    """

    feasible: list
    _rows: list = field(repr=False)

    @classmethod
    def from_mdp(cls, mdp: Mdp) -> "KnowledgeSets":
        feasible = [[frozenset(t for t, _ in entries) for entries in row] for row in mdp.transitions]
        return cls(feasible, mdp.transitions)

    def likely(self, eps) -> list:
        threshold = 1 - eps
        exact = isinstance(eps, Fraction)
        tol = 0 if exact else PROB_TOL
        return [
            [frozenset(t for t, p in entries if p >= threshold - tol) for entries in row]
            for row in self._rows
        ]


@dataclass
class GridSpec:
    width: int
    height: int
    obstacles: list = field(default_factory=list)
    regions: dict = field(default_factory=dict)
    rewards: list = field(default_factory=list)  # [x, y, value] triples
    p_intended: float = 0.9
    start: tuple | None = None

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise SpecError("grid must have positive size")
        if not 0 < self.p_intended <= 1:
            raise SpecError("p_intended must lie in (0, 1]")
        inside = lambda c: 0 <= c[0] < self.width and 0 <= c[1] < self.height
        blocked = {tuple(c) for c in self.obstacles}
        for c in blocked:
            if not inside(c):
                raise SpecError(f"obstacle {c} outside the grid")
        for name, cells in self.regions.items():
            for c in cells:
                if not inside(c):
                    raise SpecError(f"region {name} cell {c} outside the grid")
                if tuple(c) in blocked:
                    raise SpecError(f"region {name} overlaps obstacle {c}")
        for entry in self.rewards:
            if len(entry) != 3 or not inside(entry[:2]):
                raise SpecError(f"bad reward entry {entry}")
        if self.start is not None and (not inside(self.start) or tuple(self.start) in blocked):
            raise SpecError(f"bad start cell {self.start}")

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        try:
            spec = cls(
                width=int(doc["width"]),
                height=int(doc["height"]),
                obstacles=[tuple(c) for c in doc.get("obstacles", [])],
                regions={k: [tuple(c) for c in v] for k, v in doc.get("regions", {}).items()},
                rewards=[list(r) for r in doc.get("rewards", [])],
                p_intended=doc.get("p_intended", 0.9),
                start=tuple(doc["start"]) if doc.get("start") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed grid spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "GridSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [list(c) for c in self.obstacles],
            "regions": {k: [list(c) for c in v] for k, v in self.regions.items()},
            "rewards": [list(r) for r in self.rewards],
            "p_intended": self.p_intended,
            "start": list(self.start) if self.start is not None else None,
        }


def _row(feasible: Sequence[tuple], intended: tuple, p) -> list:
    if intended not in feasible:
        share = 1 / Fraction(len(feasible)) if isinstance(p, Fraction) else 1.0 / len(feasible)
        return [(c, share) for c in feasible]
    others = [c for c in feasible if c != intended]
    if not others or p == 1:
        return [(intended, Fraction(1) if isinstance(p, Fraction) else 1.0)]
    rest = (1 - p) / len(others)
    return [(intended, p)] + [(c, rest) for c in others]


def build_grid(spec: GridSpec, exact: bool = False) -> tuple[Mdp, KnowledgeSets]:
    """Grid MDP with 9 actions; slips are uniform over the other feasible moves.

    With ``exact=True`` the probabilities are Fractions (used by oracles).
    """
    spec.validate()
    blocked = {tuple(c) for c in spec.obstacles}
    cells = [
        (x, y) for y in range(spec.height) for x in range(spec.width) if (x, y) not in blocked
    ]
    index = {c: i for i, c in enumerate(cells)}
    p = Fraction(repr(spec.p_intended)) if exact else float(spec.p_intended)

    cell_reward = {tuple(r[:2]): float(r[2]) for r in spec.rewards}
    region_of: dict[tuple, set] = {c: set() for c in cells}
    for name, members in spec.regions.items():
        for c in members:
            region_of[tuple(c)].add(name)

    transitions = []
    for x, y in cells:
        targets = [(x + dx, y + dy) for dx, dy in MOVES]
        feasible = [c for c in targets if c in index]
        row = []
        for intended in targets:
            entries = _row(feasible, intended, p)
            row.append([(index[c], q) for c, q in entries])
        transitions.append(row)

    rewards = np.array([[cell_reward.get(c, 0.0)] * len(ACTIONS) for c in cells], dtype=float)
    labels = [frozenset(region_of[c]) for c in cells]
    mdp = Mdp(transitions, rewards, labels, ACTIONS, cells)
    return mdp, KnowledgeSets.from_mdp(mdp)
