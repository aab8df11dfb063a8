import json
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_mdp
from shieldq.harness import bundled_grid
from shieldq.model import (
    ACTIONS,
    MOVES,
    GridSpec,
    KnowledgeSets,
    NoSuchAction,
    SpecError,
    build_grid,
    sample_transition,
)


def row_of(mdp, cell, action):
    s = mdp.state_of(cell)
    a = ACTIONS.index(action)
    return {mdp.cells[t]: p for t, p in mdp.transitions[s][a]}


def test_interior_cell_split():
    mdp, _ = build_grid(GridSpec(8, 8))
    row = row_of(mdp, (3, 3), "NE")
    assert len(row) == 9
    assert row[(4, 4)] == pytest.approx(0.9)
    for cell, p in row.items():
        if cell != (4, 4):
            assert p == pytest.approx(0.1 / 8)


def test_corner_cell_split():
    mdp, _ = build_grid(GridSpec(8, 8), exact=True)
    row = row_of(mdp, (0, 0), "N")
    assert row == {
        (0, 1): Fraction(9, 10),
        (1, 1): Fraction(1, 30),
        (1, 0): Fraction(1, 30),
        (0, 0): Fraction(1, 30),
    }


def test_infeasible_intended_move_spreads_uniformly():
    mdp, _ = build_grid(GridSpec(8, 8), exact=True)
    row = row_of(mdp, (0, 0), "S")
    assert row == {c: Fraction(1, 4) for c in [(0, 0), (1, 0), (0, 1), (1, 1)]}


def test_one_cell_grid():
    mdp, _ = build_grid(GridSpec(1, 1))
    assert mdp.n_states == 1
    for a in range(9):
        assert mdp.transitions[0][a] == [(0, 1.0)]


def test_obstacles_are_not_states():
    mdp, kn = build_grid(GridSpec(3, 3, obstacles=[(1, 1)]))
    assert mdp.n_states == 8
    assert (1, 1) not in mdp.cells
    centre_targets = {mdp.cells[t] for row in kn.feasible for succ in row for t in succ}
    assert (1, 1) not in centre_targets


def test_rows_are_stochastic(case1_setup):
    mdp = case1_setup.mdp
    for row in mdp.transitions:
        for entries in row:
            assert sum(p for _, p in entries) == pytest.approx(1.0, abs=1e-12)


def test_labels_and_rewards():
    spec = GridSpec(3, 2, regions={"P": [(2, 1)]}, rewards=[[0, 1, 10]])
    mdp, _ = build_grid(spec)
    assert mdp.labels[mdp.state_of((2, 1))] == {"P"}
    assert mdp.labels[mdp.state_of((0, 0))] == frozenset()
    assert list(mdp.rewards[mdp.state_of((0, 1))]) == [10.0] * 9
    assert mdp.rewards[mdp.state_of((1, 1))].sum() == 0


def test_knowledge_sets():
    mdp, kn = build_grid(GridSpec(4, 4))
    s = mdp.state_of((1, 1))
    likely = kn.likely(0.1)
    assert all(len(succ) == 1 for succ in likely[s])
    assert all(len(succ) == 0 for succ in kn.likely(0.05)[s])
    for eps in (0.0, 0.05, 0.1, 0.5, 0.95):
        for row_l, row_f in zip(kn.likely(eps), kn.feasible):
            for l, f in zip(row_l, row_f):
                assert l <= f


def test_dihedral_symmetry():
    n = 4
    mdp, _ = build_grid(GridSpec(n, n), exact=True)

    def rot(c):  # quarter turn counter-clockwise
        return (n - 1 - c[1], c[0])

    def flip(c):
        return (n - 1 - c[0], c[1])

    for f in (rot, flip):
        for cell in mdp.cells:
            for a, (dx, dy) in enumerate(MOVES):
                # image of the move direction under the same map
                ox, oy = f((0, 0))
                tx, ty = f((dx, dy))
                b = MOVES.index((tx - ox, ty - oy))
                src = {(mdp.cells[t]): p for t, p in mdp.transitions[mdp.state_of(cell)][a]}
                img = {(mdp.cells[t]): p for t, p in mdp.transitions[mdp.state_of(f(cell))][b]}
                assert {f(c): p for c, p in src.items()} == img


def test_sample_transition_deterministic_entry():
    mdp = make_mdp([[[(1, 1.0)]], [[(1, 1.0)]]], [set(), set()])
    rng = np.random.default_rng(0)
    assert all(sample_transition(mdp, 0, 0, rng)[0] == 1 for _ in range(100))


def test_sample_transition_frequency():
    mdp, _ = build_grid(GridSpec(8, 8))
    s, a = mdp.state_of((3, 3)), ACTIONS.index("E")
    target = mdp.state_of((4, 3))
    rng = np.random.default_rng(1)
    hits = sum(sample_transition(mdp, s, a, rng)[0] == target for _ in range(100_000))
    assert abs(hits / 100_000 - 0.9) <= 0.01


def test_sample_transition_reproducible():
    mdp, _ = build_grid(GridSpec(4, 4, rewards=[[0, 0, 1]]))
    seq = lambda: [sample_transition(mdp, 0, 2, np.random.default_rng(7)) for _ in range(3)]
    assert seq() == seq()
    assert sample_transition(mdp, 0, 2, np.random.default_rng(0))[1] == 1.0


def test_sample_transition_bad_action():
    mdp, _ = build_grid(GridSpec(2, 2))
    with pytest.raises(NoSuchAction):
        sample_transition(mdp, 0, 9, np.random.default_rng(0))


@pytest.mark.parametrize(
    "doc",
    [
        {"width": 0, "height": 3},
        {"width": 3, "height": 3, "obstacles": [[5, 5]]},
        {"width": 3, "height": 3, "obstacles": [[1, 1]], "regions": {"P": [[1, 1]]}},
        {"width": 3, "height": 3, "regions": {"P": [[3, 0]]}},
        {"width": 3, "height": 3, "p_intended": 1.5},
        {"width": 3, "height": 3, "rewards": [[0, 0]]},
        {"height": 3},
    ],
)
def test_malformed_specs(doc):
    with pytest.raises(SpecError):
        GridSpec.from_dict(doc)


def test_spec_round_trip(tmp_path):
    spec = GridSpec.load(bundled_grid("fig3_grid"))
    path = tmp_path / "g.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert GridSpec.load(path) == spec


def test_mdp_validation():
    with pytest.raises(SpecError):
        make_mdp([[[(0, 0.5)]]], [set()])
    with pytest.raises(SpecError):
        make_mdp([[[(3, 1.0)]]], [set()])
    with pytest.raises(SpecError):
        make_mdp([[[(0, 1.0)]]], [])


def test_knowledge_from_mdp_matches_support():
    mdp = make_mdp([[[(0, 0.2), (1, 0.8)]], [[(1, 1.0)]]], [set(), {"A"}])
    kn = KnowledgeSets.from_mdp(mdp)
    assert kn.feasible[0][0] == {0, 1}
    assert kn.likely(0.2)[0][0] == {1}
    assert kn.likely(Fraction(1, 10))[0][0] == frozenset()
