import json
from collections import defaultdict, deque
from math import comb

import numpy as np
import pytest

from conftest import chain_mdp, make_mdp
from shieldq.automaton import compile_relaxed, trivial_fsa
from shieldq.harness import pickup_formula, prepare, preset
from shieldq.model import GridSpec, build_grid
from shieldq.product import (
    INF,
    AlphabetMismatch,
    build_product,
    build_time_product,
    check_assumptions,
    check_initial_condition,
    distance_to_accepting,
    epsilon_neighborhood,
    layer_distance,
)
from shieldq.twtl import parse


def test_one_state_product():
    mdp = make_mdp([[[(0, 1.0)]]], [set()])
    fsa = compile_relaxed(parse("[H^0 A]^[0,0]"))
    product = build_product(mdp, fsa)
    assert product.n_states == 1
    assert not product.accepting[0]


def test_chain_product_matches_enumeration():
    mdp = chain_mdp(3)
    fsa = compile_relaxed(parse("[H^0 A]^[0,2]"))
    product = build_product(mdp, fsa)
    # independent enumeration of the reachable pairs
    seen = set()
    queue = deque((s, fsa.step(fsa.initial, mdp.labels[s])) for s in range(3))
    while queue:
        pair = queue.popleft()
        if pair in seen:
            continue
        seen.add(pair)
        s, q = pair
        for entries in mdp.transitions[s]:
            for t, _ in entries:
                queue.append((t, fsa.step(q, mdp.labels[t])))
    assert set(product.states) == seen
    accepting = {st for st in seen if st[1] == fsa.accept}
    assert {product.states[p] for p in np.flatnonzero(product.accepting)} == accepting
    assert accepting == {(2, fsa.accept)}


def test_initial_states_consume_start_label():
    mdp = chain_mdp(3)
    fsa = compile_relaxed(parse("[H^0 A]^[0,2]"))
    product = build_product(mdp, fsa)
    for s, p in enumerate(product.initial):
        assert product.states[p] == (s, fsa.step(fsa.initial, mdp.labels[s]))
    assert product.accepting[product.initial[2]]


def test_alphabet_mismatch():
    mdp = make_mdp([[[(0, 1.0)]]], [{"Z"}])
    fsa = compile_relaxed(parse("[H^0 A]^[0,0]"))
    with pytest.raises(AlphabetMismatch):
        build_product(mdp, fsa)


def test_marginals_preserved(case1_setup):
    product, mdp = case1_setup.product, case1_setup.mdp
    for p, (s, q) in enumerate(product.states):
        for a in range(product.n_actions):
            agg = defaultdict(float)
            for r, pr in product.transitions[p][a]:
                agg[product.states[r][0]] += pr
            assert dict(agg) == pytest.approx(dict(mdp.transitions[s][a]))
            for r, _ in product.transitions[p][a]:
                t, q2 = product.states[r]
                assert q2 == product.fsa.step(q, mdp.labels[t])


def test_rewards_copied(case1_setup):
    product, mdp = case1_setup.product, case1_setup.mdp
    for p, (s, _) in enumerate(product.states):
        assert product.reward(p, 3) == mdp.rewards[s, 3]


def test_product_size_independent_of_deadlines():
    counts, sizes = [], []
    for deadline, T in ((20, 62), (30, 92), (40, 122)):
        config = preset("case1")
        config.formula = pickup_formula(deadline)
        setup = prepare(config, check=False)
        assert setup.time_product.horizon == T
        counts.append(setup.product.n_states)
        sizes.append(setup.time_product.n_states)
    assert counts[0] == counts[1] == counts[2]
    assert [s // counts[0] for s in sizes] == [62, 92, 122]


def test_time_product_size(case1_setup):
    product = case1_setup.product
    assert build_time_product(product, 1).n_states == product.n_states
    tp = build_time_product(product, 62)
    assert tp.n_states == product.n_states * 62
    assert tp.n_layers == 63
    with pytest.raises(ValueError):
        build_time_product(product, 0)


def test_time_product_layers(case1_setup):
    tp = case1_setup.time_product
    p = tp.initial[0][0]
    succ = tp.successors(p, 5, 2)
    assert all(t == 6 for (_, t), _ in succ)
    assert tp.successors(p, tp.horizon, 2) == []
    assert tp.state_id(3, 2) == 2 * case1_setup.product.n_states + 3


def test_neighborhood_interior_cell():
    mdp, kn = build_grid(GridSpec(8, 8))
    product = build_product(mdp, trivial_fsa(set(mdp.labels)), kn)
    p = product.initial[mdp.state_of((3, 3))]
    hood = epsilon_neighborhood(product, p, 0.1)
    cells = {mdp.cells[product.states[r][0]] for r in hood}
    assert cells == {(3 + dx, 3 + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
    assert epsilon_neighborhood(product, p, 0.05) == set()


def test_neighborhood_deterministic_self_loop():
    mdp = make_mdp([[[(0, 1.0)]]], [set()])
    product = build_product(mdp, compile_relaxed(parse("[H^0 A]^[0,0]")))
    assert epsilon_neighborhood(product, 0, 0.0) == {0}


def test_chain_distances():
    mdp = chain_mdp(3)
    product = build_product(mdp, compile_relaxed(parse("[H^0 A]^[0,2]")))
    d = distance_to_accepting(product, 0.0)
    by_cell = {product.states[p][0]: int(d[p]) for p in product.initial}
    assert by_cell == {0: 2, 1: 1, 2: 0}


def test_disconnected_distance_is_inf():
    mdp = make_mdp([[[(0, 1.0)]], [[(1, 1.0)]]], [set(), {"A"}])
    product = build_product(mdp, compile_relaxed(parse("[H^0 A]^[0,0]")))
    d = distance_to_accepting(product, 0.0)
    assert d[product.initial[0]] == INF
    assert d[product.initial[1]] == 0
    report = check_assumptions(product, 0.0)
    assert not report.passed and report.unreachable == [product.initial[0]]


def test_layer_lift():
    d = np.array([0, 3, INF])
    assert layer_distance(d, 1, 2, 5) == 3
    assert layer_distance(d, 1, 3, 5) == INF
    assert layer_distance(d, 2, 0, 5) == INF


def test_assumptions_pass_on_small_grid(small_setup):
    assert small_setup.report["assumptions"]["passed"]


def test_assumptions_fail_when_pickup_is_walled_off():
    ring = [(x, y) for x in (1, 2, 3) for y in (1, 2, 3) if (x, y) != (2, 2)]
    spec = GridSpec(5, 5, obstacles=ring, regions={"P": [(2, 2)], "D1": [(4, 4)], "D2": [(0, 4)], "Base": [(0, 0)]})
    mdp, kn = build_grid(spec)
    fsa = compile_relaxed(parse(pickup_formula(8)), alphabet=set(mdp.labels))
    product = build_product(mdp, fsa, kn)
    report = check_assumptions(product, 0.1)
    assert not report.passed
    assert report.unreachable
    assert all(distance_to_accepting(product, 0.1)[p] == INF for p in report.unreachable)
    assert report.summary()["unreachable_states"] == len(report.unreachable)


def test_assumptions_single_absorbing_accepting_state():
    mdp = make_mdp([[[(0, 1.0)]]], [{"A"}])
    product = build_product(mdp, compile_relaxed(parse("[H^0 A]^[0,0]")))
    assert check_assumptions(product, 0.1).passed


def test_distance_jump_detected():
    # action 1 from s0 (distance 2) can slip to s3 (distance 4)
    rows = [
        [[(1, 1.0)], [(1, 0.95), (3, 0.05)]],
        [[(2, 1.0)], [(2, 1.0)]],
        [[(2, 1.0)], [(2, 1.0)]],
        [[(4, 1.0)], [(4, 1.0)]],
        [[(5, 1.0)], [(5, 1.0)]],
        [[(6, 1.0)], [(6, 1.0)]],
        [[(2, 1.0)], [(2, 1.0)]],
    ]
    mdp = make_mdp(rows, [set(), set(), {"A"}, set(), set(), set(), set()])
    product = build_product(mdp, compile_relaxed(parse("[H^0 A]^[0,0]")))
    report = check_assumptions(product, 0.1)
    p0 = product.initial[0]
    assert any(j[0] == p0 and j[1] == 1 for j in report.jumps)
    assert not report.passed


def _bound(k, d, eps):
    if k < d:
        return 0.0
    return sum(comb(k, i) * eps**i * (1 - eps) ** (k - i) for i in range((k - d) // 2 + 1))


def test_initial_condition_cases(case1_setup):
    product = case1_setup.product
    tp = case1_setup.time_product
    d = case1_setup.distances
    assert check_initial_condition(tp, 0.1, 0.7, d)
    worst = max(int(d[p]) for p, _ in tp.initial)
    assert _bound(62, worst, 0.1) >= 0.7
    # deterministic: any finite distance within T passes
    d0 = distance_to_accepting(product, 0.0)
    assert check_initial_condition(tp, 0.0, 0.99, d0) == (max(int(d0[p]) for p, _ in tp.initial) <= 62)
    short = build_time_product(product, worst - 1)
    assert not check_initial_condition(short, 0.1, 0.1, d)


def test_product_json(small_setup):
    doc = json.loads(small_setup.product.to_json())
    assert len(doc["states"]) == small_setup.product.n_states
