"""Exact backward-induction reachability, used to check the shield independently.

These work directly on the product's true transition probabilities.  Pass a
product built from an ``exact=True`` grid to get Fraction-valued results.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from .product import ProductMdp
from .shield import Shield


def _expect(entries, values):
    return sum((pr * values[q] for q, pr in entries), Fraction(0) if _is_exact(entries) else 0.0)


def _is_exact(entries) -> bool:
    return bool(entries) and isinstance(entries[0][1], Fraction)


def dp_exact_reach(product: ProductMdp, horizon: int, policy: Callable[[int, int], int]) -> list:
    """``V[k][p]``: probability of reaching the accepting set within ``k`` steps.

    ``policy(p, k)`` gives the action taken at product state ``p`` with ``k``
    steps remaining.
    """
    one = Fraction(1) if _is_exact(product.transitions[0][0]) else 1.0
    zero = one - one
    values = [[one if acc else zero for acc in product.accepting]]
    for k in range(1, horizon + 1):
        prev = values[-1]
        values.append([
            one if product.accepting[p] else _expect(product.transitions[p][policy(p, k)], prev)
            for p in range(product.n_states)
        ])
    return values


def dp_worst_case_shielded(
    product: ProductMdp, horizon: int, shield: Shield, fallback: str = "sticky"
) -> list:
    """``W[k][p]``: satisfaction probability when every free choice is adversarial.

    Where ``Act(p, k)`` is non-empty the minimum over permitted actions is
    taken; elsewhere the go action is forced.  In ``sticky`` mode a forced
    state continues with the go policy alone (its value is the go policy's
    reach probability); in ``stateless`` mode the adversary regains control
    whenever ``Act`` becomes non-empty again.  Either way the result bounds
    from below every rule that picks its actions inside ``Act``.
    """
    one = Fraction(1) if _is_exact(product.transitions[0][0]) else 1.0
    zero = one - one
    if fallback == "sticky":
        go_values = dp_exact_reach(product, horizon, lambda p, k: int(shield.go[p]))
    elif fallback != "stateless":
        raise ValueError(f"unknown fallback mode {fallback!r}")
    values = [[one if acc else zero for acc in product.accepting]]
    for k in range(1, horizon + 1):
        prev = values[-1]
        row = []
        for p in range(product.n_states):
            if product.accepting[p]:
                row.append(one)
                continue
            acts = np.flatnonzero(shield.act.allowed[p, k])
            if len(acts) == 0 and fallback == "sticky":
                row.append(go_values[k][p])
            elif len(acts) == 0:
                row.append(_expect(product.transitions[p][int(shield.go[p])], prev))
            else:
                row.append(min(_expect(product.transitions[p][int(a)], prev) for a in acts))
        values.append(row)
    return values
