"""Reachability lower bound, offline action pruning and the go-to-accepting policy."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .product import INF, ProductMdp, TimeProductMdp


class DomainError(ValueError):
    pass


class NoViablePath(RuntimeError):
    pass


def as_fraction(x) -> Fraction:
    """Exact value of a probability as written (0.1 -> 1/10, not the binary double)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@lru_cache(maxsize=None)
def _binom_cdf(n: int, m: int, eps: Fraction) -> Fraction:
    # P[Bin(n, eps) <= m]; Fraction powers give 0**0 == 1
    return sum(
        (comb(n, i) * eps**i * (1 - eps) ** (n - i) for i in range(min(m, n) + 1)),
        Fraction(0),
    )


def _check_eps(eps: Fraction):
    if not 0 <= eps < 1:
        raise DomainError(f"uncertainty level must lie in [0, 1), got {eps}")


def reach_lower_bound_exact(k: int, d: int, eps) -> Fraction:
    eps = as_fraction(eps)
    _check_eps(eps)
    if k < 0 or d < 0:
        raise DomainError("steps and distance must be non-negative")
    if d >= INF or k < d:
        return Fraction(0)
    return _binom_cdf(k, (k - d) // 2, eps)


def reach_lower_bound(k: int, d: int, eps) -> float:
    """Lower bound on reaching the accepting set within ``k`` steps from distance ``d``.

    Sum over i <= (k - d) // 2 of C(k, i) eps^i (1 - eps)^(k - i); zero when
    ``k < d`` or ``d`` is INF.
    """
    return float(reach_lower_bound_exact(k, d, eps))


def bound_meets(k: int, d: int, eps, pr_des) -> bool:
    return reach_lower_bound_exact(k, d, eps) >= as_fraction(pr_des)


@dataclass(frozen=True)
class ShieldConfig:
    eps: float
    pr_des: float
    horizon: int

    def __post_init__(self):
        _check_eps(as_fraction(self.eps))
        if not 0 <= self.pr_des < 1:
            raise DomainError(f"desired probability must lie in [0, 1), got {self.pr_des}")
        if self.horizon < 1:
            raise DomainError("episode length must be positive")


@dataclass
class ActTable:
    """Permitted actions per (product state, remaining steps k), k = 1..T."""

    allowed: np.ndarray  # bool [n_product_states, T + 1, n_actions]; k = 0 unused

    @property
    def horizon(self) -> int:
        return self.allowed.shape[1] - 1

    def actions(self, p: int, k: int) -> list[int]:
        return [int(a) for a in np.flatnonzero(self.allowed[p, k])]

    def is_empty(self, p: int, k: int) -> bool:
        return not self.allowed[p, k].any()

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state", "k", "mask"])
        weights = 1 << np.arange(self.allowed.shape[2])
        masks = (self.allowed.astype(np.int64) * weights).sum(axis=2)
        for p in range(self.allowed.shape[0]):
            for k in range(1, self.horizon + 1):
                writer.writerow([p, k, int(masks[p, k])])
        return buf.getvalue()

    @classmethod
    def permissive(cls, n_states: int, horizon: int, n_actions: int) -> "ActTable":
        return cls(np.ones((n_states, horizon + 1, n_actions), dtype=bool))


def prune_actions(time_product: TimeProductMdp, config: ShieldConfig, distances: np.ndarray) -> ActTable:
    """Remove every action whose worst feasible successor cannot keep the bound.

    Action ``a`` at non-accepting ``(p, k)`` survives iff, with ``d_max`` the
    largest successor distance, ``(k - 1 - d_max) // 2 >= 0`` and the bound
    over ``k - 1`` steps is at least ``pr_des``.  Feasible successors come
    from the knowledge sets; distances are the epsilon-stochastic ones.
    """
    product = time_product.product
    horizon = time_product.horizon
    if config.horizon != horizon:
        raise ValueError("shield horizon differs from the time-product horizon")
    eps = as_fraction(config.eps)
    pr_des = as_fraction(config.pr_des)
    allowed = np.ones((product.n_states, horizon + 1, product.n_actions), dtype=bool)

    keep_cache: dict[int, np.ndarray] = {}

    def keep_for(d_max: int) -> np.ndarray:
        if d_max not in keep_cache:
            keep = np.zeros(horizon + 1, dtype=bool)
            if d_max < INF:
                for k in range(1, horizon + 1):
                    i_max = (k - 1 - d_max) // 2
                    keep[k] = i_max >= 0 and _binom_cdf(k - 1, i_max, eps) >= pr_des
            keep_cache[d_max] = keep
        return keep_cache[d_max]

    for p in range(product.n_states):
        if product.accepting[p]:
            continue
        for a, succ in enumerate(product.feasible[p]):
            d_max = max(int(distances[r]) for r in succ) if succ else INF
            allowed[p, :, a] = keep_for(d_max)
    allowed[:, 0, :] = False
    allowed[product.accepting, :, :] = True
    return ActTable(allowed)


def min_likely_distance(product: ProductMdp, p: int, eps, distances: np.ndarray) -> list[int]:
    likely = product.likely(eps)[p]
    return [min((int(distances[r]) for r in succ), default=INF) for succ in likely]


def go_policy(product: ProductMdp, p: int, remaining: int, eps, distances: np.ndarray) -> int:
    """Action minimizing the smallest distance among epsilon-likely successors.

    The choice uses the time-invariant distances, so it is defined even when
    ``remaining`` is too short to reach the accepting set.  Ties go to the
    lowest action id.
    """
    scores = min_likely_distance(product, p, eps, distances)
    best = min(range(len(scores)), key=lambda a: (scores[a], a))
    if scores[best] >= INF:
        raise NoViablePath(f"no action from product state {p} reaches the accepting set")
    return best


def go_table(product: ProductMdp, eps, distances: np.ndarray) -> np.ndarray:
    """Stationary go-to-accepting action per product state (-1 where none exists)."""
    table = np.full(product.n_states, -1, dtype=np.int64)
    for p in range(product.n_states):
        try:
            table[p] = go_policy(product, p, 0, eps, distances)
        except NoViablePath:
            pass
    return table


@dataclass
class Shield:
    """Everything the learner needs at run time: pruned actions and the fallback."""

    config: ShieldConfig
    act: ActTable
    go: np.ndarray
    distances: np.ndarray


def build_shield(time_product: TimeProductMdp, config: ShieldConfig, distances: np.ndarray | None = None) -> Shield:
    from .product import distance_to_accepting

    if distances is None:
        distances = distance_to_accepting(time_product.product, config.eps)
    act = prune_actions(time_product, config, distances)
    return Shield(config, act, go_table(time_product.product, config.eps, distances), distances)
