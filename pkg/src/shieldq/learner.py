"""Episodic Q-learning over the time-product MDP with the shield in the loop."""
from __future__ import annotations

import csv
import io
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from itertools import accumulate

import numpy as np

from .product import TimeProductMdp
from .shield import Shield


class ShieldViolation(AssertionError):
    pass


FALLBACK_MODES = ("sticky", "stateless")


@dataclass
class Hyper:
    episodes: int = 50_000
    gamma: float = 0.95
    alpha: float = 0.1
    alpha_schedule: str = "constant"  # or "visits": 1 / (1 + visits(z, a))
    explore_rate: float = 0.1
    seed: int = 0
    reward: str = "mdp"  # or "accepting": 1 per step spent in an accepting state
    # "sticky": once the go policy takes over it keeps control until acceptance;
    # "stateless": consult Act(z) afresh at every step
    fallback: str = "sticky"

    def __post_init__(self):
        if self.alpha_schedule not in ("constant", "visits"):
            raise ValueError(f"unknown learning-rate schedule {self.alpha_schedule!r}")
        if self.reward not in ("mdp", "accepting"):
            raise ValueError(f"unknown reward source {self.reward!r}")
        if self.fallback not in FALLBACK_MODES:
            raise ValueError(f"unknown fallback mode {self.fallback!r}")


@dataclass
class QTable:
    values: np.ndarray  # [product state, t, action]
    visits: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state", "t", "action", "value"])
        for p, t, a in zip(*np.nonzero(self.visits)):
            writer.writerow([p, t, a, repr(float(self.values[p, t, a]))])
        return buf.getvalue()


@dataclass
class EpisodeRecord:
    index: int
    satisfied: bool
    sat_time: int | None  # first clock value at which the accepting set was entered
    tau: int | None  # sat_time - T
    reward: float
    discounted: float
    fallback_steps: int  # steps where Act(z) was empty and the go policy acted
    word: list | None = None
    trace: list | None = field(default=None, repr=False)  # (p, t, a, fallback)

    def row(self) -> dict:
        out = asdict(self)
        out.pop("word")
        out.pop("trace")
        return out


EPISODE_FIELDS = ["index", "satisfied", "sat_time", "tau", "reward", "discounted", "fallback_steps"]


def episodes_to_csv(records, fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=EPISODE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        row = rec.row()
        row["satisfied"] = int(row["satisfied"])
        row["reward"] = repr(row["reward"])
        row["discounted"] = repr(row["discounted"])
        writer.writerow(row)


@dataclass
class TrainResult:
    qtable: QTable
    policy: np.ndarray
    episodes: list
    final_state: int


class _Tables:
    """Plain-list views of the time-product; list indexing is much faster than numpy scalars."""

    def __init__(self, time_product: TimeProductMdp, shield: Shield | None, reward: str):
        product = time_product.product
        self.T = time_product.horizon
        self.n = product.n_states
        self.A = product.n_actions
        self.succ = [[[q for q, _ in entries] for entries in row] for row in product.transitions]
        self.cum = [
            [list(accumulate(float(pr) for _, pr in entries)) for entries in row]
            for row in product.transitions
        ]
        for row in self.cum:
            for c in row:
                c[-1] = 1.0 + 1e-12  # guard against rounding at the tail
        self.accepting = [bool(x) for x in product.accepting]
        if reward == "mdp":
            self.reward = [[product.reward(p, a) for a in range(self.A)] for p in range(self.n)]
        else:
            self.reward = [[0.0] * self.A for _ in range(self.n)]
        self.cell = [s for s, _ in product.states]
        self.labels = [product.mdp.labels[s] for s, _ in product.states]
        self.initial = product.initial
        every = tuple(range(self.A))
        if shield is None:
            self.allowed = [[every] * (self.T + 1) for _ in range(self.n)]
            self.go = [-1] * self.n
        else:
            allowed = shield.act.allowed
            self.allowed = [
                [tuple(int(a) for a in np.flatnonzero(allowed[p, k])) for k in range(self.T + 1)]
                for p in range(self.n)
            ]
            self.go = [int(a) for a in shield.go]


def train(
    time_product: TimeProductMdp,
    shield: Shield | None,
    hyper: Hyper,
    start_state: int = 0,
    keep_traces: bool = False,
) -> TrainResult:
    """Run ``hyper.episodes`` episodes of T steps each.

    The environment is the product's own (true) transition table.  With a
    shield, exploration and exploitation are both confined to ``Act(z)``
    and the go policy acts whenever ``Act(z)`` is empty.  ``shield=None``
    gives plain Q-learning over the time-product.
    """
    tab = _Tables(time_product, shield, hyper.reward)
    T, A = tab.T, tab.A
    Q = [[[0.0] * A for _ in range(tab.n)] for _ in range(T)]
    visits = [[[0] * A for _ in range(tab.n)] for _ in range(T)]
    rng = np.random.default_rng(hyper.seed)
    gamma, explore = hyper.gamma, hyper.explore_rate
    alpha_const = hyper.alpha
    by_visits = hyper.alpha_schedule == "visits"
    accept_reward = hyper.reward == "accepting"
    sticky = hyper.fallback == "sticky"
    succ, cum, allowed, go, accepting, reward = (
        tab.succ, tab.cum, tab.allowed, tab.go, tab.accepting, tab.reward,
    )

    records = []
    s = start_state
    for j in range(hyper.episodes):
        p = tab.initial[s]
        u = rng.random(3 * T).tolist()
        total = disc = 0.0
        fallback = 0
        locked = False
        sat_time = 0 if accepting[p] else None
        word = [tab.labels[p]] if keep_traces else None
        trace = [] if keep_traces else None
        for t in range(T):
            acts = allowed[p][T - t]
            Qz = Q[t][p]
            if locked or not acts:
                a = go[p]
                if a < 0:
                    raise ShieldViolation(f"no admissible action at product state {p}, t={t}")
                locked = sticky
                fallback += 1
            elif u[3 * t] < explore:
                a = acts[int(u[3 * t + 1] * len(acts))]
            else:
                a = max(acts, key=Qz.__getitem__)
            nxt = succ[p][a][bisect_right(cum[p][a], u[3 * t + 2])]
            if accept_reward:
                r = 1.0 if accepting[nxt] else 0.0
            else:
                r = reward[p][a]
            target = r + gamma * max(Q[t + 1][nxt]) if t + 1 < T else r
            if by_visits:
                alpha = 1.0 / (1 + visits[t][p][a])
            else:
                alpha = alpha_const
            Qz[a] = (1 - alpha) * Qz[a] + alpha * target
            visits[t][p][a] += 1
            total += r
            disc += gamma**t * r
            if keep_traces:
                trace.append((p, t, a, locked or not acts))
                word.append(tab.labels[nxt])
            p = nxt
            if sat_time is None and accepting[p]:
                sat_time = t + 1
            if accepting[p]:
                locked = False
        s = tab.cell[p]
        records.append(EpisodeRecord(
            j, sat_time is not None, sat_time,
            None if sat_time is None else sat_time - T,
            total, disc, fallback, word, trace,
        ))

    qtable = QTable(
        np.array(Q, dtype=float).transpose(1, 0, 2).copy(),
        np.array(visits, dtype=np.int64).transpose(1, 0, 2).copy(),
    )
    return TrainResult(qtable, greedy_policy(qtable, shield), records, s)


def greedy_policy(qtable: QTable, shield: Shield | None = None) -> np.ndarray:
    """``policy[p, t]``: argmax of Q over Act(p, T - t), or the go action when Act is empty.

    Ties go to the lowest action id.
    """
    values = qtable.values
    n, T, A = values.shape
    policy = np.empty((n, T), dtype=np.int64)
    for p in range(n):
        for t in range(T):
            if shield is None:
                policy[p, t] = int(np.argmax(values[p, t]))
                continue
            mask = shield.act.allowed[p, T - t]
            if mask.any():
                masked = np.where(mask, values[p, t], -np.inf)
                policy[p, t] = int(np.argmax(masked))
            else:
                policy[p, t] = int(shield.go[p])
    return policy


@dataclass
class Metrics:
    success_ratio: float
    mean_reward: float
    mean_discounted: float
    episodes: list


def evaluate(
    policy: np.ndarray,
    time_product: TimeProductMdp,
    episodes: int,
    seed: int,
    shield: Shield | None = None,
    start_state: int = 0,
    gamma: float = 0.95,
    fallback: str = "sticky",
) -> Metrics:
    """Run a fixed policy; consecutive episodes chain through the physical state.

    With a shield, the go action replaces the policy wherever Act is empty
    (and, in sticky mode, until acceptance), and a policy action outside Act
    is replaced by the lowest permitted one.
    """
    if fallback not in FALLBACK_MODES:
        raise ValueError(f"unknown fallback mode {fallback!r}")
    tab = _Tables(time_product, shield, "mdp")
    T = tab.T
    rng = np.random.default_rng(seed)
    s = start_state
    records = []
    for j in range(episodes):
        p = tab.initial[s]
        u = rng.random(T).tolist()
        total = disc = 0.0
        sat_time = 0 if tab.accepting[p] else None
        steps = 0
        locked = False
        for t in range(T):
            acts = tab.allowed[p][T - t]
            a = int(policy[p, t])
            if locked or not acts:
                a = tab.go[p]
                locked = fallback == "sticky"
                steps += 1
            elif a not in acts:
                a = acts[0]
            r = tab.reward[p][a]
            total += r
            disc += gamma**t * r
            p = tab.succ[p][a][bisect_right(tab.cum[p][a], u[t])]
            if sat_time is None and tab.accepting[p]:
                sat_time = t + 1
            if tab.accepting[p]:
                locked = False
        s = tab.cell[p]
        records.append(EpisodeRecord(
            j, sat_time is not None, sat_time,
            None if sat_time is None else sat_time - T, total, disc, steps,
        ))
    n = max(len(records), 1)
    return Metrics(
        sum(r.satisfied for r in records) / n,
        sum(r.reward for r in records) / n,
        sum(r.discounted for r in records) / n,
        records,
    )
