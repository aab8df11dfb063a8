"""Experiment configuration, presets, result files and oracle reports."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .automaton import compile_relaxed, export_dot, trivial_fsa
from .learner import FALLBACK_MODES, Hyper, episodes_to_csv, train
from .model import GridSpec, SpecError, build_grid
from .oracle import dp_exact_reach, dp_worst_case_shielded
from .product import (
    INF,
    build_product,
    build_time_product,
    check_assumptions,
    check_initial_condition,
    distance_to_accepting,
)
from .shield import ShieldConfig, as_fraction, build_shield, reach_lower_bound_exact
from .twtl import TwtlError, parse, time_bound

LAST_WINDOW = 5000


class ConfigError(ValueError):
    pass


class AssumptionViolation(RuntimeError):
    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


def pickup_formula(deadline: int = 20) -> str:
    w = f"[0,{deadline}]"
    return f"[H^1 P]^{w} . ([H^1 D1]^{w} | [H^1 D2]^{w}) . [H^1 Base]^{w}"


def bundled_grid(name: str) -> Path:
    return Path(str(resources.files("shieldq") / "data" / f"{name}.json"))


@dataclass
class ExperimentConfig:
    formula: str | None = field(default_factory=pickup_formula)  # None: no task constraint
    grid: str = "fig3_grid"  # bundled layout name or path to a grid JSON
    eps_real: float = 0.1  # slip probability of the simulated environment
    eps_est: float = 0.1  # uncertainty level the shield is built for
    pr_des: float = 0.7
    episodes: int = 50_000
    horizon: int | None = None  # defaults to the formula's time bound
    gamma: float = 0.95
    alpha: float = 0.1
    alpha_schedule: str = "constant"
    explore_rate: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    shielded: bool = True
    reward: str = "mdp"
    fallback: str = "sticky"
    start: list | None = None  # overrides the grid's start cell
    name: str = "run"
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 <= self.eps_est < 1:
            raise ConfigError(f"eps_est must lie in [0, 1), got {self.eps_est}")
        if not 0 <= self.eps_real < 1:
            raise ConfigError(f"eps_real must lie in [0, 1), got {self.eps_real}")
        if not 0 <= self.pr_des < 1:
            raise ConfigError(f"pr_des must lie in [0, 1), got {self.pr_des}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.episodes < 1:
            raise ConfigError("episodes must be positive")
        if self.fallback not in FALLBACK_MODES:
            raise ConfigError(f"unknown fallback mode {self.fallback!r}")
        if self.formula is None and self.horizon is None:
            raise ConfigError("an unconstrained run needs an explicit horizon")
        if self.formula is not None:
            try:
                parse(self.formula)
            except TwtlError as exc:
                raise ConfigError(f"bad formula: {exc}") from exc
        if not self.grid_path().is_file():
            raise ConfigError(f"grid file not found: {self.grid}")
        try:
            self.hyper(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid_path(self) -> Path:
        path = Path(self.grid)
        if path.suffix == ".json" or path.exists():
            return path
        return bundled_grid(self.grid)

    def hyper(self, seed: int) -> Hyper:
        return Hyper(
            episodes=self.episodes,
            gamma=self.gamma,
            alpha=self.alpha,
            alpha_schedule=self.alpha_schedule,
            explore_rate=self.explore_rate,
            seed=seed,
            reward=self.reward,
            fallback=self.fallback,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if base is not None and "grid" in doc and doc["grid"].endswith(".json"):
            path = Path(doc["grid"])
            if not path.is_absolute():
                doc["grid"] = str(base / path)
        if "seeds" in doc and isinstance(doc["seeds"], int):
            doc["seeds"] = [doc["seeds"]]
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, base=path.parent)


SWEEP_EPS = (0.1, 0.15, 0.2)
SWEEP_PR = (0.5, 0.6, 0.7)
CASE5_DEADLINES = (20, 30, 40)


def preset(name: str) -> ExperimentConfig:
    """Configurations for the five grid-world cases.

    ``case4`` is the base cell of the sweep and ``case5`` the base of the
    deadline study; ``run_case`` expands both.
    """
    if name == "case1":
        return ExperimentConfig(name=name)
    if name == "case2":
        return ExperimentConfig(formula=None, horizon=62, shielded=False, name=name)
    if name == "case3":
        return ExperimentConfig(shielded=False, reward="accepting", name=name)
    if name == "case4":
        # per-seed last-window rewards are noisy; cells average five seeds
        return ExperimentConfig(seeds=[0, 1, 2, 3, 4], name=name)
    if name == "case5":
        return ExperimentConfig(eps_est=0.15, pr_des=0.7, name=name)
    if name == "small":
        return ExperimentConfig(
            formula="[H^1 P]^[0,8] . ([H^1 D1]^[0,8] | [H^1 D2]^[0,8]) . [H^1 Base]^[0,8]",
            grid="grid4", episodes=5000, name=name,
        )
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("case1", "case2", "case3", "case4", "case5", "small")


def resolve(target: str) -> ExperimentConfig:
    """A preset name or a path to a JSON config."""
    if target in PRESETS:
        return preset(target)
    return ExperimentConfig.load(target)


@dataclass
class Setup:
    config: ExperimentConfig
    grid: GridSpec
    mdp: object
    fsa: object
    product: object
    time_product: object
    distances: np.ndarray
    shield: object
    start_state: int
    report: dict


def prepare(config: ExperimentConfig, exact: bool = False, check: bool = True) -> Setup:
    """Build the environment, automaton, product and shield; run the pre-training checks."""
    try:
        grid = GridSpec.load(config.grid_path())
    except (OSError, SpecError) as exc:
        raise ConfigError(f"bad grid {config.grid}: {exc}") from exc
    grid.p_intended = float(1 - as_fraction(config.eps_real))
    mdp, knowledge = build_grid(grid, exact=exact)
    if config.formula is None:
        fsa = trivial_fsa(set(mdp.labels))
        horizon = config.horizon
    else:
        fsa = compile_relaxed(parse(config.formula), alphabet=set(mdp.labels))
        horizon = config.horizon or time_bound(parse(config.formula))
    product = build_product(mdp, fsa, knowledge)
    time_product = build_time_product(product, horizon)
    eps = as_fraction(config.eps_est) if exact else config.eps_est
    distances = distance_to_accepting(product, eps)
    assumptions = check_assumptions(product, eps, distances)
    initial_ok = check_initial_condition(time_product, eps, config.pr_des, distances)
    report = {
        "assumptions": assumptions.summary(),
        "initial_condition": bool(initial_ok),
        "horizon": horizon,
        "fsa_states": fsa.n_states,
        "product_states": product.n_states,
        "time_product_states": time_product.n_states,
    }
    if check and config.shielded:
        if not assumptions.passed:
            raise AssumptionViolation("distance assumptions fail on this product", report)
        if not initial_ok:
            raise AssumptionViolation("reachability bound below pr_des at an initial state", report)
    shield = None
    if config.shielded:
        shield = build_shield(time_product, ShieldConfig(eps, config.pr_des, horizon), distances)
    start = config.start if config.start is not None else (grid.start or mdp.cells[0])
    try:
        start_state = mdp.state_of(start)
    except ValueError as exc:
        raise ConfigError(f"start cell {start} is not a free cell") from exc
    return Setup(config, grid, mdp, fsa, product, time_product, distances, shield, start_state, report)


def input_hash(config: ExperimentConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    h.update(config.grid_path().read_bytes())
    return h.hexdigest()


def summarize(records) -> dict:
    """Summary numbers; each is a function of the per-episode rows alone."""
    n = len(records)
    window = records[-LAST_WINDOW:]
    return {
        "episodes": n,
        "success_ratio": sum(r.satisfied for r in records) / n,
        "success_ratio_last_window": sum(r.satisfied for r in window) / len(window),
        "avg_reward_last_window": sum(r.reward for r in window) / len(window),
        "avg_reward": sum(r.reward for r in records) / n,
        "fallback_episodes": sum(r.fallback_steps > 0 for r in records),
    }


def summarize_csv(path) -> dict:
    """Recompute :func:`summarize` from a per-episode CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = len(rows)
    window = rows[-LAST_WINDOW:]
    return {
        "episodes": n,
        "success_ratio": sum(int(r["satisfied"]) for r in rows) / n,
        "success_ratio_last_window": sum(int(r["satisfied"]) for r in window) / len(window),
        "avg_reward_last_window": sum(float(r["reward"]) for r in window) / len(window),
        "avg_reward": sum(float(r["reward"]) for r in rows) / n,
        "fallback_episodes": sum(int(r["fallback_steps"]) > 0 for r in rows),
    }


def greedy_path(setup: Setup, policy: np.ndarray, start_state: int) -> list:
    """Cells visited by the greedy policy when every move goes where intended."""
    product, mdp = setup.product, setup.mdp
    p = product.initial[start_state]
    path = [list(mdp.cells[product.states[p][0]])]
    for t in range(setup.time_product.horizon):
        a = int(policy[p, t])
        entries = product.transitions[p][a]
        p = max(entries, key=lambda e: (e[1], -e[0]))[0]
        path.append(list(mdp.cells[product.states[p][0]]))
    return path


def _run_seed(config_doc: dict, seed: int, out_dir: str) -> dict:
    config = ExperimentConfig.from_dict(config_doc)
    setup = prepare(config)
    out = Path(out_dir)
    t0 = time.perf_counter()
    result = train(setup.time_product, setup.shield, config.hyper(seed), start_state=setup.start_state)
    elapsed = time.perf_counter() - t0
    with open(out / f"episodes_seed{seed}.csv", "w", newline="") as fh:
        episodes_to_csv(result.episodes, fh)
    summary = summarize(result.episodes)
    summary["seed"] = seed
    summary["wall_clock_s"] = elapsed
    if config.formula is None:
        path = greedy_path(setup, result.policy, setup.start_state)
        (out / f"greedy_path_seed{seed}.json").write_text(json.dumps(path))
    return summary


def _execute(config: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    """Train every seed of ``config`` and write its result files into ``out``."""
    setup = prepare(config)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fsa.dot").write_text(export_dot(setup.fsa))
    manifest = {
        "config": config.to_dict(),
        "input_sha256": input_hash(config),
        "checks": setup.report,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    doc = config.to_dict()
    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_run_seed, [doc] * len(config.seeds), config.seeds, [str(out)] * len(config.seeds)))
    else:
        per_seed = [_run_seed(doc, seed, str(out)) for seed in config.seeds]
    summary = {
        "name": config.name,
        "eps_est": config.eps_est,
        "pr_des": config.pr_des,
        "product_states": setup.product.n_states,
        "time_product_states": setup.time_product.n_states,
        "horizon": setup.time_product.horizon,
        "success_ratio": float(np.mean([s["success_ratio"] for s in per_seed])),
        "avg_reward_last_window": float(np.mean([s["avg_reward_last_window"] for s in per_seed])),
        "wall_clock_s": float(sum(s["wall_clock_s"] for s in per_seed)),
        "seeds": per_seed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def run_case(target, out_dir, jobs: int = 1) -> dict:
    """Run a preset name, a config path or an :class:`ExperimentConfig`.

    ``case4`` runs the full sweep and ``case5`` the three deadlines.
    """
    out = Path(out_dir)
    if isinstance(target, ExperimentConfig):
        return _execute(target, out, jobs)
    if target == "case4":
        return sweep(preset("case4"), out, jobs=jobs)
    if target == "case5":
        return deadline_study(preset("case5"), out, jobs=jobs)
    return _execute(resolve(target), out, jobs)


def _sweep_cell(args) -> dict:
    doc, out = args
    return _execute(ExperimentConfig.from_dict(doc), Path(out))


def sweep(base: ExperimentConfig, out_dir, eps_values=SWEEP_EPS, pr_values=SWEEP_PR, jobs: int = 1) -> dict:
    """Run every (eps_est, pr_des) cell and write a Table-1-shaped CSV.

    Rows of ``table.csv`` are ``(metric, pr_des)``; columns are eps_est values.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for pr in pr_values:
        for eps in eps_values:
            cell = copy.deepcopy(base)
            cell.eps_est, cell.pr_des = eps, pr
            cell.name = f"{base.name}_eps{eps}_pr{pr}"
            cell.validate()
            tasks.append((cell.to_dict(), str(out / cell.name)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, tasks))
    else:
        cells = [_sweep_cell(t) for t in tasks]
    lookup = {(c["eps_est"], c["pr_des"]): c for c in cells}
    with open(out / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "pr_des"] + [f"eps_{e}" for e in eps_values])
        for metric in ("success_ratio", "avg_reward_last_window"):
            for pr in pr_values:
                writer.writerow([metric, pr] + [repr(lookup[(e, pr)][metric]) for e in eps_values])
    result = {"name": base.name, "cells": cells}
    (out / "sweep.json").write_text(json.dumps(result, indent=2))
    return result


def deadline_study(base: ExperimentConfig, out_dir, deadlines=CASE5_DEADLINES, jobs: int = 1) -> dict:
    """Train the pickup task with each window deadline; report sizes and success."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for deadline in deadlines:
        cell = copy.deepcopy(base)
        cell.formula = pickup_formula(deadline)
        cell.horizon = None
        cell.name = f"{base.name}_deadline{deadline}"
        cell.validate()
        tasks.append((cell.to_dict(), str(out / cell.name)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, tasks))
    else:
        cells = [_sweep_cell(t) for t in tasks]
    for deadline, cell in zip(deadlines, cells):
        cell["deadline"] = deadline
    result = {"name": base.name, "cells": cells}
    (out / "deadlines.json").write_text(json.dumps(result, indent=2))
    return result


def sizes(config: ExperimentConfig) -> dict:
    """Automaton, product and time-product sizes without training."""
    setup = prepare(config, check=False)
    return {k: setup.report[k] for k in ("horizon", "fsa_states", "product_states", "time_product_states")}


def oracle_report(config: ExperimentConfig) -> dict:
    """Exact comparison of the go policy and the shield against the bound.

    Counts ``(p, k)`` pairs where the go policy's reach probability falls
    below the bound, and gives the worst-case satisfaction probability of
    the shielded learner from every start state, for both fallback modes.
    """
    setup = prepare(config, exact=True)
    product, horizon = setup.product, setup.time_product.horizon
    eps = as_fraction(config.eps_est)
    go = setup.shield.go if setup.shield is not None else build_shield(
        setup.time_product, ShieldConfig(eps, config.pr_des, horizon), setup.distances).go
    values = dp_exact_reach(product, horizon, lambda p, k: int(go[p]))
    violations = []
    checked = 0
    for p in range(product.n_states):
        d = int(setup.distances[p])
        if d >= INF:
            continue
        for k in range(horizon + 1):
            checked += 1
            bound = reach_lower_bound_exact(k, d, eps)
            if values[k][p] < bound:
                violations.append({"state": p, "k": k, "value": float(values[k][p]), "bound": float(bound)})
    report = {
        "go_bound_pairs_checked": checked,
        "go_bound_violations": violations,
        "pr_des": config.pr_des,
    }
    if setup.shield is not None:
        pr_des = as_fraction(config.pr_des)
        starts = sorted(set(product.initial))
        for mode in FALLBACK_MODES:
            worst = dp_worst_case_shielded(product, horizon, setup.shield, mode)
            low = min(worst[horizon][p] for p in starts)
            report[f"worst_case_{mode}"] = float(low)
            report[f"worst_case_{mode}_meets"] = bool(low >= pr_des)
    return report
