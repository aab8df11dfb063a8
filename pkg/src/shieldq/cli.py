"""Command-line entry point: ``shieldq compile|check|train|sweep|oracle``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .automaton import compile_relaxed, export_dot, powerset_alphabet, symbol_text
from .harness import (
    AssumptionViolation,
    ConfigError,
    deadline_study,
    oracle_report,
    prepare,
    resolve,
    run_case,
    sweep,
)
from .twtl import TwtlError, literal_alphabet, parse, time_bound

OUTPUT_ENV = "SHIELDQ_OUTPUT"


def _output_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _load(args):
    config = resolve(args.target)
    if getattr(args, "seed", None):
        config.seeds = list(args.seed)
    if getattr(args, "episodes", None):
        config.episodes = args.episodes
    config.validate()
    return config


def cmd_compile(args) -> int:
    ast = parse(args.formula)
    atoms = literal_alphabet(ast)
    fsa = compile_relaxed(ast, alphabet=powerset_alphabet(atoms))
    print(f"T = {time_bound(ast)}")
    print(f"states = {fsa.n_states}")
    print(f"accepting = {sorted(fsa.accepting)}")
    print(f"alphabet = {len(fsa.alphabet)} symbols over {{{', '.join(atoms)}}}")
    word = fsa.shortest_accepting_word()
    if word is not None:
        print("shortest accepting word = " + " ".join(symbol_text(s) for s in word))
    if args.dot:
        print(export_dot(fsa))
    return 0


def cmd_check(args) -> int:
    config = _load(args)
    setup = prepare(config, check=False)
    report = dict(setup.report)
    report["passed"] = report["assumptions"]["passed"] and report["initial_condition"]
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def cmd_train(args) -> int:
    out = _output_root(args)
    if args.target == "case4":
        result = sweep(_load(args), out / "case4", jobs=args.jobs)
    elif args.target == "case5":
        result = deadline_study(_load(args), out / "case5", jobs=args.jobs)
    else:
        config = _load(args)
        result = run_case(config, out / config.name, jobs=args.jobs)
    print(json.dumps(result, indent=2))
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    eps = tuple(args.eps) if args.eps else None
    prs = tuple(args.pr) if args.pr else None
    kwargs = {}
    if eps:
        kwargs["eps_values"] = eps
    if prs:
        kwargs["pr_values"] = prs
    result = sweep(config, _output_root(args) / f"{config.name}_sweep", jobs=args.jobs, **kwargs)
    for cell in result["cells"]:
        print(f"eps_est={cell['eps_est']:<5} pr_des={cell['pr_des']:<4} "
              f"success={cell['success_ratio']:.4f} reward={cell['avg_reward_last_window']:.1f}")
    return 0


def cmd_oracle(args) -> int:
    config = _load(args)
    report = oracle_report(config)
    print(json.dumps(report, indent=2))
    ok = not report["go_bound_violations"] and report.get(f"worst_case_{config.fallback}_meets", True)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shieldq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="time bound and automaton of a formula")
    p.add_argument("formula")
    p.add_argument("--dot", action="store_true", help="also print the automaton in DOT")
    p.set_defaults(func=cmd_compile)

    def target(p):
        p.add_argument("target", help="preset name (case1..case5, small) or config JSON path")
        p.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
        p.add_argument("--episodes", type=int)

    p = sub.add_parser("check", help="distance assumptions and initial-condition report")
    target(p)
    p.set_defaults(func=cmd_check)

    for name, func, text in (("train", cmd_train, "train and write result files"),
                             ("sweep", cmd_sweep, "grid of (eps_est, pr_des) cells")):
        p = sub.add_parser(name, help=text)
        target(p)
        p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
        p.add_argument("--jobs", type=int, default=1)
        if name == "sweep":
            p.add_argument("--eps", type=float, nargs="+")
            p.add_argument("--pr", type=float, nargs="+")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle", help="exact go-policy and shield checks (small instances)")
    target(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AssumptionViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.report, indent=2), file=sys.stderr)
        return 3
    except (ConfigError, TwtlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
