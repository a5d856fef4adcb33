"""Command-line entry point: ``kaaslab <command> [options]``.

Exit status: 0 on success, 2 for usage or config errors, 3 when a required
input (transition table, knowledge base) is missing or incompatible, 4 for
any other contract violation reported by the library.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import harness, kaas, transitions
from .env_sim import TrainingEnv
from .kaas import IncompatiblePolicy, KnowledgeBase, KnowledgeMiss
from .learning import SUMMARY_COLUMNS, greedy_histogram, train_offline, train_online
from .mdp_core import InvalidInput
from .rewards import POLICY_NAMES, sweep as reward_sweep
from .scheduler import Strategy
from .transitions import IncompatibleTable, build_signature

log = logging.getLogger("kaaslab")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONTRACT = 4


class MissingInput(Exception):
    pass


def _signature(cfg: cfgmod.Config) -> str:
    return build_signature(cfg.space, cfg.ladder, cfg.env)


def _out(args, cfg, name: str) -> Path:
    d = Path(args.out or cfg.paths.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _load_table(path, cfg) -> transitions.TransitionTable:
    if not Path(path).exists():
        raise MissingInput(f"transition table {path} not found; run `kaaslab explore` first")
    return transitions.load(path, expected_signature=_signature(cfg))


def _load_kb(path, cfg) -> KnowledgeBase:
    if not Path(path).exists():
        raise MissingInput(f"knowledge base {path} not found; run `kaaslab provision` first")
    return kaas.load(path, expected_signature=_signature(cfg))


# ---------------------------------------------------------------------------
# commands

def cmd_explore(args, cfg):
    env = TrainingEnv(cfg.space, cfg.ladder, cfg.env, seed=cfg.seed)
    table = transitions.explore(env, min_visits=args.min_visits or cfg.min_visits,
                                budget=cfg.explore_budget)
    table.seed = cfg.seed
    path = Path(args.table or cfg.paths.table)
    path.parent.mkdir(parents=True, exist_ok=True)
    transitions.save(table, path)
    if args.csv:
        transitions.export_csv(table, args.csv)
    cov = table.coverage
    print(f"{path}: {cov['covered_pairs']}/{cov['reachable_pairs']} pairs covered, "
          f"{cov['interactions']} interactions")


def cmd_train(args, cfg):
    recipes = cfg.recipes()
    if args.policy not in recipes:
        raise InvalidInput(f"unknown policy {args.policy}; known: {', '.join(sorted(recipes))}")
    recipe = recipes[args.policy]
    rng = np.random.default_rng(cfg.seed)
    if args.offline:
        table = _load_table(args.table or cfg.paths.table, cfg)
        pol = train_offline(table, recipe, cfg.offline, rng, seed=cfg.seed)
    else:
        env = TrainingEnv(cfg.space, cfg.ladder, cfg.env, seed=cfg.seed)
        pol = train_online(env, recipe, cfg.online, rng, seed=cfg.seed,
                           signature=_signature(cfg))
    path = _out(args, cfg, f"{args.policy}.json")
    path.write_text(json.dumps(pol.to_dict(), separators=(",", ":")) + "\n")
    visited = np.flatnonzero(pol.qtable.visit.sum(axis=1) > 0)
    harness.write_rows(_out(args, cfg, f"{args.policy}_summary.csv"), SUMMARY_COLUMNS,
                       greedy_histogram(pol, visited))
    if args.kb:
        kb_path = Path(args.kb)
        kb = (kaas.load(kb_path, expected_signature=_signature(cfg)) if kb_path.exists()
              else KnowledgeBase(_signature(cfg), cfg.space, cfg.ladder, cfg.env))
        kb.register(pol)
        kaas.save(kb, kb_path)
    print(f"{path}: {pol.trained_with}, {pol.env_interactions} environment interactions")


def cmd_provision(args, cfg):
    table = None
    if args.table:
        table = _load_table(args.table, cfg)
    kb, rep = kaas.provision(cfg.space, cfg.ladder, cfg.env, seed=cfg.seed, table=table,
                             min_visits=cfg.min_visits, online=cfg.online,
                             offline=cfg.offline, recipes=cfg.recipes())
    path = Path(args.kb or cfg.paths.kb)
    path.parent.mkdir(parents=True, exist_ok=True)
    kaas.save(kb, path)
    if args.save_table:
        rep.table.seed = cfg.seed
        transitions.save(rep.table, args.save_table)
    for name in POLICY_NAMES:
        e = kb.entries[name]
        print(f"{name:8s} avg_cores {e.avg_cores:6.3f}  avg_psnr {e.avg_quality:7.3f}  "
              f"env_interactions {rep.interactions[name]}")
    print(f"{path}: provisioned")


def cmd_simulate(args, cfg):
    kb = _load_kb(args.kb or cfg.paths.kb, cfg)
    spec = harness.WorkloadSpec(args.interval, args.premium, args.clients or cfg.workload.n_clients,
                                seed=args.workload_seed if args.workload_seed is not None
                                else cfg.seed)
    rep = harness.run_experiment(spec, Strategy(args.strategy), kb, cfg.env,
                                 seed=args.seed if args.seed is not None else cfg.seed,
                                 trace=args.trace)
    harness.write_report(rep, _out(args, cfg, "report.csv"))
    harness.write_events(rep, _out(args, cfg, "events.csv"))
    if args.trace:
        harness.write_trace(rep, _out(args, cfg, "trace.csv"))
    print(f"{rep.strategy}: {rep.users_per_minute:.4f} users/min, "
          f"premium {rep.avg_psnr_premium:.3f} dB, regular {rep.avg_psnr_regular:.3f} dB, "
          f"S2 {rep.tier_time_pct['S2']:.2f}% of {rep.total_seconds:.1f} s")


def _pivot(rows, column: str) -> tuple[tuple[str, ...], list[dict]]:
    strategies = list(dict.fromkeys(r["strategy"] for r in rows))
    keys = list(dict.fromkeys((r["interval_s"], r["premium_fraction"]) for r in rows))
    out = []
    for iv, fr in keys:
        row = {"interval_s": iv, "premium_fraction": fr}
        for r in rows:
            if (r["interval_s"], r["premium_fraction"]) == (iv, fr):
                row[r["strategy"]] = r[column]
        out.append(row)
    return ("interval_s", "premium_fraction", *strategies), out


def cmd_sweep(args, cfg):
    kb = _load_kb(args.kb or cfg.paths.kb, cfg)
    w = cfg.workload
    rows = harness.sweep(kb, intervals=tuple(args.interval or w.intervals),
                         fractions=tuple(args.fractions or w.fractions),
                         strategies=tuple(Strategy(s) for s in (args.strategies or w.strategies)),
                         combinations=args.combinations or w.combinations,
                         repeats=args.repeats or w.repeats, n_clients=w.n_clients,
                         seed=cfg.seed, env_params=cfg.env)
    harness.write_rows(_out(args, cfg, "sweep.csv"), harness.SWEEP_COLUMNS, rows)
    for column, fname in (("users_per_minute", "plot_users_per_minute.csv"),
                          ("avg_psnr_premium", "plot_psnr_premium.csv"),
                          ("avg_psnr_regular", "plot_psnr_regular.csv"),
                          ("s2_time_pct", "plot_s2_time.csv")):
        cols, data = _pivot(rows, column)
        harness.write_rows(_out(args, cfg, fname), cols, data)
    print(f"{len(rows)} rows written to {_out(args, cfg, 'sweep.csv')}")


LANDSCAPE_COLUMNS = ("policy", "fps_bin", "psnr_bin", "power_bin", "fps_lo", "fps_hi",
                     "psnr_lo", "psnr_hi", "power_lo", "power_hi", "reward", "goal")


def cmd_reward_sweep(args, cfg):
    recipes = cfg.recipes()
    names = args.policy or sorted(recipes)
    rows = []
    for name in names:
        if name not in recipes:
            raise InvalidInput(f"unknown policy {name}")
        for s, r, goal in reward_sweep(recipes[name].spec, args.threshold, cfg.space):
            row = {"policy": name, "fps_bin": s.fps_bin, "psnr_bin": s.psnr_bin,
                   "power_bin": s.power_bin, "reward": r, "goal": int(goal)}
            for key, spec, b in (("fps", cfg.space.fps, s.fps_bin),
                                 ("psnr", cfg.space.psnr, s.psnr_bin),
                                 ("power", cfg.space.power, s.power_bin)):
                row[f"{key}_lo"], row[f"{key}_hi"] = spec.bin_bounds(b)
            rows.append(row)
    path = _out(args, cfg, "landscape.csv")
    harness.write_rows(path, LANDSCAPE_COLUMNS, rows)
    print(f"{len(rows)} states written to {path}")


def cmd_kb_inspect(args, cfg):
    kb = _load_kb(args.kb or cfg.paths.kb, cfg)
    print(f"signature {kb.signature}")
    head = ("policy", "trained_with", "env_interactions", "avg_cores", "avg_psnr", "avg_freq",
            "avg_qp", "delta_pct")
    print("  ".join(f"{h:>16s}" for h in head))
    for m in kb.table():
        print("  ".join(f"{v:>16s}" for v in (
            m["name"], m["trained_with"], str(m["env_interactions"]), f"{m['avg_cores']:.3f}",
            f"{m['avg_quality']:.3f}", f"{m['avg_freq']:.3f}", f"{m['avg_qp']:.2f}",
            f"{m['delta']:.2f}")))
    if kb.missing():
        print(f"missing: {', '.join(kb.missing())}")


# ---------------------------------------------------------------------------
# parser

def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("premium fraction must lie in [0, 1]")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kaaslab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, dest="global_seed", help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("explore", help="build and save the transition table")
    s.add_argument("--min-visits", type=int)
    s.add_argument("--table", help="output path")
    s.add_argument("--csv", help="also export the table as CSV")
    s.set_defaults(func=cmd_explore)

    s = sub.add_parser("train", help="train one policy")
    s.add_argument("--policy", required=True)
    s.add_argument("--offline", action="store_true", help="learn from a saved transition table")
    s.add_argument("--table")
    s.add_argument("--kb", help="register the result in this knowledge base")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("provision", help="train all four policies and save the knowledge base")
    s.add_argument("--table", help="reuse this transition table instead of exploring")
    s.add_argument("--kb")
    s.add_argument("--save-table", help="write the merged transition table here")
    s.set_defaults(func=cmd_provision)

    s = sub.add_parser("simulate", help="serve one workload")
    s.add_argument("--strategy", default=Strategy.THREE_TIER.value,
                   choices=[x.value for x in Strategy])
    s.add_argument("--interval", type=_positive, default=10.0)
    s.add_argument("--premium", type=_fraction, default=0.25)
    s.add_argument("--clients", type=int)
    s.add_argument("--seed", type=int, help="run seed (content noise)")
    s.add_argument("--workload-seed", type=int, help="class order and video picks")
    s.add_argument("--trace", action="store_true", help="also write trace.csv")
    s.add_argument("--kb")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run the workload matrix")
    s.add_argument("--interval", type=_positive, action="append")
    s.add_argument("--fractions", type=_fraction, nargs="+")
    s.add_argument("--strategies", nargs="+", choices=[x.value for x in Strategy])
    s.add_argument("--combinations", type=int)
    s.add_argument("--repeats", type=int)
    s.add_argument("--kb")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("reward-sweep", help="reward of every state (landscape.csv)")
    s.add_argument("--policy", action="append")
    s.add_argument("--threshold", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_reward_sweep)

    s = sub.add_parser("kb", help="knowledge-base utilities")
    kb_sub = s.add_subparsers(dest="kb_command", required=True)
    k = kb_sub.add_parser("inspect", help="print the policy metadata table")
    k.add_argument("--kb")
    k.set_defaults(func=cmd_kb_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.Config()
        if args.global_seed is not None:
            cfg = replace(cfg, seed=args.global_seed)
        args.func(args, cfg)
    except cfgmod.ConfigError as exc:
        print(f"kaaslab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingInput, IncompatibleTable, IncompatiblePolicy, KnowledgeMiss) as exc:
        print(f"kaaslab: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InvalidInput, ValueError, KeyError) as exc:
        print(f"kaaslab: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return 0


if __name__ == "__main__":
    sys.exit(main())
