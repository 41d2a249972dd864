"""Command-line workflows: network summary, cuts, attack design/prediction, simulations.

Exit codes: 0 success, 2 input error, 3 infeasible scenario, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import attack as atk
from .acmodel import ConvergenceError, build_ac_model, operating_state
from .dcmodel import UnobservableError, build_model, numerical_rank
from .estimator import EstimationError
from .netmodel import CaseParseError, NetworkError, load_case
from .observability import (cut_listing, find_cuts_contraction,
                            is_critical_set, rank_without)
from .oracle import OracleError, check_half_partition, make_partition, predict_perturbation
from .simharness import ConfigError, ExperimentConfig, export_csv, run_scenario

DEFAULT_SEED = 2024
EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERIC = 2, 3, 4


class UsageError(ValueError):
    pass


def _load(args):
    net = load_case(args.case)
    return net, build_model(net)


def _seed(args) -> int:
    if args.seed is None:
        print(f"seed={DEFAULT_SEED} (default)")
        return DEFAULT_SEED
    return args.seed


def cmd_net_info(args) -> int:
    net, model = _load(args)
    r = numerical_rank(model.H)
    obs = "yes" if r == model.state_dim else "no"
    print(f"buses={net.n_buses} meters={model.m} observable={obs}")
    print(f"lines={net.n_lines} rank={r} state_dim={model.state_dim} "
          f"reference={net.buses[net.reference_bus].name}")
    return 0


def cmd_cuts(args) -> int:
    net, model = _load(args)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    cuts = find_cuts_contraction(net, args.runs, _seed(args))
    print(f"cuts={len(cuts)}")
    if cuts:
        print(cut_listing(net, model, cuts))
    return 0


def cmd_critical_check(args) -> int:
    net, model = _load(args)
    S = net.meters(args.meters)
    crit = is_critical_set(S, model)
    print(f"critical={'yes' if crit else 'no'} size={len(S)} "
          f"rank_without={rank_without(model, S)} state_dim={model.state_dim}")
    return 0


def _nominal_active(net):
    ac = build_ac_model(net)
    return ac.measure_vector(ac.to_vector(operating_state(net)))[: ac.m]


def cmd_attack_design(args) -> int:
    net, model = _load(args)
    plan = atk.framing_direction(model, net.meters(args.adversary), net.meters(args.framed))
    if args.magnitude_pct is not None:
        atk.scale_attack(plan, pct=args.magnitude_pct, nominal_z=_nominal_active(net))
    print(f"feasible_dim={plan.feasible_dim} objective={plan.objective_value:.10g} "
          f"eta={plan.eta:.10g} degenerate={plan.degenerate}")
    rows = model.rows(plan.s_adversary)
    for r in rows:
        print(f"  a[{net.label(model.layout.meters[r])}] = {plan.vector()[r]:+.10g}")
    if args.output:
        Path(args.output).write_text(plan.to_json(net, model))
        print(f"plan written to {args.output}")
    return 0


def _print_state(net, model, y, header):
    full = np.degrees(model.full_state(y))
    full[np.abs(full) < 1e-9] = 0.0
    order = np.argsort(-np.abs(full), kind="stable")
    print(header)
    for k in order:
        print(f"  bus {net.buses[k].name:>4d}: {full[k]:+.6f} deg")


def cmd_attack_predict(args) -> int:
    net, model = _load(args)
    if args.s1 is not None:
        part = make_partition(model, net.meters(args.s1), net.meters(args.s2 or ""))
        chk = check_half_partition(model, part)
        cond = {True: "true", False: "false", None: "unknown"}[chk.condition]
        print(f"condition={cond} branches={chk.result.branch_count}")
        if chk.condition:
            _print_state(net, model, chk.y, "y (adversary S1, unit dx):")
            _print_state(net, model, chk.complement, "dx - y (adversary S2):")
        return 0 if chk.condition is not None else EXIT_NUMERIC
    if args.plan:
        plan = atk.AttackPlan.from_json(Path(args.plan).read_text(), net, model)
    else:
        if args.adversary is None or args.framed is None:
            raise UsageError("give --plan, --adversary/--framed, or --s1/--s2")
        plan = atk.framing_direction(model, net.meters(args.adversary), net.meters(args.framed))
        if args.magnitude_pct is not None:
            atk.scale_attack(plan, pct=args.magnitude_pct, nominal_z=_nominal_active(net))
    y = predict_perturbation(model, plan.s_adversary, plan.s_framed, plan.eta, plan.direction)
    print("condition=true")
    _print_state(net, model, y, f"predicted perturbation (eta={plan.eta:.6g}):")
    return 0


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    over = {}
    if args.runs is not None:
        if args.runs < 1:
            raise UsageError("--runs must be >= 1")
        over["runs"] = args.runs
    if args.seed is not None:
        over["seed"] = args.seed
    if over:
        cfg = ExperimentConfig(**{**cfg.__dict__, **over})
    print(f"seed={cfg.seed} runs={cfg.runs} model={cfg.model} case={cfg.case}")
    return cfg


def _print_curve(curve):
    print(f"{'snr_db':>7} {'attack':>13} {'pct':>5} {'ok':>5} {'fail':>4} "
          f"{'err_deg':>9} {'stderr':>9} {'mean_N':>7} {'detect':>6}")
    for p in curve.points:
        print(f"{p.snr_db:7.2f} {p.attack:>13} {p.magnitude_pct:5.1f} {p.runs_ok:5d} "
              f"{p.runs_failed:4d} {p.mean_err_deg:9.5f} {np.degrees(p.std_err):9.5f} "
              f"{p.mean_N:7.3f} {p.detection_rate:6.3f}")


def cmd_sim_run(args) -> int:
    cfg = _config(args)
    snr = max(cfg.snr_list) if args.snr is None else args.snr
    cfg = ExperimentConfig(**{**cfg.__dict__, "snr_list": [snr]})
    curve = run_scenario(cfg, workers=args.workers)
    _print_curve(curve)
    if args.output:
        export_csv([curve], args.output)
    return 0


def cmd_sim_sweep(args) -> int:
    cfg = _config(args)
    curve = run_scenario(cfg, workers=args.workers)
    _print_curve(curve)
    export_csv([curve], args.output)
    print(f"csv written to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridframe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_case(sp):
        sp.add_argument("--case", default="ieee14", help="builtin name (ieee14, ieee118) or CDF path")
        return sp

    with_case(sub.add_parser("net-info", help="bus/line/meter counts and observability"))

    sp = with_case(sub.add_parser("cuts", help="cuts by random contraction"))
    sp.add_argument("--runs", type=int, default=20000)
    sp.add_argument("--seed", type=int)

    sp = with_case(sub.add_parser("critical-check", help="test whether a meter set is critical"))
    sp.add_argument("--meters", required=True, help='e.g. "2-3,3-2,3-4,4-3,2,3,4"')

    sp = with_case(sub.add_parser("attack-design", help="optimal framing direction"))
    sp.add_argument("--adversary", required=True)
    sp.add_argument("--framed", required=True)
    sp.add_argument("--magnitude-pct", type=float)
    sp.add_argument("--output", help="write the plan as JSON")

    sp = with_case(sub.add_parser("attack-predict", help="noiseless prediction of the perturbation"))
    sp.add_argument("--plan")
    sp.add_argument("--adversary")
    sp.add_argument("--framed")
    sp.add_argument("--magnitude-pct", type=float)
    sp.add_argument("--s1", help="partition mode: adversary half of a critical set")
    sp.add_argument("--s2", help="partition mode: framed half")

    for name, hlp in (("sim-run", "one SNR point of a scenario"),
                      ("sim-sweep", "full SNR x magnitude grid to CSV")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", required=True)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, default=1)
        if name == "sim-run":
            sp.add_argument("--snr", type=float, help="default: highest SNR in the config")
            sp.add_argument("--output")
        else:
            sp.add_argument("--output", required=True)
    return p


COMMANDS = {
    "net-info": cmd_net_info, "cuts": cmd_cuts, "critical-check": cmd_critical_check,
    "attack-design": cmd_attack_design, "attack-predict": cmd_attack_predict,
    "sim-run": cmd_sim_run, "sim-sweep": cmd_sim_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (atk.NoFramingAttack, UnobservableError, OracleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (EstimationError, ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CaseParseError, NetworkError, ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
