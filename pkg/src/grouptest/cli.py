"""Command-line experiment harness.

Subcommands:
  run          seeded Monte Carlo over one algorithm, CSV/JSON report
  verify-small exhaustive recovery check on every small configuration
  tables       recomputed analytic tables beside their reference values
  calibrate-f  Monte Carlo calibration of the estimator normalization
  mac          slotted conflict-resolution simulation
  sensors      dead-sensor diagnosis simulation
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .applications import (
    SENSOR_ALGORITHMS,
    MAC_PROTOCOLS,
    SensorNet,
    diagnose_dead,
    load_scenario,
    mac_simulate,
)
from .estimation import calibrate_f
from .harness import (
    ALGORITHMS,
    ExperimentConfig,
    VerifyResult,
    emit_tables,
    rows_to_csv,
    rows_to_json,
    run_experiment,
    tables_to_csv,
    verify_small,
)


def _write(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _cmd_run(args) -> int:
    config = ExperimentConfig(
        algorithm=args.algo,
        n=args.n,
        d=args.d,
        trials=args.trials,
        seed=args.seed,
        p=args.p,
        s=args.s,
        a=args.a,
        c=args.c,
        cap=args.cap,
        defer=not args.no_defer,
        engine=args.engine,
    )
    rows = run_experiment(config)
    text = rows_to_csv(rows) if args.format == "csv" else rows_to_json(rows)
    _write(text, args.out)
    return 0


def _cmd_verify_small(args) -> int:
    algorithms = ALGORITHMS if args.algo == "all" else [args.algo]
    failed = False
    for algo in algorithms:
        for n in args.n:
            result: VerifyResult = verify_small(algo, n, seeds=args.seeds, p=args.p, s=args.s)
            status = "pass" if result.passed else "FAIL"
            worst = max(result.worst_tests.values()) if result.worst_tests else 0
            print(
                f"{status} {algo} n={n}: {result.configurations} configurations, "
                f"{result.runs} runs, worst-case tests {worst}"
            )
            for line in result.failures[:5]:
                print(f"  {line}")
            failed = failed or not result.passed
    return 1 if failed else 0


def _cmd_tables(args) -> int:
    _write(tables_to_csv(emit_tables()), args.out)
    return 0


def _cmd_calibrate_f(args) -> int:
    record = calibrate_f(args.a, args.c, trials=args.trials, seed=args.seed)
    text = json.dumps(record, indent=2) + "\n"
    _write(text, args.out)
    return 0


def _cmd_mac(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
        args.d = sc.get("d", args.d)
        args.seed = sc.get("seed", args.seed)
        args.n = sc.get("n", args.n)
        params = sc.get("params", {})
        args.protocol = sc.get("algorithm", args.protocol)
        args.s = params.get("s", args.s)
        args.p = params.get("p", args.p)
    slots = []
    for t in range(args.trials):
        run = mac_simulate(
            d=args.d,
            protocol=args.protocol,
            d_known=not args.unknown_d,
            seed=args.seed + t,
            n=args.n,
            s=args.s,
            p=args.p,
        )
        slots.append(run.slots_used)
    mean_slots = float(np.mean(slots))
    report = {
        "protocol": args.protocol,
        "d": args.d,
        "trials": args.trials,
        "seed": args.seed,
        "mean_slots": mean_slots,
        "throughput": args.d / mean_slots if mean_slots else 0.0,
        "p50_slots": float(np.percentile(slots, 50)),
        "p99_slots": float(np.percentile(slots, 99)),
        "max_slots": int(max(slots)),
    }
    _write(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def _cmd_sensors(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
        args.n = sc.get("n", args.n)
        args.seed = sc.get("seed", args.seed)
        args.algo = sc.get("algorithm", args.algo)
        dead = sc.get("deadSet")
        args.d = sc.get("d", args.d)
    else:
        dead = None
    rounds = []
    messages = []
    for t in range(args.trials):
        rng = np.random.default_rng()
        from .core import substream
        from .harness import draw_defectives

        if dead is not None:
            dead_set = tuple(sorted(int(x) for x in dead))
        else:
            dead_set = draw_defectives(substream(args.seed, 1, t), args.n, args.d)
        net = SensorNet(args.n, dead_set)
        result = diagnose_dead(net, algorithm=args.algo, seed=args.seed + t,
                               d_known=not args.unknown_d)
        rounds.append(result.rounds)
        messages.append(result.messages)
    report = {
        "algorithm": args.algo,
        "n": args.n,
        "d": args.d if dead is None else len(dead),
        "trials": args.trials,
        "seed": args.seed,
        "mean_rounds": float(np.mean(rounds)),
        "mean_messages": float(np.mean(messages)),
        "max_rounds": int(max(rounds)),
    }
    _write(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grouptest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="seeded Monte Carlo experiment")
    run.add_argument("--algo", required=True, choices=ALGORITHMS)
    run.add_argument("--n", type=int, default=1 << 20)
    run.add_argument("--d", type=int, nargs="+", required=True)
    run.add_argument("--trials", type=int, default=1000)
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--p", type=float, default=None)
    run.add_argument("--s", type=float, default=None)
    run.add_argument("--a", type=int, default=None)
    run.add_argument("--c", type=int, default=None)
    run.add_argument("--cap", type=int, default=None)
    run.add_argument("--no-defer", action="store_true",
                     help="replace deferral with the search-now baseline")
    run.add_argument("--engine", choices=("auto", "dense", "sparse"), default="auto")
    run.add_argument("--out", default="-")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.set_defaults(func=_cmd_run)

    vs = sub.add_parser("verify-small", help="exhaustive small-n recovery check")
    vs.add_argument("--algo", default="all", choices=("all",) + ALGORITHMS)
    vs.add_argument("--n", type=int, nargs="+", default=[8])
    vs.add_argument("--seeds", type=int, default=5)
    vs.add_argument("--p", type=float, default=None)
    vs.add_argument("--s", type=float, default=None)
    vs.set_defaults(func=_cmd_verify_small)

    tb = sub.add_parser("tables", help="recomputed analytic tables")
    tb.add_argument("--out", default="-")
    tb.set_defaults(func=_cmd_tables)

    cal = sub.add_parser("calibrate-f", help="calibrate the estimator normalization")
    cal.add_argument("--a", type=int, required=True)
    cal.add_argument("--c", type=int, required=True)
    cal.add_argument("--trials", type=int, default=200)
    cal.add_argument("--seed", type=int, default=7)
    cal.add_argument("--out", default="-")
    cal.set_defaults(func=_cmd_calibrate_f)

    mac = sub.add_parser("mac", help="MAC conflict-resolution simulation")
    mac.add_argument("--d", type=int, default=100)
    mac.add_argument("--n", type=int, default=1 << 20)
    mac.add_argument("--protocol", default="deferral", choices=MAC_PROTOCOLS)
    mac.add_argument("--trials", type=int, default=100)
    mac.add_argument("--seed", type=int, default=0)
    mac.add_argument("--s", type=float, default=0.8)
    mac.add_argument("--p", type=float, default=0.479)
    mac.add_argument("--unknown-d", action="store_true")
    mac.add_argument("--scenario", default=None)
    mac.add_argument("--out", default="-")
    mac.set_defaults(func=_cmd_mac)

    sens = sub.add_parser("sensors", help="dead-sensor diagnosis simulation")
    sens.add_argument("--n", type=int, default=1024)
    sens.add_argument("--d", type=int, default=20)
    sens.add_argument("--algo", default="deferral", choices=SENSOR_ALGORITHMS)
    sens.add_argument("--trials", type=int, default=20)
    sens.add_argument("--seed", type=int, default=0)
    sens.add_argument("--unknown-d", action="store_true")
    sens.add_argument("--scenario", default=None)
    sens.add_argument("--out", default="-")
    sens.set_defaults(func=_cmd_sensors)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
