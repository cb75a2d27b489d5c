"""Command-line entry point.

Exit codes: 0 success, 1 a verification failed (or an internal fault),
2 usage error.  Primary output goes to stdout (or ``--out``); the run
manifest goes to stderr (or ``--manifest``) so that stdout is byte-identical
across repeated invocations.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from itertools import product
from pathlib import Path

from . import __version__
from .drift import BudgetExceeded, find_theta_star, transience_drift, verify_theorem_assumptions
from .kernel import SUITES, STATE_CAP, build_truncated_kernel, save_kernel, verify_suite
from .model import ArrivalDist, SystemParams
from .regions import (
    STABLE,
    UNSTABLE,
    boundary_samples,
    classify,
    in_C,
    in_D,
    parse_slice,
    symmetric_sup_lambda,
)
from .simulate import SimConfig, is_leq, run, run_coupled_dominance, run_coupled_order


class UsageError(Exception):
    pass


def f17(x: float) -> str:
    return format(float(x), ".17g")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def read_pmf(path) -> ArrivalDist:
    """``<batch> <prob>`` per line; ``#`` starts a comment."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise UsageError(f"{path}:{lineno}: expected '<batch> <prob>'")
        pairs.append((int(parts[0]), float(parts[1])))
    try:
        return ArrivalDist(tuple(pairs))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def build_params(args) -> SystemParams:
    p = args.p
    if args.arrivals:
        files = args.arrivals.split(",")
        if len(files) == 1:
            files = files * len(p)
        if len(files) != len(p):
            raise UsageError(f"{len(files)} pmf files for {len(p)} queues")
        return SystemParams(tuple(p), tuple(read_pmf(f) for f in files))
    lam = args.lam if args.lam is not None else [0.0] * len(p)
    if len(lam) != len(p):
        raise UsageError(f"--lambda has {len(lam)} entries but --p has {len(p)}")
    return SystemParams.bernoulli(p, lam)


def _state(values, J: int, name: str) -> tuple[int, ...]:
    if values is None:
        return (0,) * J
    if len(values) != J or any(v < 0 for v in values):
        raise UsageError(f"{name} must have {J} nonnegative entries")
    return tuple(values)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def cmd_region(args) -> tuple[str, int]:
    if args.symmetric_sup:
        if len(args.p) != 1 or args.J is None:
            raise UsageError("--symmetric-sup needs a single --p value and --J")
        value = symmetric_sup_lambda(args.p[0], args.J)
        if args.format == "csv":
            return f17(value) + "\n", 0
        return _dump({"sup_lambda": value, "p": args.p[0], "J": args.J}) + "\n", 0
    if args.boundary:
        points = boundary_samples(args.p, args.resolution, parse_slice(args.slice, len(args.p)))
        if args.format == "json":
            return _dump([{"lambda": list(b.lam), "witness_eta": list(b.witness),
                           "active_constraint_j": b.active_j} for b in points]) + "\n", 0
        J = len(args.p)
        header = ",".join([f"lambda_{i}" for i in range(1, J + 1)]
                          + ["witness_eta", "active_constraint_j"])
        rows = [",".join([f17(x) for x in b.lam] + ["-".join(map(str, b.witness)), str(b.active_j)])
                for b in points]
        return "\n".join([header] + rows) + "\n", 0
    dominant_only = args.mode == "dominant-only"
    verdict = classify(args.p, args.check_lambda, args.tol, dominant_only)
    if args.format == "csv":
        witness = "" if verdict.witness is None else "-".join(map(str, verdict.witness))
        return f"status,witness_eta\n{verdict.status},{witness}\n", 0
    return _dump(verdict.to_dict()) + "\n", 0


def cmd_simulate(args) -> tuple[str, int]:
    params = build_params(args)
    q0 = _state(args.q0, params.J, "--q0")
    stride = args.stride or 1
    cfg = SimConfig(steps=args.steps, seed=args.seed, system=args.system,
                    record_trace=args.trace is not None, trace_stride=stride)
    result = run(params, q0, cfg)
    if args.trace is not None:
        head = ",".join(["slot"] + [f"q_{i}" for i in range(1, params.J + 1)])
        lines = [head] + [",".join(map(str, (n, *q))) for n, q in result.trace]
        Path(args.trace).write_text("\n".join(lines) + "\n")
    out = result.to_dict()
    out.pop("trace", None)
    out["system"] = args.system
    return _dump(out) + "\n", 0


def _sweep(args, fn) -> tuple[str, int]:
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        rep = fn(SimConfig(steps=args.steps, seed=seed))
        rows.append({"seed": seed, **rep.to_dict()})
    total = sum(r["violations"] for r in rows)
    return _dump({"per_seed": rows, "total_violations": total}) + "\n", int(total > 0)


def cmd_dominance(args) -> tuple[str, int]:
    params = build_params(args)
    q0 = _state(args.q0, params.J, "--q0")
    return _sweep(args, lambda cfg: run_coupled_dominance(params, q0, cfg))


def cmd_order(args) -> tuple[str, int]:
    params = build_params(args)
    q0 = _state(args.q0, params.J, "--q0")
    q1 = _state(args.q0prime, params.J, "--q0prime")
    if not is_leq(q0, q1):
        raise UsageError(f"--q0 {q0} and --q0prime {q1} are not ordered componentwise")
    return _sweep(args, lambda cfg: run_coupled_order(params, q0, q1, cfg))


def cmd_drift(args) -> tuple[str, int]:
    params = build_params(args)
    report = verify_theorem_assumptions(params, cross_check_cap=args.cross_check_cap)
    out = report.to_dict()
    sample = list(product(range(3), repeat=params.J))
    if args.theta:
        out["transience"] = [
            {"j": j, "theta": th,
             "min_drift_on_sample": min(transience_drift(params, j, th, q) for q in sample)}
            for j in range(1, params.J + 1) for th in args.theta]
    if args.theta_search:
        out["theta_search"] = [{"j": j, **find_theta_star(params, j, sample).to_dict()}
                               for j in range(1, params.J + 1)]
    return _dump(out) + "\n", 0


def cmd_kernel_verify(args) -> tuple[str, int]:
    params = build_params(args)
    suites = SUITES if args.suite == "all" else (args.suite,)
    if args.export:
        save_kernel(build_truncated_kernel(params, args.cap, state_cap=args.state_cap), args.export)
    res = verify_suite(params, args.cap, suites, n_max=args.n, k_max=args.k,
                       state_cap=args.state_cap)
    ok = all(r["passed"] for r in res.values())
    return _dump({"cap": args.cap, "suites": res, "passed": ok}) + "\n", int(not ok)


def _add_params(sp, lam_required: bool = False):
    sp.add_argument("--p", type=_floats, required=True, help="attempt probabilities, comma separated")
    sp.add_argument("--lambda", dest="lam", type=_floats,
                    help="Bernoulli arrival rates, comma separated")
    sp.add_argument("--arrivals", help="pmf file(s), comma separated; one file applies to all queues")


def _add_common(sp):
    sp.add_argument("--config", help="flat key=value file mirroring flags (flags win)")
    sp.add_argument("--out", help="write primary output here instead of stdout")
    sp.add_argument("--manifest", help="write the run manifest here instead of stderr")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alohastab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("region", help="stability/instability region queries")
    sp.add_argument("--p", type=_floats, required=True)
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--check-lambda", type=_floats)
    group.add_argument("--boundary", action="store_true")
    group.add_argument("--symmetric-sup", action="store_true")
    sp.add_argument("--resolution", type=int, default=50)
    sp.add_argument("--slice")
    sp.add_argument("--J", type=int)
    sp.add_argument("--format", choices=("json", "csv"))
    sp.add_argument("--tol", type=float, default=0.0)
    sp.add_argument("--mode", choices=("default", "dominant-only"), default="default")
    _add_common(sp)
    sp.set_defaults(func=cmd_region)

    sp = sub.add_parser("simulate", help="simulate one system")
    _add_params(sp)
    sp.add_argument("--system", choices=("original", "dominant"), default="dominant")
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--q0", type=_ints)
    sp.add_argument("--trace")
    sp.add_argument("--stride", type=int)
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("dominance", cmd_dominance, "coupled original vs dominant"),
                              ("order", cmd_order, "coupled dominant vs dominant")):
        sp = sub.add_parser(name, help=help_)
        _add_params(sp)
        sp.add_argument("--steps", type=int, default=100_000)
        sp.add_argument("--seed", type=int, default=0, help="first seed of the sweep")
        sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
        sp.add_argument("--q0", type=_ints)
        if name == "order":
            sp.add_argument("--q0prime", type=_ints, required=True)
        _add_common(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("drift", help="drift criterion report")
    _add_params(sp)
    sp.add_argument("--theta", type=_floats)
    sp.add_argument("--theta-search", action="store_true")
    sp.add_argument("--cross-check-cap", type=int)
    _add_common(sp)
    sp.set_defaults(func=cmd_drift)

    sp = sub.add_parser("kernel-verify", help="identity checks on the truncated kernel")
    _add_params(sp)
    sp.add_argument("--cap", type=int, required=True)
    sp.add_argument("--suite", choices=SUITES + ("all",), default="all")
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--state-cap", type=int, default=STATE_CAP)
    sp.add_argument("--export")
    _add_common(sp)
    sp.set_defaults(func=cmd_kernel_verify)
    return parser


def _config_tokens(parser, argv: list[str]) -> list[str]:
    """Splice ``--config`` file entries in front of the explicit flags."""
    if "--config" not in argv or not argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        parser.error("--config needs a path")
    path = argv[i + 1]
    try:
        text = Path(path).read_text()
    except OSError as exc:
        parser.error(f"cannot read config {path}: {exc}")
    sub = parser._subparsers._group_actions[0].choices.get(argv[0])
    if sub is None:
        return argv
    flags = {opt: a for a in sub._actions for opt in a.option_strings}
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        if not sep or flag not in flags:
            parser.error(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        value = value.strip()
        if flags[flag].nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
        else:
            tokens += [flag, value]
    return [argv[0]] + tokens + argv[1:i] + argv[i + 2:]


def _manifest(args, started: float, argv: list[str]) -> dict:
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "command", "config", "out", "manifest")}
    seeds = None
    if "seed" in params:
        seeds = list(range(params["seed"], params["seed"] + params.get("seeds", 1)))
    return {"command": args.command, "argv": argv, "parameters": params, "seeds": seeds,
            "tool_version": __version__, "wall_clock_seconds": time.perf_counter() - started}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    started = time.perf_counter()
    try:
        args = parser.parse_args(_config_tokens(parser, argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "format", "x") is None:
        args.format = "csv" if args.boundary else "json"
    try:
        text, code = args.func(args)
    except (UsageError, BudgetExceeded, ValueError) as exc:
        print(f"alohastab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"alohastab {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    manifest = json.dumps(_manifest(args, started, argv), sort_keys=True)
    if args.manifest:
        Path(args.manifest).write_text(manifest + "\n")
    else:
        print(manifest, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
