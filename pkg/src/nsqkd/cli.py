"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
input, invalid box), 3 LP solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackError, analytic_guess_bound, attack_problem, consistency_check, optimal_ns_attack
from .bell import has_quantum_violation, local_bound, quantum_value, t_value
from .boxes import (
    BipartiteBox,
    BoxFormatError,
    BoxShapeError,
    TripartiteBox,
    ab_marginal,
    load_box,
    save_box,
    validate_ns,
)
from .lp import write_lp
from .quantum import singlet_box
from .protocol import CHUNK_SIZE, ProtocolParams, choose_parameters, iter_transcripts, lemma_check, monte_carlo
from .strategies import (
    BoxSource,
    DeterministicLocal,
    ExplicitTripartite,
    PlantedCorrelation,
    StrategyError,
    builtin_box,
    honest_singlet,
    lhv_from_dict,
    parse_deterministic,
)

SCHEMA_VERSION = 1
SCHEMA_NAMES = ("simulate", "attack_bound", "bell_scan", "check_box", "params", "box", "transcript")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3


def load_schema(name: str) -> dict:
    """JSON Schema shipped with the package for a report or file format."""
    if name not in SCHEMA_NAMES:
        raise KeyError(name)
    text = resources.files("nsqkd").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _settings_pair(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _read_box(path: str):
    try:
        return load_box(path)
    except OSError as exc:
        raise DataError(f"cannot read box file {path}: {exc.strerror}") from None
    except (BoxFormatError, BoxShapeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def resolve_strategy(spec: str, N: int):
    """Strategy mini-language: honest | uniform | chained-pr | planted | det:a=..,b=.. | lhv:FILE | box:FILE."""
    try:
        if spec in ("honest", "singlet"):
            return honest_singlet(N)
        if spec in ("uniform", "chained-pr"):
            return BoxSource(builtin_box(spec, N), spec)
        if spec == "planted":
            return PlantedCorrelation(N)
        if spec.startswith("det:"):
            try:
                return DeterministicLocal(parse_deterministic(spec[4:], N))
            except StrategyError as exc:
                raise UsageError(str(exc)) from None
        if spec.startswith("lhv:"):
            path = spec[4:]
            try:
                data = json.loads(Path(path).read_text())
            except OSError as exc:
                raise DataError(f"cannot read mixture file {path}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None
            return lhv_from_dict(data, N)
        if spec.startswith("box:"):
            box = _read_box(spec[4:])
            if box.N != N:
                raise DataError(f"box has N = {box.N}, expected {N}")
            if isinstance(box, TripartiteBox):
                return ExplicitTripartite(box)
            return BoxSource(box, "box")
    except (StrategyError, BoxFormatError) as exc:
        raise DataError(str(exc)) from None
    raise UsageError(f"unknown strategy {spec!r}")


def resolve_target(spec: str, N: int) -> BipartiteBox:
    if spec.startswith("box:") or spec.endswith(".json"):
        box = _read_box(spec[4:] if spec.startswith("box:") else spec)
        if isinstance(box, TripartiteBox):
            box = ab_marginal(box)
        if box.N != N:
            raise DataError(f"target box has N = {box.N}, expected {N}")
        return box
    try:
        return builtin_box(spec, N)
    except StrategyError as exc:
        raise UsageError(str(exc)) from None


# -- output ------------------------------------------------------------------


def _flatten(data, prefix=""):
    out = {}
    if isinstance(data, dict):
        for k, v in data.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(data, (list, tuple)) and not all(isinstance(v, (int, float, str, type(None))) for v in data):
        for i, v in enumerate(data):
            out.update(_flatten(v, f"{prefix}{i}."))
    else:
        if isinstance(data, (list, tuple)):
            data = " ".join(str(v) for v in data)
        out[prefix[:-1]] = "" if data is None else data
    return out


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    flat = [_flatten(r) for r in rows]
    header = list(dict.fromkeys(k for r in flat for k in r))
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    writer.writerows(flat)
    return buf.getvalue()


def _emit(args, command: str, config: dict, result, rows: list[dict] | None = None) -> None:
    if args.format == "csv":
        text = _csv_text(rows if rows is not None else [result])
    else:
        doc = {"schema": f"nsqkd.{command}", "schema_version": SCHEMA_VERSION, "config": config, "result": result}
        text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _common_output(p):
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format (default json)")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    N = args.N
    choice = choose_parameters(N)
    M = args.M if args.M is not None else choice.M
    epsilon = args.epsilon if args.epsilon is not None else choice.epsilon
    seed = args.seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
        print(f"seed: {seed}", file=sys.stderr)
    params = ProtocolParams(N, M, seed)
    source = resolve_strategy(args.strategy, N)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    stats = monte_carlo(params, source, args.runs, seed=seed, jobs=jobs)

    if args.transcripts:
        with open(args.transcripts, "w") as fh:
            for tr in iter_transcripts(params, source, args.runs, seed):
                fh.write(tr.to_json() + "\n")

    lemma = lemma_check(stats, params, epsilon)
    config = {
        "command": "simulate",
        "N": N,
        "M": M,
        "n": params.n,
        "threshold": params.threshold,
        "runs": args.runs,
        "strategy": args.strategy,
        "seed": seed,
        "epsilon": epsilon,
        "chunk_size": CHUNK_SIZE,
        "transcripts": args.transcripts,
    }
    result = stats.to_dict()
    result["source_kind"] = getattr(source, "kind", "")
    result["lemma"] = lemma.to_dict()
    result["notes"] = [] if has_quantum_violation(N) else ["no quantum violation at N=2"]
    if args.format == "csv":
        result_row = dict(config)
        result_row.update(result)
        _emit(args, "simulate", config, result, [result_row])
    else:
        _emit(args, "simulate", config, result)
    if not args.quiet:
        status = "n/a (P(pass) <= eps)" if not lemma.applicable else ("holds" if lemma.holds else "VIOLATED")
        print(
            f"P(pass)={stats.p_pass:.5f}  P(agree|pass)={stats.p_agree_given_pass:.5f}  "
            f"lemma bound 1-1/(2MN eps)={lemma.bound:.5f}: {status}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_attack_bound(args) -> int:
    N = args.N
    target = resolve_target(args.target, N)
    try:
        box, bound = optimal_ns_attack(
            target,
            eve_outcomes=args.eve_outcomes,
            secret_settings=args.settings,
            guess=args.guess,
            averaged=args.average,
            method=args.method,
        )
    except AttackError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if exc.solution is not None:
            print(json.dumps(exc.solution.diagnostics(), indent=2), file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.dump_lp:
        write_lp(attack_problem(target, args.eve_outcomes, args.settings, args.guess, args.average), args.dump_lp)
    if args.write_box:
        save_box(box, args.write_box)
    result = bound.to_dict()
    result["local_bound"] = local_bound(N)
    result["quantum_value"] = quantum_value(N)
    notes = []
    if not has_quantum_violation(N):
        notes.append("no violation at N=2")
    if not bound.bell_violation:
        notes.append("target does not violate the chained inequality; a local model may be available to Eve")
    if bound.p_guess_analytic >= 1.0:
        notes.append("analytic bound clamped to 1.0")
    result["notes"] = notes
    config = {
        "command": "attack-bound",
        "N": N,
        "target": args.target,
        "eve_outcomes": args.eve_outcomes,
        "settings": list(args.settings),
        "guess": args.guess,
        "average": args.average,
        "method": args.method,
    }
    _emit(args, "attack_bound", config, result)
    return EXIT_OK


def cmd_bell_scan(args) -> int:
    if args.n_min < 2 or args.n_max < args.n_min:
        raise UsageError("need 2 <= --n-min <= --n-max")
    rows = []
    for N in range(args.n_min, args.n_max + 1):
        lb, qv = local_bound(N), quantum_value(N)
        row = {
            "N": N,
            "local_bound": lb,
            "quantum_value": qv,
            "violation": qv - lb,
            "p_guess_analytic": analytic_guess_bound(N, qv),
            "note": "" if has_quantum_violation(N) else "no quantum violation at N=2 (equality)",
        }
        if args.lp:
            try:
                _, bound = optimal_ns_attack(singlet_box(N), method=args.method)
            except AttackError as exc:
                print(f"solver failure at N={N}: {exc}", file=sys.stderr)
                return EXIT_SOLVER
            row["p_guess_lp"] = bound.p_guess_lp
        rows.append(row)

    annotations = {
        "local_bound_increasing": all(b["local_bound"] > a["local_bound"] for a, b in zip(rows, rows[1:])),
        "quantum_value_increasing": all(b["quantum_value"] > a["quantum_value"] for a, b in zip(rows, rows[1:])),
        "violation_positive_for_N_ge_3": all(r["violation"] > 0 for r in rows if r["N"] >= 3),
    }
    if args.lp:
        annotations["p_guess_lp_strictly_decreasing_from_N3"] = decreasing_from(rows, "p_guess_lp", 3)
    config = {"command": "bell-scan", "n_min": args.n_min, "n_max": args.n_max, "lp": args.lp, "method": args.method}
    _emit(args, "bell_scan", config, {"rows": rows, "annotations": annotations}, rows)
    return EXIT_OK


def decreasing_from(rows, key, start):
    vals = [r[key] for r in rows if r["N"] >= start]
    return all(b < a for a, b in zip(vals, vals[1:]))


def cmd_check_box(args) -> int:
    box = _read_box(args.box)
    report = validate_ns(box, tol=args.tol)
    result = {
        "parties": 3 if isinstance(box, TripartiteBox) else 2,
        "N": box.num_settings_a,
        "valid": report.ok,
        "violations": [
            {"family": v.family, "indices": {k: list(i) if isinstance(i, tuple) else i for k, i in v.indices.items()}, "residual": v.residual}
            for v in report
        ],
        "t": None,
        "local_bound": None,
        "quantum_value": None,
    }
    bip = ab_marginal(box) if isinstance(box, TripartiteBox) else box
    if bip.num_settings_a == bip.num_settings_b and bip.N >= 2:
        N = bip.N
        result["t"] = t_value(bip)
        result["local_bound"] = local_bound(N)
        result["quantum_value"] = quantum_value(N)
    config = {"command": "check-box", "box": args.box, "tol": args.tol}
    _emit(args, "check_box", config, result)
    if not args.quiet:
        if report.ok:
            print("no violations", file=sys.stderr)
        for v in report:
            print(f"violation: {v}", file=sys.stderr)
        if result["t"] is not None:
            print(
                f"t = {result['t']:.6f} (local bound {result['local_bound']:.6f}, quantum {result['quantum_value']:.6f})",
                file=sys.stderr,
            )
    return EXIT_OK if report.ok else EXIT_DATA


def cmd_params(args) -> int:
    choice = choose_parameters(args.N, args.delta, args.delta_prime)
    check = consistency_check(args.N, choice.M, choice.epsilon, args.delta, args.delta_prime)
    result = {"choice": choice.to_dict(), "consistency": check.to_dict()}
    config = {"command": "params", "N": args.N, "delta": args.delta, "delta_prime": args.delta_prime}
    _emit(args, "params", config, result, [dict(choice.to_dict(), security_product=check.security_product)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsqkd", description="No-signalling key distribution: simulation and security bounds.")
    parser.add_argument("--version", action="version", version=f"nsqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte Carlo runs of the protocol")
    p.add_argument("--N", type=int, required=True, help="number of bases")
    p.add_argument("--M", type=int, help="security parameter M (default ceil(N^(3/4)))")
    p.add_argument("--runs", type=int, default=10_000, help="number of protocol runs (default 10000)")
    p.add_argument("--strategy", default="honest", help="honest | uniform | chained-pr | planted | det:a=..,b=.. | lhv:FILE | box:FILE")
    p.add_argument("--seed", type=int, help="rng seed (auto-generated and printed if omitted)")
    p.add_argument("--epsilon", type=float, help="pass-probability threshold for the lemma check (default N^(-1/4))")
    p.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--transcripts", help="write every run as a JSON line to this file")
    p.add_argument("--quiet", "-q", action="store_true")
    _common_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack-bound", help="optimal no-signalling attack on a target box")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--target", default="singlet", help="singlet | uniform | chained-pr | det:a=..,b=.. | box:FILE")
    p.add_argument("--eve-outcomes", type=int, default=2)
    p.add_argument("--settings", type=_settings_pair, default=(0, 0), help="secret settings x,y (default 0,0)")
    p.add_argument("--guess", choices=("alice", "bob"), default="alice")
    p.add_argument("--average", action="store_true", help="average over all qualifying settings (N <= 5)")
    p.add_argument("--method", choices=("highs", "simplex"), default="highs")
    p.add_argument("--write-box", help="save the optimal tripartite box here")
    p.add_argument("--dump-lp", help="write the LP in CPLEX LP format here")
    _common_output(p)
    p.set_defaults(func=cmd_attack_bound)

    p = sub.add_parser("bell-scan", help="local bound, quantum value and guessing bounds over a range of N")
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=8)
    p.add_argument("--lp", action="store_true", help="also solve the attack LP for the singlet at each N")
    p.add_argument("--method", choices=("highs", "simplex"), default="highs")
    _common_output(p)
    p.set_defaults(func=cmd_bell_scan)

    p = sub.add_parser("check-box", help="validate a box file and evaluate its chained statistic")
    p.add_argument("box", help="box JSON file")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--quiet", "-q", action="store_true")
    _common_output(p)
    p.set_defaults(func=cmd_check_box)

    p = sub.add_parser("params", help="parameter choice M = N^(3/4), eps = N^(-1/4) and its consistency check")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--delta-prime", type=float, default=0.5)
    _common_output(p)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nsqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"nsqkd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"nsqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
