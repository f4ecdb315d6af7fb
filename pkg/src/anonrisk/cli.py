"""``anonrisk`` command line.

Exit codes: 0 every check passed, 1 a check failed, 2 input error,
3 a rule could not be applied.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import applications as app
from . import counterexamples as cx
from .axioms import AXIOMS, FAIL, PASS, SKIPPED, run_checks
from .battery import Scenario, ScenarioSet, random_battery
from .errors import AnonRiskError, RuleError, SchemaError
from .ingest import read_multicoin, read_multipool, read_pool, read_price, read_revenue
from .prob_core import TOL
from .rules import RuleSpec, apply
from .scenario_io import dumps_machine, fmt6, load_scenario

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_RULE = 0, 1, 2, 3
MAX_REVENUE_OUTCOMES = 200_000


class InputError(AnonRiskError):
    """Bad command-line usage detected after argument parsing."""


@dataclass
class RunReport:
    command: list
    seed: Optional[int] = None
    allocations: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    exit_status: int = EXIT_OK

    def to_dict(self) -> dict:
        out = {
            "command": self.command,
            "seed": self.seed,
            "allocations": self.allocations,
            "reports": self.reports,
            "exit_status": self.exit_status,
        }
        out.update(self.extra)
        return out


# ---------------------------------------------------------------------------
# output helpers


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    lines = []
    for k, r in enumerate(cells):
        line = "  ".join(v.ljust(w) if c == 0 else v.rjust(w) for c, (v, w) in enumerate(zip(r, widths)))
        lines.append(line.rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _grid(fmt, header, rows) -> str:
    return _csv(header, rows) if fmt == "csv" else _table(header, rows)


def _witness_line(w) -> str:
    parts = [f"scenario {w.scenario}", f"agent {w.agent}"]
    if w.outcome is not None:
        parts.append(f"outcome {w.outcome}")
    if w.other_agent is not None:
        parts.append(f"vs agent {w.other_agent}")
    if w.other_outcome is not None:
        parts.append(f"outcome {w.other_outcome}")
    parts.append(f"magnitude {fmt6(w.magnitude)}")
    if w.note:
        parts.append(f"({w.note})")
    return "    witness: " + ", ".join(parts)


def _report_rows(reports):
    return [
        (r.axiom, r.rule, r.verdict, r.scenarios_checked, r.skipped, len(r.witnesses))
        for r in reports
    ]


_REPORT_HEADER = ("axiom", "rule", "verdict", "checked", "skipped", "witnesses")
_MAX_WITNESSES = 5


def _render_reports(fmt, reports) -> str:
    text = _grid(fmt, _REPORT_HEADER, _report_rows(reports))
    if fmt == "table":
        for r in reports:
            if r.witnesses:
                text += f"{r.axiom} {r.verdict}:\n"
                text += "".join(_witness_line(w) + "\n" for w in r.witnesses[:_MAX_WITNESSES])
                if len(r.witnesses) > _MAX_WITNESSES:
                    text += f"    ... {len(r.witnesses) - _MAX_WITNESSES} more\n"
            if r.note:
                text += f"{r.axiom} note: {r.note}\n"
    return text


# ---------------------------------------------------------------------------
# rules from flags


def _floats(text: str, what: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from exc


def _rule_from_args(args, fallback: Optional[RuleSpec]) -> RuleSpec:
    if args.rule is None:
        return fallback if fallback is not None else RuleSpec("cmrs")
    kw = {}
    if args.qweights:
        kw["qweights"] = _floats(args.qweights, "--qweights")
    if args.weight is not None:
        kw["weight"] = args.weight
    if args.first:
        kw["first"] = RuleSpec(args.first)
    if args.second:
        kw["second"] = RuleSpec(args.second)
    return RuleSpec(args.rule, **kw)


# ---------------------------------------------------------------------------
# commands


def cmd_allocate(args, report: RunReport) -> str:
    sf = load_scenario(args.scenario)
    rule = _rule_from_args(args, sf.rule)
    a = apply(rule, sf.vector, sf.partition)
    m = sf.space.size
    header = ["agent"] + [f"w{k}" for k in range(m)] + ["mean"]
    rows = [
        [name] + [fmt6(v) for v in a.matrix[i]] + [fmt6(a[i].mean())]
        for i, name in enumerate(sf.names)
    ]
    report.allocations = {
        "rule": rule.describe(),
        "agents": {name: a.matrix[i].tolist() for i, name in enumerate(sf.names)},
        "means": {name: a[i].mean() for i, name in enumerate(sf.names)},
    }
    if args.format == "table":
        return f"rule {rule.describe()} on {args.scenario}\n" + _table(header, rows)
    return _csv(header, rows)


def _battery_seed(args) -> Optional[int]:
    if args.battery is None:
        return None
    spec = args.battery.strip()
    if spec in ("", "default"):
        if args.seed is None:
            raise InputError("--battery needs a seed: --battery seed=N or --seed N")
        return args.seed
    key, _, val = spec.partition("=")
    if not val:
        key, val = "seed", key
    if key.strip() != "seed":
        raise InputError(f"--battery expects seed=N, got {args.battery!r}")
    try:
        return int(val)
    except ValueError as exc:
        raise InputError(f"--battery seed must be an integer, got {val!r}") from exc


def cmd_verify(args, report: RunReport) -> str:
    paths, axioms = [], []
    for tok in args.targets:
        if tok.upper() in AXIOMS or tok.lower() == "all":
            axioms.append(tok)
        elif os.path.exists(tok) or tok.endswith(".json"):
            paths.append(tok)
        else:
            raise InputError(f"{tok!r} is neither a scenario file nor an axiom ({', '.join(AXIOMS)}, all)")
    seed = _battery_seed(args)
    if not paths and seed is None:
        raise InputError("nothing to verify: give scenario files or --battery seed=N")
    scenarios, file_rule = [], None
    for k, p in enumerate(paths):
        sf = load_scenario(p)
        file_rule = file_rule or sf.rule
        scenarios.append(Scenario(f"{os.path.basename(p)}#{k}", sf.vector, sf.partition))
    if seed is not None:
        report.seed = seed
        scenarios += list(random_battery(seed, args.count, with_partitions=args.partitions))
    rule = _rule_from_args(args, file_rule)
    reports = run_checks(rule, ScenarioSet(tuple(scenarios), seed), axioms or "all", args.tolerance)
    report.reports = [r.to_dict() for r in reports]
    report.extra["scenarios"] = len(scenarios)
    if any(r.verdict == FAIL for r in reports):
        report.exit_status = EXIT_FAIL
    head = f"rule {rule.describe()}: {len(scenarios)} scenario(s)"
    head += f", battery seed {seed}\n" if seed is not None else "\n"
    return (head if args.format == "table" else "") + _render_reports(args.format, reports)


def _counterexample_results(seed: int):
    rows = cx.independence_battery(seed=seed)
    conflict = cx.conflict_demo(seed=seed)
    gauss = cx.gaussian_n2_regression()
    back = cx.backtracking_demo()
    return rows, conflict, gauss, back


def _gaussian_ok(rep) -> dict:
    d = rep.details
    return {
        "checks": rep.verdict == PASS,
        "var_A1": abs(d["var_A1"] - 0.75) <= 0.05 * 0.75,
        "differs_from_cmrs": d["rms_dist_from_cmrs_over_sd_S"] >= 0.1,
    }


def cmd_counterexamples(args, report: RunReport) -> str:
    seed = 0 if args.seed is None else args.seed
    report.seed = seed
    rows, conflict, gauss, back = _counterexample_results(seed)
    diffs = []
    matrix = []
    for row in rows:
        obs = row.observed
        matrix.append([row.label, row.rule] + [obs[a] for a in ("AF", "RF", "RA", "OA")]
                      + ["yes" if row.matches else "NO"])
        for a, exp in row.expected.items():
            if obs[a] != exp:
                diffs.append(f"row {row.label} ({row.rule}) {a}: expected {exp}, observed {obs[a]}")
    expect_conflict = {"CM": FAIL, "OA": PASS, "ZP": PASS}
    for a, exp in expect_conflict.items():
        if conflict[a].verdict != exp:
            diffs.append(f"conflict {a}: expected {exp}, observed {conflict[a].verdict}")
    for key, ok in _gaussian_ok(gauss).items():
        if not ok:
            diffs.append(f"gaussian n=2 {key}: not reproduced")
    back_ok = back["max_deviation"] == 0.0 and back["BT"].verdict == PASS
    if not back_ok:
        diffs.append(f"backtracking: max deviation {back['max_deviation']!r}")

    report.reports = [r.to_dict() for row in rows for r in row.reports]
    report.reports += [conflict[a].to_dict() for a in ("CM", "OA", "ZP")]
    report.reports += [gauss.to_dict(), back["BT"].to_dict()]
    report.extra["verdict_matrix"] = {
        row.label: {"rule": row.rule, "observed": row.observed, "expected": row.expected}
        for row in rows
    }
    report.extra["backtracking_max_deviation"] = back["max_deviation"]
    report.extra["diff"] = diffs
    report.allocations = {
        "conflict": conflict["allocation"].matrix.tolist(),
    }
    if diffs:
        report.exit_status = EXIT_FAIL

    if args.format != "table":
        return _csv(["row", "rule", "AF", "RF", "RA", "OA", "matches"], matrix)
    out = "independence battery (AF, RF, RA, OA)\n"
    out += _table(["row", "rule", "AF", "RF", "RA", "OA", "matches"], matrix)
    cm = conflict["CM"]
    out += "\nconflict (-S, 2S, 0) under cmrs\n"
    out += f"  CM {cm.verdict}, OA {conflict['OA'].verdict}, ZP {conflict['ZP'].verdict}\n"
    out += "".join(_witness_line(w) + "\n" for w in cm.witnesses[:1])
    d = gauss.details
    out += "\nn=2 Gaussian rule that is not cmrs\n"
    out += f"  verdict {gauss.verdict}; Var(A1) {fmt6(d['var_A1'])} (target 0.750000)\n"
    out += f"  max |A_i - S/2| {d['max_dev_A1_half_S']:.3e}; convex-order gaps {d['cx_gap_1']:.3e}, {d['cx_gap_2']:.3e}\n"
    out += f"  rms distance from cmrs / sd(S) {fmt6(d['rms_dist_from_cmrs_over_sd_S'])}\n"
    out += "\nbacktracking digits (1001, 1010, 1100)\n"
    out += f"  allocation == input: {'yes' if back_ok else 'no'} (max deviation {fmt6(back['max_deviation'])})\n"
    if diffs:
        out += "\nDIFF expected vs observed:\n" + "".join(f"  {d}\n" for d in diffs)
    return out


def _payout_output(args, report, ids, payouts, label, gap=None, reward_model=None) -> str:
    report.allocations = {"mode": label, "payouts": dict(zip(ids, np.asarray(payouts).tolist()))}
    rows = [(i, fmt6(v)) for i, v in zip(ids, payouts)]
    text = _grid(args.format, ("id", "payout"), rows)
    if args.format == "table":
        text = f"{label}\n" + text
    if gap is not None:
        report.extra["max_deviation"] = gap
        if gap > args.tolerance:
            report.exit_status = EXIT_FAIL
        text += f"max deviation {fmt6(gap)}\n"
    if reward_model is not None:
        reps = app.reward_axiom_reports(reward_model, axioms=("AF", "RF", "RA", "OA"),)
        report.reports = [r.to_dict() for r in reps]
        if any(r.verdict == FAIL for r in reps):
            report.exit_status = EXIT_FAIL
        text += _render_reports(args.format, reps)
    return text


def _realized_price(args):
    return None if args.realized_price is None else float(args.realized_price)


def cmd_pool(args, report: RunReport) -> str:
    spec = read_pool(args.shares, read_price(args.price))
    if args.winner is None:
        pay, label = app.pool_expected(spec), "expected payouts (no winner given)"
    elif args.winner.lower() == "none":
        pay, label = app.pool_allocate(spec, None, _realized_price(args)), "no pool block"
    else:
        pay = app.pool_allocate(spec, args.winner, _realized_price(args))
        label = f"winner {args.winner}"
    gap = app.pool_equivalence_gap(spec) if args.check_cmrs else None
    model = app.pool_as_risk_vector(spec) if args.check_axioms else None
    return _payout_output(args, report, spec.miner_ids, pay, label, gap, model)


def cmd_multipool(args, report: RunReport) -> str:
    spec = read_multipool(args.shares, read_price(args.price))
    if args.pool is None:
        pay = spec.matrix.sum(axis=1) * spec.price.mean
        label = "expected payouts (no winning pool given)"
    elif args.pool.lower() == "none":
        pay, label = app.multi_pool_allocate(spec, None, _realized_price(args)), "no pool block"
    else:
        pay = app.multi_pool_allocate(spec, args.pool, _realized_price(args))
        label = f"pool {args.pool} wins"
    gap = app.multi_pool_equivalence_gap(spec) if args.check_cmrs else None
    model = app.multi_pool_as_risk_vector(spec) if args.check_axioms else None
    return _payout_output(args, report, spec.miner_ids, pay, label, gap, model)


def _pairs(items, flag):
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not key:
            raise InputError(f"{flag}: expected COIN=VALUE, got {item!r}")
        out[key] = val if sep else None
    return out


def cmd_multicoin(args, report: RunReport) -> str:
    prices = _pairs(args.price, "--price")
    if any(v is None for v in prices.values()):
        raise InputError("--price expects COIN=VALUE or COIN=path")
    spec = read_multicoin(args.shares, prices)
    if args.mined is None:
        pay = (spec.matrix * np.array([p.mean for p in spec.prices])[:, None]).sum(axis=0)
        label = "expected payouts (no mined coins given)"
    else:
        mined = {} if args.mined == ["none"] else _pairs(args.mined, "--mined")
        unknown = set(mined) - set(spec.coin_ids)
        if unknown:
            raise InputError(f"--mined: unknown coin {sorted(unknown)[0]}")
        realized = [
            (c in mined, None if mined.get(c) is None else float(mined[c]))
            for c in spec.coin_ids
        ]
        pay = app.multi_coin_allocate(spec, realized)
        label = "mined: " + (", ".join(c for c in spec.coin_ids if c in mined) or "none")
    gap = app.multi_coin_equivalence_gap(spec) if args.check_cmrs else None
    model = app.multi_coin_as_risk_vector(spec) if args.check_axioms else None
    return _payout_output(args, report, spec.miner_ids, pay, label, gap, model)


def cmd_revenue(args, report: RunReport) -> str:
    spec = read_revenue(args.users, args.streams)
    pay = app.revenue_share(spec)
    gap = None
    if args.check_cmrs:
        pi = args.subscribe_prob
        if not 0 < pi <= 1:
            raise InputError("--subscribe-prob must lie in (0, 1]")
        size = (len(spec.artist_ids) + 1) ** len(spec.user_ids)
        if size > MAX_REVENUE_OUTCOMES:
            raise InputError(f"--check-cmrs would build {size} outcomes; too many users")
        gap = app.revenue_equivalence_gap(spec, [pi] * len(spec.user_ids))
    report.extra["distributable"] = spec.distributable()
    return _payout_output(args, report, spec.artist_ids, pay, "artist payouts", gap)


# ---------------------------------------------------------------------------
# parser


def _common(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--format", choices=("table", "csv", "machine"), default=d("table"))
    parser.add_argument("--tolerance", type=float, default=d(TOL),
                        help="numerical tolerance for checks (default 1e-9)")
    parser.add_argument("--seed", type=int, default=d(None))


def _rule_flags(p):
    p.add_argument("--rule", help="rule name (default: the file's rule, else cmrs)")
    p.add_argument("--qweights", help="q-cmrs measure, comma-separated")
    p.add_argument("--weight", type=float, help="mixture weight on --first")
    p.add_argument("--first", help="first rule of a mixture")
    p.add_argument("--second", help="second rule of a mixture")


def _app_flags(p, realized=True):
    p.add_argument("--check-cmrs", action="store_true",
                   help="rebuild the finite model and report the gap to (generalized) cmrs")
    p.add_argument("--check-axioms", action="store_true",
                   help="run AF, RF, RA, OA on the negated reward model")
    if realized:
        p.add_argument("--realized-price", help="realised price when the price is random")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anonrisk", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    p = sub.add_parser("allocate", parents=[common], help="apply a rule to a scenario file")
    p.add_argument("scenario")
    _rule_flags(p)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("verify", parents=[common], help="run axiom checks")
    p.add_argument("targets", nargs="*", help="scenario files and/or axioms (or 'all')")
    p.add_argument("--battery", nargs="?", const="default", help="add a random battery: seed=N")
    p.add_argument("--count", type=int, default=200, help="battery size (default 200)")
    p.add_argument("--partitions", action="store_true",
                   help="attach random target information to battery scenarios")
    _rule_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexamples", parents=[common],
                       help="reproduce the independence battery and regression scenarios")
    p.set_defaults(func=cmd_counterexamples)

    p = sub.add_parser("pool", parents=[common], help="single mining pool payouts")
    p.add_argument("--shares", required=True, help="CSV miner_id,share")
    p.add_argument("--price", required=True, help="decimal or CSV value,probability")
    p.add_argument("--winner", help="miner id that issued the block, or 'none'")
    _app_flags(p)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("multipool", parents=[common], help="several pools")
    p.add_argument("--shares", required=True, help="CSV miner_id,pool_id,share")
    p.add_argument("--price", required=True, help="decimal or CSV value,probability")
    p.add_argument("--pool", help="winning pool id, or 'none'")
    _app_flags(p)
    p.set_defaults(func=cmd_multipool)

    p = sub.add_parser("multicoin", parents=[common], help="several coins")
    p.add_argument("--shares", required=True, help="CSV miner_id,coin_id,share")
    p.add_argument("--price", action="append", required=True, metavar="COIN=PRICE",
                   help="per-coin price (decimal or CSV path); repeat per coin")
    p.add_argument("--mined", action="append", metavar="COIN[=PRICE]",
                   help="a coin whose block was mined, with its realised price; 'none' for no block")
    _app_flags(p, realized=False)
    p.set_defaults(func=cmd_multicoin)

    p = sub.add_parser("revenue", parents=[common], help="user-centric streaming revenue")
    p.add_argument("--users", required=True, help="CSV user_id,fee,theta,subscribed")
    p.add_argument("--streams", required=True, help="CSV artist_id,user_id,streams")
    p.add_argument("--check-cmrs", action="store_true",
                   help="rebuild the finite model and report the gap to generalized cmrs")
    p.add_argument("--subscribe-prob", type=float, default=0.5,
                   help="subscription probability used by --check-cmrs (default 0.5)")
    p.set_defaults(func=cmd_revenue)
    return parser


def run(argv=None) -> tuple[int, str, str]:
    """Run a command; returns ``(exit_code, stdout, stderr)``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    err = io.StringIO()
    try:
        old = sys.stderr
        sys.stderr = err
        try:
            args = parser.parse_args(argv)
        finally:
            sys.stderr = old
    except SystemExit as exc:
        return int(exc.code or 0), "", err.getvalue()
    report = RunReport(command=argv)
    try:
        text = args.func(args, report)
    except RuleError as exc:
        return _error(args, report, EXIT_RULE, exc)
    except (AnonRiskError, OSError, ValueError) as exc:
        return _error(args, report, EXIT_INPUT, exc)
    if args.format == "machine":
        return report.exit_status, dumps_machine(report.to_dict()), ""
    return report.exit_status, text, ""


def _error(args, report, code, exc):
    kind = type(exc).__name__
    if isinstance(exc, OSError) and exc.filename:
        msg = f"{exc.filename}: {exc.strerror}"
    else:
        msg = str(exc)
    report.exit_status = code
    report.extra["error"] = {"type": kind, "message": msg}
    out = dumps_machine(report.to_dict()) if args.format == "machine" else ""
    return code, out, f"anonrisk {args.command}: {kind}: {msg}\n"


def main(argv=None) -> int:
    code, out, err = run(argv)
    sys.stdout.write(out)
    sys.stderr.write(err)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
