"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 bad usage or bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .batching import MockScorer, execute_plan, mask_violations, naive_reference, plan_efficacy_probes, plan_terminal_probes
from .curation import VerificationRecord, classify_sample
from .env import EnvSpec, EnvSpecError, EnumerationTooLarge, load_env
from .flow import FlowParseError, flow_from_json, flow_to_json, parse_flow, serialize_flow
from .reward import RewardConfig
from .theory import log_lambda_grid, verify_theorems
from .trainer import TrainConfig, TrainingError, fmt, history_csv, train
from .worlds import BUNDLED, bundled_env_path

log = logging.getLogger("pflowlab")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
SWEEP_COLUMNS = ("lambda", "eps", "s_v", "s_b", "q", "z_lambda", "bound", "exact_tv", "calibrated")
CLASSIFY_COLUMNS = ("k_pass_without", "k_pass_with")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    env_path: Optional[str] = None
    config: dict = field(default_factory=dict)
    version: str = __version__
    env_hash: Optional[str] = None

    def to_json(self) -> dict:
        return {"command": self.command, "env_path": self.env_path, "config": self.config,
                "version": self.version, "env_hash": self.env_hash}


def _num(x):
    """JSON-safe number rounded to 12 significant digits."""
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int):
        return x
    x = float(x)
    if not math.isfinite(x):
        return str(x)
    return float(f"{x:.12g}")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return _num(obj)


def _dump(doc) -> str:
    return json.dumps(_clean(doc), indent=2) + "\n"


def _resolve_env(arg: str) -> tuple[EnvSpec, str]:
    path = Path(arg)
    if not path.exists():
        name = arg[:-5] if arg.endswith(".json") else arg
        if name in BUNDLED:
            path = Path(str(bundled_env_path(name)))
        else:
            raise UsageError(f"env file not found: {arg} (bundled envs: {', '.join(BUNDLED)})")
    try:
        return load_env(path), str(path)
    except EnvSpecError as exc:
        raise UsageError(f"invalid env {arg}: {exc}") from None


def _grid(text: Optional[str], default) -> list[float]:
    if text is None:
        return [float(v) for v in default]
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected comma-separated numbers") from None
    if not values:
        raise UsageError("grid must be non-empty")
    return values


def _emit(text: str, out: Optional[str], manifest: Optional[RunManifest] = None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text)
    if manifest is not None:
        Path(out + ".manifest.json").write_text(_dump(manifest.to_json()))


def _read_input(path: Optional[str]) -> bytes:
    if path is None or path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


# -- commands -------------------------------------------------------------------


def cmd_verify_theorems(args) -> int:
    env, env_path = _resolve_env(args.env)
    lams = _grid(args.lambda_grid, log_lambda_grid())
    epss = _grid(args.eps_grid, [0.5])
    checks, reports = verify_theorems(env, lams, epss, args.threads)
    ok = all(c.passed for c in checks)
    manifest = RunManifest("verify-theorems", env_path, {"lambda_grid": lams, "eps_grid": epss, "threads": args.threads},
                           env_hash=env.content_hash())
    doc = {
        "manifest": manifest.to_json(),
        "passed": ok,
        "checks": [c.to_json() for c in checks],
        "flagged_cells": [{"lambda": r.lam, "eps": r.eps} for r in reports if not r.calibrated],
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_sweep(args) -> int:
    env, env_path = _resolve_env(args.env)
    lams = _grid(args.lambda_grid, log_lambda_grid())
    epss = _grid(args.eps_grid, [0.5])
    checks, reports = verify_theorems(env, lams, epss, args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        row = r.as_row()
        w.writerow([fmt(row[c]) for c in SWEEP_COLUMNS])
    manifest = RunManifest("sweep", env_path, {"lambda_grid": lams, "eps_grid": epss, "threads": args.threads},
                           env_hash=env.content_hash())
    _emit(buf.getvalue(), args.out, manifest)
    if args.out is not None:
        verdicts = {"manifest": manifest.to_json(), "passed": all(c.passed for c in checks),
                    "checks": [c.to_json() for c in checks]}
        Path(args.out + ".report.json").write_text(_dump(verdicts))
    return EXIT_OK


def cmd_train(args) -> int:
    env, env_path = _resolve_env(args.env)
    try:
        cfg = RewardConfig(lam=args.lam, eps=args.eps)
        tcfg = TrainConfig(step_size=args.step_size, steps=args.steps, group_size=args.group_size,
                           seed=args.seed, mode=args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = RunManifest(
        "train", env_path,
        {"lambda": cfg.lam, "eps": cfg.eps, "step_size": tcfg.step_size, "steps": tcfg.steps,
         "group_size": tcfg.group_size, "seed": tcfg.seed, "mode": tcfg.mode},
        env_hash=env.content_hash(),
    )
    try:
        result = train(env, cfg, tcfg)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.history:
            _emit(history_csv(exc.history), args.out, manifest)
        return EXIT_CHECK
    _emit(history_csv(result.history), args.out, manifest)
    final = result.final()
    log.info("final loss %s, tv_tilted %s, tv_valid %s", fmt(final["loss"]), fmt(final["tv_tilted"]), fmt(final["tv_valid"]))
    return EXIT_OK


def cmd_parse_flow(args) -> int:
    flow = parse_flow(_read_input(args.input))
    _emit(_dump(flow_to_json(flow)), args.out)
    return EXIT_OK


def cmd_render_flow(args) -> int:
    try:
        doc = json.loads(_read_input(args.input))
        flow = flow_from_json(doc)
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise UsageError(f"invalid flow JSON: {exc!r}") from None
    _emit(serialize_flow(flow), args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    text = _read_input(args.input).decode("utf-8")
    reader = csv.DictReader(io.StringIO(text))
    fields = reader.fieldnames or []
    missing = [c for c in CLASSIFY_COLUMNS if c not in fields]
    if missing:
        raise UsageError(f"records CSV is missing column(s) {missing}; got header {fields}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*fields, "decision"])
    for lineno, row in enumerate(reader, start=2):
        try:
            budget = int(row["budget"]) if row.get("budget") not in (None, "") else args.budget
            rec = VerificationRecord(row["k_pass_without"], row["k_pass_with"], budget)
            decision = classify_sample(rec)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"line {lineno}: {exc}") from None
        w.writerow([row[f] for f in fields] + [decision.value])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_plan_batch(args) -> int:
    flow = parse_flow(_read_input(args.input))
    if args.kind == "terminal":
        plan = plan_terminal_probes(flow)
    else:
        if args.y is None:
            raise UsageError("--y is required for efficacy probes")
        plan = plan_efficacy_probes(flow, args.y)
    scorer = MockScorer(args.seed)
    got = execute_plan(plan, scorer)
    ref = naive_reference(flow, args.y, scorer, kind=args.kind)
    problems = mask_violations(plan)
    exact = got == ref and not problems
    doc = {
        "manifest": RunManifest("plan-batch", config={"kind": args.kind, "y": args.y, "seed": args.seed}).to_json(),
        "plan": plan.to_json(),
        "scores": {str(k): v for k, v in got.items()},
        "verdict": "exact" if exact else "mismatch",
        "mask_violations": problems,
    }
    _emit(_dump(doc), args.out)
    return EXIT_OK if exact else EXIT_CHECK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pflowlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output file (stdout if omitted)")

    def grids(sp):
        sp.add_argument("env", help="env JSON path or bundled name (t1, r1, r2)")
        sp.add_argument("--lambda-grid", help="comma-separated lambdas (default: 20-point log grid)")
        sp.add_argument("--eps-grid", help="comma-separated eps values (default: 0.5)")

    sp = sub.add_parser("verify-theorems", parents=[common], help="check bound equalities and limits on an env")
    grids(sp)
    sp.set_defaults(func=cmd_verify_theorems)

    sp = sub.add_parser("sweep", parents=[common], help="lambda x eps calibration sweep as CSV")
    grids(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("train", parents=[common], help="train a tabular policy, metrics as CSV")
    sp.add_argument("env")
    sp.add_argument("--lambda", dest="lam", type=float, default=4.5)
    sp.add_argument("--eps", type=float, default=0.5)
    sp.add_argument("--step-size", type=float, default=0.1)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--group-size", type=int, default=8)
    sp.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("parse-flow", parents=[common], help="flow text to JSON")
    sp.add_argument("input", nargs="?", help="file (stdin if omitted)")
    sp.set_defaults(func=cmd_parse_flow)

    sp = sub.add_parser("render-flow", parents=[common], help="flow JSON to canonical text")
    sp.add_argument("input", nargs="?")
    sp.set_defaults(func=cmd_render_flow)

    sp = sub.add_parser("classify", parents=[common], help="curation decisions for verification records")
    sp.add_argument("input", nargs="?", help="CSV with k_pass_without,k_pass_with[,budget]")
    sp.add_argument("--budget", type=int, default=16)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("plan-batch", parents=[common], help="shared-prefix probe plan plus naive equivalence check")
    sp.add_argument("input", nargs="?", help="flow text file (stdin if omitted)")
    sp.add_argument("--y", help="answer text for efficacy probes")
    sp.add_argument("--kind", choices=("efficacy", "terminal"), default="efficacy")
    sp.set_defaults(func=cmd_plan_batch)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FlowParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, EnvSpecError, EnumerationTooLarge, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
