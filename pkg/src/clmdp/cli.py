"""Command-line entry point: ``clmdp <subcommand> ...``.

Every file the tool reads or writes is JSON. Failures print a single JSON
object on stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .conflicts import conflict_checker
from .domains import DOMAINS, generate, generate_from_config
from .harness import ExperimentConfig, TECHNIQUES, RESERVED, emit_report, plan, run_experiment
from .inference import TrajectoryDataset, infer_z, simulate_expert
from .mdp import DEFAULT_TOLERANCE
from .model import Clmdp, GlobalPolicy


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", message, status=2)


def _fail(kind: str, message: str, status: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(status)


def _load(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _dump(doc, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_model(path: str, gamma: float | None) -> Clmdp:
    model = Clmdp.from_dict(_load(path))
    if gamma is not None:
        model = model.with_base(model.base.with_discount(gamma))
    return model


def cmd_generate(args) -> None:
    if args.config:
        config = _load(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.gamma is not None:
            config["discount"] = args.gamma
        instance = generate_from_config(config)
    else:
        options = {} if args.gamma is None else {"discount": args.gamma}
        instance = generate(args.domain, args.seed or 0, **options)
    _dump(instance.to_dict(), args.out)


def cmd_solve(args) -> None:
    model = _load_model(args.model, args.gamma)
    config = ExperimentConfig(
        slack=args.slack, tolerance=args.tolerance, log_space=args.log_space,
        expert_seed=args.seed or 0,
    )
    if args.technique == "O2" and args.trajectories:
        dataset = TrajectoryDataset.from_dict(_load(args.trajectories))
        inferred = infer_z(model.with_z(None), dataset, args.slack, args.tolerance)
        model = model.with_z(inferred.z)
        technique = "O1"
    else:
        technique = args.technique
    policy, extras = plan(model, technique, config)
    report = conflict_checker(policy, model.base, args.log_space)
    _dump({"technique": args.technique, "policy": policy.to_list()}, args.out)
    sys.stdout.write(json.dumps({
        "technique": args.technique,
        "conflict_free": not report.has_conflict,
        "conflict_states": sorted(report.conflict_states),
        **extras,
    }, sort_keys=True) + "\n")


def cmd_check(args) -> None:
    model = _load_model(args.model, args.gamma)
    doc = _load(args.policy)
    records = doc["policy"] if isinstance(doc, dict) else doc
    policy = GlobalPolicy.from_list(records)
    if policy.actions.size != model.base.num_states:
        raise ValueError("policy and model disagree on the number of states")
    _dump(conflict_checker(policy, model.base, args.log_space).to_dict(), args.out)


def cmd_infer(args) -> None:
    model = _load_model(args.model, args.gamma)
    dataset = TrajectoryDataset.from_dict(_load(args.trajectories))
    result = infer_z(model.with_z(None), dataset, args.slack, args.tolerance)
    _dump(result.to_dict(), args.out)


def cmd_simulate_expert(args) -> None:
    model = _load_model(args.model, args.gamma)
    if model.z is None:
        raise ValueError("the expert needs a model with a state-context mapping")
    dataset = simulate_expert(
        model, args.num_trajectories, args.max_steps, args.seed or 0, args.slack, args.tolerance
    )
    _dump(dataset.to_dict(), args.out)


def cmd_bench(args) -> None:
    doc = _load(args.config) if args.config else {}
    config = ExperimentConfig.from_dict(doc)
    if args.domain:
        config.domain = args.domain
    if args.technique:
        config.techniques = list(args.technique)
    if args.trials is not None:
        config.trials = args.trials
    if args.seed is not None:
        config.rollout_seed = args.seed
    if args.gamma is not None:
        config.gamma = args.gamma
    if args.slack is not None:
        config.slack = args.slack
    if args.log_space:
        config.log_space = True
    config.validate()
    out = Path(args.out or "bench_out")
    report = run_experiment(config)
    formats = args.format or ["csv", "json"]
    for path in emit_report(report, out, formats):
        sys.stdout.write(f"{path}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clmdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model=True):
        if model:
            p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--gamma", type=float, help="override the discount factor")
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--seed", type=int)

    def planning(p):
        p.add_argument("--slack", type=float, default=0.0)
        p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)

    p = sub.add_parser("generate", help="domain config -> model file")
    common(p, model=False)
    p.add_argument("--config", help="domain config JSON")
    p.add_argument("--domain", choices=sorted(DOMAINS), default="salp")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="model + technique -> policy file and diagnostics")
    common(p)
    planning(p)
    p.add_argument("--technique", default="O1", choices=list(TECHNIQUES) + list(RESERVED))
    p.add_argument("--trajectories", help="expert data for O2 (simulated from --seed otherwise)")
    p.add_argument("--log-space", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="policy + model -> conflict report")
    common(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--log-space", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("infer", help="model + trajectories -> inferred state-context mapping")
    common(p)
    planning(p)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate-expert", help="model -> expert trajectory file")
    common(p)
    planning(p)
    p.add_argument("--num-trajectories", type=int, default=10)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_simulate_expert)

    p = sub.add_parser("bench", help="experiment config -> report files")
    common(p, model=False)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--domain", choices=sorted(DOMAINS))
    p.add_argument("--technique", action="append", help="repeatable; defaults to the config's list")
    p.add_argument("--trials", type=int)
    p.add_argument("--slack", type=float)
    p.add_argument("--format", action="append", choices=["csv", "json"])
    p.add_argument("--log-space", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NotImplementedError as exc:
        _fail("not_implemented", str(exc))
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
