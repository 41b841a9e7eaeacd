"""Command-line entry point (installed as ``engine``).

Exit codes: 0 when every selected feature was delivered (or nothing needed
doing), 2 when some feature failed or a one-shot composition is impossible,
3 on input or scenario errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from am4sc.backlog import DELIVERED
from am4sc.controller import (
    EngineConfig,
    EngineState,
    consume_once_feedback,
    gather_candidates,
    integration_check,
    load_feedback_file,
    project_report_json,
    run_project,
)
from am4sc.errors import EngineError, NoCandidates, Unsatisfiable
from am4sc.jsonio import canonical_dumps
from am4sc.planner import PlanConstraints, plan, refactor_dedup, serialize
from am4sc.runtime import load_scenario

SEED_ENV_VAR = "AM4SC_SEED"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="engine", description="Automated agile service-composition engine."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a multi-iteration project")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--iterations", required=True, type=int)
    run_p.add_argument("--feedback", help="feedback JSON array, applied after iteration 1")
    run_p.add_argument("--capacity", type=int, default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--report", help="write the canonical project report here")
    run_p.add_argument("--save-state", help="write delivered artifacts here for 'engine check'")

    compose_p = sub.add_parser("compose", help="resolve+plan+serialize one feature, no tests")
    compose_p.add_argument("--scenario", required=True)
    compose_p.add_argument("--feature", required=True)
    compose_p.add_argument("--workflow", help="write the workflow document here")
    compose_p.add_argument("--max-depth", type=int, default=None)

    registry_p = sub.add_parser("registry", help="registry inspection")
    registry_sub = registry_p.add_subparsers(dest="registry_command", required=True)
    list_p = registry_sub.add_parser("list", help="list descriptors in id order")
    list_p.add_argument("--scenario", required=True)

    check_p = sub.add_parser("check", help="integration-check saved deliveries")
    check_p.add_argument("--scenario", required=True)
    check_p.add_argument("--state", required=True, help="state file from 'engine run --save-state'")

    return parser


def _resolve_seed(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise EngineError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    config_kwargs = {"seed": _resolve_seed(args.seed)}
    if args.capacity is not None:
        config_kwargs["capacity"] = args.capacity
    config = EngineConfig(**config_kwargs)

    feedback_source = None
    if args.feedback:
        feedback_source = consume_once_feedback(load_feedback_file(args.feedback))

    state = EngineState(scenario=scenario)
    reports = run_project(state, config, args.iterations, feedback_source)
    report_text = canonical_dumps(project_report_json(config, reports)) + "\n"

    if args.report:
        Path(args.report).write_text(report_text, encoding="utf-8")
        for report in reports:
            delivered = sum(1 for r in report.records if r.status == DELIVERED)
            print(f"iteration {report.iteration}: delivered {delivered}/{len(report.records)}")
    else:
        sys.stdout.write(report_text)

    if args.save_state:
        state.save_state(args.save_state)

    failed = any(r.status != DELIVERED for report in reports for r in report.records)
    return 2 if failed else 0


def _cmd_compose(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    feature = scenario.backlog.get(args.feature)
    goal = feature.goal
    constraints = (
        PlanConstraints() if args.max_depth is None else PlanConstraints(max_depth=args.max_depth)
    )
    try:
        candidates = gather_candidates(scenario.registry, goal)
        model = refactor_dedup(plan(goal, candidates, constraints))
    except (NoCandidates, Unsatisfiable) as exc:
        print(f"composition failed: {exc}", file=sys.stderr)
        return 2
    doc_text = serialize(model).canonical_text() + "\n"
    if args.workflow:
        Path(args.workflow).write_text(doc_text, encoding="utf-8")
        print(f"workflow for {feature.id} written to {args.workflow}")
    else:
        sys.stdout.write(doc_text)
    return 0


def _cmd_registry_list(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    sys.stdout.write(canonical_dumps(scenario.registry.to_json_list()) + "\n")
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    state = EngineState(scenario=scenario)
    state.load_state(args.state)
    results = integration_check(state)
    payload = [{"feature_id": fid, "passing": passing} for fid, passing in results]
    sys.stdout.write(canonical_dumps(payload) + "\n")
    return 0 if all(passing for _, passing in results) else 2


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compose":
            return _cmd_compose(args)
        if args.command == "registry":
            return _cmd_registry_list(args)
        return _cmd_check(args)
    except (EngineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
