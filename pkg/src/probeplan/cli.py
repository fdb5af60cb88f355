"""Command line entry point: probeplan {run,verify,plan,probe,calibrate,report}."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .confidence import CalibrationError
from .engine import EngineConfig, Mode
from .generator import GenerationRequest, OracleBackend, TaskContext
from .harness import SuiteConfig, SuiteReport, calibrate, load_suite_scenarios, report, run_suite
from .probe import check_probe_safety, observable
from .simulator import ObservabilityLevel, ScenarioError, TabletopEnv, packaged_scenarios
from .symbolic import GroundAtom, ParseError, parse_policy, print_policy
from .verifier import Verified, build_spec, verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SCENARIO = 2
EXIT_RUNTIME = 3

log = logging.getLogger("probeplan")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not argparse's default status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _levels(values):
    if not values:
        return (ObservabilityLevel.HIGH,)
    if any(v.lower() == "all" for v in values):
        return tuple(ObservabilityLevel)
    try:
        return tuple(ObservabilityLevel.parse(v) for v in values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _scenarios(values):
    return tuple(values) if values else tuple(p.stem for p in packaged_scenarios())


def _engine_config(args) -> EngineConfig:
    try:
        return EngineConfig(epsilon=args.epsilon, mode=Mode(args.mode), backend=args.backend)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _backends(args):
    if args.backend == "oracle":
        return None, None
    from .llm import HttpTransport, LLMConfig, LLMGeneratorBackend, LLMScorer
    try:
        cfg = LLMConfig.from_env()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    transport = HttpTransport(cfg)
    return LLMGeneratorBackend(transport, cfg), LLMScorer(transport, cfg)


def _write(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _one_scenario(args):
    refs = _scenarios(args.scenario)
    if len(refs) != 1:
        raise ConfigError("this command needs exactly one --scenario")
    return load_suite_scenarios(refs)[0]


def _reset(args):
    scenario = _one_scenario(args)
    level = _levels(args.level)[0]
    env = TabletopEnv(scenario, level, args.seed)
    obs, goal = env.reset()
    return scenario, obs, goal


def cmd_run(args) -> int:
    engine = _engine_config(args)
    try:
        config = SuiteConfig(_scenarios(args.scenario), _levels(args.level), args.trials,
                             args.seed, engine, args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    generator, scorer = _backends(args)
    suite = run_suite(config, generator, scorer)
    _write(args, report(suite, args.format))
    if suite.records:
        aborted = sum(r.aborted for r in suite.records) / len(suite.records)
        if args.abort_threshold is not None and aborted > args.abort_threshold:
            log.error("abort rate %.2f exceeds threshold %.2f", aborted, args.abort_threshold)
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_verify(args) -> int:
    scenario, obs, goal = _reset(args)
    try:
        policy = parse_policy(Path(args.policy).read_text())
    except (OSError, ParseError) as exc:
        raise ConfigError(f"cannot read policy: {exc}") from None
    spec = build_spec(scenario.goal_atoms, scenario.domain, scenario.safety_rules, goal)
    verdict = verify(spec, policy, scenario.domain, obs, scenario.objects)
    if isinstance(verdict, Verified):
        assumed = [str(a) for a, _ in verdict.assumptions]
        _write(args, json.dumps({"verified": True, "assumptions": assumed}, indent=2) + "\n")
        return EXIT_OK
    _write(args, verdict.dumps() + "\n")
    return EXIT_RUNTIME


def cmd_plan(args) -> int:
    scenario, obs, goal = _reset(args)
    task = TaskContext(goal, scenario.goal_atoms, scenario.objects, scenario.safety_rules)
    res = OracleBackend().generate(GenerationRequest(task, obs, scenario.domain))
    header = "# best effort: relies on unobserved atoms\n" if res.best_effort else ""
    _write(args, header + print_policy(res.policy))
    return EXIT_OK


def cmd_probe(args) -> int:
    scenario, obs, goal = _reset(args)
    try:
        targets = frozenset(GroundAtom.parse(a) for a in args.atom)
    except ParseError as exc:
        raise ConfigError(str(exc)) from None
    if not targets:
        raise ConfigError("give at least one --atom to observe")
    missing = targets - observable(scenario.domain, targets)
    if missing:
        log.error("no sensing skill observes %s", ", ".join(map(str, sorted(missing))))
        return EXIT_RUNTIME
    domain = scenario.domain
    safe = frozenset(n for n, s in domain.skills.items() if s.meta.safe)
    task = TaskContext("observe", frozenset(), scenario.objects, (), safe, targets, scenario.goal_atoms)
    res = OracleBackend().generate(GenerationRequest(task, obs, domain))
    verdict = check_probe_safety(res.policy, domain, scenario.goal_atoms, scenario.objects)
    if not verdict.safe:
        log.error("probe policy is unsafe: %s", verdict.offending_calls)
        return EXIT_RUNTIME
    _write(args, print_policy(res.policy))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scenarios = load_suite_scenarios(_scenarios(args.scenario))
    try:
        eps, samples = calibrate(scenarios, args.probes, args.seed)
    except CalibrationError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    kept = sum(1 for s in samples if s.success and s.informative)
    out = {"epsilon": eps, "samples": len(samples), "kept": kept}
    _write(args, json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        suite = SuiteReport.loads(Path(args.input).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from None
    _write(args, report(suite, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="probeplan", description="Probe-driven planning under partial observability")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, levels=True):
        sp.add_argument("--scenario", action="append", help="scenario name or JSON path (repeatable)")
        if levels:
            sp.add_argument("--level", action="append", help="High, Low, Stochastic, Complete or all")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="write output here instead of stdout")

    sp = sub.add_parser("run", help="run seeded trials and print a report")
    common(sp)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--mode", default="nesyro", choices=[m.value for m in Mode])
    sp.add_argument("--backend", default="oracle", choices=["oracle", "llm"])
    sp.add_argument("--epsilon", type=float, default=0.5)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--format", default="json", choices=["json", "table"])
    sp.add_argument("--abort-threshold", type=float, default=None,
                    help="exit 3 when the fraction of aborted episodes is above this")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="check a policy file against a scenario")
    common(sp)
    sp.add_argument("policy")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("plan", help="print the oracle policy for the initial observation")
    common(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("probe", help="print a safe policy that observes the given atoms")
    common(sp)
    sp.add_argument("--atom", action="append", default=[], help='atom such as "(unlocked top_drawer)"')
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("calibrate", help="derive the confidence threshold from safe probes")
    common(sp, levels=False)
    sp.add_argument("--probes", type=int, default=5)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("report", help="re-render a saved JSON report")
    sp.add_argument("input")
    sp.add_argument("--format", default="table", choices=["json", "table"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ScenarioError as exc:
        log.error("scenario error: %s", exc)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
