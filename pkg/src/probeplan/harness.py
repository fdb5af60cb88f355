"""Seeded experiment suites, aggregate reports and threshold calibration."""

from __future__ import annotations

import json
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .confidence import (
    CalibrationSample,
    Scorer,
    ScoringContext,
    StubScorer,
    calibrate_epsilon,
    nesyconf,
    retrieve_demos,
    score_csc,
)
from .engine import EngineConfig, Mode, run_episode
from .planner import applicable
from .simulator import ObservabilityLevel, Scenario, TabletopEnv, find_scenario, load_scenario_file
from .symbolic import GroundingError, SkillCall

SCHEMA_VERSION = 1
SEED_NOTE = "std is the population std over the trials of one cell; each trial has its own derived seed"


@dataclass(frozen=True)
class SuiteConfig:
    scenarios: tuple[str, ...]
    levels: tuple[ObservabilityLevel, ...] = (ObservabilityLevel.HIGH,)
    trials: int = 10
    seed: int = 0
    engine: EngineConfig = EngineConfig()
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.engine.backend != "oracle" and self.jobs > 1:
            raise ValueError("parallel runs are only supported with the oracle backend")

    @property
    def mode(self) -> Mode:
        return self.engine.mode


def episode_seed(seed: int, scenario: str, level: ObservabilityLevel, trial: int) -> int:
    return random.Random(f"{seed}:{scenario}:{level.value}:{trial}").getrandbits(32)


@dataclass(frozen=True)
class EpisodeRecord:
    scenario: str
    task_type: str
    level: str
    trial: int
    seed: int
    sr: float
    gc: float
    ia: int
    probe_policies: int
    probe_actions: int
    aborted: bool
    reason: str | None
    generator_calls: int
    generator_bound: int
    confidences: tuple[tuple[float, int, float], ...] = ()

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario, "task_type": self.task_type, "level": self.level,
            "trial": self.trial, "seed": self.seed, "sr": self.sr, "gc": self.gc, "ia": self.ia,
            "probe_policies": self.probe_policies, "probe_actions": self.probe_actions,
            "aborted": self.aborted, "reason": self.reason,
            "generator_calls": self.generator_calls, "generator_bound": self.generator_bound,
            "confidences": [list(c) for c in self.confidences],
        }

    @classmethod
    def from_json(cls, d: dict) -> "EpisodeRecord":
        d = dict(d)
        d["confidences"] = tuple(tuple(c) for c in d.get("confidences", ()))
        return cls(**d)


@dataclass(frozen=True)
class CellStats:
    scenario: str
    task_type: str
    level: str
    trials: int
    sr_mean: float
    sr_std: float
    gc_mean: float
    gc_std: float
    ia_total: int
    probe_policies: int
    probe_actions: int
    aborts: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def aggregate(records: Sequence[EpisodeRecord]) -> list[CellStats]:
    cells: dict[tuple[str, str], list[EpisodeRecord]] = {}
    for r in records:
        cells.setdefault((r.scenario, r.level), []).append(r)
    out = []
    for (scenario, level), rs in sorted(cells.items()):
        sr = [r.sr for r in rs]
        gc = [r.gc for r in rs]
        out.append(CellStats(
            scenario, rs[0].task_type, level, len(rs),
            statistics.fmean(sr), statistics.pstdev(sr),
            statistics.fmean(gc), statistics.pstdev(gc),
            sum(r.ia for r in rs), sum(r.probe_policies for r in rs),
            sum(r.probe_actions for r in rs), sum(r.aborted for r in rs),
        ))
    return out


@dataclass
class SuiteReport:
    mode: str
    backend: str
    epsilon: float
    trials: int
    seed: int
    cells: list[CellStats] = field(default_factory=list)
    records: list[EpisodeRecord] = field(default_factory=list)

    def self_check(self) -> bool:
        return aggregate(self.records) == self.cells

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "backend": self.backend,
            "epsilon": self.epsilon,
            "trials": self.trials,
            "seed": self.seed,
            "seed_note": SEED_NOTE,
            "cells": [c.to_json() for c in self.cells],
            "episodes": [r.to_json() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SuiteReport":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            d["mode"], d["backend"], d["epsilon"], d["trials"], d["seed"],
            [CellStats(**c) for c in d["cells"]],
            [EpisodeRecord.from_json(r) for r in d["episodes"]],
        )


def _run_one(args) -> EpisodeRecord:
    scenario, level, trial, seed, engine, generator, scorer = args
    out = run_episode(scenario, level, seed, engine, generator, scorer)
    confidences = tuple(
        (rec.csc, rec.lc, rec.nesyconf)
        for node in out.tree.nodes.values() for rec in node.confidence_log
    )
    return EpisodeRecord(
        scenario.name, scenario.task_type, level.value, trial, seed,
        out.metrics.sr, out.metrics.gc, out.metrics.ia,
        out.probe_policies, out.trajectory.alpha, out.aborted, out.reason,
        out.generator_calls, out.generator_bound, confidences,
    )


def load_suite_scenarios(refs: Iterable[str]) -> list[Scenario]:
    # fail fast: every scenario must load before any episode runs
    return [load_scenario_file(find_scenario(r)) for r in refs]


def run_suite(config: SuiteConfig, generator=None, scorer: Scorer | None = None) -> SuiteReport:
    scenarios = load_suite_scenarios(config.scenarios)
    jobs = [
        (s, level, trial, episode_seed(config.seed, s.name, level, trial), config.engine, generator, scorer)
        for s in scenarios for level in config.levels for trial in range(config.trials)
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: (r.scenario, r.level, r.trial))
    report = SuiteReport(config.mode.value, config.engine.backend, config.engine.epsilon,
                         config.trials, config.seed, aggregate(records), records)
    assert report.self_check()
    return report


def render_table(report: SuiteReport) -> str:
    header = ("task type", "scenario", "level", "SR", "GC", "IA", "probes", "aborts")
    rows = [header]
    for c in report.cells:
        rows.append((
            c.task_type, c.scenario, c.level,
            f"{c.sr_mean:.1f}±{c.sr_std:.1f}", f"{c.gc_mean:.1f}±{c.gc_std:.1f}",
            str(c.ia_total), str(c.probe_policies), str(c.aborts),
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(suite: SuiteReport, fmt: str = "json") -> str:
    if fmt == "json":
        return suite.dumps()
    if fmt == "table":
        return render_table(suite)
    raise ValueError(f"unknown report format {fmt!r}")


# ---------------------------------------------------------------------------
# calibration

Sampler = Callable[[Scenario, SkillCall, int], CalibrationSample]


def probe_sample(scenario: Scenario, call: SkillCall, seed: int,
                 scorer: Scorer | None = None, demo_k: int = 5) -> CalibrationSample:
    """Score one safe call in a freshly randomized scene, then run it and see what it revealed."""
    scorer = scorer or StubScorer()
    env = TabletopEnv(scenario, ObservabilityLevel.STOCHASTIC, seed)
    obs, goal = env.reset()
    domain, objects = scenario.domain, scenario.objects
    action = domain.ground_call(call.name, call.args, objects)
    lc = int(applicable(obs.true_atoms(), action)[0])
    demos = retrieve_demos(scenario.demos, call, obs.true_atoms(), demo_k)
    ctx = ScoringContext(call, str(call), obs.true_atoms(), obs, goal, demos, domain, objects)
    csc, _ = score_csc(scorer, ctx)
    before = obs.known_count()
    ok = True
    try:
        for a in env.expand(call, obs):
            res = env.step(a)
            obs.merge(res.observation_delta)
            ok = ok and res.succeeded
    except GroundingError:
        ok = False
    return CalibrationSample(call.name, nesyconf(csc, lc), ok, obs.known_count() > before)


def calibrate(
    scenarios: Sequence[Scenario],
    probes_per_skill: int = 5,
    seed: int = 0,
    sampler: Sampler | None = None,
    skills: Iterable[str] | None = None,
) -> tuple[float, list[CalibrationSample]]:
    """Run probes per calibration call and set the threshold from the kept confidences."""
    sampler = sampler or probe_sample
    wanted = set(skills) if skills is not None else None
    samples = []
    for scenario in scenarios:
        for call in scenario.calibration:
            if wanted is not None and call.name not in wanted:
                continue
            schema = scenario.domain.skills.get(call.name)
            if schema is None or not schema.meta.safe:
                raise ValueError(f"calibration call {call} is not a safe skill")
            for i in range(probes_per_skill):
                s = random.Random(f"{seed}:{scenario.name}:{call}:{i}").getrandbits(32)
                samples.append(sampler(scenario, call, s))
    return calibrate_epsilon(samples), samples


__all__ = [
    "CellStats", "EpisodeRecord", "SCHEMA_VERSION", "SuiteConfig", "SuiteReport", "aggregate",
    "calibrate", "episode_seed", "load_suite_scenarios", "probe_sample", "render_table",
    "report", "run_suite",
]
