"""The recursive verify/validate/probe engine and its execution loop."""

from __future__ import annotations

import enum
import itertools
from collections import Counter
from dataclasses import dataclass, field, replace

from .confidence import (
    ConfidenceRecord,
    DemoLibrary,
    Scorer,
    ScoringContext,
    StubScorer,
    make_csc_feedback,
    nesyconf,
    retrieve_demos,
    score_csc,
)
from .generator import (
    GenerationRequest,
    GeneratorBackend,
    OracleBackend,
    TaskContext,
    generate,
    regenerate_on_feedback,
)
from .planner import LogicVerdict, SearchLimits, ground_all, logic_confidence, progress
from .probe import (
    NoProbePossible,
    ProbeGoal,
    check_probe_safety,
    make_probe_goal,
    marker,
    observable,
    probe_action_space,
    render_probe_instruction,
)
from .simulator import Metrics, Scenario, TabletopEnv
from .symbolic import GroundingError, ObservationStore, PolicyCode, SkillCall
from .verifier import TaskSpec, Verified, VerificationFeedback, verify


class Mode(enum.Enum):
    NESYRO = "nesyro"
    NAIVE = "naive"
    VERIFY_ONLY = "verify_only"
    NO_LC = "no_lc"
    NO_CSC = "no_csc"
    NO_PROBE = "no_probe"

    @property
    def verifies(self) -> bool:
        return self is not Mode.NAIVE

    @property
    def validates(self) -> bool:
        return self not in (Mode.NAIVE, Mode.VERIFY_ONLY)

    @property
    def uses_lc(self) -> bool:
        return self is not Mode.NO_LC

    @property
    def uses_csc(self) -> bool:
        return self is not Mode.NO_CSC

    @property
    def probes(self) -> bool:
        return self.validates and self is not Mode.NO_PROBE


@dataclass(frozen=True)
class EngineConfig:
    epsilon: float = 0.5
    max_verify_retries: int = 3
    max_probe_depth: int = 3
    max_refinements_per_skill: int = 3
    limits: SearchLimits = SearchLimits()
    demo_k: int = 5
    mode: Mode = Mode.NESYRO
    backend: str = "oracle"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("max_verify_retries", "max_probe_depth", "max_refinements_per_skill", "demo_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


class Aborted(Exception):
    def __init__(self, reason: str, feedback: VerificationFeedback | None = None):
        super().__init__(reason)
        self.reason = reason
        self.feedback = feedback


class NodeStatus(enum.Enum):
    PENDING = "Pending"
    GROUNDED = "Grounded"
    EXECUTING = "Executing"
    EXECUTED = "Executed"
    ABORTED = "Aborted"


@dataclass
class PolicyTreeNode:
    node_id: int
    kind: str
    depth: int
    parent: tuple[int, int] | None
    policy: PolicyCode = PolicyCode()
    spec: TaskSpec | None = None
    children: list[int] = field(default_factory=list)
    confidence_log: list[ConfidenceRecord] = field(default_factory=list)
    status: NodeStatus = NodeStatus.PENDING
    probe_goal: ProbeGoal | None = None
    informative: bool | None = None
    targets_known: bool | None = None
    events: list[str] = field(default_factory=list)

    def last_confidence(self, index: int) -> float | None:
        for rec in reversed(self.confidence_log):
            if rec.skill_index == index:
                return rec.nesyconf
        return None

    def to_json(self) -> dict:
        return {
            "id": self.node_id,
            "kind": self.kind,
            "depth": self.depth,
            "parent": list(self.parent) if self.parent else None,
            "children": list(self.children),
            "status": self.status.value,
            "policy": [str(c) for c in self.policy],
            "spec": self.spec.to_json() if self.spec else None,
            "probe_goal": self.probe_goal.to_json() if self.probe_goal else None,
            "informative": self.informative,
            "targets_known": self.targets_known,
            "confidence_log": [r.to_json() for r in self.confidence_log],
            "events": list(self.events),
        }


class PolicyTree:
    def __init__(self):
        self.nodes: dict[int, PolicyTreeNode] = {}
        self._ids = itertools.count()

    def add(self, kind: str, depth: int, parent: tuple[int, int] | None) -> PolicyTreeNode:
        node = PolicyTreeNode(next(self._ids), kind, depth, parent)
        self.nodes[node.node_id] = node
        if parent is not None:
            self.nodes[parent[0]].children.append(node.node_id)
        return node

    @property
    def root(self) -> PolicyTreeNode | None:
        return self.nodes.get(0)

    def probes(self) -> list[PolicyTreeNode]:
        return [n for n in self.nodes.values() if n.kind == "Probe"]

    def depth(self) -> int:
        return max((n.depth for n in self.nodes.values()), default=0)

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes.values()]}


@dataclass(frozen=True)
class TrajectoryEntry:
    action: str
    observation_delta: tuple
    succeeded: bool
    irreversible_triggered: bool
    owner_node_id: int
    owner_kind: str

    def to_json(self) -> dict:
        return {
            "action": self.action,
            "delta": [[str(a), v] for a, v in self.observation_delta],
            "succeeded": self.succeeded,
            "irreversible": self.irreversible_triggered,
            "owner": self.owner_node_id,
        }


class Trajectory:
    def __init__(self):
        self.entries: list[TrajectoryEntry] = []

    def append(self, entry: TrajectoryEntry):
        self.entries.append(entry)

    @property
    def alpha(self) -> int:
        """Primitive actions executed by probe policies."""
        return sum(1 for e in self.entries if e.owner_kind == "Probe")

    def __len__(self):
        return len(self.entries)

    def to_json(self) -> list:
        return [e.to_json() for e in self.entries]


@dataclass
class EpisodeOutcome:
    metrics: Metrics
    aborted: bool
    reason: str | None
    policy: PolicyCode
    tree: PolicyTree
    trajectory: Trajectory
    generator_calls: int
    generator_bound: int

    @property
    def probe_policies(self) -> int:
        return sum(1 for n in self.tree.probes() if n.status is NodeStatus.EXECUTED)

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics.to_json(),
            "aborted": self.aborted,
            "reason": self.reason,
            "policy": [str(c) for c in self.policy],
            "probe_policies": self.probe_policies,
            "probe_actions": self.trajectory.alpha,
            "tree_depth": self.tree.depth(),
            "generator_calls": self.generator_calls,
            "generator_bound": self.generator_bound,
            "tree": self.tree.to_json(),
            "trajectory": self.trajectory.to_json(),
        }


def invocation_bound(config: EngineConfig, max_policy_len: int) -> int:
    """Upper bound on generator calls for one episode.

    R * (1 + sum_{d=1..D} B^d) * (1 + M) * L, with B = M * L the most probes
    a single node can spawn.
    """
    r = config.max_verify_retries
    m = config.max_refinements_per_skill
    length = max(1, max_policy_len)
    b = m * length
    nodes = 1 + sum(b ** d for d in range(1, config.max_probe_depth + 1))
    return r * nodes * (1 + m) * length


class Engine:
    def __init__(
        self,
        scenario: Scenario,
        env: TabletopEnv,
        config: EngineConfig = EngineConfig(),
        generator: GeneratorBackend | None = None,
        scorer: Scorer | None = None,
        demos: DemoLibrary | None = None,
    ):
        self.scenario = scenario
        self.domain = scenario.domain
        self.objects = scenario.objects
        self.env = env
        self.config = config
        self.mode = config.mode
        self.generator = generator or OracleBackend()
        self.scorer = scorer or StubScorer()
        self.demos = demos if demos is not None else scenario.demos
        self.tree = PolicyTree()
        self.trajectory = Trajectory()
        self.generator_calls = 0
        self._main_actions = ground_all(self.domain, self.objects)
        self._root_goal = scenario.goal_atoms
        self._safe_skills = frozenset(n for n, s in self.domain.skills.items() if s.meta.safe)

    # -- top level ---------------------------------------------------------

    def run_task(self) -> EpisodeOutcome:
        obs, g = self.env.reset()
        task = TaskContext(g, self.scenario.goal_atoms, self.objects, self.scenario.safety_rules)
        aborted, reason = False, None
        policy = PolicyCode()
        try:
            node = self.nesyro(task, obs, depth=0, parent=None)
            policy = node.policy
            if not self.exe(node, obs):
                aborted, reason = True, "main policy failed during execution"
        except Aborted as exc:
            aborted, reason = True, exc.reason
            root = self.tree.root
            if root is not None:
                policy = root.policy
        longest = max((len(n.policy) for n in self.tree.nodes.values()), default=0)
        bound = invocation_bound(self.config, longest)
        if self.generator_calls > bound:
            raise AssertionError(f"generator invoked {self.generator_calls} times, bound is {bound}")
        return EpisodeOutcome(self.env.metrics(), aborted, reason, policy, self.tree,
                              self.trajectory, self.generator_calls, bound)

    def nesyro(
        self,
        task: TaskContext,
        obs: ObservationStore,
        depth: int,
        parent: tuple[int, int] | None,
        probe_goal: ProbeGoal | None = None,
    ) -> PolicyTreeNode:
        if depth > self.config.max_probe_depth:
            raise Aborted("probe depth exceeded")
        node = self.tree.add("Probe" if task.is_probe else "Main", depth, parent)
        node.probe_goal = probe_goal
        try:
            if not self.mode.verifies:
                res = self._generate(GenerationRequest(task, obs, self.domain, limits=self.config.limits))
                node.spec, node.policy = res.spec, res.policy
            else:
                node.spec, node.policy = self.verification_phase(task, obs, node, 0, None)
                if self.mode.validates:
                    self.validation_phase(task, obs, node, depth)
            if task.is_probe:
                verdict = check_probe_safety(node.policy, self.domain, self._root_goal, self.objects)
                if not verdict.safe:
                    raise Aborted(f"unsafe probe policy: {verdict.offending_calls[0]}")
        except Aborted:
            node.status = NodeStatus.ABORTED
            raise
        node.status = NodeStatus.GROUNDED
        return node

    # -- phases --------------------------------------------------------------

    def _generate(self, req: GenerationRequest):
        self.generator_calls += 1
        return generate(self.generator, req)

    def _regenerate(self, req: GenerationRequest):
        self.generator_calls += 1
        return regenerate_on_feedback(self.generator, req)

    def verification_phase(self, task, obs, node, frozen_index, prior):
        req = GenerationRequest(task, obs, self.domain, prior_policy=prior,
                                frozen_index=frozen_index, limits=self.config.limits)
        res = self._generate(req)
        for attempt in range(1, self.config.max_verify_retries + 1):
            verdict = verify(res.spec, res.policy, self.domain, obs, self.objects)
            if isinstance(verdict, Verified):
                return res.spec, res.policy
            if any(v.index < frozen_index for v in verdict.violations):
                raise AssertionError("verification feedback points into the frozen prefix")
            node.events.append(f"verification failed: {verdict.first.constraint} at {verdict.first.index}")
            if attempt == self.config.max_verify_retries:
                raise Aborted("verification retries exhausted", verdict)
            res = self._regenerate(replace(req, prior_policy=res.policy, prior_feedback=verdict))
        raise AssertionError("unreachable")

    def validation_phase(self, task, obs, node, depth) -> PolicyCode:
        n = 0
        refinements: Counter = Counter()
        while n < len(node.policy):
            rec = self.assess(task, obs, node.policy, n)
            node.confidence_log.append(rec)
            if rec.nesyconf >= self.config.epsilon:
                n += 1
                continue
            if refinements[n] >= self.config.max_refinements_per_skill:
                raise Aborted(f"refinement budget exhausted at index {n}")
            refinements[n] += 1
            if self.mode.probes:
                self.probe(task, obs, node, n, rec, depth)
            prefix = node.policy.keys()[:n]
            node.spec, node.policy = self.verification_phase(task, obs, node, n, node.policy)
            if node.policy.keys()[:n] != prefix:
                raise AssertionError("refinement changed the frozen prefix")
        return node.policy

    def probe(self, task, obs, node, n, rec: ConfidenceRecord, depth):
        call = node.policy[n]
        try:
            goal = make_probe_goal(call, rec.lc_feedback, rec.csc_feedback, obs, self.domain, n)
        except NoProbePossible:
            node.events.append(f"index {n}: nothing to probe, refining")
            return
        targets = observable(self.domain, goal.target_atoms)
        if not targets:
            node.events.append(f"index {n}: targets not observable, refining")
            return
        if targets != goal.target_atoms:
            goal = ProbeGoal(targets, n, render_probe_instruction(targets), goal.origin_feedback)
        if depth + 1 > self.config.max_probe_depth:
            node.events.append(f"index {n}: probe depth limit reached")
            return
        probe_task = TaskContext(
            goal.instruction_text, frozenset(), self.objects, (),
            self._safe_skills, targets, self._root_goal,
        )
        before = obs.known_count()
        try:
            child = self.nesyro(probe_task, obs, depth + 1, (node.node_id, n), goal)
        except Aborted as exc:
            node.events.append(f"index {n}: probe aborted ({exc.reason})")
            return
        self.exe(child, obs)
        child.informative = obs.known_count() > before
        child.targets_known = all(t in obs for t in targets)
        if not child.informative:
            node.events.append(f"index {n}: probe was not informative")

    def _goal_and_actions(self, task: TaskContext, obs: ObservationStore):
        if task.is_probe:
            actions = probe_action_space(self.domain, self.objects, task.protected_atoms)
            goal = frozenset(marker(a) for a in task.observe_atoms if a not in obs)
            return goal, actions
        return task.goal_atoms, self._main_actions

    def assess(self, task, obs, policy: PolicyCode, n: int) -> ConfidenceRecord:
        call = policy[n]
        prefix = [SkillCall(c.name, c.args) for c in policy.calls[:n]]
        target = SkillCall(call.name, call.args)
        if self.mode.uses_lc:
            goal, actions = self._goal_and_actions(task, obs)
            lc_fb = logic_confidence(self.domain, obs, goal, prefix, target, self.objects,
                                     actions, self.config.limits)
        else:
            lc_fb = LogicVerdict(1)
        csc_fb = None
        if self.mode.uses_csc:
            projected = obs.true_atoms()
            for c in prefix:
                projected = progress(projected, self.domain.ground_call(c.name, c.args, self.objects))
            demos = retrieve_demos(self.demos, target, projected, self.config.demo_k)
            ctx = ScoringContext(target, str(target), projected, obs, task.instruction, demos,
                                 self.domain, self.objects)
            csc, _ = score_csc(self.scorer, ctx)
            if csc < self.config.epsilon:
                csc_fb = make_csc_feedback(ctx, csc, self.config.epsilon)
        else:
            csc = 1.0
        return ConfidenceRecord(n, str(call), csc, lc_fb.lc, nesyconf(csc, lc_fb.lc), csc_fb, lc_fb)

    # -- execution -----------------------------------------------------------

    def exe(self, node: PolicyTreeNode, obs: ObservationStore) -> bool:
        node.status = NodeStatus.EXECUTING
        for i, call in enumerate(node.policy):
            if self.mode.validates:
                conf = node.last_confidence(i)
                if conf is None or conf < self.config.epsilon:
                    raise AssertionError(f"call {i} of node {node.node_id} reached execution ungrounded")
            try:
                actions = self.env.expand(call, obs)
            except GroundingError as exc:
                node.events.append(f"call {i} could not be grounded: {exc}")
                node.status = NodeStatus.ABORTED
                return False
            for a in actions:
                res = self.env.step(a)
                obs.merge(res.observation_delta)
                self.trajectory.append(TrajectoryEntry(
                    str(a), res.observation_delta, res.succeeded, res.irreversible_triggered,
                    node.node_id, node.kind))
                if not res.succeeded or res.irreversible_triggered:
                    node.status = NodeStatus.ABORTED
                    return False
        node.status = NodeStatus.EXECUTED
        return True


def run_episode(
    scenario: Scenario,
    level,
    seed: int,
    config: EngineConfig = EngineConfig(),
    generator: GeneratorBackend | None = None,
    scorer: Scorer | None = None,
) -> EpisodeOutcome:
    env = TabletopEnv(scenario, level, seed)
    return Engine(scenario, env, config, generator, scorer).run_task()


__all__ = [
    "Aborted", "Engine", "EngineConfig", "EpisodeOutcome", "Mode", "NodeStatus", "PolicyTree",
    "PolicyTreeNode", "Trajectory", "TrajectoryEntry", "invocation_bound", "run_episode",
]
