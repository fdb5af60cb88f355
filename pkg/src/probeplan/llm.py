"""HTTP language-model backends for policy generation and skill scoring.

Both backends talk to an OpenAI-style JSON API through a small transport
object, so tests can substitute a canned transport. Nothing coming back from
the wire reaches the engine without being parsed into policy and spec types.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Protocol

from .confidence import ScoringContext
from .generator import GenerationError, GenerationRequest, GenerationResult
from .symbolic import (
    AtomTemplate,
    GroundAtom,
    Origin,
    ParseError,
    domain_to_pddl,
    parse_policy,
    print_policy,
    renumber,
)
from .verifier import SafetyRule, build_spec

PROMPT_SLOTS = (
    "domain_pddl", "observation", "goal", "spec", "skill_code", "skeleton_code",
    "available_skills", "object_list_position", "feedback", "prev_code",
    "exploration_knowledge", "frozen_code_part",
)


class TransportError(Exception):
    pass


class RetryableScoringError(Exception):
    """The scoring request failed in transit; the caller may retry."""


class Transport(Protocol):
    def post(self, path: str, payload: dict) -> dict:
        ...


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str
    model: str
    api_key: str | None = None
    temperature: float = 0.0
    timeout: float = 60.0
    max_parse_retries: int = 3

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "LLMConfig":
        env = os.environ if env is None else env
        endpoint = env.get("PROBEPLAN_LLM_ENDPOINT")
        model = env.get("PROBEPLAN_LLM_MODEL")
        if not endpoint or not model:
            raise ValueError("set PROBEPLAN_LLM_ENDPOINT and PROBEPLAN_LLM_MODEL to use the llm backend")
        return cls(endpoint.rstrip("/"), model, env.get("PROBEPLAN_LLM_API_KEY"))


class HttpTransport:
    """JSON over HTTP with one request in flight at a time."""

    def __init__(self, config: LLMConfig):
        self.config = config
        self._lock = threading.Lock()

    def post(self, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        req = urllib.request.Request(
            self.config.endpoint + path, json.dumps(payload).encode(), headers, method="POST")
        with self._lock:
            try:
                with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                    return json.loads(resp.read().decode())
            except (urllib.error.URLError, OSError, ValueError) as exc:
                raise TransportError(str(exc)) from exc


def load_prompt(name: str) -> str:
    return (resources.files("probeplan") / "data" / "prompts" / f"{name}.txt").read_text()


def render(template: str, slots: Mapping[str, str]) -> str:
    return template.format_map(dict(slots))


# ---------------------------------------------------------------------------
# generation

def generation_slots(req: GenerationRequest) -> dict[str, str]:
    task, domain = req.task, req.domain
    known = sorted(req.obs.known().items())
    observation = "\n".join(f"{a} = {'true' if v else 'false'}" for a, v in known) or "(nothing observed)"
    skills = sorted(task.allowed_skills) if task.allowed_skills is not None else sorted(domain.skills)
    skill_code = []
    for name in skills:
        s = domain.skills[name]
        params = ", ".join(f"{p}: {t}" for p, t in s.params)
        tags = "safe" if s.meta.safe else "unsafe"
        skill_code.append(f"{name}({params})  # {tags}")
    positions = sorted(str(a) for a in req.obs.true_atoms() if a.predicate in ("at", "inside"))
    objects = [f"{o}: {t}" for o, t in sorted(task.objects.items())]
    prior = req.prior_policy
    frozen = print_policy(prior.calls[: req.frozen_index]) if prior is not None else ""
    return {
        "domain_pddl": domain_to_pddl(domain),
        "observation": observation,
        "goal": task.instruction,
        "spec": "\n".join(
            [" ".join(str(a) for a in sorted(task.goal_atoms | task.observe_atoms))]
            + [f"{r.skill} requires {' '.join(map(str, r.requires))}" for r in task.safety_rules]),
        "skill_code": "\n".join(skill_code),
        "skeleton_code": "# one skill call per line",
        "available_skills": ", ".join(skills),
        "object_list_position": "\n".join(objects + positions),
        "feedback": req.prior_feedback.dumps() if req.prior_feedback is not None else "(none)",
        "prev_code": print_policy(prior) if prior is not None else "(none)",
        "exploration_knowledge": (req.exploration_knowledge.dumps()
                                  if req.exploration_knowledge is not None else "(none)"),
        "frozen_code_part": frozen or "(none)",
    }


_FENCE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.S)


def parse_reply(text: str):
    """Split a reply into (goal atoms, safety rules, policy)."""
    goal, safety, code_lines = None, [], None
    fenced = _FENCE.search(text)
    lines = text.splitlines()
    for i, line in enumerate(lines):
        head = line.strip()
        if head.upper().startswith("GOAL:"):
            goal = re.findall(r"\([^()]*\)", head[5:])
        elif head.upper().startswith("SAFETY:"):
            for part in head[7:].split(";"):
                part = part.strip()
                if not part:
                    continue
                skill, sep, rest = part.partition(" requires ")
                if not sep:
                    raise ParseError(f"bad safety clause {part!r}", i + 1, 1)
                templates = tuple(AtomTemplate.parse(t) for t in re.findall(r"\([^()]*\)", rest))
                safety.append(SafetyRule(skill.strip(), templates))
        elif head.upper().startswith("CODE:") and code_lines is None:
            code_lines = lines[i + 1:]
    if goal is None:
        raise ParseError("reply has no GOAL: line", 1, 1)
    if fenced is not None:
        code = fenced.group(1)
    elif code_lines is not None:
        code = "\n".join(code_lines)
    else:
        raise ParseError("reply has no CODE: block", 1, 1)
    return [GroundAtom.parse(g) for g in goal], safety, parse_policy(code)


class LLMGeneratorBackend:
    def __init__(self, transport: Transport, config: LLMConfig, template: str | None = None):
        self.transport = transport
        self.config = config
        self.template = template if template is not None else load_prompt("code_generation")

    def _ask(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        try:
            resp = self.transport.post("/chat/completions", payload)
            return resp["choices"][0]["message"]["content"]
        except TransportError as exc:
            raise GenerationError(f"llm request failed: {exc}") from exc
        except (KeyError, IndexError, TypeError) as exc:
            raise GenerationError("llm response has no message content") from exc

    def _run(self, req: GenerationRequest) -> GenerationResult:
        prompt = render(self.template, generation_slots(req))
        last = None
        for _ in range(self.config.max_parse_retries):
            text = self._ask(prompt)
            try:
                goal, safety, policy = parse_reply(text)
            except (ParseError, ValueError) as exc:
                last = exc
                prompt += f"\n\nYour last reply could not be read ({exc}). Use the exact layout."
                continue
            task = req.task
            rules = tuple(safety) or task.safety_rules
            spec = build_spec(goal or task.goal_atoms, req.domain, rules, task.instruction,
                              task.allowed_skills, task.observe_atoms)
            n = req.frozen_index
            calls = list(policy.calls)
            if req.prior_policy is not None:
                # the frozen prefix is not up for negotiation: a reply that
                # does not repeat it is read as the continuation
                frozen = list(req.prior_policy.calls[:n])
                if policy.keys()[:n] == req.prior_policy.keys()[:n]:
                    calls = calls[n:]
                calls = frozen + calls
            origin = Origin.PROBE if task.is_probe else (
                Origin.REFINED if req.prior_policy is not None else Origin.GENERATED)
            refined_from = n if req.prior_policy is not None else None
            return GenerationResult(spec, renumber(calls, origin, refined_from), text)
        raise GenerationError(f"llm output unreadable after {self.config.max_parse_retries} tries: {last}")

    def generate(self, req: GenerationRequest) -> GenerationResult:
        return self._run(req)

    def regenerate_on_feedback(self, req: GenerationRequest) -> GenerationResult:
        return self._run(req)


# ---------------------------------------------------------------------------
# scoring

def scoring_prompt(ctx: ScoringContext, template: str) -> str:
    demos = []
    for d in ctx.demos:
        state = " ".join(str(a) for a, v in d.initial_observation if v)
        demos.append(f"{state} -> {d.action}: {'success' if d.success else 'failure'}")
    return render(template, {
        "domain_summary": ctx.domain_summary or ", ".join(sorted(ctx.domain.skills)),
        "observation": " ".join(str(a) for a in sorted(ctx.obs_atoms)) or "(none)",
        "instruction": ctx.instruction,
        "demos": "\n".join(demos) or "(none)",
    })


def snippet_nll(logprobs: Mapping, start: int, end: int) -> float:
    """Mean negative log-likelihood of tokens whose offset lies in [start, end)."""
    tokens = logprobs["tokens"]
    values = logprobs["token_logprobs"]
    offsets = logprobs["text_offset"]
    picked = [v for t, v, o in zip(tokens, values, offsets) if start <= o < end and v is not None]
    if not picked:
        raise ValueError("no scored tokens fall inside the snippet")
    return -sum(picked) / len(picked)


class LLMScorer:
    def __init__(self, transport: Transport, config: LLMConfig, template: str | None = None):
        self.transport = transport
        self.config = config
        self.template = template if template is not None else load_prompt("csc_score")

    def score(self, ctx: ScoringContext) -> tuple[float, float]:
        prefix = scoring_prompt(ctx, self.template)
        text = prefix + ctx.snippet
        payload = {
            "model": self.config.model,
            "prompt": text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 1,
            "temperature": self.config.temperature,
        }
        try:
            resp = self.transport.post("/completions", payload)
        except TransportError as exc:
            raise RetryableScoringError(str(exc)) from exc
        try:
            lp = resp["choices"][0]["logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise RetryableScoringError("response carries no token log-probabilities") from exc
        raw = max(0.0, snippet_nll(lp, len(prefix), len(text)))
        return math.exp(-raw), raw


__all__ = [
    "HttpTransport", "LLMConfig", "LLMGeneratorBackend", "LLMScorer", "PROMPT_SLOTS",
    "RetryableScoringError", "Transport", "TransportError", "generation_slots", "load_prompt",
    "parse_reply", "render", "scoring_prompt", "snippet_nll",
]
