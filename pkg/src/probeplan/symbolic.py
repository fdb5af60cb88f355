"""Symbolic vocabulary: types, predicates, skills, ground atoms and observation stores.

Also hosts the two text front-ends: a typed-STRIPS subset of PDDL for domain
files, and the line-oriented skill-call language used for policy code.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Iterator, Mapping

log = logging.getLogger(__name__)

ROOT_TYPE = "object"
IDENT_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")


class ParseError(Exception):
    """Lexical or syntactic error, with 1-based line/column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class DomainError(Exception):
    """Semantically invalid domain (unknown names, duplicates, type cycles)."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.message = message
        self.line = line


class GroundingError(Exception):
    pass


class Tri(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"

    def __bool__(self):
        raise TypeError("Tri has no truth value; compare against Tri members")


# ---------------------------------------------------------------------------
# atoms

@dataclass(frozen=True, order=True)
class GroundAtom:
    predicate: str
    args: tuple[str, ...] = ()

    def __str__(self):
        return "(" + " ".join((self.predicate,) + self.args) + ")"

    __repr__ = __str__

    @property
    def signature(self) -> str:
        return f"{self.predicate}/{len(self.args)}"

    @classmethod
    def parse(cls, text: str) -> "GroundAtom":
        atom = AtomTemplate.parse(text)
        if atom.variables():
            raise ValueError(f"ground atom expected, got variables in {text!r}")
        return cls(atom.predicate, atom.terms)


@dataclass(frozen=True, order=True)
class AtomTemplate:
    """Atom whose terms may be variables (``?x``) or object names."""

    predicate: str
    terms: tuple[str, ...] = ()

    def __str__(self):
        return "(" + " ".join((self.predicate,) + self.terms) + ")"

    __repr__ = __str__

    def variables(self) -> tuple[str, ...]:
        return tuple(t for t in self.terms if t.startswith("?"))

    def substitute(self, binding: Mapping[str, str]) -> GroundAtom:
        try:
            args = tuple(binding[t] if t.startswith("?") else t for t in self.terms)
        except KeyError as exc:
            raise GroundingError(f"unbound variable {exc.args[0]} in {self}") from None
        return GroundAtom(self.predicate, args)

    @classmethod
    def parse(cls, text: str) -> "AtomTemplate":
        expr = parse_sexpr(text)
        if not isinstance(expr, list) or not expr or isinstance(expr[0], list):
            raise ValueError(f"malformed atom {text!r}")
        if any(isinstance(t, list) for t in expr):
            raise ValueError(f"malformed atom {text!r}")
        return cls(str(expr[0]), tuple(str(t) for t in expr[1:]))


@dataclass(frozen=True, order=True)
class Literal:
    atom: AtomTemplate
    positive: bool = True

    def __str__(self):
        return str(self.atom) if self.positive else f"(not {self.atom})"

    @classmethod
    def parse(cls, text: str) -> "Literal":
        expr = parse_sexpr(text)
        if isinstance(expr, list) and expr and expr[0] == "not":
            return cls(_template_from(expr[1]), False)
        return cls(_template_from(expr), True)


def _template_from(expr) -> AtomTemplate:
    if not isinstance(expr, list) or not expr or any(isinstance(t, list) for t in expr):
        raise ValueError(f"malformed atom {expr!r}")
    return AtomTemplate(str(expr[0]), tuple(str(t) for t in expr[1:]))


# ---------------------------------------------------------------------------
# domain model

@dataclass(frozen=True)
class ObjectType:
    name: str
    parent: str | None = None


@dataclass(frozen=True)
class Predicate:
    name: str
    param_types: tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.param_types)


@dataclass(frozen=True)
class SkillMeta:
    safe: bool = False
    sensing: bool = False
    reveals: tuple[AtomTemplate, ...] = ()
    irreversible_on_violation: bool = False
    damage_effects: tuple[Literal, ...] = ()

    def __post_init__(self):
        if self.sensing and not self.safe:
            raise DomainError("sensing skills must be safe")
        if bool(self.reveals) != self.sensing:
            raise DomainError("reveals must be nonempty exactly for sensing skills")

    @classmethod
    def from_json(cls, data: Mapping) -> "SkillMeta":
        return cls(
            safe=bool(data.get("safe", False)),
            sensing=bool(data.get("sensing", False)),
            reveals=tuple(AtomTemplate.parse(t) for t in data.get("reveals", ())),
            irreversible_on_violation=bool(data.get("irreversible_on_violation", False)),
            damage_effects=tuple(Literal.parse(t) for t in data.get("damage_effects", ())),
        )

    def to_json(self) -> dict:
        return {
            "safe": self.safe,
            "sensing": self.sensing,
            "reveals": [str(t) for t in self.reveals],
            "irreversible_on_violation": self.irreversible_on_violation,
            "damage_effects": [str(l) for l in self.damage_effects],
        }


@dataclass(frozen=True)
class SkillSchema:
    name: str
    params: tuple[tuple[str, str], ...]
    preconditions: frozenset[Literal]
    effects: frozenset[Literal]
    meta: SkillMeta = SkillMeta()

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.params)

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class GroundAction:
    name: str
    args: tuple[str, ...]
    pre_pos: frozenset[GroundAtom]
    pre_neg: frozenset[GroundAtom]
    add: frozenset[GroundAtom]
    delete: frozenset[GroundAtom]
    reveals: tuple[GroundAtom, ...] = ()
    meta: SkillMeta = SkillMeta()
    damage_add: frozenset[GroundAtom] = frozenset()
    damage_del: frozenset[GroundAtom] = frozenset()

    def __str__(self):
        return f"{self.name}({', '.join(self.args)})"

    __repr__ = __str__

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.name, self.args)


@dataclass
class Domain:
    name: str
    types: dict[str, ObjectType]
    predicates: dict[str, Predicate]
    skills: dict[str, SkillSchema]

    def __eq__(self, other):
        if not isinstance(other, Domain):
            return NotImplemented
        return (
            self.name == other.name
            and self.types == other.types
            and self.predicates == other.predicates
            and self.skills == other.skills
        )

    def is_subtype(self, child: str, ancestor: str) -> bool:
        if ancestor == ROOT_TYPE:
            return True
        seen = set()
        t: str | None = child
        while t is not None and t not in seen:
            if t == ancestor:
                return True
            seen.add(t)
            t = self.types[t].parent if t in self.types else None
        return False

    def with_meta(self, metas: Mapping[str, SkillMeta]) -> "Domain":
        unknown = set(metas) - set(self.skills)
        if unknown:
            raise DomainError(f"metadata for unknown skill(s): {', '.join(sorted(unknown))}")
        skills = {
            n: SkillSchema(s.name, s.params, s.preconditions, s.effects, metas.get(n, s.meta))
            for n, s in self.skills.items()
        }
        return Domain(self.name, dict(self.types), dict(self.predicates), skills)

    def objects_of_type(self, objects: Mapping[str, str], type_name: str) -> list[str]:
        return sorted(o for o, t in objects.items() if self.is_subtype(t, type_name))

    def atom_universe(self, objects: Mapping[str, str]) -> list[GroundAtom]:
        """Every well-typed ground atom over ``objects``."""
        out = []
        for pred in self.predicates.values():
            pools = [self.objects_of_type(objects, t) for t in pred.param_types]
            out.extend(GroundAtom(pred.name, args) for args in product(*pools))
        return sorted(out)

    def expand_template(
        self, template: AtomTemplate, binding: Mapping[str, str], objects: Mapping[str, str]
    ) -> list[GroundAtom]:
        """Ground ``template``; variables absent from ``binding`` range over typed objects."""
        pred = self.predicates[template.predicate]
        pools = []
        for term, ptype in zip(template.terms, pred.param_types):
            if not term.startswith("?"):
                pools.append([term])
            elif term in binding:
                pools.append([binding[term]])
            else:
                pools.append(self.objects_of_type(objects, ptype))
        return [GroundAtom(template.predicate, args) for args in product(*pools)]

    def ground_call(
        self, name: str, args: Iterable[str], objects: Mapping[str, str]
    ) -> GroundAction:
        schema = self.skills.get(name)
        if schema is None:
            raise GroundingError(f"unknown skill {name}")
        args = tuple(args)
        if len(args) != schema.arity:
            raise GroundingError(f"{name} expects {schema.arity} arguments, got {len(args)}")
        action = ground(schema, dict(zip(schema.param_names, args)), objects, self)
        return action


# ---------------------------------------------------------------------------
# s-expressions

class Token(str):
    """Symbol carrying its source position."""

    line: int
    col: int

    def __new__(cls, text, line=0, col=0):
        tok = super().__new__(cls, text)
        tok.line = line
        tok.col = col
        return tok


class SList(list):
    line: int = 0
    col: int = 0


def _tokenize(text: str) -> Iterator[Token]:
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield Token(ch, line, col)
            i += 1
            col += 1
        else:
            start, scol = i, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            word = text[start:i]
            if not re.fullmatch(r"[?:]?[A-Za-z_][A-Za-z0-9_\-]*|-", word):
                raise ParseError(f"invalid token {word!r}", line, scol)
            yield Token(word.lower(), line, scol)
    yield Token("", line, col)  # EOF sentinel


def parse_sexpr_all(text: str) -> list:
    tokens = list(_tokenize(text))
    pos = 0
    out = []

    def read():
        nonlocal pos
        tok = tokens[pos]
        if tok == "":
            raise ParseError("unexpected end of input", tok.line, tok.col)
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'", tok.line, tok.col)
        if tok != "(":
            return tok
        lst = SList()
        lst.line, lst.col = tok.line, tok.col
        while True:
            nxt = tokens[pos]
            if nxt == "":
                raise ParseError("unclosed '('", tok.line, tok.col)
            if nxt == ")":
                pos += 1
                return lst
            lst.append(read())

    while tokens[pos] != "":
        out.append(read())
    return out


def parse_sexpr(text: str):
    exprs = parse_sexpr_all(text)
    if len(exprs) != 1:
        raise ParseError(f"expected one expression, found {len(exprs)}", 1, 1)
    return exprs[0]


# ---------------------------------------------------------------------------
# PDDL subset

def _line(x) -> int | None:
    return getattr(x, "line", None)


def _typed_list(items: list, what: str) -> list[tuple[Token, str]]:
    """Parse ``a b - t c - u d`` into [(a, t), (b, t), (c, u), (d, object)]."""
    out, pending = [], []
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, list):
            raise DomainError(f"nested list in {what}", _line(item))
        if item == "-":
            if i + 1 >= len(items) or isinstance(items[i + 1], list):
                raise DomainError(f"missing type after '-' in {what}", _line(item))
            out.extend((p, str(items[i + 1])) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(item)
        i += 1
    out.extend((p, ROOT_TYPE) for p in pending)
    return out


def _literals(expr, what: str) -> list[tuple[Literal, int | None]]:
    if not isinstance(expr, list):
        raise DomainError(f"{what} must be a list", _line(expr))
    if not expr:
        return []
    if expr[0] == "and":
        out = []
        for sub in expr[1:]:
            out.extend(_literals(sub, what))
        return out
    if expr[0] in ("or", "forall", "exists", "imply", "when", "increase", "decrease"):
        raise DomainError(f"unsupported construct '{expr[0]}' in {what}", _line(expr))
    if expr[0] == "not":
        if len(expr) != 2:
            raise DomainError(f"malformed negation in {what}", _line(expr))
        return [(Literal(_checked_template(expr[1], what), False), _line(expr))]
    return [(Literal(_checked_template(expr, what), True), _line(expr))]


def _checked_template(expr, what) -> AtomTemplate:
    if not isinstance(expr, list) or not expr or any(isinstance(t, list) for t in expr):
        raise DomainError(f"malformed atom in {what}", _line(expr))
    return AtomTemplate(str(expr[0]), tuple(str(t) for t in expr[1:]))


def parse_domain(text: str, metas: Mapping[str, SkillMeta] | None = None) -> Domain:
    expr = parse_sexpr(text)
    if not (isinstance(expr, list) and len(expr) >= 2 and expr[0] == "define"):
        raise DomainError("expected (define (domain NAME) ...)", _line(expr))
    head = expr[1]
    if not (isinstance(head, list) and len(head) == 2 and head[0] == "domain"):
        raise DomainError("expected (domain NAME)", _line(head))
    name = str(head[1])

    types: dict[str, ObjectType] = {ROOT_TYPE: ObjectType(ROOT_TYPE)}
    predicates: dict[str, Predicate] = {}
    actions = []
    for section in expr[2:]:
        if not isinstance(section, list) or not section:
            raise DomainError("malformed domain section", _line(section))
        key = section[0]
        if key == ":requirements":
            continue
        if key == ":types":
            for tname, parent in _typed_list(section[1:], ":types"):
                if tname in types and tname != ROOT_TYPE:
                    raise DomainError(f"duplicate type {tname}", tname.line)
                types[str(tname)] = ObjectType(str(tname), parent)
        elif key == ":predicates":
            for p in section[1:]:
                if not isinstance(p, list) or not p:
                    raise DomainError("malformed predicate declaration", _line(p))
                pname = str(p[0])
                if pname in predicates:
                    raise DomainError(f"duplicate predicate {pname}", _line(p))
                params = _typed_list(p[1:], f"predicate {pname}")
                predicates[pname] = Predicate(pname, tuple(t for _, t in params))
                for _, t in params:
                    _declared(t, types, _line(p))
        elif key == ":action":
            actions.append(section)
        else:
            raise DomainError(f"unsupported section {key}", _line(section))

    # parents named only after ':types' are implicitly declared as children of object
    for t in list(types.values()):
        if t.parent is not None and t.parent not in types:
            types[t.parent] = ObjectType(t.parent, ROOT_TYPE)
    for t in types:
        if t != ROOT_TYPE:
            _check_acyclic(t, types)
    for p in predicates.values():
        for t in p.param_types:
            _declared(t, types, None)

    skills: dict[str, SkillSchema] = {}
    for section in actions:
        schema = _parse_action(section, types, predicates)
        if schema.name in skills:
            raise DomainError(f"duplicate action {schema.name}", _line(section))
        skills[schema.name] = schema
    domain = Domain(name, types, predicates, skills)
    if metas:
        domain = domain.with_meta(metas)
    for s in domain.skills.values():
        _check_templates(s.name, s.meta.reveals + tuple(l.atom for l in s.meta.damage_effects), predicates)
    return domain


def _declared(t: str, types, line):
    if t not in types:
        raise DomainError(f"undeclared type {t}", line)


def _check_acyclic(t: str, types):
    seen = set()
    cur: str | None = t
    while cur is not None and cur != ROOT_TYPE:
        if cur in seen:
            raise DomainError(f"type hierarchy cycle through {t}")
        seen.add(cur)
        cur = types[cur].parent


def _check_templates(skill, templates, predicates):
    for tpl in templates:
        pred = predicates.get(tpl.predicate)
        if pred is None:
            raise DomainError(f"unknown predicate {tpl.predicate} in metadata of {skill}")
        if pred.arity != len(tpl.terms):
            raise DomainError(f"arity mismatch for {tpl.predicate} in metadata of {skill}")


def _parse_action(section, types, predicates) -> SkillSchema:
    if len(section) < 2 or isinstance(section[1], list):
        raise DomainError("action name missing", _line(section))
    name = str(section[1])
    fields = {}
    i = 2
    while i < len(section):
        key = section[i]
        if key not in (":parameters", ":precondition", ":effect") or i + 1 >= len(section):
            raise DomainError(f"unexpected {key!s} in action {name}", _line(key) or _line(section))
        fields[str(key)] = section[i + 1]
        i += 2
    params = _typed_list(fields.get(":parameters", SList()), f"parameters of {name}")
    names = [str(p) for p, _ in params]
    if len(set(names)) != len(names):
        raise DomainError(f"duplicate parameter in action {name}", _line(section))
    for p, t in params:
        if not p.startswith("?"):
            raise DomainError(f"parameter {p} of {name} must start with '?'", p.line)
        _declared(t, types, p.line)
    pre = _literals(fields.get(":precondition", SList()), f"precondition of {name}")
    eff = _literals(fields.get(":effect", SList()), f"effect of {name}")
    for lit, line in pre + eff:
        pred = predicates.get(lit.atom.predicate)
        if pred is None:
            raise DomainError(f"unknown predicate {lit.atom.predicate}", line)
        if pred.arity != len(lit.atom.terms):
            raise DomainError(
                f"predicate {pred.name} expects {pred.arity} arguments, got {len(lit.atom.terms)}", line
            )
        for v in lit.atom.variables():
            if v not in names:
                raise DomainError(f"variable {v} not in parameters of {name}", line)
    effects = frozenset(l for l, _ in eff)
    pos = {l.atom for l in effects if l.positive}
    clash = [a for a in pos if Literal(a, False) in effects]
    if clash:
        raise DomainError(f"action {name} both adds and deletes {clash[0]}", _line(section))
    return SkillSchema(
        name,
        tuple((str(p), t) for p, t in params),
        frozenset(l for l, _ in pre),
        effects,
    )


def load_skill_meta(text: str) -> dict[str, SkillMeta]:
    data = json.loads(text)
    return {name: SkillMeta.from_json(m) for name, m in data.items()}


def _typed_str(params) -> str:
    return " ".join(f"{p} - {t}" for p, t in params)


def _and(lits) -> str:
    return "(and " + " ".join(str(l) for l in sorted(lits)) + ")" if lits else "(and)"


def domain_to_pddl(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})", "  (:requirements :strips :typing :negative-preconditions)"]
    types = [t for t in domain.types.values() if t.name != ROOT_TYPE]
    if types:
        lines.append("  (:types " + " ".join(f"{t.name} - {t.parent or ROOT_TYPE}" for t in types) + ")")
    lines.append("  (:predicates")
    for p in domain.predicates.values():
        args = " ".join(f"?a{i} - {t}" for i, t in enumerate(p.param_types))
        lines.append(f"    ({p.name}{' ' + args if args else ''})")
    lines.append("  )")
    for s in domain.skills.values():
        lines.append(f"  (:action {s.name}")
        lines.append(f"    :parameters ({_typed_str(s.params)})")
        lines.append(f"    :precondition {_and(s.preconditions)}")
        lines.append(f"    :effect {_and(s.effects)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# grounding

def ground(
    schema: SkillSchema,
    binding: Mapping[str, str],
    objects: Mapping[str, str],
    domain: Domain | None = None,
) -> GroundAction:
    """Instantiate ``schema`` under ``binding``, enforcing parameter types.

    ``domain`` supplies the type hierarchy (and predicate signatures, needed
    when a sensing skill reveals atoms over variables it does not bind).
    Without it only exact type matches are accepted.
    """
    missing = [p for p in schema.param_names if p not in binding]
    if missing:
        raise GroundingError(f"{schema.name}: unbound parameter(s) {', '.join(missing)}")
    for pname, ptype in schema.params:
        obj = binding[pname]
        otype = objects.get(obj)
        if otype is None:
            raise GroundingError(f"{schema.name}: parameter {pname} bound to undeclared object {obj}")
        ok = domain.is_subtype(otype, ptype) if domain is not None else otype == ptype
        if not ok:
            raise GroundingError(
                f"{schema.name}: type mismatch for parameter {pname}: {obj} is {otype}, expected {ptype}"
            )
    pre_pos = frozenset(l.atom.substitute(binding) for l in schema.preconditions if l.positive)
    pre_neg = frozenset(l.atom.substitute(binding) for l in schema.preconditions if not l.positive)
    add = frozenset(l.atom.substitute(binding) for l in schema.effects if l.positive)
    delete = frozenset(l.atom.substitute(binding) for l in schema.effects if not l.positive)
    reveals: list[GroundAtom] = []
    for tpl in schema.meta.reveals:
        if domain is not None:
            reveals.extend(domain.expand_template(tpl, binding, objects))
        else:
            reveals.append(tpl.substitute(binding))
    damage = schema.meta.damage_effects
    return GroundAction(
        schema.name,
        tuple(binding[p] for p in schema.param_names),
        pre_pos,
        pre_neg,
        add,
        delete,
        tuple(sorted(set(reveals))),
        schema.meta,
        frozenset(l.atom.substitute(binding) for l in damage if l.positive),
        frozenset(l.atom.substitute(binding) for l in damage if not l.positive),
    )


# ---------------------------------------------------------------------------
# observation store

class ObservationStore:
    """Open-world, tri-valued knowledge about ground atoms.

    Atoms never recorded are Unknown. Merging can overwrite a known value
    with the opposite one (newest wins, logged) but never forgets one.
    """

    def __init__(self, entries: Mapping[GroundAtom, bool] | None = None):
        self._entries: dict[GroundAtom, bool] = dict(entries or {})
        self.history_len = 0
        self.conflicts: list[tuple[GroundAtom, bool, bool]] = []

    def lookup(self, atom: GroundAtom) -> Tri:
        v = self._entries.get(atom)
        if v is None:
            return Tri.UNKNOWN
        return Tri.TRUE if v else Tri.FALSE

    def merge(self, updates: Iterable[tuple[GroundAtom, bool]]) -> None:
        for atom, value in updates:
            old = self._entries.get(atom)
            if old is not None and old != value:
                log.info("observation conflict on %s: %s -> %s", atom, old, value)
                self.conflicts.append((atom, old, value))
            self._entries[atom] = bool(value)
        self.history_len += 1

    def true_atoms(self) -> frozenset[GroundAtom]:
        return frozenset(a for a, v in self._entries.items() if v)

    def known(self) -> dict[GroundAtom, bool]:
        return dict(self._entries)

    def known_count(self) -> int:
        return len(self._entries)

    def copy(self) -> "ObservationStore":
        dup = ObservationStore(self._entries)
        dup.history_len = self.history_len
        return dup

    def __contains__(self, atom):
        return atom in self._entries

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        inner = ", ".join(f"{a}={v}" for a, v in sorted(self._entries.items()))
        return f"ObservationStore({inner})"


def lookup(store: ObservationStore, atom: GroundAtom) -> Tri:
    return store.lookup(atom)


# ---------------------------------------------------------------------------
# policy DSL

class Origin(enum.Enum):
    GENERATED = "generated"
    REFINED = "refined"
    PROBE = "probe"


@dataclass(frozen=True)
class SkillCall:
    name: str
    args: tuple[str, ...] = ()
    source_line: int = 0

    def __str__(self):
        return f"{self.name}({', '.join(self.args)})"

    def same_call(self, other: "SkillCall") -> bool:
        return self.name == other.name and self.args == other.args

    @property
    def key(self) -> tuple[str, tuple[str, ...]]:
        return (self.name, self.args)


@dataclass(frozen=True)
class PolicyCode:
    calls: tuple[SkillCall, ...] = ()
    origin: Origin = Origin.GENERATED
    refined_from: int | None = None

    def __len__(self):
        return len(self.calls)

    def __getitem__(self, i):
        return self.calls[i]

    def __iter__(self):
        return iter(self.calls)

    def keys(self) -> list[tuple[str, tuple[str, ...]]]:
        return [c.key for c in self.calls]


def _policy_error(msg, line, col):
    raise ParseError(msg, line, col)


def _parse_call_line(text: str, lineno: int) -> SkillCall:
    i, n = 0, len(text)

    def skip_ws():
        nonlocal i
        while i < n and text[i] in " \t":
            i += 1

    def ident(what):
        nonlocal i
        skip_ws()
        m = re.compile(r"[a-z_][a-z0-9_]*").match(text, i)
        if not m:
            _policy_error(f"expected {what}", lineno, i + 1)
        i = m.end()
        return m.group()

    name = ident("skill name")
    skip_ws()
    if i >= n or text[i] != "(":
        _policy_error("expected '('", lineno, i + 1)
    i += 1
    args = []
    skip_ws()
    if i < n and text[i] == ")":
        i += 1
    else:
        while True:
            args.append(ident("argument"))
            skip_ws()
            if i >= n:
                _policy_error("unexpected end of line, expected ',' or ')'", lineno, i + 1)
            if text[i] == ",":
                i += 1
                continue
            if text[i] == ")":
                i += 1
                break
            _policy_error(f"unexpected character {text[i]!r}", lineno, i + 1)
    skip_ws()
    if i < n:
        _policy_error(f"trailing characters {text[i:]!r}", lineno, i + 1)
    return SkillCall(name, tuple(args), lineno)


def parse_policy(text: str, origin: Origin = Origin.GENERATED) -> PolicyCode:
    calls = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        calls.append(_parse_call_line(line, lineno))
    return PolicyCode(tuple(calls), origin)


def print_policy(policy: PolicyCode | Iterable[SkillCall]) -> str:
    return "".join(f"{c}\n" for c in policy)


def renumber(calls: Iterable[SkillCall], origin: Origin = Origin.GENERATED, refined_from=None) -> PolicyCode:
    """Policy whose calls carry source lines matching their printed form."""
    return PolicyCode(
        tuple(SkillCall(c.name, c.args, i + 1) for i, c in enumerate(calls)), origin, refined_from
    )


def parse_atoms(texts: Iterable[str]) -> list[GroundAtom]:
    return [GroundAtom.parse(t) for t in texts]


def check_atom(domain: Domain, atom: GroundAtom, objects: Mapping[str, str]) -> None:
    pred = domain.predicates.get(atom.predicate)
    if pred is None:
        raise DomainError(f"unknown predicate {atom.predicate} in {atom}")
    if pred.arity != len(atom.args):
        raise DomainError(f"arity mismatch in {atom}")
    for obj, t in zip(atom.args, pred.param_types):
        if obj not in objects:
            raise DomainError(f"unknown object {obj} in {atom}")
        if not domain.is_subtype(objects[obj], t):
            raise DomainError(f"ill-typed atom {atom}: {obj} is not a {t}")


__all__ = [
    "AtomTemplate", "Domain", "DomainError", "GroundAction", "GroundAtom", "GroundingError",
    "Literal", "ObjectType", "ObservationStore", "Origin", "ParseError", "PolicyCode",
    "Predicate", "SkillCall", "SkillMeta", "SkillSchema", "Tri", "check_atom", "domain_to_pddl",
    "ground", "load_skill_meta", "lookup", "parse_atoms", "parse_domain", "parse_policy", "print_policy",
    "renumber",
]
