"""Reasoning-program language.

Grammar (whitespace-insensitive)::

    expr := IDENT ('[' TOKEN ']')? '(' (expr (',' expr)*)? ')'

Programs are trees of module applications.  :func:`oracle` evaluates them
with exact set semantics over a :class:`~graphreason.world.Scene`, and
:func:`generate` samples well-posed (program, answer) pairs per question
family.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .world import CATEGORIES, RELATIONS, Scene, WorldConfig, spatial_relations
from .engine import COMPARE_KINDS

ATTENTION = "attention"
FEATURE = "feature"


@dataclass(frozen=True)
class Signature:
    inputs: tuple[str, ...]       # sub-kinds: "set", "number", "bool", "attr"
    output: str
    takes_token: bool


SIGNATURES = {
    "scene": Signature((), "set", False),
    "filter": Signature(("set",), "set", True),
    "relate": Signature(("set",), "set", True),
    "same": Signature(("set",), "set", True),
    "unique": Signature(("set",), "set", False),
    "intersect": Signature(("set", "set"), "set", False),
    "union": Signature(("set", "set"), "set", False),
    "exist": Signature(("set",), "bool", False),
    "count": Signature(("set",), "number", False),
    "describe": Signature(("set",), "attr", True),
    "compare": Signature((None, None), "bool", True),
}
SET_MODULES = ("filter", "relate", "same", "intersect", "union", "unique")


def value_kind(subkind: str) -> str:
    return ATTENTION if subkind == "set" else FEATURE


class Family(str, Enum):
    COUNT = "count"
    EXIST = "exist"
    COMPARE_NUMBERS = "compare_numbers"
    QUERY_ATTRIBUTE = "query_attribute"
    COMPARE_ATTRIBUTE = "compare_attribute"


FAMILIES = tuple(Family)


# ---- AST ------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    module: str
    token: str | None = None
    children: tuple["Expr", ...] = ()
    span: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)

    def __str__(self):
        return to_text(self)

    def nodes(self) -> list["Expr"]:
        """Post-order list of sub-expressions (children before parents)."""
        out: list[Expr] = []
        for c in self.children:
            out.extend(c.nodes())
        out.append(self)
        return out

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    @property
    def compare_kind(self) -> str | None:
        if self.module != "compare" or self.token is None:
            return None
        return self.token.split(":", 1)[0]


def E(module: str, *children: Expr, token: str | None = None) -> Expr:
    return Expr(module, token, tuple(children))


# ---- errors -----------------------------------------------------------------------

class ProgramError(ValueError):
    def __init__(self, message: str, offset: int = 0, end: int | None = None):
        self.offset = offset
        self.span = (offset, offset if end is None else end)
        super().__init__(f"{message} at offset {offset}")
        self.message = message


class LexError(ProgramError):
    pass


class SyntaxProgramError(ProgramError):
    pass


class UnknownModuleError(ProgramError):
    pass


class ArityError(ProgramError):
    pass


class KindError(ProgramError):
    pass


class TokenError(ProgramError):
    pass


class IllPosedError(ValueError):
    """The program has no defined answer on this scene."""


# ---- parser -------------------------------------------------------------------------

_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CHARS = _IDENT_START | set("0123456789")
_TOKEN_CHARS = _IDENT_CHARS | {":"}


class _Parser:
    """Recursive descent over characters; offsets are positions in the input."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str, expectation: str) -> int:
        got = self.peek()
        if got != ch:
            self._fail(expectation)
        self.pos += 1
        return self.pos - 1

    def _fail(self, expectation: str):
        got = self.peek()
        if got and got not in _TOKEN_CHARS and got not in "()[],":
            raise LexError(f"unexpected character {got!r}", self.pos, self.pos + 1)
        raise SyntaxProgramError(f"expected {expectation}", self.pos)

    def word(self, chars: set[str]) -> str:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in chars:
            self.pos += 1
        return self.text[start:self.pos]

    def expr(self) -> Expr:
        if self.peek() not in _IDENT_START or not self.peek():
            self._fail("expression")
        start = self.pos
        name = self.word(_IDENT_CHARS)
        if name not in SIGNATURES:
            raise UnknownModuleError(f"unknown module {name!r}", start, self.pos)
        token = None
        if self.peek() == "[":
            self.pos += 1
            self.skip()
            token = self.word(_TOKEN_CHARS)
            if not token:
                self._fail("bracket token")
            self.expect("]", "']'")
        self.expect("(", "'('")
        children = []
        if self.peek() != ")":
            children.append(self.expr())
            while self.peek() == ",":
                self.pos += 1
                children.append(self.expr())
        end = self.expect(")", "')' or ','") + 1
        return Expr(name, token, tuple(children), (start, end))


def parse(text: str, config: WorldConfig | None = None) -> Expr:
    """Parse and validate program text; raises a :class:`ProgramError` subclass."""
    p = _Parser(text)
    e = p.expr()
    if p.peek():
        p._fail("end of input")
    validate(e, config)
    return e


def to_text(e: Expr) -> str:
    """Canonical text: no whitespace, bracket token immediately after the name."""
    tok = f"[{e.token}]" if e.token is not None else ""
    return f"{e.module}{tok}({','.join(to_text(c) for c in e.children)})"


# ---- validation -------------------------------------------------------------------

def validate(e: Expr, config: WorldConfig | None = None, root: bool = True) -> str:
    """Check arity, bracket tokens and value kinds; return the node's sub-kind."""
    sig = SIGNATURES.get(e.module)
    if sig is None:
        raise UnknownModuleError(f"unknown module {e.module!r}", *e.span)
    if len(e.children) != len(sig.inputs):
        raise ArityError(f"{e.module} takes {len(sig.inputs)} argument(s), got {len(e.children)}", *e.span)
    if sig.takes_token != (e.token is not None):
        what = "requires" if sig.takes_token else "does not take"
        raise ArityError(f"{e.module} {what} a bracket token", *e.span)
    kinds = [validate(c, config, root=False) for c in e.children]
    for want, got, child in zip(sig.inputs, kinds, e.children):
        if want is not None and want != got:
            raise KindError(f"{e.module} expects a {want} input, got {got}", *child.span)
    _check_token(e, kinds, config)
    if root and sig.output == "set":
        raise KindError("program must end in a feature-producing module", *e.span)
    return sig.output


def _check_token(e: Expr, kinds: list[str], config: WorldConfig | None) -> None:
    tok = e.token
    if e.module == "compare":
        kind, _, cat = tok.partition(":")
        if kind not in COMPARE_KINDS:
            raise TokenError(f"unknown compare kind {kind!r}", *e.span)
        if kind == "eq_attr":
            if cat not in CATEGORIES:
                raise TokenError(f"eq_attr needs a category, got {cat!r}", *e.span)
            for child in e.children:
                if child.module != "describe" or child.token != cat:
                    raise KindError(f"compare[{tok}] needs describe[{cat}] inputs", *child.span)
        else:
            if cat:
                raise TokenError(f"compare[{kind}] takes no category", *e.span)
            if kinds != ["number", "number"]:
                raise KindError(f"compare[{kind}] needs two numbers", *e.span)
    elif e.module in ("same", "describe"):
        if tok not in CATEGORIES:
            raise TokenError(f"{e.module} needs an attribute category, got {tok!r}", *e.span)
    elif e.module == "relate":
        if tok not in RELATIONS:
            raise TokenError(f"unknown relation {tok!r}", *e.span)
    elif e.module == "filter" and config is not None:
        if tok not in config.attribute_labels():
            raise TokenError(f"unknown attribute value {tok!r}", *e.span)


# ---- oracle -------------------------------------------------------------------------

class _Oracle:
    def __init__(self, scene: Scene):
        self.scene = scene
        self.rel = spatial_relations(scene) if len(scene) else {}

    def eval(self, e: Expr):
        m = e.module
        objs = self.scene.objects
        if m == "scene":
            return frozenset(o.id for o in objs)
        args = [self.eval(c) for c in e.children]
        if m == "filter":
            return frozenset(i for i in args[0] if e.token in objs[i].attributes())
        if m == "relate":
            return frozenset(j for i in args[0] for j in range(len(objs))
                             if i != j and e.token in self.rel[(i, j)])
        if m == "same":
            (i,) = self._unique(args[0], e)
            value = objs[i].get(e.token)
            return frozenset(o.id for o in objs if o.id != i and o.get(e.token) == value)
        if m == "unique":
            return args[0]
        if m == "intersect":
            return args[0] & args[1]
        if m == "union":
            return args[0] | args[1]
        if m == "exist":
            return len(args[0]) > 0
        if m == "count":
            return len(args[0])
        if m == "describe":
            (i,) = self._unique(args[0], e)
            return objs[i].get(e.token)
        if m == "compare":
            kind = e.compare_kind
            a, b = args
            if kind == "greater":
                return a > b
            if kind == "less":
                return a < b
            return a == b
        raise IllPosedError(f"unknown module {m}")

    def _unique(self, s: frozenset, e: Expr) -> frozenset:
        if len(s) != 1:
            raise IllPosedError(f"{e.module}[{e.token}] needs exactly one object, got {len(s)}")
        return s


def oracle_value(e: Expr, scene: Scene):
    """Exact value of any sub-expression: a frozenset of object ids, bool, int or str."""
    return _Oracle(scene).eval(e)


def answer_string(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    raise IllPosedError(f"value {value!r} is not an answer")


def oracle(e: Expr, scene: Scene) -> str:
    return answer_string(oracle_value(e, scene))


def family_of(e: Expr) -> Family:
    if e.module == "exist":
        return Family.EXIST
    if e.module == "count":
        return Family.COUNT
    if e.module == "describe":
        return Family.QUERY_ATTRIBUTE
    if e.module == "compare":
        return Family.COMPARE_ATTRIBUTE if e.compare_kind == "eq_attr" else Family.COMPARE_NUMBERS
    raise ValueError(f"no question family for root module {e.module}")


# ---- generation ---------------------------------------------------------------------

MAX_DEPTH = 4
MAX_SET_OPS = 2
MAX_REJECTIONS = 1000
COUNT_TARGET_TRIES = 200


class GenerationError(RuntimeError):
    pass


def set_depth(e: Expr) -> int:
    """Longest chain of set modules below a root (``scene()`` counts zero)."""
    if e.module == "scene":
        return 0
    inner = max((set_depth(c) for c in e.children), default=0)
    return inner + (1 if e.module in SET_MODULES else 0)


def count_set_ops(e: Expr) -> int:
    return (e.module in ("intersect", "union")) + sum(count_set_ops(c) for c in e.children)


class _Sampler:
    def __init__(self, scene: Scene, config: WorldConfig, rng: np.random.Generator):
        self.scene = scene
        self.config = config
        self.rng = rng
        self.o = _Oracle(scene)
        self.set_ops = 0

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def unique(self, budget: int) -> Expr | None:
        """Filter chain (optionally through relate/same) that selects exactly one object."""
        objs = self.scene.objects
        if budget >= 3 and self.rng.random() < 0.25:
            inner = self.unique(budget - 2)
            if inner is not None:
                mod = self.choice(["relate", "same"])
                tok = self.choice(RELATIONS) if mod == "relate" else self.choice(CATEGORIES)
                base = E(mod, inner, token=tok)
                members = self.o.eval(base)
                if members:
                    target = objs[self.choice(sorted(members))]
                    got = self._narrow(base, members, target, budget - 1 - set_depth(inner))
                    if got is not None:
                        return got
        target = self.choice(objs)
        return self._narrow(E("scene"), frozenset(o.id for o in objs), target, budget)

    def _narrow(self, expr: Expr, members: frozenset, target, budget: int) -> Expr | None:
        cats = list(CATEGORIES)
        self.rng.shuffle(cats)
        for cat in cats:
            if len(members) == 1:
                break
            if budget <= 0:
                return None
            value = target.get(cat)
            narrowed = frozenset(i for i in members if self.scene.objects[i].get(cat) == value)
            if narrowed == members:
                continue
            expr = E("filter", expr, token=value)
            members = narrowed
            budget -= 1
        return expr if len(members) == 1 else None

    def any_set(self, budget: int) -> Expr:
        """Random set expression with at most ``budget`` nested set modules."""
        if budget <= 0:
            return E("scene")
        r = self.rng.random()
        if r < 0.12 and budget >= 2:
            inner = self.unique(budget - 1)
            if inner is not None:
                tok = self.choice(RELATIONS)
                return self._maybe_filter(E("relate", inner, token=tok), budget - 1 - set_depth(inner))
        elif r < 0.22 and budget >= 2:
            inner = self.unique(budget - 1)
            if inner is not None:
                tok = self.choice(CATEGORIES)
                return self._maybe_filter(E("same", inner, token=tok), budget - 1 - set_depth(inner))
        elif r < 0.34 and budget >= 2 and self.set_ops < MAX_SET_OPS:
            self.set_ops += 1
            mod = self.choice(["intersect", "union"])
            return E(mod, self.any_set(budget - 1), self.any_set(budget - 1))
        elif r < 0.44:
            return E("scene")
        value = self._filter_value()
        return E("filter", self.any_set(budget - 1), token=value)

    def _maybe_filter(self, e: Expr, budget: int) -> Expr:
        if budget > 0 and self.rng.random() < 0.5:
            return E("filter", e, token=self._filter_value())
        return e

    def _filter_value(self) -> str:
        # mostly values present in the scene so sets are rarely trivially empty
        if self.rng.random() < 0.8:
            obj = self.choice(self.scene.objects)
            return obj.get(self.choice(CATEGORIES))
        return self.choice(self.config.attribute_labels())


def generate(scene: Scene, family: Family | str, rng: np.random.Generator,
             config: WorldConfig | None = None) -> tuple[Expr, str]:
    """Sample a well-posed program of the given family and its oracle answer.

    Yes/no families first draw the target answer uniformly, so their answers
    are balanced in expectation.  Count questions draw a target count in
    0..N the same way but settle for the first well-posed program when the
    target cannot be hit within ``COUNT_TARGET_TRIES`` proposals.
    """
    if len(scene) == 0:
        raise GenerationError("scene has no objects")
    family = Family(family)
    config = config or WorldConfig()
    want = None
    if family in (Family.EXIST, Family.COMPARE_NUMBERS, Family.COMPARE_ATTRIBUTE):
        want = "yes" if rng.random() < 0.5 else "no"
    elif family == Family.COUNT:
        want = str(int(rng.integers(len(scene) + 1)))
    fallback = None
    for tries in range(MAX_REJECTIONS):
        if family == Family.COUNT and tries == COUNT_TARGET_TRIES and fallback is not None:
            return fallback
        s = _Sampler(scene, config, rng)
        e = _propose(s, family)
        if e is None:
            continue
        try:
            answer = oracle(e, scene)
        except IllPosedError:
            continue
        if want is not None and answer != want:
            fallback = fallback or (e, answer)
            continue
        return e, answer
    if family == Family.COUNT and fallback is not None:
        return fallback
    raise GenerationError(f"no well-posed {family.value} program after {MAX_REJECTIONS} tries")


def _propose(s: _Sampler, family: Family) -> Expr | None:
    if family == Family.EXIST:
        return E("exist", s.any_set(MAX_DEPTH))
    if family == Family.COUNT:
        return E("count", s.any_set(MAX_DEPTH))
    if family == Family.COMPARE_NUMBERS:
        kind = s.choice(["eq_int", "greater", "less"])
        return E("compare", E("count", s.any_set(MAX_DEPTH)), E("count", s.any_set(MAX_DEPTH)), token=kind)
    cat = s.choice(CATEGORIES)
    if family == Family.QUERY_ATTRIBUTE:
        u = s.unique(MAX_DEPTH)
        return None if u is None else E("describe", u, token=cat)
    u1, u2 = s.unique(MAX_DEPTH), s.unique(MAX_DEPTH)
    if u1 is None or u2 is None or s.o.eval(u1) == s.o.eval(u2):
        return None
    return E("compare", E("describe", u1, token=cat), E("describe", u2, token=cat), token=f"eq_attr:{cat}")


def well_posed(e: Expr, scene: Scene) -> bool:
    """Oracle-defined answer, unique inputs to relate/same/describe, and size limits."""
    try:
        oracle(e, scene)
    except IllPosedError:
        return False
    o = _Oracle(scene)
    for node in e.nodes():
        if node.module == "relate" and len(o.eval(node.children[0])) != 1:
            return False
        if node.module in ("exist", "count", "describe"):
            if set_depth(node.children[0]) > MAX_DEPTH:
                return False
    return count_set_ops(e) <= MAX_SET_OPS
