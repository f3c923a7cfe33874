"""Program execution over scene graphs with step-by-step traces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import engine as en
from .dsl import ATTENTION, FEATURE, SIGNATURES, Expr, value_kind
from .world import SceneGraph


class ExecutionError(RuntimeError):
    pass


@dataclass
class TraceStep:
    module: str
    token: str | None
    inputs: list[int]
    kind: str
    values: np.ndarray


@dataclass
class Trace:
    steps: list[TraceStep] = field(default_factory=list)
    logits: np.ndarray | None = None

    def __len__(self):
        return len(self.steps)

    def to_dict(self, answer: str | None = None) -> dict:
        out = {"steps": [
            {"module": s.module, "token": s.token, "inputs": list(s.inputs), "kind": s.kind,
             "values": [round(float(v), 6) for v in np.ravel(s.values)]}
            for s in self.steps
        ]}
        if answer is not None:
            out["answer"] = answer
        return out


TRACE_SCHEMA = {
    "type": "object",
    "required": ["steps"],
    "additionalProperties": False,
    "properties": {
        "answer": {"type": "string"},
        "steps": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["module", "token", "inputs", "kind", "values"],
                "additionalProperties": False,
                "properties": {
                    "module": {"type": "string", "enum": sorted(SIGNATURES)},
                    "token": {"type": ["string", "null"]},
                    "inputs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "kind": {"enum": [ATTENTION, FEATURE]},
                    "values": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}


def dump_trace(trace: Trace, answer: str | None = None) -> str:
    """Canonical JSON for a trace (fixed key order, values rounded to 6 places)."""
    return json.dumps(trace.to_dict(answer), separators=(",", ":"))


class _Runner:
    def __init__(self, model: en.Model, graph: SceneGraph, trace: Trace | None):
        self.model = model
        self.graph = graph
        self.trace = trace

    def run(self, e: Expr) -> tuple[ad.Tensor, int]:
        """Evaluate post-order; returns the value and its trace step index."""
        results = [self.run(c) for c in e.children]
        args = [r[0] for r in results]
        out = self.apply(e, args)
        idx = -1
        if self.trace is not None:
            idx = len(self.trace.steps)
            kind = value_kind(SIGNATURES[e.module].output)
            self.trace.steps.append(TraceStep(e.module, e.token, [r[1] for r in results], kind, out.data.copy()))
        return out, idx

    def apply(self, e: Expr, args: list[ad.Tensor]) -> ad.Tensor:
        m, g = self.model, self.graph
        if e.module == "scene":
            return en.scene_module(g)
        if e.module == "unique":
            return args[0]
        if e.module == "filter":
            return en.filter_(m, g, args[0], m.query(e.token))
        if e.module == "relate":
            return en.relate(m, g, args[0], m.query(e.token))
        if e.module == "same":
            return en.same(m, g, args[0], m.query(e.token))
        if e.module == "intersect":
            return en.intersect(*args)
        if e.module == "union":
            return en.union(*args)
        if e.module == "exist":
            return en.exist(m, args[0])
        if e.module == "count":
            return en.count(m, args[0])
        if e.module == "describe":
            return en.describe(m, g, args[0], m.query(e.token))
        if e.module == "compare":
            return en.compare(m, args[0], args[1], e.compare_kind)
        raise ExecutionError(f"unknown module {e.module}")


def evaluate(program: Expr, graph: SceneGraph, model: en.Model) -> ad.Tensor:
    """Value of any (sub-)program without classification or tracing."""
    return _Runner(model, graph, None).run(program)[0]


def execute(program: Expr, graph: SceneGraph, model: en.Model, trace: bool = True) -> tuple[ad.Tensor, Trace | None]:
    """Run a feature-rooted program and the answer classifier; returns logits and the trace."""
    if graph.n == 0:
        raise ExecutionError("graph has no nodes")
    if value_kind(SIGNATURES[program.module].output) != FEATURE:
        raise ExecutionError("program root must produce a feature")
    tr = Trace() if trace else None
    h, _ = _Runner(model, graph, tr).run(program)
    logits = en.classify(model, h)
    if tr is not None:
        tr.logits = logits.data.copy()
    return logits, tr


def predict(program: Expr, graph: SceneGraph, model: en.Model) -> str:
    logits, _ = execute(program, graph, model, trace=False)
    return model.config.answers[int(np.argmax(logits.data))]


# ---- hard-mode readout --------------------------------------------------------------

def symbolic_value(e: Expr, graph: SceneGraph, model: en.Model, threshold: float = 0.5):
    """Execute with the engine, then read values out exactly.

    Attentions become sets of node ids above ``threshold``; exist/count read the
    thresholded set, describe decodes its feature to the best-matching label of
    the requested category, and compare works on the decoded values.  Meant for
    :func:`graphreason.engine.symbolic_model`, whose attention is already hard.
    """
    if e.module in ("exist", "count"):
        members = symbolic_value(e.children[0], graph, model, threshold)
        return len(members) > 0 if e.module == "exist" else len(members)
    if e.module == "describe":
        h = evaluate(e, graph, model).data
        cfg = model.config
        values = cfg.vocab[e.token]
        rows = [cfg.labels.index(v) for v in values]
        scores = model.params["label_embedding"].data[rows] @ h
        return values[int(np.argmax(scores))]
    if e.module == "compare":
        a, b = (symbolic_value(c, graph, model, threshold) for c in e.children)
        kind = e.compare_kind
        return a > b if kind == "greater" else a < b if kind == "less" else a == b
    a = evaluate(e, graph, model).data
    return frozenset(int(i) for i in np.flatnonzero(a > threshold))

