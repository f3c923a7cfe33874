"""Attention modules over scene graphs.

Reasoning state is either a node attention vector ``a`` in [0, 1]^N or a
feature vector ``h`` in R^d.  Four primitive operations (node attention,
edge attention, transfer, logic) are composed into the set modules (filter,
relate, same, intersect, union); exist/count/describe/compare turn attention
into features for the answer classifier.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .world import CATEGORIES, RELATIONS, LabelEmbedding, SceneGraph, DET_NODE_DIM, DET_EDGE_DIM

COMPARE_KINDS = ("eq_int", "greater", "less", "eq_attr")
DESCRIBE_EPS = 1e-12
MLP_NAMES = ("exist", "count", "describe_aspect", "classifier") + tuple(f"compare_{k}" for k in COMPARE_KINDS)


class EngineError(ValueError):
    pass


@dataclass
class EngineConfig:
    setting: str = "gt"                     # "gt" or "det"
    dim: int = 32
    labels: list[str] = field(default_factory=list)
    query_tokens: list[str] = field(default_factory=list)
    answers: list[str] = field(default_factory=list)
    vocab: dict[str, list[str]] = field(default_factory=dict)
    n_aspects: int = 4
    describe_mode: str = "fixed"            # "fixed" block selection or "learned"
    gt_attention: str = "softmax"           # "softmax" or "sigmoid" (fused-label variant)
    temperature: float = 1.0
    table_fan_in: int = 1                   # tables drawn from ±1/sqrt(table_fan_in); 0 means dim
    query_init: str = "labels"              # "labels": label-token queries start as copies of their D rows
    node_dim: int = 0
    edge_dim: int = 0
    det_projection_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.setting not in ("gt", "det"):
            raise EngineError(f"unknown setting {self.setting!r}")
        if self.describe_mode not in ("fixed", "learned"):
            raise EngineError(f"unknown describe mode {self.describe_mode!r}")
        if self.gt_attention not in ("softmax", "sigmoid"):
            raise EngineError(f"unknown GT attention {self.gt_attention!r}")
        if not self.node_dim:
            self.node_dim = 4 * self.dim if self.setting == "gt" else DET_NODE_DIM
        if not self.edge_dim:
            self.edge_dim = self.dim if self.setting == "gt" else DET_EDGE_DIM
        if self.describe_mode == "fixed" and (self.node_dim != 4 * self.dim or self.n_aspects != 4):
            raise EngineError("fixed describe maps need node_dim == 4 * dim and 4 aspects")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        return cls(**d)


def vocabulary(world_vocab: dict[str, list[str]]) -> tuple[list[str], list[str], list[str]]:
    """Label dictionary, query tokens and answer vocabulary for a world."""
    attrs = [v for c in CATEGORIES for v in world_vocab[c]]
    labels = attrs + list(RELATIONS)
    tokens = labels + list(CATEGORIES)
    answers = ["yes", "no"] + [str(i) for i in range(11)] + attrs
    return labels, tokens, answers


def make_config(world_vocab: dict[str, list[str]], setting: str = "gt", dim: int = 32, **kw) -> EngineConfig:
    labels, tokens, answers = vocabulary(world_vocab)
    if setting == "det":
        kw.setdefault("describe_mode", "learned")
    return EngineConfig(setting=setting, dim=dim, labels=labels, query_tokens=tokens, answers=answers,
                        vocab={c: list(world_vocab[c]) for c in CATEGORIES}, **kw)


def _mlp_shapes(config: EngineConfig) -> dict[str, tuple[int, int, int]]:
    d = config.dim
    shapes = {
        "exist": (1, d, d),
        "count": (1, d, d),
        "describe_aspect": (d, d, config.n_aspects),
        "classifier": (d, d, len(config.answers)),
    }
    for k in COMPARE_KINDS:
        shapes[f"compare_{k}"] = (d, d, d)
    if config.setting == "det":
        shapes["node_attend"] = (config.node_dim, d, d)
        shapes["edge_attend"] = (config.edge_dim, d, d)
    return shapes


class Model:
    """Configuration plus named parameter tensors."""

    def __init__(self, config: EngineConfig, params: dict[str, ad.Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        self._token_index = {t: i for i, t in enumerate(config.query_tokens)}
        self._answer_index = {a: i for i, a in enumerate(config.answers)}
        self.describe_maps = self.params.get("describe_maps")
        if self.describe_maps is None:
            self.describe_maps = ad.Tensor(fixed_describe_maps(config.dim))
        if config.setting == "gt":
            self.embedding = LabelEmbedding(config.labels, self.params["label_embedding"])

    def trainable(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def answer_index(self, answer: str) -> int:
        try:
            return self._answer_index[answer]
        except KeyError:
            raise EngineError(f"answer {answer!r} not in vocabulary") from None

    def query(self, token: str) -> ad.Tensor:
        try:
            i = self._token_index[token]
        except KeyError:
            raise EngineError(f"unknown query token {token!r}") from None
        return ad.reshape(ad.take_rows(self.params["query_embedding"], [i]), (self.config.dim,))

    def mlp(self, name: str, x: ad.Tensor) -> ad.Tensor:
        p = self.params
        hidden = ad.relu(ad.linear(x, p[f"{name}.w1"], p[f"{name}.b1"]))
        return ad.linear(hidden, p[f"{name}.w2"], p[f"{name}.b2"])

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}


def init_params(config: EngineConfig) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(config.seed)
    d = config.dim
    params: dict[str, ad.Tensor] = {}

    def table(name, rows):
        params[name] = ad.uniform_init(rng, (rows, d), fan_in=config.table_fan_in or d, name=name)

    if config.setting == "gt":
        table("label_embedding", len(config.labels))
    table("query_embedding", len(config.query_tokens))
    for name, (n_in, n_hidden, n_out) in _mlp_shapes(config).items():
        params[f"{name}.w1"] = ad.uniform_init(rng, (n_hidden, n_in), n_in, f"{name}.w1")
        params[f"{name}.b1"] = ad.uniform_init(rng, (n_hidden,), n_in, f"{name}.b1")
        params[f"{name}.w2"] = ad.uniform_init(rng, (n_out, n_hidden), n_hidden, f"{name}.w2")
        params[f"{name}.b2"] = ad.uniform_init(rng, (n_out,), n_hidden, f"{name}.b2")
    if config.setting == "gt" and config.query_init == "labels":
        n = len(config.labels)
        params["query_embedding"].data[:n] = params["label_embedding"].data
    if config.setting == "gt" and config.gt_attention == "sigmoid":
        for name, n_in in (("node_fuse", config.node_dim), ("edge_fuse", d)):
            params[f"{name}.w"] = ad.uniform_init(rng, (d, n_in), n_in, f"{name}.w")
            params[f"{name}.b"] = ad.uniform_init(rng, (d,), n_in, f"{name}.b")
    if config.describe_mode == "learned":
        params["describe_maps"] = ad.uniform_init(
            rng, (config.n_aspects * d, config.node_dim), config.node_dim, "describe_maps")
    return params


def fixed_describe_maps(d: int) -> np.ndarray:
    """Stacked block-selection maps M_1..M_4 (each d x 4d) for concatenated label features."""
    maps = np.zeros((4, d, 4 * d), dtype=ad.default_dtype())
    for k in range(4):
        maps[k, :, k * d:(k + 1) * d] = np.eye(d)
    return maps.reshape(4 * d, 4 * d)


# ---- primitive operations -----------------------------------------------------

def _check_query(model: Model, graph: SceneGraph, q: ad.Tensor) -> None:
    if q.shape != (model.config.dim,):
        raise EngineError(f"query has shape {q.shape}, expected ({model.config.dim},)")
    if graph.representation != model.config.setting:
        raise EngineError(f"{graph.representation} graph given to a {model.config.setting} model")


def label_distribution(model: Model, q: ad.Tensor) -> ad.Tensor:
    """Softmax over the label dictionary for a query vector."""
    logits = ad.matmul(model.params["label_embedding"], q)
    if model.config.temperature != 1.0:
        logits = ad.mul(logits, ad.Tensor(1.0 / model.config.temperature))
    return ad.softmax(logits)


def attend_node(model: Model, graph: SceneGraph, q: ad.Tensor) -> ad.Tensor:
    _check_query(model, graph, q)
    if model.config.setting == "gt":
        if model.config.gt_attention == "softmax":
            b = label_distribution(model, q)
            return ad.matmul(ad.Tensor(graph.node_membership), b)
        fused = ad.linear(graph.node_features, model.params["node_fuse.w"], model.params["node_fuse.b"])
        return ad.sigmoid(ad.matmul(fused, q))
    return ad.sigmoid(ad.matmul(model.mlp("node_attend", graph.node_features), q))


def attend_edge(model: Model, graph: SceneGraph, q: ad.Tensor) -> ad.Tensor:
    _check_query(model, graph, q)
    n = graph.n
    if model.config.setting == "gt" and model.config.gt_attention == "softmax":
        b = label_distribution(model, q)
        # diagonal rows of the membership matrix are empty, so W_ii = 0 already
        return ad.reshape(ad.matmul(ad.Tensor(graph.edge_membership), b), (n, n))
    if model.config.setting == "gt":
        edge_feats = ad.matmul(ad.Tensor(graph.edge_membership), model.params["label_embedding"])
        fused = ad.linear(edge_feats, model.params["edge_fuse.w"], model.params["edge_fuse.b"])
        scores = ad.matmul(fused, q)
    else:
        scores = ad.matmul(model.mlp("edge_attend", graph.edge_features), q)
    off_diag = ad.Tensor(1 - np.eye(n).ravel())
    return ad.reshape(ad.mul(ad.sigmoid(scores), off_diag), (n, n))


def transfer(a: ad.Tensor, W: ad.Tensor) -> ad.Tensor:
    """Move node weight along edges: ``W^T a``, rescaled by its max when that exceeds 1."""
    if W.shape != (a.size, a.size):
        raise EngineError(f"edge attention {W.shape} does not match node attention {a.shape}")
    raw = ad.matmul(a, W)
    peak = ad.max(raw)
    if peak.data > 1:
        return ad.div(raw, peak)
    return raw


def logic_and(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.minimum(a, b)


def logic_or(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.maximum(a, b)


def logic_not(a: ad.Tensor) -> ad.Tensor:
    return ad.one_minus(a)


# ---- composite modules --------------------------------------------------------

def scene_module(graph: SceneGraph) -> ad.Tensor:
    return ad.Tensor(np.ones(graph.n))


def filter_(model: Model, graph: SceneGraph, a: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
    return logic_and(a, attend_node(model, graph, q))


def relate(model: Model, graph: SceneGraph, a: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
    return transfer(a, attend_edge(model, graph, q))


def same(model: Model, graph: SceneGraph, a: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
    # the described attribute feature is reused as the query vector
    return filter_(model, graph, logic_not(a), describe(model, graph, a, q))


intersect = logic_and
union = logic_or


# ---- output modules -----------------------------------------------------------

def _pool(a: ad.Tensor) -> ad.Tensor:
    return ad.reshape(ad.sum(a), (1,))


def exist(model: Model, a: ad.Tensor) -> ad.Tensor:
    return model.mlp("exist", _pool(a))


def count(model: Model, a: ad.Tensor) -> ad.Tensor:
    return model.mlp("count", _pool(a))


def pooled_feature(graph: SceneGraph, a: ad.Tensor) -> ad.Tensor:
    """Attention-weighted mean of node features."""
    total = ad.add(ad.sum(a), ad.Tensor(DESCRIBE_EPS))
    return ad.div(ad.matmul(a, graph.node_features), total)


def aspect_weights(model: Model, q: ad.Tensor) -> ad.Tensor:
    return ad.softmax(model.mlp("describe_aspect", q))


def describe(model: Model, graph: SceneGraph, a: ad.Tensor, q: ad.Tensor) -> ad.Tensor:
    cfg = model.config
    v_bar = pooled_feature(graph, a)
    views = ad.reshape(ad.matmul(model.describe_maps, v_bar), (cfg.n_aspects, cfg.dim))
    return ad.matmul(aspect_weights(model, q), views)


def compare(model: Model, h1: ad.Tensor, h2: ad.Tensor, kind: str) -> ad.Tensor:
    if kind not in COMPARE_KINDS:
        raise EngineError(f"unknown compare kind {kind!r}")
    if h1.shape != h2.shape:
        raise EngineError(f"compare inputs differ in shape: {h1.shape} vs {h2.shape}")
    return model.mlp(f"compare_{kind}", ad.sub(h1, h2))


def classify(model: Model, h: ad.Tensor) -> ad.Tensor:
    return model.mlp("classifier", h)


# ---- hand-set parameters for exact set semantics --------------------------------

def symbolic_model(world_vocab: dict[str, list[str]], sharpness: float = 1e3) -> Model:
    """GT model whose attention is (numerically) hard.

    Label embeddings are the identity so d equals the label count; a filter or
    relate token's query is its label's one-hot, category tokens select their
    describe aspect, and ``temperature = 1 / sharpness`` hardens every softmax,
    including the one driven by a described feature inside ``same``.
    """
    labels, tokens, _ = vocabulary(world_vocab)
    c = len(labels)
    config = make_config(world_vocab, "gt", dim=c, temperature=1.0 / sharpness)
    params = init_params(config)
    params["label_embedding"].data[...] = np.eye(c)
    q = np.zeros((len(tokens), c))
    for i, tok in enumerate(tokens):
        if tok in CATEGORIES:
            q[i, CATEGORIES.index(tok)] = 1
        else:
            q[i, labels.index(tok)] = 1
    params["query_embedding"].data[...] = q
    w1 = params["describe_aspect.w1"].data
    w1[...] = np.eye(c)
    params["describe_aspect.b1"].data[...] = 0
    w2 = params["describe_aspect.w2"].data
    w2[...] = 0
    for k in range(4):
        w2[k, k] = sharpness
    params["describe_aspect.b2"].data[...] = 0
    return Model(config, params)
