"""Synthetic tabletop worlds, their scene graphs, and detector-style corruptions."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

CATEGORIES = ("color", "shape", "size", "material")
RELATIONS = ("left", "right", "front", "behind")
MIRROR = {"left": "right", "right": "left", "front": "behind", "behind": "front"}

DEFAULT_VOCAB = {
    "color": ["gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow"],
    "shape": ["cube", "sphere", "cylinder"],
    "size": ["large", "small"],
    "material": ["rubber", "metal"],
}

# CoGenT condition A; condition B swaps the two lists
PALETTE_A = {
    "cube": ["gray", "blue", "brown", "yellow"],
    "cylinder": ["red", "green", "purple", "cyan"],
}

MIN_SEPARATION = 1e-3
DET_NODE_DIM = 32
DET_EDGE_DIM = 2


class WorldError(ValueError):
    pass


@dataclass
class WorldConfig:
    vocab: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_VOCAB.items()})
    min_objects: int = 3
    max_objects: int = 10
    coord_range: tuple[float, float] = (0.0, 10.0)
    palette: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.coord_range = tuple(self.coord_range)
        if tuple(self.vocab) != CATEGORIES:
            raise WorldError(f"vocab categories must be {CATEGORIES}, got {tuple(self.vocab)}")
        for cat, values in self.vocab.items():
            if not values:
                raise WorldError(f"empty vocabulary for {cat}")
        labels = self.attribute_labels()
        if len(set(labels)) != len(labels) or set(labels) & set(RELATIONS):
            raise WorldError("attribute values must be unique across categories")
        if not 1 <= self.min_objects <= self.max_objects:
            raise WorldError(f"bad object range [{self.min_objects}, {self.max_objects}]")
        if self.palette not in (None, "A", "B"):
            raise WorldError(f"palette must be A, B or null, got {self.palette!r}")

    def attribute_labels(self) -> list[str]:
        return [v for cat in CATEGORIES for v in self.vocab[cat]]

    def labels(self) -> list[str]:
        """Full label dictionary: attribute values in category order, then relations."""
        return self.attribute_labels() + list(RELATIONS)

    def category_of(self, value: str) -> str:
        for cat in CATEGORIES:
            if value in self.vocab[cat]:
                return cat
        raise WorldError(f"unknown attribute value {value!r}")

    def allowed_colors(self, shape: str, palette: str | None = None) -> list[str]:
        palette = self.palette if palette is None else palette
        if palette is None or shape not in PALETTE_A:
            return list(self.vocab["color"])
        if palette == "B":
            other = "cylinder" if shape == "cube" else "cube"
            return list(PALETTE_A[other])
        return list(PALETTE_A[shape])

    def with_palette(self, palette: str | None) -> "WorldConfig":
        return dataclasses.replace(self, palette=palette)

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "min_objects": self.min_objects,
            "max_objects": self.max_objects,
            "coord_range": list(self.coord_range),
            "palette": self.palette,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class SceneObject:
    id: int
    color: str
    shape: str
    size: str
    material: str
    x: float
    y: float

    def attributes(self) -> tuple[str, str, str, str]:
        return (self.color, self.shape, self.size, self.material)

    def get(self, category: str) -> str:
        return getattr(self, category)


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if [o.id for o in self.objects] != list(range(len(self.objects))):
            raise WorldError("object ids must be contiguous from 0")

    def __len__(self):
        return len(self.objects)

    def to_dict(self) -> dict:
        return {"objects": [dataclasses.asdict(o) for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            objs = [SceneObject(int(o["id"]), o["color"], o["shape"], o["size"], o["material"],
                                float(o["x"]), float(o["y"])) for o in d["objects"]]
        except (KeyError, TypeError) as e:
            raise WorldError(f"malformed scene object: {e}") from e
        return cls(tuple(objs))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))


def renumber(objects: Sequence[SceneObject]) -> Scene:
    return Scene(tuple(dataclasses.replace(o, id=i) for i, o in enumerate(objects)))


@dataclass
class CorruptionSpec:
    coordinate_jitter_sigma: float = 0.0
    occlusion_probability: float = 0.0
    merge_probability: float = 0.0
    feature_noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("occlusion_probability", "merge_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise WorldError(f"{name} must lie in [0, 1], got {p}")
        for name in ("coordinate_jitter_sigma", "feature_noise_sigma"):
            if getattr(self, name) < 0:
                raise WorldError(f"{name} must be non-negative")

    def is_identity(self) -> bool:
        return not (self.coordinate_jitter_sigma or self.occlusion_probability or self.merge_probability)


# ---- sampling -------------------------------------------------------------------

def sample_scene(config: WorldConfig, rng: np.random.Generator) -> Scene:
    n = int(rng.integers(config.min_objects, config.max_objects + 1))
    lo, hi = config.coord_range
    objects: list[SceneObject] = []
    xs: list[float] = []
    ys: list[float] = []
    while len(objects) < n:
        x, y = (float(v) for v in rng.uniform(lo, hi, size=2))
        # per-axis separation keeps every left/right and front/behind decision strict
        if any(abs(x - u) < MIN_SEPARATION for u in xs) or any(abs(y - v) < MIN_SEPARATION for v in ys):
            continue
        shape = config.vocab["shape"][rng.integers(len(config.vocab["shape"]))]
        colors = config.allowed_colors(shape)
        color = colors[rng.integers(len(colors))]
        size = config.vocab["size"][rng.integers(len(config.vocab["size"]))]
        material = config.vocab["material"][rng.integers(len(config.vocab["material"]))]
        objects.append(SceneObject(len(objects), color, shape, size, material, round(x, 4), round(y, 4)))
        xs.append(round(x, 4))
        ys.append(round(y, 4))
    return Scene(tuple(objects))


def spatial_relations(scene: Scene) -> dict[tuple[int, int], frozenset[str]]:
    """Relation labels per ordered pair: ``r`` on ``(i, j)`` means object j is ``r`` of object i."""
    if len(scene) == 0:
        raise WorldError("scene has no objects")
    rel = {}
    for a in scene.objects:
        for b in scene.objects:
            if a.id == b.id:
                continue
            labels = set()
            if b.x < a.x:
                labels.add("left")
            elif b.x > a.x:
                labels.add("right")
            if b.y > a.y:
                labels.add("behind")
            elif b.y < a.y:
                labels.add("front")
            rel[(a.id, b.id)] = frozenset(labels)
    return rel


# ---- scene graphs ---------------------------------------------------------------

class LabelEmbedding:
    """Label dictionary plus its trainable ``C x d`` embedding matrix."""

    def __init__(self, labels: Sequence[str], table: ad.Tensor):
        if table.shape[0] != len(labels) or len(set(labels)) != len(labels):
            raise WorldError("label dictionary must biject onto the embedding rows")
        self.labels = list(labels)
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        self.table = table

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def lookup(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise WorldError(f"unknown label {label!r}") from None


@dataclass
class SceneGraph:
    """Nodes and directed edges of one scene.

    ``node_membership`` (N x C) and ``edge_membership`` (N*N x C) are the label
    sets as 0/1 rows; they are only populated for ground-truth graphs.
    """

    representation: str
    n: int
    node_features: ad.Tensor
    edge_features: ad.Tensor | np.ndarray | None = None
    node_labels: list[frozenset[str]] | None = None
    edge_labels: dict[tuple[int, int], frozenset[str]] | None = None
    node_membership: np.ndarray | None = None
    edge_membership: np.ndarray | None = None

    def __post_init__(self):
        if self.representation not in ("gt", "det"):
            raise WorldError(f"unknown representation {self.representation!r}")
        if self.n < 1:
            raise WorldError("scene graph needs at least one node")


@dataclass
class GTStructure:
    """Embedding-independent part of a ground-truth graph, cached per scene."""

    n: int
    node_label_ids: np.ndarray
    node_labels: list[frozenset[str]]
    edge_labels: dict[tuple[int, int], frozenset[str]]
    node_membership: np.ndarray
    edge_membership: np.ndarray


def gt_structure(scene: Scene, labels: Sequence[str]) -> GTStructure:
    index = {lab: i for i, lab in enumerate(labels)}
    n = len(scene)
    if n == 0:
        raise WorldError("scene has no objects")
    c = len(labels)
    try:
        ids = np.array([[index[v] for v in o.attributes()] for o in scene.objects], dtype=np.intp)
        rel = spatial_relations(scene)
        node_m = np.zeros((n, c), dtype=np.float32)
        node_m[np.arange(n)[:, None], ids] = 1
        edge_m = np.zeros((n * n, c), dtype=np.float32)
        for (i, j), labs in rel.items():
            for lab in labs:
                edge_m[i * n + j, index[lab]] = 1
    except KeyError as e:
        raise WorldError(f"unknown label {e.args[0]!r}") from None
    return GTStructure(n, ids, [frozenset(o.attributes()) for o in scene.objects], rel, node_m, edge_m)


def build_gt_graph(scene: Scene, embedding: LabelEmbedding, structure: GTStructure | None = None) -> SceneGraph:
    """Node features are the label embeddings concatenated as [color, shape, size, material].

    Built from ``embedding.table`` with differentiable ops, so building inside a
    tape lets gradients reach the table.
    """
    s = structure or gt_structure(scene, embedding.labels)
    d = embedding.dim
    nodes = ad.reshape(ad.take_rows(embedding.table, s.node_label_ids), (s.n, 4 * d))
    # summed relation embeddings per edge; not consumed by label-space attention
    edges = (s.edge_membership @ embedding.table.data).reshape(s.n, s.n, d)
    return SceneGraph("gt", s.n, nodes, edges, s.node_labels, s.edge_labels,
                      s.node_membership, s.edge_membership)


def det_projection(config: WorldConfig, seed: int, dim: int = DET_NODE_DIM) -> np.ndarray:
    """Fixed random map from the joint attribute-tuple one-hot to detector-like features."""
    n_tuples = int(np.prod([len(config.vocab[c]) for c in CATEGORIES]))
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=(dim, n_tuples)).astype(np.float32)


def tuple_index(config: WorldConfig, obj: SceneObject) -> int:
    idx = 0
    for cat in CATEGORIES:
        values = config.vocab[cat]
        idx = idx * len(values) + values.index(obj.get(cat))
    return idx


def build_det_graph(scene: Scene, spec: CorruptionSpec, projection: np.ndarray,
                    config: WorldConfig, rng: np.random.Generator | None = None) -> SceneGraph:
    """Label-free graph: projected attribute features plus noise, coordinate-difference edges.

    Coordinates are used as given; apply :func:`corrupt` first to simulate a
    noisy detector.
    """
    n = len(scene)
    if n == 0:
        raise WorldError("scene has no objects")
    v = projection[:, [tuple_index(config, o) for o in scene.objects]].T.copy()
    if spec.feature_noise_sigma > 0:
        if rng is None:
            raise WorldError("feature noise requires an rng")
        v += rng.normal(0.0, spec.feature_noise_sigma, size=v.shape).astype(np.float32)
    xy = np.array([[o.x, o.y] for o in scene.objects], dtype=np.float32)
    edges = xy[None, :, :] - xy[:, None, :]
    return SceneGraph("det", n, ad.Tensor(v), ad.Tensor(edges.reshape(n * n, DET_EDGE_DIM)))


# ---- corruption -----------------------------------------------------------------

def corrupt(scene: Scene, spec: CorruptionSpec, rng: np.random.Generator) -> Scene:
    """Coordinate jitter, then occlusion (at least one survivor), then pairwise merges."""
    objs = list(scene.objects)
    if spec.coordinate_jitter_sigma > 0:
        noise = rng.normal(0.0, spec.coordinate_jitter_sigma, size=(len(objs), 2))
        objs = [dataclasses.replace(o, x=o.x + float(dx), y=o.y + float(dy)) for o, (dx, dy) in zip(objs, noise)]
    if spec.occlusion_probability > 0:
        keep = rng.random(len(objs)) >= spec.occlusion_probability
        if not keep.any():
            keep[int(rng.integers(len(objs)))] = True
        objs = [o for o, k in zip(objs, keep) if k]
    if spec.merge_probability > 0:
        objs = _merge_pairs(objs, spec.merge_probability, rng)
    return renumber(objs)


def _merge_pairs(objs: list[SceneObject], p: float, rng) -> list[SceneObject]:
    """Collapse identical-attribute neighbours into one object at their mean position.

    Candidates are pairs with equal attribute tuples where each is the other's
    nearest identical-looking object; each pair merges independently with
    probability ``p``.
    """
    merged: set[int] = set()
    out: list[SceneObject] = []
    replacement: dict[int, SceneObject] = {}
    for i, a in enumerate(objs):
        if i in merged:
            continue
        twins = [j for j in range(len(objs)) if j != i and j not in merged
                 and objs[j].attributes() == a.attributes()]
        if not twins:
            continue
        j = min(twins, key=lambda k: (objs[k].x - a.x) ** 2 + (objs[k].y - a.y) ** 2)
        if rng.random() < p:
            b = objs[j]
            merged.update((i, j))
            replacement[i] = dataclasses.replace(a, x=(a.x + b.x) / 2, y=(a.y + b.y) / 2)
    for i, o in enumerate(objs):
        if i in replacement:
            out.append(replacement[i])
        elif i not in merged:
            out.append(o)
    return out


# ---- persistence ----------------------------------------------------------------

def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_json(fh.read())


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        fh.write(scene.to_json())
