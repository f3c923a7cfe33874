"""Question datasets: generation, JSONL persistence, and scene-graph providers."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dsl
from .world import (CorruptionSpec, GTStructure, LabelEmbedding, Scene, SceneGraph, WorldConfig,
                    build_det_graph, build_gt_graph, corrupt, det_projection, gt_structure, sample_scene)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    scene_id: int
    program: str
    family: str
    answer: str

    def to_json(self) -> str:
        return json.dumps({"scene_id": self.scene_id, "program": self.program,
                           "family": self.family, "answer": self.answer})


@dataclass
class DatasetSpec:
    """What ``gen`` writes next to the JSONL files (``world.json``)."""

    world: WorldConfig = field(default_factory=WorldConfig)
    scenes: int = 2000
    questions_per_scene: int = 10
    val_fraction: float = 0.1
    cogent: bool = False
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    det_projection_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "scenes": self.scenes,
            "questions_per_scene": self.questions_per_scene,
            "val_fraction": self.val_fraction,
            "cogent": self.cogent,
            "corruption": asdict(self.corruption),
            "det_projection_seed": self.det_projection_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        """Accepts either a full spec or a bare world config (the ``gen --config`` file)."""
        if "world" not in d:
            d = {"world": d}
        world = WorldConfig.from_dict(d["world"])
        extra = {k: d[k] for k in ("scenes", "questions_per_scene", "val_fraction", "cogent",
                                   "det_projection_seed") if k in d}
        return cls(world=world, corruption=CorruptionSpec(**d.get("corruption", {})), **extra)


@dataclass
class Dataset:
    scenes: dict[int, Scene]
    records: list[Record]
    spec: DatasetSpec = field(default_factory=DatasetSpec)
    _programs: dict[str, dsl.Expr] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.records)

    def program(self, text: str) -> dsl.Expr:
        e = self._programs.get(text)
        if e is None:
            e = self._programs[text] = dsl.parse(text)
        return e

    def subset(self, records: list[Record]) -> "Dataset":
        return Dataset(self.scenes, records, self.spec, self._programs)


# ---- generation ---------------------------------------------------------------------

def generate_questions(scene: Scene, scene_id: int, n: int, config: WorldConfig,
                       rng: np.random.Generator, offset: int = 0) -> list[Record]:
    """``n`` questions for one scene, families taken round-robin from ``offset``."""
    out = []
    for k in range(n):
        family = dsl.FAMILIES[(offset + k) % len(dsl.FAMILIES)]
        prog, answer = dsl.generate(scene, family, rng, config)
        out.append(Record(scene_id, dsl.to_text(prog), family.value, answer))
    return out


def generate_split(config: WorldConfig, first_id: int, n_scenes: int, questions_per_scene: int,
                   rng: np.random.Generator) -> tuple[dict[int, Scene], list[Record]]:
    scenes: dict[int, Scene] = {}
    records: list[Record] = []
    for k in range(n_scenes):
        sid = first_id + k
        while True:
            scene = sample_scene(config, rng)
            try:
                qs = generate_questions(scene, sid, questions_per_scene, config, rng, offset=sid)
                break
            except dsl.GenerationError:
                continue    # scene too degenerate for some family; draw another
        scenes[sid] = scene
        records += qs
    return scenes, records


def generate_dataset(spec: DatasetSpec) -> tuple[dict[int, Scene], dict[str, list[Record]]]:
    """Scenes plus named splits: train/val, and for CoGenT train (A), valA and valB."""
    rng = np.random.default_rng(spec.world.seed)
    n_val = max(1, int(round(spec.scenes * spec.val_fraction)))
    n_train = spec.scenes - n_val
    if n_train < 1:
        raise DataError("not enough scenes for a training split")
    q = spec.questions_per_scene
    if not spec.cogent:
        scenes, train = generate_split(spec.world, 0, n_train, q, rng)
        val_scenes, val = generate_split(spec.world, n_train, n_val, q, rng)
        scenes.update(val_scenes)
        return scenes, {"train": train, "val": val}
    world_a = spec.world.with_palette("A")
    world_b = spec.world.with_palette("B")
    scenes, train = generate_split(world_a, 0, n_train, q, rng)
    sa, val_a = generate_split(world_a, n_train, n_val, q, rng)
    sb, val_b = generate_split(world_b, n_train + n_val, n_val, q, rng)
    scenes.update(sa)
    scenes.update(sb)
    return scenes, {"train": train, "valA": val_a, "valB": val_b}


# ---- persistence ----------------------------------------------------------------------

def write_dataset(out_dir: str, spec: DatasetSpec, scenes: dict[int, Scene], splits: dict[str, list[Record]]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "world.json"), "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
    with open(os.path.join(out_dir, "scenes.jsonl"), "w") as fh:
        for sid in sorted(scenes):
            fh.write(json.dumps({"scene_id": sid, **scenes[sid].to_dict()}) + "\n")
    for name, records in splits.items():
        with open(os.path.join(out_dir, f"{name}.jsonl"), "w") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")


def read_spec(data_dir: str) -> DatasetSpec:
    try:
        with open(os.path.join(data_dir, "world.json")) as fh:
            return DatasetSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read dataset spec in {data_dir}: {e}") from e


def read_scenes(data_dir: str) -> dict[int, Scene]:
    scenes = {}
    try:
        with open(os.path.join(data_dir, "scenes.jsonl")) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    scenes[int(d["scene_id"])] = Scene.from_dict(d)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"cannot read scenes in {data_dir}: {e}") from e
    return scenes


def read_records(path: str) -> list[Record]:
    out = []
    try:
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    out.append(Record(int(d["scene_id"]), d["program"], d["family"], d["answer"]))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"cannot read records from {path}: {e}") from e
    return out


def load_split(data_dir: str, split: str, scenes: dict[int, Scene] | None = None) -> Dataset:
    spec = read_spec(data_dir)
    scenes = scenes if scenes is not None else read_scenes(data_dir)
    records = read_records(os.path.join(data_dir, f"{split}.jsonl"))
    missing = {r.scene_id for r in records} - set(scenes)
    if missing:
        raise DataError(f"records reference unknown scenes {sorted(missing)[:5]}")
    return Dataset(scenes, records, spec)


# ---- graph providers --------------------------------------------------------------------

class GTGraphs:
    """Ground-truth graphs; label structure cached per scene, features rebuilt from the live table."""

    def __init__(self, scenes: dict[int, Scene], embedding: LabelEmbedding):
        self.scenes = scenes
        self.embedding = embedding
        self._structures: dict[int, GTStructure] = {}

    def __call__(self, scene_id: int) -> SceneGraph:
        s = self._structures.get(scene_id)
        if s is None:
            s = self._structures[scene_id] = gt_structure(self.scenes[scene_id], self.embedding.labels)
        return build_gt_graph(self.scenes[scene_id], self.embedding, s)


class DetGraphs:
    """Detector-style graphs from corrupted scenes; fixed per (seed, scene)."""

    def __init__(self, scenes: dict[int, Scene], spec: DatasetSpec, projection_seed: int, seed: int = 0):
        self.scenes = scenes
        self.spec = spec
        self.projection = det_projection(spec.world, projection_seed)
        self.seed = seed
        self._cache: dict[int, SceneGraph] = {}

    def detected_scene(self, scene_id: int) -> Scene:
        rng = np.random.default_rng([self.seed, scene_id, 1])
        return corrupt(self.scenes[scene_id], self.spec.corruption, rng)

    def __call__(self, scene_id: int) -> SceneGraph:
        g = self._cache.get(scene_id)
        if g is None:
            rng = np.random.default_rng([self.seed, scene_id, 2])
            g = build_det_graph(self.detected_scene(scene_id), self.spec.corruption, self.projection,
                                self.spec.world, rng)
            self._cache[scene_id] = g
        return g
