"""Cross-entropy training, evaluation metrics and JSON checkpoints."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import engine as en
from .data import Dataset, DetGraphs, GTGraphs, DataError
from .dsl import FAMILIES
from .executor import execute

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


def loss(logits: ad.Tensor, answer_index: int) -> ad.Tensor:
    return ad.cross_entropy(logits, answer_index)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    lr: float = 1e-3
    later_lr: float = 1e-4      # used from the second epoch on
    fraction: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    model: en.Model
    loss_curve: list[float] = field(default_factory=list)     # mean loss per batch
    lr_schedule: list[float] = field(default_factory=list)    # lr per epoch
    epoch: int = 0
    seed: int = 0
    examples: int = 0


def graph_provider(model: en.Model, dataset: Dataset):
    if model.config.setting == "gt":
        return GTGraphs(dataset.scenes, model.embedding)
    return DetGraphs(dataset.scenes, dataset.spec, model.config.det_projection_seed, seed=model.config.seed)


def train(model: en.Model, dataset: Dataset, config: TrainConfig, progress=None) -> TrainResult:
    """Mini-batch Adam; per-example forward passes with gradients averaged over the batch."""
    if len(dataset) == 0:
        raise DataError("empty training set")
    rng = np.random.default_rng(config.seed)
    records = list(dataset.records)
    if config.fraction < 1.0:
        keep = max(1, int(round(config.fraction * len(records))))
        records = [records[i] for i in sorted(rng.permutation(len(records))[:keep])]
    graphs = graph_provider(model, dataset)
    opt = ad.Adam(model.trainable(), lr=config.lr)
    result = TrainResult(model, seed=config.seed, examples=len(records))
    for epoch in range(config.epochs):
        opt.lr = config.lr if epoch == 0 else config.later_lr
        result.lr_schedule.append(opt.lr)
        order = rng.permutation(len(records))
        for start in range(0, len(order), config.batch_size):
            batch = [records[i] for i in order[start:start + config.batch_size]]
            total = 0.0
            for rec in batch:
                with ad.Tape() as tape:
                    graph = graphs(rec.scene_id)
                    logits, _ = execute(dataset.program(rec.program), graph, model, trace=False)
                    value = loss(logits, model.answer_index(rec.answer))
                    ad.backward(tape, value, scale=1.0 / len(batch))
                total += float(value.data)
            mean = total / len(batch)
            if not math.isfinite(mean):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch + 1}")
            result.loss_curve.append(mean)
            opt.step()
        result.epoch = epoch + 1
        if progress is not None:
            progress(epoch + 1, result)
        log.info("epoch %d lr %g loss %.4f", epoch + 1, opt.lr, result.loss_curve[-1])
    return result


# ---- evaluation -----------------------------------------------------------------------

@dataclass
class Metrics:
    overall: float
    per_family: dict[str, float]
    family_sizes: dict[str, int]
    total: int
    correct: int
    parameter_count: int
    loss_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_family": self.per_family,
            "family_sizes": self.family_sizes,
            "total": self.total,
            "correct": self.correct,
            "parameter_count": self.parameter_count,
            "loss_curve": self.loss_curve,
        }


def predictions(model: en.Model, dataset: Dataset, workers: int = 1) -> list[str]:
    """Argmax answer per record, in record order regardless of ``workers``."""
    graphs = graph_provider(model, dataset)
    if model.config.setting == "det":
        for sid in {r.scene_id for r in dataset.records}:
            graphs(sid)         # fill the cache before any fan-out

    def one(rec):
        logits, _ = execute(dataset.program(rec.program), graphs(rec.scene_id), model, trace=False)
        return model.config.answers[int(np.argmax(logits.data))]

    if workers <= 1:
        return [one(r) for r in dataset.records]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, dataset.records))


def evaluate(model: en.Model, dataset: Dataset, workers: int = 1, loss_curve=None) -> Metrics:
    preds = predictions(model, dataset, workers)
    fam_total = {f.value: 0 for f in FAMILIES}
    fam_correct = {f.value: 0 for f in FAMILIES}
    for rec, pred in zip(dataset.records, preds):
        fam_total[rec.family] += 1
        fam_correct[rec.family] += pred == rec.answer
    correct = sum(fam_correct.values())
    total = len(dataset.records)
    per_family = {f: (fam_correct[f] / fam_total[f] if fam_total[f] else float("nan")) for f in fam_total}
    return Metrics(correct / total if total else float("nan"), per_family, fam_total, total, correct,
                   model.parameter_count(), list(loss_curve or []))


# ---- checkpoints -------------------------------------------------------------------------

def checkpoint_dict(model: en.Model, meta: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {name: {"shape": list(t.shape), "data": [float(v) for v in t.data.ravel()]}
                   for name, t in model.params.items()},
        "meta": meta or {},
    }


def save_checkpoint(model: en.Model, path: str, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model, meta), fh)


def model_from_checkpoint(d: dict) -> tuple[en.Model, dict]:
    if d.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {d.get('version')!r}")
    config = en.EngineConfig.from_dict(d["config"])
    params = {}
    for name, p in d["params"].items():
        arr = np.asarray(p["data"], dtype=np.float32).reshape(p["shape"])
        params[name] = ad.Tensor(arr, requires_grad=True, name=name)
    return en.Model(config, params), d.get("meta", {})


def load_checkpoint(path: str) -> tuple[en.Model, dict]:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    return model_from_checkpoint(d)
