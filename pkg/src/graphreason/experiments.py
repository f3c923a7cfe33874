"""End-to-end experiment drivers: generate, train, evaluate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import engine as en
from .data import Dataset, DatasetSpec, generate_dataset
from .training import Metrics, TrainConfig, TrainResult, evaluate, train
from .world import CorruptionSpec

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"gt": 5, "det": 10}


@dataclass
class RunResult:
    train: TrainResult
    metrics: dict[str, Metrics] = field(default_factory=dict)   # split name -> metrics

    @property
    def model(self) -> en.Model:
        return self.train.model

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.metrics.items()}


def default_train_config(setting: str, **kw) -> TrainConfig:
    kw.setdefault("epochs", DEFAULT_EPOCHS[setting])
    return TrainConfig(**kw)


def build_model(spec: DatasetSpec, setting: str, dim: int = 32, seed: int = 0, **kw) -> en.Model:
    config = en.make_config(spec.world.vocab, setting, dim, seed=seed,
                            det_projection_seed=spec.det_projection_seed, **kw)
    return en.Model(config)


def run(spec: DatasetSpec, setting: str = "gt", train_config: TrainConfig | None = None,
        dim: int = 32, workers: int = 1, progress=None) -> RunResult:
    """Generate ``spec``, train on its train split, evaluate every other split."""
    train_config = train_config or default_train_config(setting)
    scenes, splits = generate_dataset(spec)
    return run_on(scenes, splits, spec, setting, train_config, dim, workers, progress)


def run_on(scenes, splits, spec: DatasetSpec, setting: str, train_config: TrainConfig,
           dim: int = 32, workers: int = 1, progress=None) -> RunResult:
    model = build_model(spec, setting, dim, seed=train_config.seed)
    result = train(model, Dataset(scenes, splits["train"], spec), train_config, progress)
    out = RunResult(result)
    for name, records in splits.items():
        if name == "train":
            continue
        out.metrics[name] = evaluate(model, Dataset(scenes, records, spec), workers, result.loss_curve)
        log.info("%s %s accuracy %.4f", setting, name, out.metrics[name].overall)
    return out


def run_cogent(spec: DatasetSpec, setting: str = "gt", train_config: TrainConfig | None = None,
               dim: int = 32, workers: int = 1, progress=None) -> tuple[Metrics, Metrics]:
    """Train on palette A, evaluate on held-out A and on swapped palette B."""
    res = run(replace(spec, cogent=True), setting, train_config, dim, workers, progress)
    return res.metrics["valA"], res.metrics["valB"]


def run_det_corruptions(spec: DatasetSpec, corruptions: dict[str, CorruptionSpec],
                        train_config: TrainConfig | None = None, dim: int = 32,
                        workers: int = 1) -> dict[str, Metrics]:
    """Train one Det model under ``spec.corruption``; evaluate held-out data under each corruption.

    The same model and questions are used for every entry, so differences
    come from the detector errors alone.  Answers always come from the clean
    scene, so corruption shows up as errors rather than as relabelled data.
    """
    train_config = train_config or default_train_config("det")
    scenes, splits = generate_dataset(spec)
    res = run_on(scenes, {"train": splits["train"]}, spec, "det", train_config, dim, workers)
    out = {}
    for name, c in corruptions.items():
        val = Dataset(scenes, splits["val"], replace(spec, corruption=c))
        out[name] = evaluate(res.model, val, workers, res.train.loss_curve)
    return out
