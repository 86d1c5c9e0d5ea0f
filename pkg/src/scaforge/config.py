"""Experiment configuration: one JSON document drives every subcommand.

Sections: data (a SCAT path or a synth generator, plus windowing and
standardization), model (preset name or explicit layer list), train, attack.
A single top-level seed feeds every component that does not pin its own.
Dotted-key overrides (``--set train.epochs=20``) are applied after parsing;
the same key twice is an error rather than a silent overwrite.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigInvalid
from .nn import ModelConfig, load_preset
from .optim import OptimizerConfig, ScheduleConfig
from .synth import SynthConfig, generate
from .train import TrainConfig
from .traces import (
    PreprocessStats,
    TraceSet,
    derive_labels,
    load_traceset,
    standardize,
    window,
)

__all__ = [
    "AttackSection",
    "DataSection",
    "ExperimentConfig",
    "apply_overrides",
    "load_experiment",
    "load_stats",
    "prepare_traces",
    "resolve_model_config",
    "save_stats",
]


@dataclass
class DataSection:
    path: Optional[str] = None
    synth: Optional[SynthConfig] = None
    target_byte: int = 2
    window: Optional[tuple] = None       # (start, len)
    standardize: Optional[str] = None    # None | "pointwise" | "global"

    def validate(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigInvalid("data section needs exactly one of 'path' or 'synth'")
        if self.standardize not in (None, "pointwise", "global"):
            raise ConfigInvalid(f"unknown standardize mode {self.standardize!r}")


@dataclass
class AttackSection:
    repetitions: int = 100
    max_traces: Optional[int] = None
    step: int = 1
    data: Optional[DataSection] = None   # attack-set source; falls back to data


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: dict = field(default_factory=dict)  # {"preset": name} | ModelConfig dict
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackSection = field(default_factory=AttackSection)


def _build(cls, doc: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(doc) - names
    if extra:
        raise ConfigInvalid(f"unknown keys in {what}: {sorted(extra)}")
    return cls(**doc)


def _parse_data(doc: dict, seed: int) -> DataSection:
    doc = dict(doc)
    synth_doc = doc.pop("synth", None)
    win = doc.pop("window", None)
    section = _build(DataSection, doc, "data")
    if synth_doc is not None:
        synth_doc = dict(synth_doc)
        synth_doc.setdefault("seed", seed)
        synth_doc.setdefault("target_byte", section.target_byte)
        if "key" in synth_doc and isinstance(synth_doc["key"], str):
            synth_doc["key"] = bytes.fromhex(synth_doc["key"])
        section.synth = _build(SynthConfig, synth_doc, "data.synth")
    if win is not None:
        section.window = (int(win["start"]), int(win["len"]))
    section.validate()
    return section


def parse_experiment(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    seed = int(doc.pop("seed", 0))
    data = _parse_data(doc.pop("data", {}), seed)
    model = doc.pop("model", {})
    train_doc = dict(doc.pop("train", {}))
    attack_doc = dict(doc.pop("attack", {}))
    if doc:
        raise ConfigInvalid(f"unknown top-level keys: {sorted(doc)}")

    opt_doc = train_doc.pop("optimizer", {})
    sched_doc = train_doc.pop("schedule", {})
    train_doc.setdefault("seed", seed)
    try:
        train = _build(TrainConfig, train_doc, "train")
        train.optimizer = _build(OptimizerConfig, opt_doc, "train.optimizer")
        train.schedule = _build(ScheduleConfig, sched_doc, "train.schedule")
    except (TypeError, ValueError) as e:
        raise ConfigInvalid(str(e)) from None

    attack_data_doc = attack_doc.pop("data", None)
    attack = _build(AttackSection, attack_doc, "attack")
    if attack_data_doc is not None:
        attack.data = _parse_data(attack_data_doc, seed)
    return ExperimentConfig(seed=seed, data=data, model=model, train=train, attack=attack)


def apply_overrides(doc: dict, assignments) -> dict:
    """Apply ``a.b.c=value`` overrides; values parse as JSON, else strings."""
    seen = set()
    for item in assignments or ():
        if "=" not in item:
            raise ConfigInvalid(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        if key in seen:
            raise ConfigInvalid(f"--set key {key!r} given twice")
        seen.add(key)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"--set {key!r}: {part!r} is not a section")
        node[parts[-1]] = value
    return doc


def load_experiment(path, assignments=None) -> ExperimentConfig:
    with open(path) as f:
        doc = json.load(f)
    return parse_experiment(apply_overrides(doc, assignments))


# ---------------------------------------------------------------------------
# data and model materialization
# ---------------------------------------------------------------------------

def prepare_traces(section: DataSection, stats: Optional[PreprocessStats] = None):
    """Materialize a data section: load or generate, label, window, standardize.

    Returns (traceset, stats). `stats` carries profiling-set statistics onto
    an attack set; when None they are computed from this set.
    """
    section.validate()
    if section.synth is not None:
        ts = generate(section.synth)
    else:
        ts = load_traceset(section.path)
    if ts.labels is None and ts.keys is not None and ts.plaintexts is not None:
        ts = derive_labels(ts, section.target_byte)
    if section.window is not None:
        ts = window(ts, section.window[0], section.window[1])
    if section.standardize is not None:
        ts, stats = standardize(ts, section.standardize, stats=stats)
    return ts, stats


def resolve_model_config(model_doc: dict, input_width: int) -> ModelConfig:
    """Turn the model section into a ModelConfig matched to the data width."""
    if "preset" in model_doc:
        extra = set(model_doc) - {"preset"}
        if extra:
            raise ConfigInvalid(f"model preset does not take {sorted(extra)}")
        try:
            return load_preset(model_doc["preset"], input_width=input_width)
        except FileNotFoundError as e:
            raise ConfigInvalid(str(e)) from None
    if "layers" not in model_doc:
        raise ConfigInvalid("model section needs 'preset' or 'layers'")
    cfg = ModelConfig.from_dict({"input_width": model_doc.get("input_width", input_width),
                                 "layers": model_doc["layers"]})
    if cfg.input_width != input_width:
        raise ConfigInvalid(f"model input_width {cfg.input_width} != data width {input_width}")
    return cfg


def save_stats(stats: PreprocessStats, path) -> None:
    doc = {"mode": stats.mode, "mean": np.asarray(stats.mean).tolist(),
           "std": np.asarray(stats.std).tolist(), "epsilon": stats.epsilon}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_stats(path) -> PreprocessStats:
    with open(path) as f:
        doc = json.load(f)
    return PreprocessStats(mode=doc["mode"], mean=np.asarray(doc["mean"]),
                           std=np.asarray(doc["std"]), epsilon=doc["epsilon"])
