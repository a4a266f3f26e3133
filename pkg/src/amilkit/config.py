"""Declarative run configuration: one JSON file plus flag overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .model import ARCH_MULT, EncoderConfig, TrainConfig
from .synthgen import SynthConfig


@dataclass
class RunConfig:
    workdir: str = "."
    kg_path: str = "kg.tsv"
    corpus_path: str = "corpus.jsonl"
    mode: str = "type"
    arch: str = "C"
    bag_size: int = 16
    seed: int = 0
    p_at: list[int] = field(default_factory=lambda: [10, 50, 100])
    negative_ratio: float = 0.7
    check_reverse: bool = True
    excluded_relations: list[str] = field(
        default_factory=lambda: ["synonymous", "narrower", "broader"])
    max_seq_len: int = 128
    workers: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self) -> None:
        if self.mode not in ("pair", "type"):
            raise ValueError(f"mode must be 'pair' or 'type', got {self.mode!r}")
        if self.arch not in ARCH_MULT:
            raise ValueError(f"arch must be one of A..Q, got {self.arch!r}")

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)


def _nested(cls, obj: dict):
    return cls(**obj)


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus override values.

    Workdir resolution order: override flag, config file, AMILKIT_WORKDIR,
    current directory.
    """
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    if "workdir" not in data:
        data["workdir"] = os.environ.get("AMILKIT_WORKDIR", ".")
    for key, cls in (("encoder", EncoderConfig), ("train", TrainConfig),
                     ("synth", SynthConfig)):
        if isinstance(data.get(key), dict):
            data[key] = _nested(cls, data[key])
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def dump_default(path: str) -> None:
    """Write the shipped defaults as a starting-point config file."""
    cfg = RunConfig()
    blob = dataclasses.asdict(cfg)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(blob, f, sort_keys=True, indent=2)
        f.write("\n")
