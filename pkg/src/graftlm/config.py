"""Experiment configuration: dataclasses plus an INI file round trip.

One file describes a whole experiment (sections = sub-configs, key=value
pairs). The defaults encode the reference training recipe: AdamW at
5e-4, 2 epochs, per-device batch 1 with 64 accumulation steps, adapter
dropout 0.1, 2 graph layers with 8 heads, residual weight 0.2, LoRA
fine-tuning of the foundation. The output root can be overridden with
the GRAFTLM_OUT environment variable; everything else comes from the
file or CLI flags.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

from .adapter import AdapterConfig, DecodeSettings
from .errors import ConfigError
from .model import FoundationConfig
from .pretrain import PretrainConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "GRAFTLM_OUT"


@dataclass
class DataConfig:
    train_path: str = ""
    test_path: str = ""
    vocab_path: str = ""
    corpus_text_path: str = ""


@dataclass
class RetrievalConfig:
    mode: str = "dataset"  # "dataset" uses the knowledge field; "bm25" retrieves it
    corpus_path: str = ""
    index_path: str = ""
    top_k: int = 5
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.mode not in ("dataset", "bm25"):
            raise ConfigError(f"retrieval mode must be 'dataset' or 'bm25', got {self.mode!r}")


@dataclass
class RunConfig:
    name: str = "experiment"
    output_dir: str = "experiment"
    checkpoint: str = ""  # pretrained foundation checkpoint
    seeds: list[int] = field(default_factory=lambda: [0])
    lora_targets: list[str] = field(
        default_factory=lambda: ["attn.wq", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"]
    )
    lora_rank: int = 4
    lora_scaling: float = 1.0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds list must be nonempty")


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    data: DataConfig = field(default_factory=DataConfig)
    foundation: FoundationConfig = field(default_factory=lambda: FoundationConfig(vocab_size=0))
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    decode: DecodeSettings = field(default_factory=DecodeSettings)

    def output_dir(self) -> Path:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        out = Path(self.run.output_dir)
        return out if out.is_absolute() else root / out

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {
    "run": ("run", RunConfig),
    "data": ("data", DataConfig),
    "foundation": ("foundation", FoundationConfig),
    "adapter": ("adapter", AdapterConfig),
    "train": ("train", TrainConfig),
    "pretrain": ("pretrain", PretrainConfig),
    "retrieval": ("retrieval", RetrievalConfig),
    "decoding": ("decode", DecodeSettings),
}

_LIST_INT = "list_int"
_LIST_STR = "list_str"


def _field_kinds(cls) -> dict[str, str]:
    hints = get_type_hints(cls)
    kinds = {}
    for f in fields(cls):
        hint = hints[f.name]
        if hint is bool:
            kinds[f.name] = "bool"
        elif hint is int:
            kinds[f.name] = "int"
        elif hint is float:
            kinds[f.name] = "float"
        elif hint is str:
            kinds[f.name] = "str"
        elif hint == list[int]:
            kinds[f.name] = _LIST_INT
        elif hint == list[str]:
            kinds[f.name] = _LIST_STR
        else:
            raise ConfigError(f"unsupported config field type for {cls.__name__}.{f.name}")
    return kinds


def _coerce(kind: str, raw: str):
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == _LIST_INT:
        return [int(x) for x in raw.split(",") if x.strip()] if raw else []
    if kind == _LIST_STR:
        return [x.strip() for x in raw.split(",") if x.strip()] if raw else []
    return raw


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def load_experiment_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        attr, cls = _SECTIONS[section]
        kinds = _field_kinds(cls)
        updates = {}
        for key, raw in parser.items(section):
            if key not in kinds:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            updates[key] = _coerce(kinds[key], raw)
        cfg = replace(cfg, **{attr: replace(getattr(cfg, attr), **updates)})
    return cfg


def save_experiment_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, (attr, _cls) in _SECTIONS.items():
        values = asdict(getattr(cfg, attr))
        parser[section] = {k: _render(v) for k, v in values.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def write_default_config(path) -> ExperimentConfig:
    cfg = ExperimentConfig()
    save_experiment_config(cfg, path)
    return cfg
