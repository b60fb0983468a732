"""Experiment drivers: paired comparison, ablations, layer sweep, RAG.

Every run trains from a shared pretrained foundation checkpoint, repeats
over the configured seeds, evaluates by greedy decoding on the test set,
and writes a manifest with per-seed reports plus their mean. The baseline
arm is always the foundation fine-tuned with LoRA and no adapter (layer
count 0); adapter arms train the groups named in the train config. Input
datasets and checkpoints are never mutated.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .adapter import AdapterConfig, generate
from .checkpoint import file_sha256, load_checkpoint, validate_shapes
from .config import ExperimentConfig
from .errors import ConfigError
from .metrics import MetricReport, evaluate_run
from .model import (
    FoundationConfig,
    apply_lora,
    expected_foundation_shapes,
    init_foundation,
)
from .pretrain import pretrain_foundation
from .rng import RngState
from .tensor import Tensor
from .text import EOS_ID, Sample, Vocabulary, load_dataset
from .retrieval import build_index, chunk_corpus, load_corpus, load_index, retrieve_topk, topk_accuracy
from .adapter import init_adapter
from .training import ModelState, TrainConfig, state_to_checkpoint, train_adapter

MANIFEST_VERSION = 1
ACCURACY_KS = (1, 5, 20, 50, 100)

METRIC_KEYS = ("rouge1", "rouge2", "rougeL", "exact_match", "bleu", "brevity_penalty")


@dataclass
class RunManifest:
    format_version: int
    kind: str
    config_hash: str
    foundation_checkpoint_sha256: str
    seeds: list[int]
    rows: list[dict]
    aggregate: dict[str, dict[str, float]]
    extras: dict = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)

    def table(self) -> str:
        lines = [
            f"{'arm':<22}{'ROUGE-1':>9}{'ROUGE-2':>9}{'ROUGE-L':>9}{'Exact Match':>13}{'BLEU':>8}"
        ]
        for arm, metrics in self.aggregate.items():
            lines.append(
                f"{arm:<22}{metrics['rouge1']:>9.2f}{metrics['rouge2']:>9.2f}"
                f"{metrics['rougeL']:>9.2f}{metrics['exact_match']:>13.2f}{metrics['bleu']:>8.2f}"
            )
        return "\n".join(lines)


def aggregate_rows(rows: list[dict]) -> dict[str, dict[str, float]]:
    """Mean of each metric over seeds, per arm."""
    by_arm: dict[str, list[dict]] = {}
    for row in rows:
        by_arm.setdefault(row["arm"], []).append(row["metrics"])
    out: dict[str, dict[str, float]] = {}
    for arm, reports in by_arm.items():
        out[arm] = {k: sum(r[k] for r in reports) / len(reports) for k in METRIC_KEYS}
    return out


# ---------------------------------------------------------------------------
# assets


@dataclass
class Assets:
    vocab: Vocabulary
    train_samples: list[Sample]
    test_samples: list[Sample]
    foundation_params: dict[str, Tensor]
    foundation_config: FoundationConfig
    checkpoint_sha256: str


def load_foundation_checkpoint(path):
    if not Path(path).is_file():
        raise ConfigError(f"foundation checkpoint not found: {path}")
    sections = load_checkpoint(path)
    if "foundation" not in sections:
        raise ConfigError(f"{path}: checkpoint has no 'foundation' section")
    config_dict, arrays = sections["foundation"]
    config = FoundationConfig(**config_dict)
    validate_shapes(expected_foundation_shapes(config), arrays, "foundation")
    params = {name: Tensor(arr) for name, arr in arrays.items()}
    return params, config


def load_assets(cfg: ExperimentConfig) -> Assets:
    if not cfg.data.vocab_path:
        raise ConfigError("data.vocab_path must be set")
    vocab = Vocabulary.load(cfg.data.vocab_path)
    train_samples = load_dataset(cfg.data.train_path, vocab)
    test_samples = load_dataset(cfg.data.test_path, vocab)
    params, fconfig = load_foundation_checkpoint(cfg.run.checkpoint)
    if fconfig.vocab_size != vocab.size:
        raise ConfigError(
            f"checkpoint vocab size {fconfig.vocab_size} != vocabulary size {vocab.size}"
        )
    return Assets(
        vocab=vocab,
        train_samples=train_samples,
        test_samples=test_samples,
        foundation_params=params,
        foundation_config=fconfig,
        checkpoint_sha256=file_sha256(cfg.run.checkpoint),
    )


def pretrain_from_config(cfg: ExperimentConfig, vocab: Vocabulary):
    """Tokenize the corpus text (EOS between lines) and pretrain."""
    if not cfg.data.corpus_text_path:
        raise ConfigError("data.corpus_text_path must be set for pretraining")
    stream: list[int] = []
    with open(cfg.data.corpus_text_path, encoding="utf-8") as fh:
        for line in fh:
            ids = vocab.encode(line)
            if ids:
                stream.extend(ids)
                stream.append(EOS_ID)
    fconfig = replace(cfg.foundation, vocab_size=vocab.size)
    return pretrain_foundation(stream, fconfig, cfg.pretrain), fconfig


# ---------------------------------------------------------------------------
# one arm = init (per seed), train, decode test set, score


def build_arm_state(
    assets: Assets,
    adapter_config: AdapterConfig,
    train_config: TrainConfig,
    cfg: ExperimentConfig,
    seed: int,
) -> ModelState:
    arm_rng = RngState(seed)
    adapter_params = None
    if adapter_config.layers > 0:
        adapter_params = init_adapter(adapter_config, assets.foundation_config.dim, arm_rng.derive(100))
    deltas = None
    if "lora" in train_config.train_groups:
        targets = [
            f"b{i}.{t}" for i in range(assets.foundation_config.blocks) for t in cfg.run.lora_targets
        ]
        deltas = apply_lora(
            assets.foundation_params, targets, cfg.run.lora_rank, cfg.run.lora_scaling, arm_rng.derive(200)
        )
    return ModelState(
        foundation_params=assets.foundation_params,
        foundation_config=assets.foundation_config,
        adapter_config=adapter_config,
        adapter_params=adapter_params,
        deltas=deltas,
        lora_on_knowledge_stream=train_config.lora_on_knowledge_stream,
    )


def decode_test_set(state: ModelState, samples: list[Sample], cfg: ExperimentConfig, vocab: Vocabulary, out_path) -> None:
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for sample in samples:
            result = generate(
                sample.question,
                sample.knowledge,
                state.foundation_params,
                state.foundation_config,
                state.adapter_params,
                state.adapter_config,
                deltas=state.deltas,
                knowledge_deltas=state.knowledge_deltas,
                decode=cfg.decode,
                max_knowledge_tokens=cfg.train.max_knowledge_tokens,
            )
            record = {
                "id": sample.sample_id,
                "output": vocab.decode(result.tokens),
                "truncated": result.truncated,
            }
            fh.write(json.dumps(record) + "\n")


def run_arm(
    arm: str,
    assets: Assets,
    adapter_config: AdapterConfig,
    train_config: TrainConfig,
    cfg: ExperimentConfig,
    seed: int,
    out_dir: Path,
    train_samples: Optional[list[Sample]] = None,
    test_samples: Optional[list[Sample]] = None,
) -> dict:
    arm_dir = out_dir / arm / f"seed{seed}"
    arm_dir.mkdir(parents=True, exist_ok=True)
    state = build_arm_state(assets, adapter_config, train_config, cfg, seed)
    train_adapter(
        train_samples if train_samples is not None else assets.train_samples,
        state,
        replace(train_config, seed=seed),
        log_path=arm_dir / "train_log.jsonl",
        checkpoint_dir=arm_dir,
    )
    final_ckpt = arm_dir / "final.ckpt"
    state_to_checkpoint(state, final_ckpt)
    generations = arm_dir / "generations.jsonl"
    tests = test_samples if test_samples is not None else assets.test_samples
    decode_test_set(state, tests, cfg, assets.vocab, generations)
    report = evaluate_run(generations, tests)
    with open(arm_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(with_samples=True), fh, indent=2)
    return {
        "arm": arm,
        "seed": seed,
        "metrics": report.as_dict(),
        "generations": str(generations),
        "checkpoint": str(final_ckpt),
    }


def baseline_arm_configs(cfg: ExperimentConfig) -> tuple[AdapterConfig, TrainConfig]:
    """No adapter; the foundation is LoRA fine-tuned like any baseline."""
    return replace(cfg.adapter, layers=0), replace(cfg.train, train_groups="lora")


# ---------------------------------------------------------------------------
# experiment kinds


def run_compare(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunManifest:
    assets = load_assets(cfg)
    out = Path(out_dir) if out_dir else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    base_adapter, base_train = baseline_arm_configs(cfg)
    rows = []
    for seed in cfg.run.seeds:
        rows.append(run_arm("baseline", assets, base_adapter, base_train, cfg, seed, out))
        rows.append(run_arm("adapter", assets, cfg.adapter, cfg.train, cfg, seed, out))
    manifest = RunManifest(
        format_version=MANIFEST_VERSION,
        kind="compare",
        config_hash=cfg.config_hash(),
        foundation_checkpoint_sha256=assets.checkpoint_sha256,
        seeds=list(cfg.run.seeds),
        rows=rows,
        aggregate=aggregate_rows(rows),
    )
    manifest.save(out / "manifest.json")
    return manifest


ABLATION_VARIANTS: dict[str, dict] = {
    "full": {},
    "no_context": {"no_context_edges": True},
    "full_context": {"full_context_edges": True},
    "no_input": {"no_input_edges": True},
    "no_knowledge": {"no_knowledge_edges": True},
}


def run_ablation(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunManifest:
    assets = load_assets(cfg)
    out = Path(out_dir) if out_dir else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.run.seeds:
        for name, switches in ABLATION_VARIANTS.items():
            variant = replace(cfg.adapter, **switches)
            rows.append(run_arm(f"ablation_{name}", assets, variant, cfg.train, cfg, seed, out))
    manifest = RunManifest(
        format_version=MANIFEST_VERSION,
        kind="ablation",
        config_hash=cfg.config_hash(),
        foundation_checkpoint_sha256=assets.checkpoint_sha256,
        seeds=list(cfg.run.seeds),
        rows=rows,
        aggregate=aggregate_rows(rows),
    )
    manifest.save(out / "manifest.json")
    return manifest


def run_layer_sweep(
    cfg: ExperimentConfig, layers=(0, 1, 2, 3, 4), out_dir: Optional[Path] = None
) -> RunManifest:
    assets = load_assets(cfg)
    out = Path(out_dir) if out_dir else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in cfg.run.seeds:
        for n_layers in layers:
            if n_layers == 0:
                adapter_cfg, train_cfg = baseline_arm_configs(cfg)
            else:
                adapter_cfg, train_cfg = replace(cfg.adapter, layers=n_layers), cfg.train
            rows.append(run_arm(f"layers{n_layers}", assets, adapter_cfg, train_cfg, cfg, seed, out))
    manifest = RunManifest(
        format_version=MANIFEST_VERSION,
        kind="layer_sweep",
        config_hash=cfg.config_hash(),
        foundation_checkpoint_sha256=assets.checkpoint_sha256,
        seeds=list(cfg.run.seeds),
        rows=rows,
        aggregate=aggregate_rows(rows),
        extras={"layers": list(layers)},
    )
    manifest.save(out / "manifest.json")
    return manifest


def _with_retrieved_knowledge(samples: list[Sample], index, top_k: int) -> tuple[list[Sample], int]:
    """Replace each sample's knowledge with concatenated top-k passages."""
    out = []
    empty = 0
    for s in samples:
        ranked = retrieve_topk(s.question_text, index, top_k)
        text = " ".join(p.text for p, score in ranked if score > 0.0)
        if not text:
            empty += 1
        out.append(dataclasses.replace(s, knowledge_text=text, knowledge=[]))
    return out, empty


def run_rag(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunManifest:
    if cfg.retrieval.mode == "dataset":
        return run_compare(cfg, out_dir)
    assets = load_assets(cfg)
    out = Path(out_dir) if out_dir else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    if cfg.retrieval.index_path and Path(cfg.retrieval.index_path).is_file():
        index = load_index(cfg.retrieval.index_path)
    else:
        if not cfg.retrieval.corpus_path:
            raise ConfigError("retrieval.corpus_path or retrieval.index_path must be set for rag mode")
        index = build_index(chunk_corpus(load_corpus(cfg.retrieval.corpus_path)))

    accuracy = {str(k): topk_accuracy(assets.test_samples, index, k) for k in ACCURACY_KS}

    train_rag, train_empty = _with_retrieved_knowledge(assets.train_samples, index, cfg.retrieval.top_k)
    test_rag, test_empty = _with_retrieved_knowledge(assets.test_samples, index, cfg.retrieval.top_k)
    for s in train_rag + test_rag:
        s.knowledge = assets.vocab.encode(s.knowledge_text)

    base_adapter, base_train = baseline_arm_configs(cfg)
    rows = []
    for seed in cfg.run.seeds:
        rows.append(
            run_arm("baseline", assets, base_adapter, base_train, cfg, seed, out,
                    train_samples=train_rag, test_samples=test_rag)
        )
        rows.append(
            run_arm("adapter", assets, cfg.adapter, cfg.train, cfg, seed, out,
                    train_samples=train_rag, test_samples=test_rag)
        )
    manifest = RunManifest(
        format_version=MANIFEST_VERSION,
        kind="rag",
        config_hash=cfg.config_hash(),
        foundation_checkpoint_sha256=assets.checkpoint_sha256,
        seeds=list(cfg.run.seeds),
        rows=rows,
        aggregate=aggregate_rows(rows),
        extras={
            "topk_accuracy": accuracy,
            "empty_retrievals": {"train": train_empty, "test": test_empty},
            "retrieval_top_k": cfg.retrieval.top_k,
        },
    )
    manifest.save(out / "manifest.json")
    return manifest
