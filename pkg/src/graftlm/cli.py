"""Command-line interface.

Machine-readable JSON goes to stdout; human-readable tables and progress
go to stderr. Contract violations exit with status 2, numeric faults with
status 3.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adapter import generate
from .checkpoint import save_checkpoint
from .config import (
    ExperimentConfig,
    load_experiment_config,
    write_default_config,
)
from .errors import ConfigError, ContractError, NumericError
from .harness import (
    load_assets,
    load_foundation_checkpoint,
    pretrain_from_config,
    run_ablation,
    run_compare,
    run_layer_sweep,
    run_rag,
)
from .metrics import evaluate_run
from .retrieval import build_index, chunk_corpus, load_corpus, load_index, retrieve_topk, save_index
from .text import Vocabulary, build_vocab, load_dataset
from .toydata import make_toy_data
from .training import ModelState, state_to_checkpoint, train_adapter


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _note(text: str) -> None:
    print(text, file=sys.stderr)


def _cmd_make_toy_data(args) -> None:
    paths = make_toy_data(args.out, args.train, args.test, args.codes, args.seed)
    _emit(
        {
            "train": str(paths.train),
            "test": str(paths.test),
            "corpus_text": str(paths.corpus_text),
            "retrieval_corpus": str(paths.retrieval_corpus),
        }
    )


def _cmd_build_vocab(args) -> None:
    with open(args.corpus, encoding="utf-8") as fh:
        vocab = build_vocab(fh, args.max_size)
    vocab.save(args.out)
    _emit({"vocab": str(args.out), "size": vocab.size})


def _cmd_pretrain(args) -> None:
    cfg = load_experiment_config(args.config)
    vocab = Vocabulary.load(cfg.data.vocab_path)
    (params, report), fconfig = pretrain_from_config(cfg, vocab)
    out = args.out or cfg.run.checkpoint
    if not out:
        raise ConfigError("no checkpoint destination: set run.checkpoint or pass --out")
    save_checkpoint(
        out,
        {"foundation": (fconfig.__dict__, {k: v.data for k, v in params.items()})},
    )
    _note(
        f"held-out loss {report.initial_holdout_loss:.4f} -> {report.final_holdout_loss:.4f}"
        f" over {report.steps} steps"
    )
    _emit(
        {
            "checkpoint": str(out),
            "initial_holdout_loss": report.initial_holdout_loss,
            "final_holdout_loss": report.final_holdout_loss,
            "steps": report.steps,
        }
    )


def _cmd_index(args) -> None:
    passages = chunk_corpus(load_corpus(args.corpus))
    index = build_index(passages)
    save_index(index, args.out)
    _emit({"index": str(args.out), "passages": index.passage_count, "terms": len(index.postings)})


def _cmd_retrieve(args) -> None:
    index = load_index(args.index)
    ranked = retrieve_topk(args.query, index, args.k)
    _emit(
        {
            "question": args.query,
            "passages": [p.text for p, _ in ranked],
            "scores": [s for _, s in ranked],
            "passage_ids": [p.passage_id for p, _ in ranked],
        }
    )


def _cmd_train(args) -> None:
    cfg = load_experiment_config(args.config)
    from .harness import build_arm_state

    assets = load_assets(cfg)
    seed = cfg.run.seeds[0]
    state = build_arm_state(assets, cfg.adapter, cfg.train, cfg, seed)
    out_dir = cfg.output_dir() / "train" / f"seed{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    records = train_adapter(
        assets.train_samples,
        state,
        replace(cfg.train, seed=seed),
        log_path=out_dir / "train_log.jsonl",
        checkpoint_dir=out_dir,
    )
    final = out_dir / "final.ckpt"
    state_to_checkpoint(state, final)
    _note(f"{len(records)} optimizer steps; final loss {records[-1].loss:.4f}")
    _emit({"checkpoint": str(final), "steps": len(records), "final_loss": records[-1].loss})


def _load_state_for_decode(cfg: ExperimentConfig, checkpoint_path: str) -> tuple[ModelState, Vocabulary]:
    from .adapter import AdapterConfig
    from .checkpoint import load_checkpoint
    from .model import LowRankDelta
    from .tensor import Tensor

    vocab = Vocabulary.load(cfg.data.vocab_path)
    sections = load_checkpoint(checkpoint_path)
    if "foundation" not in sections:
        raise ConfigError(f"{checkpoint_path}: no foundation section")
    from .model import FoundationConfig

    fdict, farrays = sections["foundation"]
    fconfig = FoundationConfig(**fdict)
    fparams = {k: Tensor(v) for k, v in farrays.items()}
    adapter_params = None
    adapter_config = cfg.adapter
    if "adapter" in sections:
        adict, aarrays = sections["adapter"]
        adapter_config = AdapterConfig(**adict)
        adapter_params = {k: Tensor(v) for k, v in aarrays.items()}
    deltas = None
    if "lora" in sections:
        meta, larrays = sections["lora"]
        deltas = {}
        for name in meta["targets"]:
            deltas[name] = LowRankDelta(
                a=Tensor(larrays[f"{name}.a"]),
                b=Tensor(larrays[f"{name}.b"]),
                scaling=meta["scaling"][name],
            )
    state = ModelState(
        foundation_params=fparams,
        foundation_config=fconfig,
        adapter_config=adapter_config,
        adapter_params=adapter_params,
        deltas=deltas,
        lora_on_knowledge_stream=cfg.train.lora_on_knowledge_stream,
    )
    return state, vocab


def _cmd_generate(args) -> None:
    cfg = load_experiment_config(args.config)
    checkpoint = args.checkpoint or cfg.run.checkpoint
    state, vocab = _load_state_for_decode(cfg, checkpoint)
    question = vocab.encode(args.question)
    knowledge = vocab.encode(args.knowledge) if args.knowledge else []
    result = generate(
        question,
        knowledge,
        state.foundation_params,
        state.foundation_config,
        state.adapter_params,
        state.adapter_config,
        deltas=state.deltas,
        knowledge_deltas=state.knowledge_deltas,
        decode=cfg.decode,
        max_knowledge_tokens=cfg.train.max_knowledge_tokens,
    )
    _emit(
        {
            "question": args.question,
            "output": vocab.decode(result.tokens),
            "truncated": result.truncated,
        }
    )


def _cmd_evaluate(args) -> None:
    vocab = Vocabulary.load(args.vocab)
    samples = load_dataset(args.dataset, vocab)
    report = evaluate_run(args.generations, samples)
    _note(report.table(Path(args.generations).stem))
    _emit(report.as_dict())


def _run_and_report(runner, cfg) -> None:
    manifest = runner(cfg)
    _note(manifest.table())
    _emit(
        {
            "kind": manifest.kind,
            "config_hash": manifest.config_hash,
            "aggregate": manifest.aggregate,
            "extras": manifest.extras,
        }
    )


def _cmd_compare(args) -> None:
    _run_and_report(run_compare, load_experiment_config(args.config))


def _cmd_ablate(args) -> None:
    _run_and_report(run_ablation, load_experiment_config(args.config))


def _cmd_layer_sweep(args) -> None:
    cfg = load_experiment_config(args.config)
    layers = [int(x) for x in args.layers.split(",")] if args.layers else [0, 1, 2, 3, 4]
    manifest = run_layer_sweep(cfg, layers)
    _note(manifest.table())
    _emit({"kind": manifest.kind, "aggregate": manifest.aggregate, "layers": layers})


def _cmd_rag(args) -> None:
    _run_and_report(run_rag, load_experiment_config(args.config))


def _cmd_init_config(args) -> None:
    write_default_config(args.out)
    _emit({"config": str(args.out)})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graftlm",
        description="Graph-attention adapter over a toy decoder-only LM, with BM25 retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="generate the synthetic lookup dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--codes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_make_toy_data)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-size", type=int, default=8192)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("pretrain", help="pretrain the foundation model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("index", help="chunk a corpus and build the BM25 index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="query the BM25 index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("train", help="train the adapter arm once")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="decode one question")
    p.add_argument("--config", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--knowledge", default="")
    p.add_argument("--checkpoint", default="")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score a generations file against a dataset")
    p.add_argument("--generations", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="train and evaluate baseline vs adapter arms")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("ablate", help="run the edge-family ablation variants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("layer-sweep", help="sweep the adapter layer count")
    p.add_argument("--config", required=True)
    p.add_argument("--layers", default="")
    p.set_defaults(func=_cmd_layer_sweep)

    p = sub.add_parser("rag", help="retrieval-augmented run: BM25 knowledge + comparison")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_rag)

    p = sub.add_parser("init-config", help="write a config file with the default recipe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
