"""Graph-attention adapter over a toy decoder-only language model.

A small foundation transformer provides last-block hidden states for two
parallel streams (question + partial output, and knowledge). A multi-layer
graph attention adapter relates the three token families through typed
edge blocks and its prediction is blended with the foundation's own logits
through a weighted residual. Includes BM25 retrieval, ROUGE/EM/BLEU
metrics and a seeded experiment harness.
"""

from .adapter import (
    AdapterConfig,
    DecodeSettings,
    adapter_forward,
    attention_scores,
    blend_logits,
    gat_layer,
    generate,
    init_adapter,
)
from .graph import AblationSwitches, GraphLayout, build_adjacency, edge_counts
from .model import (
    FoundationConfig,
    LowRankDelta,
    apply_lora,
    encode_knowledge,
    forward_stream,
    init_foundation,
)
from .metrics import MetricReport, bleu, exact_match, evaluate_run, rouge_l, rouge_n
from .pretrain import PretrainConfig, pretrain_foundation
from .retrieval import (
    InvertedIndex,
    Passage,
    bm25_score,
    build_index,
    chunk_corpus,
    retrieve_topk,
    topk_accuracy,
)
from .rng import RngState
from .tensor import Tensor, backward, dropout, leaky_relu, matmul, softmax_masked
from .text import Sample, Vocabulary, build_vocab, load_dataset, split_dataset, tokenize
from .training import (
    AdamWState,
    ModelState,
    TrainConfig,
    TrainRecord,
    adamw_step,
    teacher_forced_loss,
    train_adapter,
)

__version__ = "0.1.0"
