"""Graph layout and adjacency construction for the three-subgraph adapter.

Node order is fixed: input nodes first, then partial-output nodes, then
knowledge nodes. Adjacency entry A[p, q] = True means "p feeds into q",
so the neighborhood of q is the set of rows lit in column q.

Edge families:
  - input -> output: every input node feeds every output node (directed;
    nothing ever feeds back into the input subgraph from the output).
  - output -> output: causal, an output node sees itself and every
    earlier output node.
  - knowledge -> output: every knowledge node feeds every output node
    (directed, same contamination argument as for input).
  - input <-> input and knowledge <-> knowledge: fully connected within
    the subgraph, self-loops included.

Ablation switches remove or replace single blocks; self-loops are never
removed, so every node keeps a nonempty neighborhood.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class GraphLayout:
    """Node counts per subgraph: input M, partial output C, knowledge S."""

    input_count: int
    output_count: int
    knowledge_count: int

    def __post_init__(self):
        if self.input_count < 1:
            raise ContractError(f"need at least one input node, got {self.input_count}")
        if self.output_count < 1:
            raise ContractError(f"need at least one output node, got {self.output_count}")
        if self.knowledge_count < 0:
            raise ContractError(f"negative knowledge node count {self.knowledge_count}")

    @property
    def total(self) -> int:
        return self.input_count + self.output_count + self.knowledge_count

    @property
    def input_range(self) -> range:
        return range(0, self.input_count)

    @property
    def output_range(self) -> range:
        return range(self.input_count, self.input_count + self.output_count)

    @property
    def knowledge_range(self) -> range:
        return range(self.input_count + self.output_count, self.total)


@dataclass(frozen=True)
class AblationSwitches:
    no_input_edges: bool = False
    full_context_edges: bool = False
    no_context_edges: bool = False
    no_knowledge_edges: bool = False

    def __post_init__(self):
        if self.full_context_edges and self.no_context_edges:
            raise ConfigError("no_context_edges and full_context_edges are mutually exclusive")


def build_adjacency(layout: GraphLayout, switches: AblationSwitches | None = None) -> np.ndarray:
    """Boolean N x N adjacency with the block structure described above."""
    sw = switches or AblationSwitches()
    n = layout.total
    adj = np.zeros((n, n), dtype=bool)
    inp = layout.input_range
    out = layout.output_range
    kno = layout.knowledge_range

    adj[inp.start : inp.stop, inp.start : inp.stop] = True
    if not sw.no_input_edges:
        adj[inp.start : inp.stop, out.start : out.stop] = True

    if sw.full_context_edges:
        adj[out.start : out.stop, out.start : out.stop] = True
    elif sw.no_context_edges:
        for q in out:
            adj[q, q] = True
    else:
        # causal: p feeds q iff p's position <= q's position
        for q in out:
            adj[out.start : q + 1, q] = True

    if kno:
        adj[kno.start : kno.stop, kno.start : kno.stop] = True
        if not sw.no_knowledge_edges:
            adj[kno.start : kno.stop, out.start : out.stop] = True

    return adj


def edge_counts(layout: GraphLayout, switches: AblationSwitches | None = None) -> dict[str, int]:
    """Closed-form edge counts per block for the given variant."""
    sw = switches or AblationSwitches()
    m, c, s = layout.input_count, layout.output_count, layout.knowledge_count
    if sw.full_context_edges:
        context = c * c
    elif sw.no_context_edges:
        context = c
    else:
        context = c * (c + 1) // 2
    return {
        "input_input": m * m,
        "input_output": 0 if sw.no_input_edges else m * c,
        "output_output": context,
        "knowledge_output": 0 if sw.no_knowledge_edges else s * c,
        "knowledge_knowledge": s * s,
    }
