"""Knowledge graphs from triple sets.

Each triple (s, r, o) contributes an s -> r -> o chain plus a reverse
relation node r' with o -> r' -> s, so object information can flow back
into the subject. Co-referential entities (same trimmed label) fold
into one node; relation nodes are never folded. Reverse-relation labels
carry the literal "<r>" marker prefix.

Initial node features come from a bidirectional LSTM over the label's
subword tokens: the two last hidden states are concatenated and
projected to the model width. The encoder's parameters train jointly
with the rest of the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .config import ModelConfig
from .tokenizer import REV, Tokenizer

ENTITY = "entity"
RELATION = "relation"
REVERSE = "reverse"

_DOT_COLORS = {ENTITY: "red", RELATION: "blue", REVERSE: "green"}


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    label: str


@dataclass
class KnowledgeGraph:
    nodes: list[Node]
    edges: list[tuple[int, int]]
    features: ag.Tensor | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def build_graph(triples: list[tuple[str, str, str]]) -> KnowledgeGraph:
    """Fold entities, add relation + reverse-relation nodes, wire 4 edges per triple.

    Node ids follow first appearance in the order s, r, r', o per triple.
    """
    if not triples:
        raise ValueError("cannot build a graph from an empty triple set")
    nodes: list[Node] = []
    edges: list[tuple[int, int]] = []
    entity_ids: dict[str, int] = {}

    def entity(label: str) -> int:
        label = label.strip()
        if label not in entity_ids:
            entity_ids[label] = len(nodes)
            nodes.append(Node(len(nodes), ENTITY, label))
        return entity_ids[label]

    def fresh(kind: str, label: str) -> int:
        nodes.append(Node(len(nodes), kind, label))
        return len(nodes) - 1

    for s, r, o in triples:
        s_id = entity(s)
        r_id = fresh(RELATION, r.strip())
        rev_id = fresh(REVERSE, REV + r.strip())
        o_id = entity(o)
        edges.extend([(s_id, r_id), (r_id, o_id), (o_id, rev_id), (rev_id, s_id)])
    return KnowledgeGraph(nodes=nodes, edges=edges)


def init_node_params(rng: np.random.Generator, vocab_size: int, cfg: ModelConfig) -> dict[str, ag.Tensor]:
    """Parameters of the recurrent node-feature initializer."""
    h, d_in, d = cfg.d_rnn, cfg.d_emb, cfg.d_model
    params = {"kinit.emb": ag.parameter(rng, (vocab_size, d_in), name="kinit.emb")}
    for side in ("fw", "bw"):
        params[f"kinit.{side}.w_ih"] = ag.parameter(rng, (d_in, 4 * h), name=f"kinit.{side}.w_ih")
        params[f"kinit.{side}.w_hh"] = ag.parameter(rng, (h, 4 * h), name=f"kinit.{side}.w_hh")
        params[f"kinit.{side}.b"] = ag.Tensor(np.zeros(4 * h), requires_grad=True, name=f"kinit.{side}.b")
    params["kinit.proj"] = ag.parameter(rng, (2 * h, d), name="kinit.proj")
    return params


def _lstm_last_hidden(x: ag.Tensor, w_ih: ag.Tensor, w_hh: ag.Tensor, b: ag.Tensor, h_dim: int) -> ag.Tensor:
    """Run an LSTM over (T, d_in) rows and return the last hidden state (h_dim,)."""
    h = ag.Tensor(np.zeros(h_dim))
    c = ag.Tensor(np.zeros(h_dim))
    T = x.shape[0]
    for t in range(T):
        pre = x[t] @ w_ih + h @ w_hh + b
        i = ag.sigmoid(pre[0 * h_dim:1 * h_dim])
        f = ag.sigmoid(pre[1 * h_dim:2 * h_dim])
        g = ag.tanh(pre[2 * h_dim:3 * h_dim])
        o = ag.sigmoid(pre[3 * h_dim:4 * h_dim])
        c = f * c + i * g
        h = o * ag.tanh(c)
    return h


def encode_label(label: str, params: dict, tokenizer: Tokenizer, cfg: ModelConfig) -> ag.Tensor:
    """Feature vector (d_model,) for one node label."""
    ids = tokenizer.encode(label)
    if not ids:
        raise ValueError(f"label {label!r} produced no tokens")
    emb = ag.embedding(params["kinit.emb"], np.asarray(ids))
    fwd = _lstm_last_hidden(emb, params["kinit.fw.w_ih"], params["kinit.fw.w_hh"],
                            params["kinit.fw.b"], cfg.d_rnn)
    rev_rows = ag.take_slice(emb, slice(None, None, -1))
    bwd = _lstm_last_hidden(rev_rows, params["kinit.bw.w_ih"], params["kinit.bw.w_hh"],
                            params["kinit.bw.b"], cfg.d_rnn)
    return ag.concat([fwd, bwd], axis=0) @ params["kinit.proj"]


def init_node_features(graph: KnowledgeGraph, params: dict, tokenizer: Tokenizer,
                       cfg: ModelConfig) -> ag.Tensor:
    """Initial feature matrix (|V|, d_model); identical labels share one encoding."""
    by_label: dict[str, ag.Tensor] = {}
    rows = []
    for node in graph.nodes:
        if node.label not in by_label:
            by_label[node.label] = encode_label(node.label, params, tokenizer, cfg)
        rows.append(ag.reshape(by_label[node.label], (1, cfg.d_model)))
    return ag.concat(rows, axis=0)


def to_dot(graph: KnowledgeGraph) -> str:
    """Graphviz text with entity/relation/reverse nodes colored red/blue/green."""
    lines = ["digraph knowledge {"]
    for node in graph.nodes:
        label = node.label.replace('"', '\\"')
        lines.append(
            f'  n{node.id} [label="{label}", color={_DOT_COLORS[node.kind]}, '
            f'shape={"box" if node.kind == ENTITY else "ellipse"}];'
        )
    for src, dst in graph.edges:
        lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
