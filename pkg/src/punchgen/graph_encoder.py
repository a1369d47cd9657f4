"""Graph attention over knowledge-graph node features.

A node attends to its in-neighbors plus itself. Per head m, the
connection score of node i toward neighbor j is softmax over
(W_K h_j)^T (W_Q h_i); the new feature is the concatenation over heads
of the activated, attention-weighted sum of value-projected neighbors.
No residuals, no output projection: heads concatenate straight back to
the model width.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .config import ModelConfig
from .kgraph import KnowledgeGraph

MASK_OFF = -1e30


def init_gat_params(rng: np.random.Generator, cfg: ModelConfig) -> dict[str, ag.Tensor]:
    params = {}
    for layer in range(cfg.gat_layers):
        for head in range(cfg.n_heads):
            for w in ("wq", "wk", "wv"):
                name = f"gat.{layer}.{head}.{w}"
                params[name] = ag.parameter(rng, (cfg.d_model, cfg.d_head), name=name)
    return params


def in_neighbor_mask(n_nodes: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """mask[i, j] is True when j is an in-neighbor of i or j == i."""
    mask = np.eye(n_nodes, dtype=bool)
    for src, dst in edges:
        mask[dst, src] = True
    return mask


def _mask_bias(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, MASK_OFF)


def gat_attention(h: ag.Tensor, layer_params: list[dict], mask: np.ndarray) -> list[ag.Tensor]:
    """Per-head attention matrices; row i is a distribution over N(i)."""
    bias = ag.Tensor(_mask_bias(mask))
    alphas = []
    for head in layer_params:
        q = h @ head["wq"]
        k = h @ head["wk"]
        logits = q @ k.T + bias
        alphas.append(ag.softmax(logits, axis=1))
    return alphas


def gat_layer(h: ag.Tensor, layer_params: list[dict], mask: np.ndarray,
              slope: float = 0.2, activation=None) -> ag.Tensor:
    """One multi-head update; heads concatenate back to width d."""
    act = activation if activation is not None else (lambda t: ag.leaky_relu(t, slope))
    alphas = gat_attention(h, layer_params, mask)
    outs = []
    for head, alpha in zip(layer_params, alphas):
        v = h @ head["wv"]
        outs.append(act(alpha @ v))
    return ag.concat(outs, axis=1)


def _layers(params: dict, cfg: ModelConfig) -> list[list[dict]]:
    return [
        [
            {w: params[f"gat.{layer}.{head}.{w}"] for w in ("wq", "wk", "wv")}
            for head in range(cfg.n_heads)
        ]
        for layer in range(cfg.gat_layers)
    ]


def encode_knowledge(graph: KnowledgeGraph, params: dict, cfg: ModelConfig,
                     collect_attention: list | None = None) -> ag.Tensor:
    """Apply the configured number of attention layers to graph.features."""
    if graph.features is None:
        raise ValueError("graph has no initial features")
    mask = in_neighbor_mask(graph.n_nodes, graph.edges)
    h = graph.features
    for layer_params in _layers(params, cfg):
        if collect_attention is not None:
            collect_attention.append([a.data.copy() for a in gat_attention(h, layer_params, mask)])
        h = gat_layer(h, layer_params, mask, slope=cfg.leaky_slope)
    return h


def attention_dump(graph: KnowledgeGraph, params: dict, cfg: ModelConfig) -> list:
    """Attention tensors per layer/head as nested lists (JSON-friendly)."""
    collected: list = []
    with ag.no_grad():
        encode_knowledge(graph, params, cfg, collect_attention=collected)
    return [[a.tolist() for a in layer] for layer in collected]
