"""The N-node reasoning network.

Node states for a batch live in one (B*N, h) matrix with rows grouped per
sample (sample b's node i sits at row b*N + i), so a whole batch flows
through single matrix ops.  The stages:

  * gated initialization: per-node two-layer perceptron of the question
    embedding (Linear -> LayerNorm -> GELU -> dropout -> Linear), multiplied
    elementwise by that node's gate row;
  * edge scoring: a 2h->h->1 perceptron over every ordered node pair
    (self-pairs included), scaled by 1/sqrt(h), multiplied by the edge gate,
    squashed by sigmoid (or row-softmax behind a config flag);
  * message rounds: messages are attention-mixed projected states and the
    update is a residual linear map of [state, message], so zero-initialized
    update weights make a round an exact identity;
  * aggregation: softmax over gated per-node scores, then the weighted sum
    of node states.

The pairwise perceptron never materializes [n_i, n_j]: its first weight
matrix is split into halves applied to source and target states separately,
which is the same linear map at a fraction of the cost.
"""

from __future__ import annotations

import math

import numpy as np

from wot.pathways import PathwayInfo
from wot.tensor import (
    Tensor,
    add,
    add_bias,
    attn_mix,
    dropout,
    gelu,
    interleave_rows,
    layer_norm,
    matmul,
    mul,
    mul_rowvec,
    pairs_sum,
    reshape,
    scale,
    sigmoid,
    slice_rows,
    softmax_rows,
    tile_rows,
    weighted_pool,
)


def chain_mask(n: int) -> np.ndarray:
    """Mask keeping only edges (i, i-1): node i listens to node i-1 alone."""
    m = np.zeros((n, n))
    for i in range(1, n):
        m[i, i - 1] = 1.0
    return m


def node_param_prefix(cfg, i: int) -> str:
    return "node_shared" if cfg.tie_nodes else f"node{i}"


def init_nodes(x0: Tensor, p_node: Tensor, params: dict, cfg,
               rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
    """Initialize the (B*N, h) node-state matrix from the question embedding."""
    batch = x0.shape[0]
    outs = []
    for i in range(cfg.n_nodes):
        p = node_param_prefix(cfg, i)
        y = add_bias(matmul(x0, params[f"{p}.W1"]), params[f"{p}.b1"])
        y = layer_norm(y, params[f"{p}.ln_g"], params[f"{p}.ln_b"])
        y = gelu(y)
        if training and cfg.dropout > 0.0:
            y = dropout(y, cfg.dropout, rng)
        y = add_bias(matmul(y, params[f"{p}.W2"]), params[f"{p}.b2"])
        y = mul_rowvec(y, slice_rows(p_node, i, i + 1))
        outs.append(y)
    states = interleave_rows(outs)
    assert states.shape == (batch * cfg.n_nodes, cfg.hidden)
    return states


def edge_scores(states: Tensor, p_edge: Tensor, params: dict, cfg) -> Tensor:
    """Attention matrix over node pairs, one (N, N) block per sample,
    returned as (B*N, N) with row b*N+i holding node i's incoming weights."""
    n, h = cfg.n_nodes, cfg.hidden
    batch = states.shape[0] // n
    w_src = slice_rows(params["edge.W1"], 0, h)
    w_dst = slice_rows(params["edge.W1"], h, 2 * h)
    u = add_bias(matmul(states, w_src), params["edge.b1"])
    v = matmul(states, w_dst)
    hidden = gelu(pairs_sum(u, v, n))                       # (B*N^2, h)
    raw = add_bias(matmul(hidden, params["edge.W2"]), params["edge.b2"])
    raw = scale(raw, 1.0 / math.sqrt(h))
    gate = tile_rows(reshape(p_edge, (n * n, 1)), batch)
    gated = reshape(mul(raw, gate), (batch * n, n))
    if cfg.edge_softmax:
        attn = softmax_rows(gated)
    else:
        attn = sigmoid(gated)
    if cfg.chain_mask:
        attn = mul(attn, tile_rows(Tensor(chain_mask(n)), batch))
    return attn


def message_round(states: Tensor, attn: Tensor, params: dict, cfg,
                  round_index: int = 0) -> Tensor:
    """One round: mix projected states by attention, apply the residual update."""
    n, h = cfg.n_nodes, cfg.hidden
    msg_name = f"msg{round_index}.W" if cfg.per_round_msg else "msg.W"
    projected = matmul(states, params[msg_name])
    messages = attn_mix(attn, projected, n)
    w_state = slice_rows(params["update.W"], 0, h)
    w_msg = slice_rows(params["update.W"], h, 2 * h)
    delta = add_bias(
        add(matmul(states, w_state), matmul(messages, w_msg)),
        params["update.b"])
    return add(states, delta)


def run_message_passing(states: Tensor, pathways: PathwayInfo, rounds: int,
                        params: dict, cfg) -> tuple[Tensor, list[Tensor]]:
    """Apply ``rounds`` rounds; returns final states and the per-round
    attention matrices.  rounds=0 returns the input unchanged."""
    attns: list[Tensor] = []
    for r in range(rounds):
        attn = edge_scores(states, pathways.p_edge, params, cfg)
        states = message_round(states, attn, params, cfg, round_index=r)
        attns.append(attn)
    return states, attns


def aggregate(states: Tensor, p_attn: Tensor, params: dict,
              cfg) -> tuple[Tensor, Tensor]:
    """Pool node states into one vector per sample.

    Returns (z, weights): z is (B, h); weights is (B, N), rows sum to 1.
    """
    n = cfg.n_nodes
    batch = states.shape[0] // n
    scores = add_bias(matmul(states, params["agg.W"]), params["agg.b"])
    scores = mul(scores, tile_rows(p_attn, batch))
    weights = softmax_rows(reshape(scores, (batch, n)))
    z = weighted_pool(weights, states, n)
    return z, weights
