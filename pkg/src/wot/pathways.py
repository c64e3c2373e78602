"""Weight analysis: turn designated parameter matrices into gating signals.

The analyzer summarizes each designated weight matrix by its row-wise L2
norms and row-wise means, concatenates the summaries into one fixed-length
vector, and maps that vector through a small two-layer perceptron whose
output is squashed into (0, 2) by 2*sigmoid.  The perceptron's final layer
is zero-initialized, so an untrained analyzer emits all-ones gates and the
gated model starts out exactly equal to its ungated counterpart.

The summary vector is treated as a constant: gradients reach the analyzer's
own perceptron, never the analyzed matrices.  The designated set defaults to
the node perceptron matrices plus the edge scorer matrices and is fixed by
the model configuration.

A parameter-free variant ("stats" mode) derives the gates directly from
z-scored row norms, for runs where the analyzer should carry no learned
parameters of its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wot.tensor import (
    Tensor,
    add_bias,
    matmul,
    reshape,
    scale,
    sigmoid,
    slice_cols,
    tanh,
)


@dataclass
class PathwayInfo:
    """Gating triple: node gates (N, h), edge gates (N, N), aggregation
    gates (N, 1).  Every entry lies in the open interval (0, 2)."""

    p_node: Tensor
    p_edge: Tensor
    p_attn: Tensor

    def to_arrays(self) -> dict[str, list]:
        return {
            "p_node": self.p_node.data.tolist(),
            "p_edge": self.p_edge.data.tolist(),
            "p_attn": self.p_attn.data.reshape(-1).tolist(),
        }


def analyzed_param_names(cfg) -> list[str]:
    """Names of the matrices the analyzer consumes, in summary order."""
    names = []
    if cfg.tie_nodes:
        names += ["node_shared.W1", "node_shared.W2"]
    else:
        for i in range(cfg.n_nodes):
            names += [f"node{i}.W1", f"node{i}.W2"]
    names += ["edge.W1", "edge.W2"]
    return names


def stats_len(cfg) -> int:
    """Length of the summary vector, a pure function of the configuration."""
    h = cfg.hidden
    node_mats = 2 if cfg.tie_nodes else 2 * cfg.n_nodes
    # each h x h node matrix contributes 2h; edge.W1 is 2h x h, edge.W2 h x 1
    return node_mats * 2 * h + 2 * (2 * h) + 2 * h


def gates_len(cfg) -> int:
    n, h = cfg.n_nodes, cfg.hidden
    return n * h + n * n + n


def matrix_stats(w: np.ndarray) -> np.ndarray:
    """Row-wise L2 norms followed by row-wise means."""
    norms = np.sqrt((w * w).sum(axis=1))
    means = w.mean(axis=1)
    return np.concatenate([norms, means])


def weight_stats(params: dict[str, Tensor], cfg) -> np.ndarray:
    """Summary vector over the designated matrices; no gradient attaches."""
    pieces = []
    for name in analyzed_param_names(cfg):
        if name not in params:
            raise KeyError(f"weight_stats: missing designated parameter {name!r}")
        pieces.append(matrix_stats(params[name].data))
    out = np.concatenate(pieces)
    expected = stats_len(cfg)
    if out.size != expected:
        raise ValueError(
            f"weight_stats: got length {out.size}, config implies {expected}")
    return out


def analyze(stats: np.ndarray, params: dict[str, Tensor], cfg) -> PathwayInfo:
    """Map the summary vector to the gating triple via the analyzer MLP."""
    if stats.size != stats_len(cfg):
        raise ValueError(
            f"analyze: stats length {stats.size} != analyzer input width "
            f"{stats_len(cfg)}")
    n, h = cfg.n_nodes, cfg.hidden
    x = Tensor(stats.reshape(1, -1))  # constant: stop-gradient into the stats
    hidden = tanh(add_bias(matmul(x, params["analyzer.W1"]), params["analyzer.b1"]))
    raw = add_bias(matmul(hidden, params["analyzer.W2"]), params["analyzer.b2"])
    gates = scale(sigmoid(raw), 2.0)
    p_node = reshape(slice_cols(gates, 0, n * h), (n, h))
    p_edge = reshape(slice_cols(gates, n * h, n * h + n * n), (n, n))
    p_attn = reshape(slice_cols(gates, n * h + n * n, n * h + n * n + n), (n, 1))
    return PathwayInfo(p_node, p_edge, p_attn)


def identity_pathways(cfg) -> PathwayInfo:
    """All-ones gates: gating becomes a no-op of the configured shapes."""
    n, h = cfg.n_nodes, cfg.hidden
    return PathwayInfo(
        Tensor(np.ones((n, h))),
        Tensor(np.ones((n, n))),
        Tensor(np.ones((n, 1))),
    )


def _zscore(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if sd == 0.0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def stats_pathways(params: dict[str, Tensor], cfg) -> PathwayInfo:
    """Parameter-free gates from z-scored row norms of the node matrices."""
    n, h = cfg.n_nodes, cfg.hidden

    def sig2(v):
        return 2.0 / (1.0 + np.exp(-v))

    p_node = np.zeros((n, h))
    per_node = np.zeros(n)
    for i in range(n):
        name = "node_shared.W1" if cfg.tie_nodes else f"node{i}.W1"
        norms = np.sqrt((params[name].data ** 2).sum(axis=1))
        p_node[i] = sig2(_zscore(norms))
        per_node[i] = norms.mean()
    s = _zscore(per_node)
    p_edge = sig2(0.5 * (s[:, None] + s[None, :]))
    p_attn = sig2(s).reshape(n, 1)
    return PathwayInfo(Tensor(p_node), Tensor(p_edge), Tensor(p_attn))
