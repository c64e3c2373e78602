"""Post-graph processing: transformer over node states, sequential
refinement of the pooled vector, and task heads with their losses.

The transformer is a standard pre-norm encoder (default 4 layers, 4 heads,
feed-forward width 4h) applied across the N node positions of each sample;
it can be disabled entirely by config, in which case the input tensor passes
through untouched.  Refinement applies S residual feed-forward steps with
per-step parameters, so composing a+b steps equals running a then b.

Residual-block output projections (attention out-proj, both feed-forward
second layers, the update perceptron in the graph module) are
zero-initialized at model construction, making the whole aggregate ->
transformer -> refine pipeline an exact identity on the pooled vector until
training moves it.
"""

from __future__ import annotations

import math

import numpy as np

from wot.config import CLASSIFICATION_FAMILIES, FAMILIES
from wot.tensor import (
    Tensor,
    add,
    add_bias,
    attn_mix,
    block_qk,
    clamp,
    concat_last,
    gelu,
    layer_norm,
    log,
    matmul,
    mul,
    scale,
    sigmoid,
    slice_cols,
    softmax_rows,
    sub,
    sum_all,
)

PROB_EPS = 1e-7


def reasoning_transformer(states: Tensor, params: dict, cfg,
                          collect: list | None = None) -> Tensor:
    """Pre-norm multi-head self-attention stack over the N node positions.

    ``collect``, when given, receives the per-head attention tensors
    (each (B*N, N), rows summing to 1).  With the transformer disabled the
    input is returned as-is.
    """
    if not cfg.transformer:
        return states
    n = cfg.n_nodes
    heads = cfg.transformer_heads
    dh = cfg.hidden // heads
    inv = 1.0 / math.sqrt(dh)
    for layer in range(cfg.transformer_layers):
        p = f"tf{layer}"
        u = layer_norm(states, params[f"{p}.ln1_g"], params[f"{p}.ln1_b"])
        q = add_bias(matmul(u, params[f"{p}.Wq"]), params[f"{p}.bq"])
        k = add_bias(matmul(u, params[f"{p}.Wk"]), params[f"{p}.bk"])
        v = add_bias(matmul(u, params[f"{p}.Wv"]), params[f"{p}.bv"])
        ctx = None
        for head in range(heads):
            lo, hi = head * dh, (head + 1) * dh
            qh, kh, vh = (slice_cols(t, lo, hi) for t in (q, k, v))
            attn = softmax_rows(scale(block_qk(qh, kh, n), inv))
            if collect is not None:
                collect.append(attn)
            mixed = attn_mix(attn, vh, n)
            ctx = mixed if ctx is None else concat_last(ctx, mixed)
        out = add_bias(matmul(ctx, params[f"{p}.Wo"]), params[f"{p}.bo"])
        states = add(states, out)
        u2 = layer_norm(states, params[f"{p}.ln2_g"], params[f"{p}.ln2_b"])
        ff = add_bias(matmul(u2, params[f"{p}.ff_W1"]), params[f"{p}.ff_b1"])
        ff = add_bias(matmul(gelu(ff), params[f"{p}.ff_W2"]), params[f"{p}.ff_b2"])
        states = add(states, ff)
    return states


def refine(z: Tensor, steps: int, params: dict,
           collect_norms: list | None = None, start: int = 0) -> Tensor:
    """Apply ``steps`` residual feed-forward refinements to (B, h) vectors.

    Step parameters are indexed from ``start``, so running a+b steps equals
    running a steps and then b steps starting at index a.  ``collect_norms``
    receives each step's per-sample delta L2 norms.
    """
    if steps < 1:
        raise ValueError(f"refine: steps must be >= 1, got {steps}")
    r = z
    for s in range(start, start + steps):
        p = f"refine{s}"
        u = layer_norm(r, params[f"{p}.ln_g"], params[f"{p}.ln_b"])
        f = add_bias(matmul(u, params[f"{p}.W1"]), params[f"{p}.b1"])
        f = add_bias(matmul(gelu(f), params[f"{p}.W2"]), params[f"{p}.b2"])
        if collect_norms is not None:
            collect_norms.append(np.sqrt((f.data ** 2).sum(axis=-1)))
        r = add(r, f)
    return r


def project(r: Tensor, family: str, params: dict) -> Tensor:
    """Map refined vectors to the task output.

    Classification families yield a probability in (0, 1); regression
    families yield a scalar in the standardized target space.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown task family: {family!r}")
    if family in CLASSIFICATION_FAMILIES:
        logit = add_bias(matmul(r, params["head.cls_W"]), params["head.cls_b"])
        return sigmoid(logit)
    return add_bias(matmul(r, params["head.reg_W"]), params["head.reg_b"])


def bce_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped away from 0/1."""
    batch = probs.shape[0]
    y = Tensor(np.asarray(targets, dtype=np.float64).reshape(batch, 1))
    ones = Tensor(np.ones((batch, 1)))
    p = clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
    ll = add(mul(y, log(p)), mul(sub(ones, y), log(sub(ones, p))))
    return scale(sum_all(ll), -1.0 / batch)


def mse_loss(preds: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error in the (standardized) target space."""
    batch = preds.shape[0]
    t = Tensor(np.asarray(targets, dtype=np.float64).reshape(batch, 1))
    diff = sub(preds, t)
    return scale(sum_all(mul(diff, diff)), 1.0 / batch)


def task_loss(output: Tensor, targets: np.ndarray, family: str) -> Tensor:
    if family not in FAMILIES:
        raise ValueError(f"unknown task family: {family!r}")
    if family in CLASSIFICATION_FAMILIES:
        return bce_loss(output, targets)
    return mse_loss(output, targets)
