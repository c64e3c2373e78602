"""Full model: parameters, gating, and the end-to-end forward pass.

Parameter layout is a flat name -> Tensor map whose ordering (the manifest)
is fixed by the configuration; checkpoints serialize tensors in manifest
order.  Initialization is fan-in-scaled uniform with every residual-block
output projection zeroed, so at construction time message passing, the
transformer and refinement are all exact identities, and the zero-initialized
analyzer emits all-ones gates.  Per-node perceptrons start from one shared
draw plus a small per-node perturbation: nodes begin nearly interchangeable
and differentiate through training rather than by accident of init.

Gates are recomputed on every training forward (the analyzed weights move
between steps) and computed once then cached for inference; the trainer
invalidates the cache after each optimizer step.
"""

from __future__ import annotations

import numpy as np

from wot.config import TrainConfig
from wot.encoder import encode
from wot.graph import (
    aggregate,
    edge_scores,
    init_nodes,
    message_round,
    run_message_passing,
)
from wot.heads import project, reasoning_transformer, refine
from wot.pathways import (
    PathwayInfo,
    analyze,
    gates_len,
    identity_pathways,
    stats_len,
    stats_pathways,
    weight_stats,
)
from wot.tensor import Tensor

# per-node perturbation of the shared node-perceptron draw, as a fraction of
# the fan-in bound
NODE_JITTER = 0.1


class ForwardCapture:
    """Instrumentation sink for a single forward pass."""

    def __init__(self):
        self.pathways: PathwayInfo | None = None
        self.initial_states: np.ndarray | None = None   # (B, N, h)
        self.edge_attention: list[np.ndarray] = []      # per round (B, N, N)
        self.round_states: list[np.ndarray] = []        # per round (B, N, h)
        self.final_states: np.ndarray | None = None     # (B, N, h)
        self.agg_weights: np.ndarray | None = None      # (B, N)
        self.refine_norms: list[np.ndarray] = []        # per step (B,)


class WotModel:
    """The reasoning network over a fixed vocabulary."""

    def __init__(self, cfg: TrainConfig, vocab_size: int,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.params: dict[str, Tensor] = {}
        self._names: list[str] = []
        self._init_params(rng)
        self._pathway_cache: PathwayInfo | None = None
        # When set, the analyzer consumes this summary vector instead of the
        # live one.  The summary is a detached constant in the backward pass;
        # finite-difference checks must hold it equally constant, so they pin
        # it here before perturbing parameters.
        self.frozen_stats: np.ndarray | None = None

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, array: np.ndarray) -> None:
        self.params[name] = Tensor(array, requires_grad=True)
        self._names.append(name)

    def _uniform(self, rng, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        h = cfg.hidden
        ff = 4 * h

        self._add("embed.W", self._uniform(rng, (self.vocab_size, h), h))

        node_names = (["node_shared"] if cfg.tie_nodes
                      else [f"node{i}" for i in range(cfg.n_nodes)])
        base_w1 = self._uniform(rng, (h, h), h)
        base_w2 = self._uniform(rng, (h, h), h)
        jitter = NODE_JITTER / np.sqrt(h)
        for i, p in enumerate(node_names):
            if cfg.tie_nodes or i == 0:
                w1, w2 = base_w1, base_w2
            else:
                w1 = base_w1 + rng.uniform(-jitter, jitter, size=(h, h))
                w2 = base_w2 + rng.uniform(-jitter, jitter, size=(h, h))
            self._add(f"{p}.W1", w1)
            self._add(f"{p}.b1", np.zeros((1, h)))
            self._add(f"{p}.ln_g", np.ones((1, h)))
            self._add(f"{p}.ln_b", np.zeros((1, h)))
            self._add(f"{p}.W2", w2)
            self._add(f"{p}.b2", np.zeros((1, h)))

        self._add("edge.W1", self._uniform(rng, (2 * h, h), 2 * h))
        self._add("edge.b1", np.zeros((1, h)))
        self._add("edge.W2", self._uniform(rng, (h, 1), h))
        self._add("edge.b2", np.zeros((1, 1)))

        msg_names = ([f"msg{r}.W" for r in range(cfg.rounds)]
                     if cfg.per_round_msg else ["msg.W"])
        for name in msg_names:
            self._add(name, self._uniform(rng, (h, h), h))
        # residual update: zero-init keeps each round an identity at start
        self._add("update.W", np.zeros((2 * h, h)))
        self._add("update.b", np.zeros((1, h)))

        self._add("agg.W", self._uniform(rng, (h, 1), h))
        self._add("agg.b", np.zeros((1, 1)))

        for layer in range(cfg.transformer_layers):
            p = f"tf{layer}"
            self._add(f"{p}.ln1_g", np.ones((1, h)))
            self._add(f"{p}.ln1_b", np.zeros((1, h)))
            for proj in ("q", "k", "v"):
                self._add(f"{p}.W{proj}", self._uniform(rng, (h, h), h))
                self._add(f"{p}.b{proj}", np.zeros((1, h)))
            self._add(f"{p}.Wo", np.zeros((h, h)))
            self._add(f"{p}.bo", np.zeros((1, h)))
            self._add(f"{p}.ln2_g", np.ones((1, h)))
            self._add(f"{p}.ln2_b", np.zeros((1, h)))
            self._add(f"{p}.ff_W1", self._uniform(rng, (h, ff), h))
            self._add(f"{p}.ff_b1", np.zeros((1, ff)))
            self._add(f"{p}.ff_W2", np.zeros((ff, h)))
            self._add(f"{p}.ff_b2", np.zeros((1, h)))

        for step in range(cfg.refine_steps):
            p = f"refine{step}"
            self._add(f"{p}.ln_g", np.ones((1, h)))
            self._add(f"{p}.ln_b", np.zeros((1, h)))
            self._add(f"{p}.W1", self._uniform(rng, (h, ff), h))
            self._add(f"{p}.b1", np.zeros((1, ff)))
            self._add(f"{p}.W2", np.zeros((ff, h)))
            self._add(f"{p}.b2", np.zeros((1, h)))

        self._add("head.cls_W", self._uniform(rng, (h, 1), h))
        self._add("head.cls_b", np.zeros((1, 1)))
        self._add("head.reg_W", self._uniform(rng, (h, 1), h))
        self._add("head.reg_b", np.zeros((1, 1)))

        if cfg.analyzer_mode == "mlp" and not cfg.identity_gates:
            sl, gl, k = stats_len(cfg), gates_len(cfg), cfg.analyzer_hidden
            self._add("analyzer.W1", self._uniform(rng, (sl, k), sl))
            self._add("analyzer.b1", np.zeros((1, k)))
            # zero final layer: untrained analyzer gates are exactly 1
            self._add("analyzer.W2", np.zeros((k, gl)))
            self._add("analyzer.b2", np.zeros((1, gl)))

    def manifest(self) -> list[str]:
        """Parameter names in serialization order."""
        return list(self._names)

    @property
    def n_params(self) -> int:
        return sum(self.params[n].size for n in self._names)

    def grad_params(self) -> dict[str, Tensor]:
        return {n: self.params[n] for n in self._names}

    def zero_grads(self) -> None:
        for name in self._names:
            self.params[name].grad = None

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self._names:
            if name not in arrays:
                raise KeyError(f"missing parameter in checkpoint: {name!r}")
            t = self.params[name]
            if arrays[name].shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {t.data.shape}")
            t.data = np.ascontiguousarray(arrays[name], dtype=np.float64)
        self.invalidate_pathways()

    # -- gating -------------------------------------------------------------

    def pathways(self, training: bool = False) -> PathwayInfo:
        """The gating triple; recomputed each training forward, cached at
        inference until parameters change."""
        cfg = self.cfg
        if cfg.identity_gates:
            if self._pathway_cache is None:
                self._pathway_cache = identity_pathways(cfg)
            return self._pathway_cache
        if not training and self._pathway_cache is not None:
            return self._pathway_cache
        if cfg.analyzer_mode == "stats":
            pw = stats_pathways(self.params, cfg)
        else:
            stats = self.frozen_stats if self.frozen_stats is not None \
                else weight_stats(self.params, cfg)
            pw = analyze(stats, self.params, cfg)
        if not training:
            self._pathway_cache = pw
        return pw

    def invalidate_pathways(self) -> None:
        self._pathway_cache = None

    # -- forward ------------------------------------------------------------

    def forward(self, id_batches, family: str, training: bool = False,
                drop_rng: np.random.Generator | None = None,
                capture: ForwardCapture | None = None) -> Tensor:
        """Run the full pipeline for one homogeneous batch.

        Returns a (B, 1) tensor: class probability for classification
        families, standardized prediction for regression families.
        """
        cfg = self.cfg
        n = cfg.n_nodes
        batch = len(id_batches)

        pw = self.pathways(training=training)
        x0 = encode(id_batches, self.params["embed.W"])
        states = init_nodes(x0, pw.p_node, self.params, cfg,
                            rng=drop_rng, training=training)
        if capture is not None:
            capture.pathways = pw
            capture.initial_states = states.data.reshape(batch, n, cfg.hidden).copy()

        if capture is None:
            states, _ = run_message_passing(states, pw, cfg.rounds,
                                            self.params, cfg)
        else:
            for r in range(cfg.rounds):
                attn = edge_scores(states, pw.p_edge, self.params, cfg)
                states = message_round(states, attn, self.params, cfg,
                                       round_index=r)
                capture.edge_attention.append(
                    attn.data.reshape(batch, n, n).copy())
                capture.round_states.append(
                    states.data.reshape(batch, n, cfg.hidden).copy())

        states = reasoning_transformer(states, self.params, cfg)
        if capture is not None:
            capture.final_states = states.data.reshape(
                batch, n, cfg.hidden).copy()

        z, weights = aggregate(states, pw.p_attn, self.params, cfg)
        if capture is not None:
            capture.agg_weights = weights.data.copy()

        norms = capture.refine_norms if capture is not None else None
        r = refine(z, cfg.refine_steps, self.params, collect_norms=norms)
        return project(r, family, self.params)

    def predict_batch(self, id_batches, family: str) -> np.ndarray:
        """Inference-mode outputs as a flat array (no recording, no dropout)."""
        return self.forward(id_batches, family).data.reshape(-1)

    def final_node_states(self, id_batches) -> np.ndarray:
        """Final (post-transformer) node states, shape (B, N, h)."""
        capture = ForwardCapture()
        self.forward(id_batches, "syllogism", capture=capture)
        return capture.final_states
