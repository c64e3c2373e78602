"""Training loop: AdamW with decoupled weight decay, linear warmup into
cosine decay, global-norm gradient clipping, homogeneous per-family batches
drawn round-robin, per-epoch validation, and best-checkpoint tracking.

Determinism contract: given the same (config, data), two runs produce
byte-identical checkpoints and histories.  All randomness derives from
``config.seed`` via three spawned generators (init, batch order, dropout);
gradients accumulate in fixed graph order and the optimizer walks parameters
in manifest order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wot.checkpoint import Checkpoint
from wot.config import REGRESSION_FAMILIES, TrainConfig
from wot.encoder import Vocab, build_vocab, text_ids
from wot.evaluation import evaluate_model
from wot.heads import task_loss
from wot.model import WotModel
from wot.tasks import DatasetSplit
from wot.tensor import ComputationGraph, backward

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted with diagnostics."""


@dataclass
class OptimizerState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    history: list[dict]
    snapshots: dict[int, Checkpoint] = field(default_factory=dict)


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup over the first ``warmup_fraction`` of steps, then cosine
    decay from the peak to exactly zero at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return 0.0
    warmup = int(round(config.warmup_fraction * total_steps))
    if step < warmup:
        return config.lr_peak * step / warmup
    span = total_steps - warmup
    if span == 0:
        return 0.0
    progress = (step - warmup) / span
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads: dict[str, np.ndarray],
                   max_norm: float = 1.0) -> dict[str, np.ndarray]:
    """Scale all gradients so the global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return grads


def adamw_step(params: dict, grads: dict[str, np.ndarray],
               state: OptimizerState, lr: float,
               weight_decay: float = 0.0) -> None:
    """One AdamW update: decoupled decay on the parameters, bias-corrected
    moments with betas (0.9, 0.999) and eps 1e-8.

    Only parameters present in ``grads`` are touched; updates walk ``grads``
    in insertion order, which the trainer keeps equal to manifest order.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    state.step += 1
    t = state.step
    b1, b2 = ADAM_BETAS
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name!r}")
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += ADAM_EPS
        p.data -= lr * (m / c1) / denom


def standardization_stats(data: dict[str, DatasetSplit]) -> dict[str, dict]:
    """Per-family (mean, std) of the training-split regression targets."""
    stats = {}
    for family, split in data.items():
        if family not in REGRESSION_FAMILIES:
            continue
        targets = np.array([s.target for s in split.train], dtype=np.float64)
        mean = float(targets.mean()) if targets.size else 0.0
        std = float(targets.std()) if targets.size else 1.0
        if std == 0.0:
            std = 1.0
        stats[family] = {"mean": mean, "std": std}
    return stats


def _batches(indices: list[int], batch_size: int) -> list[list[int]]:
    return [indices[i:i + batch_size]
            for i in range(0, len(indices), batch_size)]


def _round_robin(queues: dict[str, list]) -> list[tuple[str, list]]:
    order = []
    cursors = {fam: 0 for fam in queues}
    while True:
        advanced = False
        for fam, batches in queues.items():
            cur = cursors[fam]
            if cur < len(batches):
                order.append((fam, batches[cur]))
                cursors[fam] = cur + 1
                advanced = True
        if not advanced:
            return order


def _make_checkpoint(model: WotModel, config: TrainConfig, vocab: Vocab,
                     standardization: dict, history: list[dict]) -> Checkpoint:
    params = {name: model.params[name].data.copy()
              for name in model.manifest()}
    return Checkpoint(config=config, vocab=list(vocab.id_to_token),
                      params=params, manifest=model.manifest(),
                      standardization=standardization,
                      history=[dict(h) for h in history])


def train(data: dict[str, DatasetSplit], config: TrainConfig,
          snapshot_epochs: tuple[int, ...] = (),
          progress=None) -> TrainResult:
    """Train a model on per-family splits.

    ``snapshot_epochs`` asks for in-memory checkpoints after those (1-based)
    epochs, e.g. for node-similarity analysis across training.  ``progress``
    is an optional callable receiving one line per epoch.
    """
    families = [f for f in config.families if f in data]
    if not families:
        raise ValueError("train: no data for any configured family")

    corpus = [s.text for fam in families for s in data[fam].train]
    vocab = build_vocab(corpus, cap=config.vocab_cap)
    standardization = standardization_stats(
        {fam: data[fam] for fam in families})

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    order_rng = np.random.default_rng(seeds[1])
    drop_rng = np.random.default_rng(seeds[2])

    model = WotModel(config, len(vocab), rng=init_rng)

    token_cache: dict[str, list[list[int]]] = {}
    target_cache: dict[str, np.ndarray] = {}
    for fam in families:
        samples = data[fam].train
        token_cache[fam] = [text_ids(s.text, vocab) for s in samples]
        raw = np.array([s.target for s in samples], dtype=np.float64)
        if fam in REGRESSION_FAMILIES:
            raw = (raw - standardization[fam]["mean"]) / standardization[fam]["std"]
        target_cache[fam] = raw

    steps_per_epoch = sum(
        math.ceil(len(data[fam].train) / config.batch_size)
        for fam in families)
    total_steps = config.epochs * steps_per_epoch

    state = OptimizerState()
    history: list[dict] = []
    snapshots: dict[int, Checkpoint] = {}
    best_score = -math.inf
    best_ckpt: Checkpoint | None = None
    global_step = 0

    for epoch in range(1, config.epochs + 1):
        queues = {}
        for fam in families:
            idx = list(range(len(data[fam].train)))
            order_rng.shuffle(idx)
            queues[fam] = _batches(idx, config.batch_size)
        schedule = _round_robin(queues)

        loss_sum = 0.0
        for fam, batch_idx in schedule:
            ids = [token_cache[fam][i] for i in batch_idx]
            targets = target_cache[fam][batch_idx]
            model.zero_grads()
            graph = ComputationGraph()
            with graph:
                out = model.forward(ids, fam, training=True, drop_rng=drop_rng)
                loss = task_loss(out, targets, fam)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {global_step}, "
                    f"family {fam!r}")
            backward(loss, graph)
            grads = {name: model.params[name].grad
                     for name in model.manifest()
                     if model.params[name].grad is not None}
            clip_gradients(grads, config.clip_norm)
            lr = lr_at(global_step, total_steps, config)
            adamw_step(model.params, grads, state, lr,
                       weight_decay=config.weight_decay)
            model.invalidate_pathways()
            loss_sum += loss_val
            global_step += 1

        val_samples = [s for fam in families for s in data[fam].val]
        entry = {"epoch": epoch,
                 "train_loss": loss_sum / max(len(schedule), 1)}
        if val_samples:
            metrics = evaluate_model(model, vocab, val_samples, standardization)
            entry["val"] = metrics.to_dict()
            entry["val_score"] = metrics.mean_score
            if metrics.mean_score > best_score:
                best_score = metrics.mean_score
                best_ckpt = _make_checkpoint(model, config, vocab,
                                             standardization, history + [entry])
        history.append(entry)
        if progress is not None:
            score = entry.get("val_score")
            progress(f"epoch {epoch}/{config.epochs} "
                     f"loss {entry['train_loss']:.4f}"
                     + (f" val_score {score:.4f}" if score is not None else ""))
        if epoch in snapshot_epochs:
            snapshots[epoch] = _make_checkpoint(model, config, vocab,
                                                standardization, history)

    final = _make_checkpoint(model, config, vocab, standardization, history)
    if best_ckpt is None:
        best_ckpt = final
    return TrainResult(final=final, best=best_ckpt, history=history,
                       snapshots=snapshots)
