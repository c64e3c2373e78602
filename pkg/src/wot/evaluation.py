"""Metrics, the ablation suite, reasoning traces, and analysis exports.

Classification families report accuracy and macro F1; regression families
report MSE and MAE in standardized target space (plus de-standardized MAE)
and the normalized score 1/(1+MSE).  A family's scalar "score" is accuracy
for classification and the normalized score for regression; the cross-family
mean of these drives best-checkpoint selection and ablation comparisons.

The analysis bundle mirrors the model's introspection artifacts: per-epoch
cosine-similarity matrices of mean node states over a probe set, a top-3
principal-component projection of the per-node weight vectors (computed via
eigendecomposition of the node-by-node covariance Gram matrix), and the mean
learned edge-gate matrix over the probe set, all as CSV plus a JSON manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wot.checkpoint import Checkpoint
from wot.config import (
    ABLATION_TAGS,
    CLASSIFICATION_FAMILIES,
    TrainConfig,
    apply_ablation,
)
from wot.encoder import Vocab, text_ids
from wot.model import ForwardCapture, WotModel
from wot.tasks import DatasetSplit, TaskSample

EVAL_BATCH = 64


def normalized_score(mse: float) -> float:
    """1/(1+MSE): maps regression error onto (0, 1], 1 at zero error."""
    if mse < 0:
        raise ValueError("mse must be non-negative")
    return 1.0 / (1.0 + mse)


def macro_f1(labels: np.ndarray, preds: np.ndarray) -> float:
    """Macro-averaged F1 over the two classes; empty classes score 0."""
    scores = []
    for cls in (0, 1):
        tp = int(((preds == cls) & (labels == cls)).sum())
        fp = int(((preds == cls) & (labels != cls)).sum())
        fn = int(((preds != cls) & (labels == cls)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class FamilyMetrics:
    family: str
    count: int
    score: float
    accuracy: float | None = None
    f1_macro: float | None = None
    mse: float | None = None
    mae: float | None = None
    mae_destandardized: float | None = None
    normalized: float | None = None

    def to_dict(self) -> dict:
        out = {"family": self.family, "count": self.count, "score": self.score}
        for key in ("accuracy", "f1_macro", "mse", "mae",
                    "mae_destandardized", "normalized"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


@dataclass
class Metrics:
    per_family: dict[str, FamilyMetrics]
    mean_score: float
    mean_accuracy: float | None = None
    mean_f1: float | None = None
    mean_mse: float | None = None
    mean_mae: float | None = None
    mean_normalized: float | None = None

    def to_dict(self) -> dict:
        out = {"per_family": {f: m.to_dict()
                              for f, m in sorted(self.per_family.items())},
               "mean_score": self.mean_score}
        for key in ("mean_accuracy", "mean_f1", "mean_mse", "mean_mae",
                    "mean_normalized"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[WotModel, Vocab]:
    vocab = Vocab(ckpt.vocab)
    model = WotModel(ckpt.config, len(vocab))
    model.load_arrays(ckpt.params)
    return model, vocab


def evaluate_model(model: WotModel, vocab: Vocab, samples: list[TaskSample],
                   standardization: dict) -> Metrics:
    """Deterministic metrics for a live model over a list of samples."""
    if not samples:
        raise ValueError("evaluate: empty split")
    by_family: dict[str, list[TaskSample]] = {}
    for s in samples:
        by_family.setdefault(s.family, []).append(s)

    per_family = {}
    for family, group in sorted(by_family.items()):
        ids = [text_ids(s.text, vocab) for s in group]
        targets = np.array([s.target for s in group], dtype=np.float64)
        preds = np.concatenate([
            model.predict_batch(ids[i:i + EVAL_BATCH], family)
            for i in range(0, len(ids), EVAL_BATCH)])
        if family in CLASSIFICATION_FAMILIES:
            labels = targets.astype(int)
            decisions = (preds >= 0.5).astype(int)
            acc = float((decisions == labels).mean())
            per_family[family] = FamilyMetrics(
                family=family, count=len(group), score=acc, accuracy=acc,
                f1_macro=macro_f1(labels, decisions))
        else:
            stats = standardization.get(family, {"mean": 0.0, "std": 1.0})
            z = (targets - stats["mean"]) / stats["std"]
            err = preds - z
            mse = float((err * err).mean())
            mae = float(np.abs(err).mean())
            per_family[family] = FamilyMetrics(
                family=family, count=len(group), score=normalized_score(mse),
                mse=mse, mae=mae, mae_destandardized=mae * stats["std"],
                normalized=normalized_score(mse))

    def _mean(vals):
        return float(np.mean(vals)) if vals else None

    cls = [m for m in per_family.values() if m.accuracy is not None]
    reg = [m for m in per_family.values() if m.mse is not None]
    return Metrics(
        per_family=per_family,
        mean_score=_mean([m.score for m in per_family.values()]),
        mean_accuracy=_mean([m.accuracy for m in cls]),
        mean_f1=_mean([m.f1_macro for m in cls]),
        mean_mse=_mean([m.mse for m in reg]),
        mean_mae=_mean([m.mae for m in reg]),
        mean_normalized=_mean([m.normalized for m in reg]),
    )


def evaluate(ckpt: Checkpoint, samples: list[TaskSample]) -> Metrics:
    """Rebuild the checkpointed model and evaluate it on ``samples``."""
    model, vocab = model_from_checkpoint(ckpt)
    return evaluate_model(model, vocab, samples, ckpt.standardization)


# ---------------------------------------------------------------------------
# ablation suite


def run_ablation_suite(data: dict[str, DatasetSplit], base_config: TrainConfig,
                       seeds: list[int], progress=None) -> dict:
    """Train and evaluate every ablation at identical data and seeds.

    Returns machine-readable rows plus a per-ablation summary with relative
    performance normalized to the full model.  Training failures annotate
    their cell instead of aborting the suite.
    """
    from wot.training import train

    if not seeds:
        raise ValueError("run_ablation_suite: need at least one seed")
    rows = []
    means: dict[str, list[float]] = {tag: [] for tag in ABLATION_TAGS}
    for tag in ABLATION_TAGS:
        for seed in seeds:
            cfg = apply_ablation(base_config, tag).replace(seed=seed)
            if progress is not None:
                progress(f"ablation {tag} seed {seed}")
            row = {"ablation": tag, "seed": seed}
            try:
                result = train(data, cfg)
                val = [s for fam in cfg.families if fam in data
                       for s in data[fam].val]
                metrics = evaluate(result.best, val)
                row["mean_score"] = metrics.mean_score
                row["metrics"] = metrics.to_dict()
                means[tag].append(metrics.mean_score)
            except Exception as exc:  # annotate, keep going
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)

    summary = {}
    full_mean = float(np.mean(means["full"])) if means["full"] else None
    for tag in ABLATION_TAGS:
        if not means[tag]:
            summary[tag] = {"mean_score": None, "relative": None}
            continue
        mean = float(np.mean(means[tag]))
        summary[tag] = {
            "mean_score": mean,
            "relative": (mean / full_mean) if full_mean else None,
        }
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# reasoning traces


@dataclass
class ReasoningTrace:
    """Per-inference record of attention, aggregation and refinement."""

    input_text: str
    config: dict
    rounds: list[dict]
    aggregation_weights: list[float]
    refinement_norms: list[float]
    output: dict
    node_states: list = field(default_factory=list)
    pathways: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "input": self.input_text,
            "config": self.config,
            "rounds": self.rounds,
            "aggregation_weights": self.aggregation_weights,
            "refinement_norms": self.refinement_norms,
            "output": self.output,
            "node_states": self.node_states,
            "pathways": self.pathways,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    def summary(self) -> str:
        """Human-readable step table: strongest edges per round, aggregation
        weights, refinement magnitudes, and the answer."""
        lines = [f"input: {self.input_text}"]
        for r, rec in enumerate(self.rounds, start=1):
            attn = np.array(rec["edge_attention"])
            flat = [(attn[i, j], i, j)
                    for i in range(attn.shape[0])
                    for j in range(attn.shape[1])]
            top = sorted(flat, key=lambda t: -t[0])[:3]
            edges = ", ".join(f"{j}->{i} ({w:.3f})" for w, i, j in top)
            lines.append(f"round {r}: strongest edges {edges}")
        weights = ", ".join(f"{w:.3f}" for w in self.aggregation_weights)
        lines.append(f"aggregation weights: [{weights}]")
        norms = ", ".join(f"{v:.3f}" for v in self.refinement_norms)
        lines.append(f"refinement step magnitudes: [{norms}]")
        out = self.output
        if "label" in out:
            answer = "Yes" if out["label"] else "No"
            lines.append(f"answer: {answer} (p={out['value']:.3f}, "
                         f"family {out['family']})")
        else:
            lines.append(f"answer: {out['value']:.4f} "
                         f"(family {out['family']})")
        return "\n".join(lines)


FAMILY_CUES = (
    ("sequence", ("next number", "sequence")),
    ("algebra", ("times as many",)),
    ("combinatorics", ("handshake", "shakes hands")),
    ("geometry", ("is every",)),
    ("syllogism", ("are all", "if all")),
)


def infer_family(text: str) -> str:
    low = text.lower()
    for family, cues in FAMILY_CUES:
        if any(cue in low for cue in cues):
            return family
    raise ValueError(
        f"cannot infer task family from question: {text!r}; pass it explicitly")


def trace(ckpt: Checkpoint, text: str, family: str | None = None) -> ReasoningTrace:
    """Full forward pass with instrumentation for one question."""
    model, vocab = model_from_checkpoint(ckpt)
    if family is None:
        family = infer_family(text)
    ids = text_ids(text, vocab)
    if not ids:
        raise ValueError(f"question produced no tokens: {text!r}")
    capture = ForwardCapture()
    out = model.forward([ids], family, capture=capture)
    value = float(out.data.reshape(-1)[0])
    if family in CLASSIFICATION_FAMILIES:
        output = {"family": family, "value": value,
                  "label": int(value >= 0.5)}
    else:
        stats = ckpt.standardization.get(family, {"mean": 0.0, "std": 1.0})
        output = {"family": family,
                  "value": value * stats["std"] + stats["mean"],
                  "standardized": value}
    return ReasoningTrace(
        input_text=text,
        config=ckpt.config.to_dict(),
        rounds=[{"edge_attention": a[0].tolist()}
                for a in capture.edge_attention],
        aggregation_weights=capture.agg_weights[0].tolist(),
        refinement_norms=[float(n[0]) for n in capture.refine_norms],
        output=output,
        node_states=[s[0].tolist() for s in capture.round_states],
        pathways=capture.pathways.to_arrays(),
    )


# ---------------------------------------------------------------------------
# analysis exports


def mean_node_states(model: WotModel, vocab: Vocab,
                     probe: list[TaskSample]) -> np.ndarray:
    """Mean final node states over the probe set, shape (N, h)."""
    ids = [text_ids(s.text, vocab) for s in probe]
    total = None
    for i in range(0, len(ids), EVAL_BATCH):
        states = model.final_node_states(ids[i:i + EVAL_BATCH])
        chunk = states.sum(axis=0)
        total = chunk if total is None else total + chunk
    return total / len(ids)


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.sqrt((vectors * vectors).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, 1e-30)
    unit = vectors / norms
    return unit @ unit.T


def node_weight_pca(ckpt: Checkpoint, components: int = 3):
    """Project per-node weight vectors onto their top principal components.

    Uses eigendecomposition of the node-by-node covariance Gram matrix,
    which yields the same projection as the feature-space covariance at a
    fraction of the size.  Returns (projection (N, c), explained variance
    ratios (c,) in non-increasing order).
    """
    cfg = ckpt.config
    prefixes = (["node_shared"] if cfg.tie_nodes
                else [f"node{i}" for i in range(cfg.n_nodes)])
    rows = []
    for p in prefixes:
        parts = [ckpt.params[f"{p}.{suffix}"].reshape(-1)
                 for suffix in ("W1", "b1", "ln_g", "ln_b", "W2", "b2")]
        rows.append(np.concatenate(parts))
    x = np.stack(rows)
    xc = x - x.mean(axis=0, keepdims=True)
    gram = xc @ xc.T / max(x.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    total = evals.sum()
    k = min(components, len(evals))
    scales = np.sqrt(np.maximum(evals[:k], 0.0))
    proj = np.zeros((x.shape[0], components))
    proj[:, :k] = evecs[:, :k] * scales[None, :]
    ratios = np.zeros(components)
    if total > 0:
        ratios[:k] = evals[:k] / total
    return proj, ratios


def export_analysis(checkpoints: list[Checkpoint], probe: list[TaskSample],
                    out_dir) -> dict:
    """Write the analysis bundle; returns the manifest dict.

    Per checkpoint: the N x N cosine-similarity matrix of mean node states
    over the probe set.  From the last checkpoint: the node-weight PCA
    projection and the mean edge-gate matrix over the probe set.
    """
    if not checkpoints:
        raise ValueError("export_analysis: need at least one checkpoint")
    if not probe:
        raise ValueError("export_analysis: empty probe set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = {"probe_count": len(probe), "epochs": [], "files": {},
                "seeds": sorted({c.config.seed for c in checkpoints})}

    def _save(name: str, matrix: np.ndarray) -> None:
        np.savetxt(out / name, matrix, fmt="%.12g", delimiter=",")
        manifest["files"][name] = list(matrix.shape)

    for idx, ckpt in enumerate(checkpoints):
        epoch = len(ckpt.history) if ckpt.history else idx
        manifest["epochs"].append(epoch)
        model, vocab = model_from_checkpoint(ckpt)
        sim = cosine_similarity_matrix(mean_node_states(model, vocab, probe))
        _save(f"node_similarity_epoch{epoch:03d}.csv", sim)

    last = checkpoints[-1]
    proj, ratios = node_weight_pca(last)
    _save("node_weight_pca.csv", proj)
    manifest["pca_explained_variance"] = ratios.tolist()

    model, vocab = model_from_checkpoint(last)
    gate_sum = None
    ids = [text_ids(s.text, vocab) for s in probe]
    for i in range(0, len(ids), EVAL_BATCH):
        capture = ForwardCapture()
        model.forward(ids[i:i + EVAL_BATCH], "syllogism", capture=capture)
        block = capture.pathways.p_edge.data * len(ids[i:i + EVAL_BATCH])
        gate_sum = block if gate_sum is None else gate_sum + block
    _save("edge_gates_mean.csv", gate_sum / len(ids))

    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
