"""scikit-learn style estimator facade over the trainer and model.

WotReasoner follows the estimator contract: constructor arguments are stored
verbatim (so get_params/set_params/clone work), fit returns self, learned
state lives in trailing-underscore attributes, and predict/score accept the
same sample forms as fit.  This makes the reasoner usable with sklearn
tooling (cloning, grid search over the architecture knobs) while the heavy
lifting stays in wot.training.
"""

from __future__ import annotations

import random

import numpy as np
from sklearn.base import BaseEstimator

from wot.config import CLASSIFICATION_FAMILIES, TrainConfig
from wot.encoder import text_ids
from wot.tasks import DatasetSplit, TaskSample
from wot.validation import check_is_fitted, check_questions, check_samples


class WotReasoner(BaseEstimator):
    """Trainable multi-task reasoner with a fit/predict interface.

    Parameters mirror TrainConfig; ``validation_fraction`` carves a
    validation slice out of the fit data for best-checkpoint selection.
    """

    def __init__(self, n_nodes=8, hidden=128, rounds=4, refine_steps=4,
                 transformer=True, epochs=20, batch_size=16, lr_peak=3e-5,
                 weight_decay=1e-4, warmup_fraction=0.05, clip_norm=1.0,
                 dropout=0.1, ablation="full", analyzer_mode="mlp",
                 vocab_cap=2048, validation_fraction=0.1, seed=0):
        self.n_nodes = n_nodes
        self.hidden = hidden
        self.rounds = rounds
        self.refine_steps = refine_steps
        self.transformer = transformer
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_peak = lr_peak
        self.weight_decay = weight_decay
        self.warmup_fraction = warmup_fraction
        self.clip_norm = clip_norm
        self.dropout = dropout
        self.ablation = ablation
        self.analyzer_mode = analyzer_mode
        self.vocab_cap = vocab_cap
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- config -------------------------------------------------------------

    def _train_config(self, families: list[str]) -> TrainConfig:
        from wot.config import apply_ablation

        cfg = TrainConfig(
            n_nodes=self.n_nodes, hidden=self.hidden, rounds=self.rounds,
            refine_steps=self.refine_steps, transformer=self.transformer,
            epochs=self.epochs, batch_size=self.batch_size,
            lr_peak=self.lr_peak, weight_decay=self.weight_decay,
            warmup_fraction=self.warmup_fraction, clip_norm=self.clip_norm,
            dropout=self.dropout, analyzer_mode=self.analyzer_mode,
            vocab_cap=self.vocab_cap, seed=self.seed, families=families,
        )
        return apply_ablation(cfg, self.ablation)

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y=None):
        """Train on samples; X holds TaskSamples, dicts, or (with y) strings."""
        from wot.training import train

        samples = check_samples(X, y)
        by_family: dict[str, list[TaskSample]] = {}
        for s in samples:
            by_family.setdefault(s.family, []).append(s)

        rng = random.Random(f"{self.seed}:estimator-split")
        data = {}
        for family, group in sorted(by_family.items()):
            group = list(group)
            rng.shuffle(group)
            n_val = int(round(self.validation_fraction * len(group)))
            n_val = min(n_val, len(group) - 1)
            data[family] = DatasetSplit(train=group[n_val:],
                                        val=group[:n_val], test=[])

        cfg = self._train_config(sorted(by_family))
        result = train(data, cfg)
        self.checkpoint_ = result.best
        self.final_checkpoint_ = result.final
        self.history_ = result.history
        self.standardization_ = result.best.standardization

        from wot.evaluation import model_from_checkpoint
        self.model_, self.vocab_ = model_from_checkpoint(result.best)
        self.n_params_ = self.model_.n_params
        return self

    def predict(self, X) -> np.ndarray:
        """Answers per question: 0/1 labels for classification families,
        de-standardized values for regression families."""
        check_is_fitted(self, ["model_", "vocab_"])
        questions = check_questions(X)
        out = np.zeros(len(questions))
        for i, q in enumerate(questions):
            ids = text_ids(q.text, self.vocab_)
            if not ids:
                raise ValueError(f"question produced no tokens: {q.text!r}")
            value = float(self.model_.predict_batch([ids], q.family)[0])
            if q.family in CLASSIFICATION_FAMILIES:
                out[i] = float(value >= 0.5)
            else:
                stats = self.standardization_.get(
                    q.family, {"mean": 0.0, "std": 1.0})
                out[i] = value * stats["std"] + stats["mean"]
        return out

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities [[P(no), P(yes)], ...]; classification
        families only."""
        check_is_fitted(self, ["model_", "vocab_"])
        questions = check_questions(X)
        probs = np.zeros((len(questions), 2))
        for i, q in enumerate(questions):
            if q.family not in CLASSIFICATION_FAMILIES:
                raise ValueError(
                    f"predict_proba is undefined for regression family "
                    f"{q.family!r}")
            ids = text_ids(q.text, self.vocab_)
            p = float(self.model_.predict_batch([ids], q.family)[0])
            probs[i] = (1.0 - p, p)
        return probs

    def score(self, X, y=None) -> float:
        """Mean per-family score: accuracy for classification, 1/(1+MSE)
        for regression families."""
        check_is_fitted(self, ["checkpoint_"])
        from wot.evaluation import evaluate

        samples = check_samples(X, y)
        return evaluate(self.checkpoint_, samples).mean_score
