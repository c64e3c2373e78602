"""Input validation helpers for the estimator API.

These normalize the flexible inputs scikit-learn users pass (sample
objects, dicts, or plain question strings) into the package's TaskSample
form, and give fit/predict methods the usual is-fitted guard.
"""

from __future__ import annotations

from typing import Sequence

from wot.config import CLASSIFICATION_FAMILIES, FAMILIES
from wot.tasks import TaskSample


class NotFittedError(RuntimeError):
    """predict/score called before fit."""


def check_is_fitted(estimator, attributes: Sequence[str]) -> None:
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first "
            f"(missing {missing})")


def as_sample(item, target=None) -> TaskSample:
    """Coerce one input item into a TaskSample.

    Accepts TaskSample (returned as-is, target optionally overridden),
    dicts with family/text plus label or target, or a raw question string
    (family inferred from its wording).
    """
    if isinstance(item, TaskSample):
        if target is None:
            return item
        return TaskSample(item.family, item.text, float(target), item.meta,
                          item.seed, item.index)
    if isinstance(item, dict):
        family = item.get("family")
        text = item.get("text")
        if family not in FAMILIES:
            raise ValueError(f"unknown task family: {family!r}")
        if not isinstance(text, str) or not text:
            raise ValueError(f"sample dict needs a non-empty 'text': {item!r}")
        if target is None:
            if "label" in item:
                target = item["label"]
            elif "target" in item:
                target = item["target"]
            else:
                raise ValueError(
                    f"sample dict needs 'label' or 'target': {item!r}")
        return TaskSample(family, text, float(target),
                          dict(item.get("meta", {})))
    if isinstance(item, str):
        from wot.evaluation import infer_family
        if not item:
            raise ValueError("empty question string")
        if target is None:
            raise ValueError(
                f"string inputs need an explicit target: {item!r}")
        return TaskSample(infer_family(item), item, float(target))
    raise TypeError(f"cannot interpret sample of type {type(item).__name__}")


def check_samples(X, y=None) -> list[TaskSample]:
    """Validate and coerce a fit/score input pair into TaskSamples."""
    items = list(X)
    if not items:
        raise ValueError("X is empty")
    if y is not None:
        targets = list(y)
        if len(targets) != len(items):
            raise ValueError(
                f"X and y length mismatch: {len(items)} vs {len(targets)}")
    else:
        targets = [None] * len(items)
    samples = [as_sample(item, target)
               for item, target in zip(items, targets)]
    for s in samples:
        if s.family in CLASSIFICATION_FAMILIES and s.target not in (0.0, 1.0):
            raise ValueError(
                f"classification family {s.family!r} needs 0/1 targets, "
                f"got {s.target}")
    return samples


def check_questions(X) -> list[TaskSample]:
    """Coerce predict inputs; targets are not required here."""
    from wot.evaluation import infer_family

    out = []
    for item in X:
        if isinstance(item, TaskSample):
            out.append(item)
        elif isinstance(item, dict):
            family = item.get("family") or infer_family(item.get("text", ""))
            out.append(TaskSample(family, item["text"], 0.0))
        elif isinstance(item, str):
            out.append(TaskSample(infer_family(item), item, 0.0))
        else:
            raise TypeError(
                f"cannot interpret question of type {type(item).__name__}")
    if not out:
        raise ValueError("X is empty")
    return out
