"""Weight-guided graph reasoning network.

A small trainable architecture that analyzes its own weight matrices to gate
an N-node message-passing graph, plus everything needed to exercise it at
desk scale: synthetic task generators with exact oracles, a deterministic
trainer, binary checkpoints, an ablation harness, reasoning traces and
analysis exports, a CLI, and a scikit-learn style estimator facade.
"""

from wot.config import FAMILIES, TrainConfig, apply_ablation

__version__ = "0.1.0"

__all__ = [
    "FAMILIES",
    "TrainConfig",
    "WotModel",
    "WotReasoner",
    "apply_ablation",
    "__version__",
]


def __getattr__(name):
    # late imports keep `import wot` light and avoid import cycles
    if name == "WotModel":
        from wot.model import WotModel
        return WotModel
    if name == "WotReasoner":
        from wot.estimator import WotReasoner
        return WotReasoner
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
