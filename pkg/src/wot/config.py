"""Run configuration and ablation transformations.

TrainConfig is the flat record the CLI reads from JSON; its field names are
the config-file schema.  Ablation tags map onto documented transformations
of that record (``apply_ablation``), so every ablation is an ordinary config.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

FAMILIES = ("syllogism", "sequence", "algebra", "combinatorics", "geometry")
CLASSIFICATION_FAMILIES = frozenset({"syllogism", "geometry"})
REGRESSION_FAMILIES = frozenset({"sequence", "algebra", "combinatorics"})

ABLATION_TAGS = (
    "full",
    "no_message_passing",
    "no_weight_direction",
    "single_refinement",
    "no_node_specialization",
    "linear_chain_only",
)


@dataclass
class TrainConfig:
    """Everything a training run depends on, JSON-serializable and flat."""

    # optimization
    lr_peak: float = 3e-5
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.05
    clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    ablation: str = "full"

    # model dimensions
    n_nodes: int = 8
    hidden: int = 128
    rounds: int = 4
    refine_steps: int = 4
    transformer: bool = True
    transformer_layers: int = 4
    transformer_heads: int = 4
    dropout: float = 0.1

    # architecture variants (defaults follow the main design; see module docs)
    edge_softmax: bool = False
    per_round_msg: bool = False
    analyzer_mode: str = "mlp"  # "mlp" | "stats"
    analyzer_hidden: int = 64
    identity_gates: bool = False
    tie_nodes: bool = False
    chain_mask: bool = False

    # data
    families: list[str] = field(default_factory=lambda: list(FAMILIES))
    samples_per_family: int = 2000
    data_seed: int = 0
    vocab_cap: int = 2048

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1): {self.warmup_fraction}")
        for name in ("lr_peak", "clip_norm", "batch_size", "n_nodes", "hidden",
                     "refine_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("weight_decay", "epochs", "rounds", "dropout"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ablation not in ABLATION_TAGS:
            raise ValueError(f"unknown ablation tag: {self.ablation!r}")
        if self.analyzer_mode not in ("mlp", "stats"):
            raise ValueError(f"unknown analyzer_mode: {self.analyzer_mode!r}")
        if self.hidden % self.transformer_heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) not divisible by transformer_heads "
                f"({self.transformer_heads})")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown task families: {unknown}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def apply_ablation(config: TrainConfig, ablation: str) -> TrainConfig:
    """Return the config transformed for one ablation tag.

    full                   -> unchanged
    no_message_passing     -> rounds = 0
    no_weight_direction    -> gate triple forced to all-ones
    single_refinement      -> refine_steps = 1
    no_node_specialization -> all node perceptrons share one parameter set
    linear_chain_only      -> edge attention masked so node i receives only
                              from node i-1
    """
    if ablation not in ABLATION_TAGS:
        raise ValueError(f"unknown ablation tag: {ablation!r}")
    cfg = config.replace(ablation=ablation)
    if ablation == "no_message_passing":
        cfg = cfg.replace(rounds=0)
    elif ablation == "no_weight_direction":
        cfg = cfg.replace(identity_gates=True)
    elif ablation == "single_refinement":
        cfg = cfg.replace(refine_steps=1)
    elif ablation == "no_node_specialization":
        cfg = cfg.replace(tie_nodes=True)
    elif ablation == "linear_chain_only":
        cfg = cfg.replace(chain_mask=True)
    return cfg
