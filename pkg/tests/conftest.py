import numpy as np
import pytest

from wot.config import TrainConfig
from wot.model import WotModel

TINY = dict(n_nodes=4, hidden=16, rounds=2, refine_steps=2,
            transformer_layers=2, transformer_heads=2, analyzer_hidden=8,
            dropout=0.0, batch_size=4, epochs=2, samples_per_family=60,
            vocab_cap=256)


def tiny_config(**overrides) -> TrainConfig:
    merged = {**TINY, **overrides}
    return TrainConfig(**merged)


def randomize_params(model: WotModel, rng: np.random.Generator,
                     scale: float = 0.3) -> None:
    """Perturb every parameter (including zero-initialized residual outputs)
    so equivalence tests exercise a non-degenerate network."""
    for name in model.manifest():
        t = model.params[name]
        t.data = t.data + rng.uniform(-scale, scale, size=t.data.shape)
    model.invalidate_pathways()


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    return WotModel(tiny_cfg, vocab_size=40, rng=np.random.default_rng(0))
