import numpy as np
import pytest

from tagqa.config import ModelConfig
from tagqa.scene import BBox, ObjectRegion, OcrToken, QAPair, Scene
from tagqa.synth import synth_generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_splits():
    return synth_generate(seed=7, n_scenes=60)


@pytest.fixture
def tiny_cfg():
    """Small enough for sub-second training steps."""
    return ModelConfig(d=16, layers=1, heads=2, k_cap=24, m_cap=4, n_cap=10, t_cap=8,
                       max_iters=30, batch_size=8, lr_decay_steps=(20,), seed=0)


def make_scene(image_id="img", texts=("alpha", "beta", "gamma"), areas=None, qa=True):
    """Three-token scene; ``areas`` sets each token's box as a square."""
    appearance = tuple(0.0 for _ in range(32))
    objects = (ObjectRegion("sign", BBox(0, 0, 400, 400), appearance),)
    toks = []
    areas = areas or [100 * (i + 1) for i in range(len(texts))]
    x = 0.0
    for text, area in zip(texts, areas):
        side = float(np.sqrt(area))
        toks.append(OcrToken(text, BBox(x, 10.0, x + side, 10.0 + side), appearance))
        x += side + 1
    pairs = (QAPair(("what", "is", "written", "on", "the", "sign"), (texts[0],), "original", (0,)),) if qa else ()
    return Scene(image_id, 640.0, 480.0, objects, tuple(toks), pairs)


@pytest.fixture
def scene():
    return make_scene()
