import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scprior import CorpusRecord, LabelMask, LatentImage


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def tiny_record(rng, record_id, h=4, w=4, c=2, factor=2, num_classes=3, ignore_id=255):
    """One small random corpus record for estimation tests."""
    latent = rng.normal(size=(h, w, c)).astype(np.float32)
    ids = rng.integers(0, num_classes, size=(h * factor, w * factor)).astype(np.int32)
    # sprinkle a few unlabeled pixels
    drop = rng.random(ids.shape) < 0.1
    ids[drop] = ignore_id
    return CorpusRecord(
        latent=LatentImage(latent),
        mask=LabelMask(ids, ignore_id),
        id=record_id,
    )


@pytest.fixture
def tiny_corpus(rng):
    return [tiny_record(rng, f"rec-{i:03d}") for i in range(20)]
