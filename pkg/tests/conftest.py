import os

# single-threaded BLAS: runtime budgets are stated for one CPU core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from dataclasses import dataclass

import numpy as np
import pytest

from emocog.bridgenet import ModelDims

SMALL_DIMS = ModelDims(n_queries=3, d_q=6, d_k=5, d_v=4, d_e=9, d_c=6, d_video=5, d_audio=4, d_text=3)


@dataclass
class Sample:
    video: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    emotion: int = 0
    cognition: int = 0
    caption: str = ""


def make_samples(n, dims=SMALL_DIMS, seed=0, max_len=6):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        feats = [rng.normal(size=(int(rng.integers(1, max_len + 1)), dims.feature_dim(m)))
                 for m in ("video", "audio", "text")]
        out.append(Sample(*feats, emotion=int(rng.integers(-1, 2)), cognition=int(rng.integers(0, 16))))
    return out


@pytest.fixture
def samples():
    return make_samples(5)
