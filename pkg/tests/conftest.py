import os

# single-threaded BLAS keeps timings stable and results bitwise reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from conformer.numcore import get_tape  # noqa: E402


@pytest.fixture(autouse=True)
def _fresh_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
