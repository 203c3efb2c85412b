"""Model factories loaded through the runner's ``external`` benchmark hook."""

from __future__ import annotations

import numpy as np

from mfshare.distributions import UniformBox
from mfshare.estimators import ModelSpec

BOX = UniformBox((-1.0, -1.0), (1.0, 1.0))


def constant_pair():
    hf = ModelSpec(lambda X: np.full(X.shape[0], 3.0), 2, BOX, 1.0, label="const_hf")
    lf = ModelSpec(lambda X: X[:, 0], 2, BOX, 0.1, label="const_lf")
    return hf, lf


def broken_pair():
    hf = ModelSpec(lambda X: np.full(X.shape[0], np.nan), 2, BOX, 1.0, label="nan_hf")
    lf = ModelSpec(lambda X: np.full(X.shape[0], np.nan), 2, BOX, 0.1, label="nan_lf")
    return hf, lf
