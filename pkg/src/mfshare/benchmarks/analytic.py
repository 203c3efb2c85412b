"""Pair of smooth two-input functions with exact mean, gradients and input flow."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..distributions import UniformBox
from ..estimators import ModelSpec
from ..flows import AnalyticErfBox

W_COST = 0.01
EXACT_MEAN = (25.0 / 21.0) * (math.exp(0.7) - math.exp(-0.7)) * (math.exp(0.3) - math.exp(-0.3))


def q_hf(X):
    X = np.asarray(X, float)
    return np.exp(0.7 * X[:, 0] + 0.3 * X[:, 1]) + 0.15 * np.sin(2.0 * np.pi * X[:, 0])


def q_lf(X):
    X = np.asarray(X, float)
    return np.exp(0.01 * X[:, 0] + 0.99 * X[:, 1]) + 0.15 * np.sin(3.0 * np.pi * X[:, 1])


def grad_hf(X):
    X = np.asarray(X, float)
    e = np.exp(0.7 * X[:, 0] + 0.3 * X[:, 1])
    return np.column_stack([0.7 * e + 0.3 * np.pi * np.cos(2.0 * np.pi * X[:, 0]), 0.3 * e])


def grad_lf(X):
    X = np.asarray(X, float)
    e = np.exp(0.01 * X[:, 0] + 0.99 * X[:, 1])
    return np.column_stack([0.01 * e, 0.99 * e + 0.45 * np.pi * np.cos(3.0 * np.pi * X[:, 1])])


@dataclass
class AnalyticPair:
    hf: ModelSpec
    lf: ModelSpec
    exact_mean: float
    flow: AnalyticErfBox
    w: float


def analytic_pair(w: float = W_COST) -> AnalyticPair:
    law = UniformBox((-1.0, -1.0), (1.0, 1.0))
    hf = ModelSpec(q_hf, 2, law, 1.0, grad_hf, "analytic_hf")
    lf = ModelSpec(q_lf, 2, law, w, grad_lf, "analytic_lf")
    return AnalyticPair(hf, lf, EXACT_MEAN, AnalyticErfBox.for_law(law), w)
