"""Linear two-input example where every ingredient has a closed form.

``Q_HF(x, y) = x + y`` and ``Q_LF(x, y) = x/2 + 2y`` on ``U([-1, 1]^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..distributions import Trapezoidal1D, Triangular1D, UniformBox
from ..estimators import ModelSpec
from ..flows import AnalyticErfBox

SQRT3 = math.sqrt(3.0)
RHO = 5.0 / math.sqrt(34.0)
# reference correlations of the modified LF models (large-sample values)
RHO_AS = 0.98
RHO_AE = 0.99
W_COST = 0.01


def q_hf(X):
    X = np.asarray(X, float)
    return X[:, 0] + X[:, 1]


def q_lf(X):
    X = np.asarray(X, float)
    return 0.5 * X[:, 0] + 2.0 * X[:, 1]


def grad_hf(X):
    return np.ones_like(np.asarray(X, float))


def grad_lf(X):
    G = np.empty_like(np.asarray(X, float))
    G[:, 0], G[:, 1] = 0.5, 2.0
    return G


@dataclass
class TheoreticalOracles:
    law: UniformBox
    T: AnalyticErfBox
    C_hf: np.ndarray
    C_lf: np.ndarray
    W_hf: np.ndarray
    W_lf: np.ndarray
    latent_hf: Triangular1D
    latent_lf: Trapezoidal1D
    S_hf: AnalyticErfBox
    S_lf: AnalyticErfBox
    rho: float = RHO
    rho_as: float = RHO_AS
    rho_ae: float = RHO_AE

    @staticmethod
    def encoder_hf(X):
        return q_hf(X)

    @staticmethod
    def encoder_lf(X):
        return q_lf(X)

    @staticmethod
    def decoder_hf(z):
        z = np.asarray(z, float).reshape(-1)
        return np.column_stack([z / 2.0, z / 2.0])

    @staticmethod
    def decoder_lf(z):
        z = np.asarray(z, float).reshape(-1)
        return np.column_stack([0.4 * z, 0.4 * z])

    @staticmethod
    def u_hf(z):
        """``2 F_Tri(z) - 1``."""
        z = np.asarray(z, float)
        return np.where(z <= 0, 0.25 * (2.0 + z) ** 2 - 1.0, 1.0 - 0.25 * (2.0 - z) ** 2)

    @staticmethod
    def u_lf(z):
        """``2 F_Trap(z) - 1``."""
        z = np.asarray(z, float)
        return np.where(z <= -1.5, 0.25 * (2.5 + z) ** 2 - 1.0,
                        np.where(z <= 1.5, 0.5 * z, 1.0 - 0.25 * (2.5 - z) ** 2))

    def q_lf_as(self, X):
        """``Q_LF(T^{-1}(W_lf W_hf^T T(X)))``."""
        x = self.T.transform(np.asarray(X, float))
        z = x @ self.W_hf
        return q_lf(self.T.inverse(z @ self.W_lf.T))

    def q_lf_ae(self, X):
        """``Q_LF(D_LF(S_LF^{-1}(S_HF(E_HF(X)))))``."""
        z = self.S_hf.transform(self.encoder_hf(X)[:, None])
        return q_lf(self.decoder_lf(self.S_lf.inverse(z)[:, 0]))


def theoretical_oracles() -> TheoreticalOracles:
    law = UniformBox((-1.0, -1.0), (1.0, 1.0))
    C_hf = np.array([[2.0 / (math.pi * SQRT3), 1.0 / math.pi], [1.0 / math.pi, 2.0 / (math.pi * SQRT3)]])
    C_lf = np.array([[1.0 / (2.0 * math.pi * SQRT3), 1.0 / math.pi], [1.0 / math.pi, 8.0 / (math.pi * SQRT3)]])
    s273 = math.sqrt(273.0)
    W_hf = np.array([[1.0], [1.0]]) / math.sqrt(2.0)
    W_lf = np.array([[2.0 * math.sqrt(6.0)], [(15.0 + s273) / math.sqrt(2.0)]]) / math.sqrt(273.0 + 15.0 * s273)
    tri = Triangular1D(-2.0, 0.0, 2.0)
    trap = Trapezoidal1D(-2.5, -1.5, 1.5, 2.5)
    return TheoreticalOracles(law, AnalyticErfBox.for_law(law), C_hf, C_lf, W_hf, W_lf, tri, trap,
                              AnalyticErfBox([tri]), AnalyticErfBox([trap]))


def theoretical_models(w: float = W_COST) -> tuple[ModelSpec, ModelSpec]:
    law = UniformBox((-1.0, -1.0), (1.0, 1.0))
    hf = ModelSpec(q_hf, 2, law, 1.0, grad_hf, "theoretical_hf",
                   latent_law=Triangular1D(-2.0, 0.0, 2.0))
    lf = ModelSpec(q_lf, 2, law, w, grad_lf, "theoretical_lf",
                   latent_law=Trapezoidal1D(-2.5, -1.5, 1.5, 2.5))
    return hf, lf
