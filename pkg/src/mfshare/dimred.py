"""Dimension reduction: active subspaces and supervised autoencoders.

Both techniques produce a map from the (flow-normalized) input space to a
small latent space. Active subspaces use the leading eigenvectors of the
gradient second-moment matrix ``C = E[grad Q grad Q^T]``; autoencoders are
trained so that the model value, not the input, is reconstructed.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .distributions import SampleBatch
from .errors import DataError, ParameterError, ShapeError, SymmetryError, TrainingError
from .nnet import (
    DenseNet,
    SearchSpace,
    TrainConfig,
    adam_minimize,
    hidden_sizes,
    random_search,
    regression_loss,
    split_indices,
)

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE_ALIGN = 6


def _values(batch) -> np.ndarray:
    X = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, float)
    return X[:, None] if X.ndim == 1 else X


# --------------------------------------------------------------------------- gradients


class GradientSource:
    """Callable returning gradients of a scalar model, shape ``(n, d)``."""

    kind = "gradient"

    def __call__(self, X) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict[str, Any]:
        return {"type": self.kind}


class AnalyticGradient(GradientSource):
    kind = "analytic"

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, X):
        return np.asarray(self.fn(_values(X)), float)


class SurrogateGradient(GradientSource):
    kind = "surrogate"

    def __init__(self, net: DenseNet):
        if net.d_out != 1:
            raise ShapeError("surrogate gradient needs a scalar-output network")
        self.net = net

    def __call__(self, X):
        return self.net.grad_input(_values(X))


class FiniteDifferenceGradient(GradientSource):
    """Central differences with step ``h * max(1, |x_j|)``."""

    kind = "finite_difference"

    def __init__(self, model: Callable[[np.ndarray], np.ndarray], h: float = 1e-4):
        if not h > 0:
            raise ParameterError("finite-difference step must be positive")
        self.model = model
        self.h = float(h)

    def __call__(self, X):
        X = _values(X)
        G = np.empty_like(X)
        for j in range(X.shape[1]):
            step = self.h * np.maximum(1.0, np.abs(X[:, j]))
            Xp, Xm = X.copy(), X.copy()
            Xp[:, j] += step
            Xm[:, j] -= step
            fp = np.asarray(self.model(Xp), float).reshape(-1)
            fm = np.asarray(self.model(Xm), float).reshape(-1)
            G[:, j] = (fp - fm) / (2.0 * step)
        return G

    def describe(self):
        return {"type": self.kind, "h": self.h}


class PushforwardGradient(GradientSource):
    """Gradient of ``Q o T^{-1}`` at ``T(xi)``, evaluated from original-space points ``xi``.

    With ``x = T(xi)`` the chain rule gives ``J_T(xi)^T grad_x = grad_xi Q(xi)``,
    so averaging over ``xi`` drawn from the input law estimates the C matrix
    of the flow-normalized model.
    """

    kind = "pushforward"

    def __init__(self, base: GradientSource, flow):
        self.base, self.flow = base, flow

    def __call__(self, X):
        X = _values(X)
        G = self.base(X)
        if self.flow.elementwise:
            return G / self.flow.diag_jacobian(X)
        J = self.flow.jacobian(X)
        return np.linalg.solve(np.transpose(J, (0, 2, 1)), G[:, :, None])[:, :, 0]

    def describe(self):
        return {"type": self.kind, "base": self.base.describe(), "flow": self.flow.kind}


def estimate_c_matrix(grads: GradientSource, batch) -> np.ndarray:
    """Monte Carlo estimate ``(1/N) sum_n grad Q(xi_n) grad Q(xi_n)^T``."""
    X = _values(batch)
    if X.shape[0] == 0:
        raise DataError("estimate_c_matrix: empty batch")
    G = np.asarray(grads(X), float)
    if G.shape != X.shape:
        raise ShapeError(f"gradient source returned shape {G.shape}, expected {X.shape}")
    bad = np.flatnonzero(~np.all(np.isfinite(G), axis=1))
    if bad.size:
        raise DataError(f"non-finite gradient at sample index {int(bad[0])}")
    C = G.T @ G / X.shape[0]
    return 0.5 * (C + C.T)


# --------------------------------------------------------------------------- eigenproblem


def eigendecompose_sym(M, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver; eigenvalues descending, eigenvectors as columns."""
    A = np.array(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("eigendecompose_sym needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * scale:
        raise SymmetryError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p].copy(), A[q].copy()
                A[p], A[q] = c * rp - s * rq, s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], V[:, order]


def _fix_signs(W: np.ndarray) -> np.ndarray:
    W = W.copy()
    for j in range(W.shape[1]):
        k = int(np.argmax(np.abs(W[:, j])))
        if W[k, j] < 0:
            W[:, j] = -W[:, j]
    return W


@dataclass
class ActiveSubspace:
    W: np.ndarray
    eigenvalues: np.ndarray
    r: int
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def project(self, X) -> np.ndarray:
        return _values(X) @ self.W

    def lift(self, Z) -> np.ndarray:
        Z = np.asarray(Z, float)
        return (Z[:, None] if Z.ndim == 1 else Z) @ self.W.T

    def flip(self, j: int) -> "ActiveSubspace":
        W = self.W.copy()
        W[:, j] = -W[:, j]
        return ActiveSubspace(W, self.eigenvalues, self.r, dict(self.provenance))

    def to_dict(self):
        return {"W": self.W.tolist(), "eigenvalues": self.eigenvalues.tolist(), "r": self.r,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["W"], float), np.asarray(d["eigenvalues"], float), int(d["r"]),
                   dict(d.get("provenance", {})))


def active_subspace(M, r: int, provenance: dict[str, Any] | None = None) -> ActiveSubspace:
    """Leading ``r`` eigenvectors of ``M``, each with its largest-magnitude entry positive."""
    M = np.asarray(M, float)
    d = M.shape[0]
    if not 1 <= int(r) <= d:
        raise ParameterError(f"reduced dimension r={r} outside [1, {d}]")
    evals, vecs = eigendecompose_sym(M)
    r = int(r)
    if r < d and np.isclose(evals[r - 1], evals[r], rtol=1e-10, atol=1e-14):
        log.warning("eigenvalue tie at r=%d; keeping solver order", r)
    W = _fix_signs(vecs[:, :r])
    evals = np.maximum(evals, 0.0)
    return ActiveSubspace(W, evals, r, dict(provenance or {}))


# --------------------------------------------------------------------------- autoencoders


def _scalar_model(surrogate):
    """Return ``(value, value_and_grad)`` closures for a DenseNet or a model with ``gradient``."""
    if isinstance(surrogate, DenseNet):
        if surrogate.d_out != 1:
            raise ShapeError("autoencoder surrogate must have scalar output")

        def value(X):
            return surrogate.forward(X)[:, 0]

        def value_and_grad(X):
            y, cache = surrogate.forward_cache(X)
            _, gx = surrogate.backward(cache, np.ones((X.shape[0], 1)), need_params=False)
            return y[:, 0], gx

        return value, value_and_grad
    grad = getattr(surrogate, "gradient", None)
    evaluate = getattr(surrogate, "evaluate", surrogate)
    if grad is None:
        raise ParameterError("autoencoder training needs a differentiable model")

    def value(X):
        return np.asarray(evaluate(X), float).reshape(-1)

    def value_and_grad(X):
        return value(X), np.asarray(grad(X), float)

    return value, value_and_grad


@dataclass
class AutoencoderPair:
    encoder: Any
    decoder: DenseNet | None
    r: int
    report: dict[str, Any] = field(default_factory=dict)
    model_as_encoder: bool = False

    def encode(self, X) -> np.ndarray:
        X = _values(X)
        if self.model_as_encoder:
            value, _ = _scalar_model(self.encoder)
            return value(X)[:, None]
        return self.encoder.forward(X)

    def decode(self, Z) -> np.ndarray:
        if self.model_as_encoder:
            raise ParameterError("model-as-encoder pairs have no explicit decoder")
        Z = np.asarray(Z, float)
        return self.decoder.forward(Z[:, None] if Z.ndim == 1 else Z)

    def to_dict(self):
        enc = self.encoder.to_dict() if isinstance(self.encoder, DenseNet) else {"type": "model"}
        return {"r": self.r, "model_as_encoder": self.model_as_encoder, "encoder": enc,
                "decoder": None if self.decoder is None else self.decoder.to_dict(),
                "report": self.report}

    @classmethod
    def from_dict(cls, d):
        enc = d["encoder"]
        encoder = DenseNet.from_dict(enc) if "sizes" in enc else None
        decoder = None if d["decoder"] is None else DenseNet.from_dict(d["decoder"])
        return cls(encoder, decoder, int(d["r"]), dict(d.get("report", {})), bool(d["model_as_encoder"]))


def _ae_nets(d: int, r: int, hidden, seed: int, X: np.ndarray):
    enc = DenseNet.create([d, *hidden, r], "tanh", "identity", seed)
    dec = DenseNet.create([r, *reversed(hidden), d], "tanh", "tanh", seed + 1)
    enc.set_normalization(X)
    dec.out_center, dec.out_half = enc.in_center.copy(), enc.in_half.copy()
    return enc, dec


def _train_ae(enc: DenseNet, dec: DenseNet, X, targets, value_and_grad, cfg: TrainConfig):
    tr, va = split_indices(X.shape[0], cfg.validation_fraction, cfg.seed)
    theta = np.concatenate([enc.theta, dec.theta])
    ne = enc.n_params
    enc._bind(theta[:ne])
    dec._bind(theta[ne:])
    Xt, Yt = X[tr], targets[tr]

    def loss_and_grad():
        Z, ce = enc.forward_cache(Xt)
        Xd, cd = dec.forward_cache(Z)
        q, gq = value_and_grad(Xd)
        loss, g = regression_loss(q, Yt, cfg.loss)
        gd, gz = dec.backward(cd, g[:, None] * gq)
        ge, _ = enc.backward(ce, gz)
        return loss, np.concatenate([ge, gd])

    history = adam_minimize(theta, loss_and_grad, int(cfg.epochs), cfg.lr, cfg.scheduler)

    def loss_on(idx):
        q, _ = value_and_grad(dec.forward(enc.forward(X[idx])))
        return regression_loss(q, targets[idx], cfg.loss)[0]

    train_loss = loss_on(tr)
    val_loss = loss_on(va) if va.size else train_loss
    return history, float(train_loss), float(val_loss)


def train_autoencoder(surrogate, batch, r: int, cfg: TrainConfig, space: SearchSpace | None = None,
                      hidden=(8, 8)) -> AutoencoderPair:
    """Supervised autoencoder minimizing ``mean |Q(xi) - Q(D(E(xi)))|`` through ``surrogate``.

    With a search space, hidden sizes, learning rate and scheduler are chosen by
    random search on the validation loss; otherwise ``hidden`` and ``cfg`` are used.
    """
    X = _values(batch)
    if X.shape[0] == 0:
        raise DataError("train_autoencoder: empty batch")
    d = X.shape[1]
    if not 1 <= int(r) <= d:
        raise ParameterError(f"latent dimension r={r} outside [1, {d}]")
    value, value_and_grad = _scalar_model(surrogate)
    targets = value(X)

    def run(hid, lr, scheduler, seed):
        enc, dec = _ae_nets(d, int(r), hid, seed, X)
        c = TrainConfig(lr, scheduler, cfg.epochs, cfg.loss, cfg.validation_fraction, seed)
        try:
            history, tl, vl = _train_ae(enc, dec, X, targets, value_and_grad, c)
        except TrainingError as exc:
            raise TrainingError(f"autoencoder training diverged: {exc}", exc.epoch, exc.history) from exc
        return vl, (enc, dec, history, tl, vl, list(hid), lr, scheduler, seed)

    if space is None:
        _, payload = run(tuple(hidden), cfg.lr, cfg.scheduler, cfg.seed)
        trials = None
    else:
        res = random_search(space, lambda p, s: run(hidden_sizes(p), p["lr"], p["scheduler"], s))
        payload, trials = res.best_payload, res.trials
    enc, dec, history, tl, vl, hid, lr, sch, seed = payload
    report = {"epochs": int(history.size), "initial_loss": float(history[0]) if history.size else None,
              "train_loss": tl, "val_loss": vl, "hidden": hid, "lr": lr, "scheduler": sch, "seed": seed}
    if trials is not None:
        report["search"] = trials
    return AutoencoderPair(enc, dec, int(r), report)


def model_as_encoder(surrogate_hf) -> AutoencoderPair:
    """Use a scalar model as the encoder; ``Q o D`` is then the identity on the latent."""
    if isinstance(surrogate_hf, DenseNet) and surrogate_hf.d_out != 1:
        raise ShapeError("model-as-encoder needs a scalar-output model")
    return AutoencoderPair(surrogate_hf, None, 1, {"model_as_encoder": True}, model_as_encoder=True)


# --------------------------------------------------------------------------- alignment


@dataclass
class Alignment:
    permutation: list[int]
    signs: list[int]
    objective: float
    greedy: bool = False

    def apply(self, z_lf) -> np.ndarray:
        """Reorder and flip LF latent columns onto the HF convention."""
        Z = np.asarray(z_lf, float)
        Z = Z[:, None] if Z.ndim == 1 else Z
        return Z[:, self.permutation] * np.asarray(self.signs, float)

    def invert(self, z_hf_like) -> np.ndarray:
        """Map HF-convention latent columns back to LF latent columns."""
        Z = np.asarray(z_hf_like, float)
        Z = Z[:, None] if Z.ndim == 1 else Z
        out = np.empty_like(Z)
        out[:, self.permutation] = Z * np.asarray(self.signs, float)
        return out

    def to_dict(self):
        return {"permutation": self.permutation, "signs": self.signs, "objective": self.objective,
                "greedy": self.greedy}


def _corr_matrix(A, B):
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    na = np.sqrt(np.sum(A * A, axis=0))
    nb = np.sqrt(np.sum(B * B, axis=0))
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = (A.T @ B) / denom
    return np.where(denom > 0, R, 0.0)


def align_latents(z_hf, z_lf) -> Alignment:
    """Permutation and signs of LF columns maximizing ``sum_j |corr(z_hf_j, z_lf_perm(j))|``."""
    A = np.asarray(z_hf, float)
    B = np.asarray(z_lf, float)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape != B.shape:
        raise ShapeError(f"latent shapes differ: {A.shape} vs {B.shape}")
    r = A.shape[1]
    R = _corr_matrix(A, B)
    absR = np.abs(R)
    greedy = r > MAX_EXHAUSTIVE_ALIGN
    if not greedy:
        best, best_val = None, -np.inf
        for perm in itertools.permutations(range(r)):
            val = float(sum(absR[j, perm[j]] for j in range(r)))
            if val > best_val + 1e-15:
                best, best_val = list(perm), val
        perm = best
    else:
        log.warning("align_latents: r=%d > %d, using greedy matching", r, MAX_EXHAUSTIVE_ALIGN)
        perm = [-1] * r
        used_rows, used_cols = set(), set()
        for flat in np.argsort(-absR, axis=None, kind="stable"):
            i, j = divmod(int(flat), r)
            if i in used_rows or j in used_cols:
                continue
            perm[i] = j
            used_rows.add(i)
            used_cols.add(j)
    signs = [1 if R[j, perm[j]] >= 0 else -1 for j in range(r)]
    obj = float(sum(absR[j, perm[j]] for j in range(r)))
    return Alignment([int(p) for p in perm], signs, obj, greedy)
