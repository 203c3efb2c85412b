"""Invertible transforms with tractable log-determinants.

Every flow maps a batch ``X`` of shape ``(n, d)`` to ``(Y, log_det)`` where
``log_det[i] = log |det dT/dx (X[i])|``. Trainable flows (rational-quadratic
splines and affine coupling stacks) are fitted by minimizing the Gaussian
negative log-likelihood with the Adam loop from :mod:`mfshare.nnet`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import erf, ndtr

from .distributions import InputLaw, SampleBatch, coordinate_laws, erf_inv
from .errors import DomainError, ParameterError, ShapeError, TrainingError, UnsupportedLawError
from .nnet import DenseNet, TrainConfig, adam_minimize, split_indices

SQRT2 = math.sqrt(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _as_batch(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 and X.size != 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ShapeError(f"expected batch of dimension {dim}, got shape {X.shape}")
    return X


class FlowTransform:
    """Base class; subclasses implement ``_forward`` and ``_inverse`` on 2D batches."""

    kind = "flow"
    trainable = False
    elementwise = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    def forward(self, X):
        """Return ``(Y, log_det)`` for a batch (or a single vector)."""
        single = np.ndim(X) == 1 and self.dim == np.size(X) and not (self.dim == 1 and np.size(X) > 1)
        Xb = _as_batch(X, self.dim)
        Y, ld = self._forward(Xb)
        if single:
            return Y[0], float(ld[0])
        return Y, ld

    def inverse(self, Y):
        single = np.ndim(Y) == 1 and self.dim == np.size(Y) and not (self.dim == 1 and np.size(Y) > 1)
        Yb = _as_batch(Y, self.dim)
        X = self._inverse(Yb)
        return X[0] if single else X

    def transform(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def _forward(self, X):
        raise NotImplementedError

    def _inverse(self, Y):
        raise NotImplementedError

    def diag_jacobian(self, X) -> np.ndarray:
        """Per-coordinate derivatives for elementwise flows."""
        raise NotImplementedError

    def jacobian(self, X, h: float = 1e-6) -> np.ndarray:
        """Jacobian ``dT/dx`` of shape ``(n, d, d)``."""
        Xb = _as_batch(X, self.dim)
        if self.elementwise:
            D = self.diag_jacobian(Xb)
            return D[:, :, None] * np.eye(self.dim)[None]
        J = np.empty((Xb.shape[0], self.dim, self.dim))
        for j in range(self.dim):
            step = h * np.maximum(1.0, np.abs(Xb[:, j]))
            Xp, Xm = Xb.copy(), Xb.copy()
            Xp[:, j] += step
            Xm[:, j] -= step
            J[:, :, j] = (self._forward(Xp)[0] - self._forward(Xm)[0]) / (2.0 * step[:, None])
        return J

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


class Identity(FlowTransform):
    kind = "identity"
    elementwise = True

    def _forward(self, X):
        return X.copy(), np.zeros(X.shape[0])

    def _inverse(self, Y):
        return Y.copy()

    def diag_jacobian(self, X):
        return np.ones_like(X)

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim}


class AnalyticErfBox(FlowTransform):
    """Exact transport of a product of 1D laws: ``sqrt(2) * erf_inv(2 F(x) - 1)`` per coordinate."""

    kind = "analytic_erf"
    elementwise = True

    def __init__(self, laws: list[InputLaw]):
        super().__init__(len(laws))
        self.laws = list(laws)
        for law in self.laws:
            if not law.is_1d():
                raise UnsupportedLawError("analytic flow needs one-dimensional marginals")

    @classmethod
    def for_law(cls, law: InputLaw) -> "AnalyticErfBox":
        parts = coordinate_laws(law)
        if parts is None:
            raise UnsupportedLawError(f"no closed-form flow for law {law.tag}")
        return cls(parts)

    def _u(self, X):
        U = np.empty_like(X)
        for j, law in enumerate(self.laws):
            U[:, j] = 2.0 * law.cdf(X[:, j]) - 1.0
        if np.any(np.abs(U) >= 1.0):
            raise DomainError("analytic flow evaluated on the boundary or outside the support")
        return U

    def _forward(self, X):
        Y = SQRT2 * erf_inv(self._u(X))
        ld = np.zeros(X.shape[0])
        for j, law in enumerate(self.laws):
            ld += np.log(law.pdf(X[:, j])) + HALF_LOG_2PI + 0.5 * Y[:, j] ** 2
        return Y, ld

    def _inverse(self, Y):
        X = np.empty_like(Y)
        for j, law in enumerate(self.laws):
            X[:, j] = law.ppf(0.5 * (1.0 + erf(Y[:, j] / SQRT2)))
        return X

    def diag_jacobian(self, X):
        Y = SQRT2 * erf_inv(self._u(X))
        D = np.empty_like(X)
        for j, law in enumerate(self.laws):
            D[:, j] = law.pdf(X[:, j]) * math.sqrt(2.0 * math.pi) * np.exp(0.5 * Y[:, j] ** 2)
        return D

    def to_dict(self):
        return {"type": self.kind, "laws": [law.to_dict() for law in self.laws]}


class AtanhPremap(FlowTransform):
    """Affine squeeze of the box ``(lo, hi)`` onto ``(-1, 1)`` followed by ``atanh``."""

    kind = "atanh_premap"
    elementwise = True

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ParameterError("atanh_premap: lo < hi required componentwise")
        super().__init__(lo.size)
        self.lo, self.hi = lo, hi
        self._scale = 2.0 / (hi - lo)

    def _u(self, X):
        U = (X - self.lo) * self._scale - 1.0
        if np.any(~(np.abs(U) < 1.0)):
            raise DomainError("atanh_premap: input on or outside the box boundary")
        return U

    def _forward(self, X):
        U = self._u(X)
        ld = np.sum(np.log(self._scale) - np.log1p(-U * U), axis=1)
        return np.arctanh(U), ld

    def _inverse(self, Y):
        return self.lo + (np.tanh(Y) + 1.0) / self._scale

    def diag_jacobian(self, X):
        U = self._u(X)
        return self._scale / (1.0 - U * U)

    def clamp(self, X, rel: float = 1e-9) -> tuple[np.ndarray, int]:
        """Clip rows into the open box; returns the clipped batch and the clipped-entry count."""
        pad = rel * (self.hi - self.lo)
        lo, hi = self.lo + pad, self.hi - pad
        Xc = np.clip(X, lo, hi)
        return Xc, int(np.count_nonzero(Xc != X))

    def to_dict(self):
        return {"type": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


def atanh_premap(lo, hi) -> AtanhPremap:
    return AtanhPremap(lo, hi)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Spline(FlowTransform):
    """Elementwise monotone rational-quadratic spline on ``[-B, B]`` with identity tails.

    Each coordinate has its own ``K`` bins. Unconstrained parameters are mapped
    to widths and heights by a softmax and to interior knot derivatives by a
    softplus; boundary derivatives are fixed to 1 so the tails join smoothly.
    """

    kind = "spline"
    trainable = True
    elementwise = True

    def __init__(self, dim: int = 1, bins: int = 8, bound: float = 4.0, theta=None,
                 min_width: float = 1e-3, min_height: float = 1e-3, min_derivative: float = 1e-3):
        super().__init__(dim)
        self.K = int(bins)
        self.B = float(bound)
        self.min_width, self.min_height, self.min_derivative = min_width, min_height, min_derivative
        if self.K < 2 or self.K * max(min_width, min_height) >= 1.0:
            raise ParameterError("spline: invalid bin configuration")
        n = self.dim * (3 * self.K - 1)
        if theta is None:
            theta = np.zeros(n)
            theta.reshape(self.dim, -1)[:, 2 * self.K :] = math.log(math.expm1(1.0 - min_derivative))
        self.theta = np.asarray(theta, float)
        if self.theta.shape != (n,):
            raise ShapeError("spline: parameter vector has wrong length")

    def _unpack(self):
        P = self.theta.reshape(self.dim, 3 * self.K - 1)
        return P[:, : self.K], P[:, self.K : 2 * self.K], P[:, 2 * self.K :]

    def _geometry(self):
        uw, uh, ud = self._unpack()
        K, B = self.K, self.B
        pw, ph = _softmax(uw), _softmax(uh)
        widths = 2 * B * (self.min_width + (1 - self.min_width * K) * pw)
        heights = 2 * B * (self.min_height + (1 - self.min_height * K) * ph)
        xk = np.concatenate([np.full((self.dim, 1), -B), -B + np.cumsum(widths, axis=1)], axis=1)
        yk = np.concatenate([np.full((self.dim, 1), -B), -B + np.cumsum(heights, axis=1)], axis=1)
        xk[:, -1] = B
        yk[:, -1] = B
        ones = np.ones((self.dim, 1))
        derivs = np.concatenate([ones, self.min_derivative + _softplus(ud), ones], axis=1)
        return dict(pw=pw, ph=ph, widths=widths, heights=heights, xk=xk, yk=yk, derivs=derivs, ud=ud)

    @staticmethod
    def _locate(vals, knots):
        # bin index per (n, d) entry; knots has shape (d, K+1)
        idx = np.sum(vals[:, :, None] >= knots[None, :, 1:-1], axis=2)
        return idx

    def _gather(self, geo, idx):
        cols = np.arange(self.dim)[None, :]
        return (geo["xk"][cols, idx], geo["widths"][cols, idx], geo["yk"][cols, idx],
                geo["heights"][cols, idx], geo["derivs"][cols, idx], geo["derivs"][cols, idx + 1])

    def _eval(self, X, geo, need_grad=False):
        inside = np.abs(X) < self.B
        Xc = np.where(inside, X, 0.0)
        idx = self._locate(Xc, geo["xk"])
        xk, w, yk, h, d0, d1 = self._gather(geo, idx)
        s = h / w
        xi = np.clip((Xc - xk) / w, 0.0, 1.0)
        a = xi * (1.0 - xi)
        num = s * xi * xi + d0 * a
        c = d1 + d0 - 2.0 * s
        den = s + c * a
        y_in = yk + h * num / den
        g = d1 * xi * xi + 2.0 * s * a + d0 * (1.0 - xi) ** 2
        ld_in = 2.0 * np.log(s) + np.log(g) - 2.0 * np.log(den)
        Y = np.where(inside, y_in, X)
        LD = np.where(inside, ld_in, 0.0)
        if not need_grad:
            return Y, LD
        loc = dict(idx=idx, inside=inside, xk=xk, w=w, h=h, d0=d0, d1=d1, s=s, xi=xi, a=a,
                   num=num, c=c, den=den, g=g)
        return Y, LD, loc

    def _forward(self, X):
        Y, LD = self._eval(X, self._geometry())
        return Y, LD.sum(axis=1)

    def diag_jacobian(self, X):
        _, LD = self._eval(X, self._geometry())
        return np.exp(LD)

    def _inverse(self, Y):
        geo = self._geometry()
        inside = np.abs(Y) < self.B
        Yc = np.where(inside, Y, 0.0)
        idx = self._locate(Yc, geo["yk"])
        xk, w, yk, h, d0, d1 = self._gather(geo, idx)
        s = h / w
        dy = Yc - yk
        c = d1 + d0 - 2.0 * s
        qa = h * (s - d0) + dy * c
        qb = h * d0 - dy * c
        qc = -s * dy
        disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
        xi = (2.0 * qc) / (-qb - np.sqrt(disc))
        X = xk + np.clip(xi, 0.0, 1.0) * w
        return np.where(inside, X, Y)

    def nll_and_grad(self, X):
        """Mean Gaussian NLL (constant dropped) and its gradient w.r.t. ``theta``."""
        geo = self._geometry()
        Y, LD, L = self._eval(X, geo, need_grad=True)
        n = X.shape[0]
        loss = float((0.5 * np.sum(Y * Y) - np.sum(LD)) / n)
        gy = Y / n  # dL/dy
        gl = -1.0 / n  # dL/dlogdet
        xi, a, s, h, w = L["xi"], L["a"], L["s"], L["h"], L["w"]
        d0, d1, num, c, den, g = L["d0"], L["d1"], L["num"], L["c"], L["den"], L["g"]
        da = 1.0 - 2.0 * xi
        den2 = den * den
        # partials of y with xi, s, h (s held), d0, d1
        y_xi = h * ((2.0 * s * xi + d0 * da) * den - num * c * da) / den2
        y_s = h * (xi * xi * den - num * (1.0 - 2.0 * a)) / den2
        y_h = num / den
        y_d0 = h * (a * den - num * a) / den2
        y_d1 = -h * num * a / den2
        # partials of log-det
        l_xi = (2.0 * d1 * xi + 2.0 * s * da - 2.0 * d0 * (1.0 - xi)) / g - 2.0 * c * da / den
        l_s = 2.0 / s + 2.0 * a / g - 2.0 * (1.0 - 2.0 * a) / den
        l_d0 = (1.0 - xi) ** 2 / g - 2.0 * a / den
        l_d1 = xi * xi / g - 2.0 * a / den
        mask = L["inside"]
        G_xi = np.where(mask, gy * y_xi + gl * l_xi, 0.0)
        G_s = np.where(mask, gy * y_s + gl * l_s, 0.0)
        G_h = np.where(mask, gy * y_h, 0.0) + G_s / w
        G_yk = np.where(mask, gy, 0.0)
        G_d0 = np.where(mask, gy * y_d0 + gl * l_d0, 0.0)
        G_d1 = np.where(mask, gy * y_d1 + gl * l_d1, 0.0)
        G_xk = -G_xi / w
        G_w = -G_xi * xi / w - G_s * s / w
        K, d = self.K, self.dim
        idx = L["idx"]
        flat = (np.arange(d)[None, :] * (K + 1) + idx).ravel()

        def scatter(vals, shift=0):
            return np.bincount(flat + shift, weights=vals.ravel(), minlength=d * (K + 1)).reshape(d, K + 1)

        g_xk = scatter(G_xk)
        g_yk = scatter(G_yk)
        g_w = scatter(G_w)[:, :K]
        g_h = scatter(G_h)[:, :K]
        g_der = scatter(G_d0) + scatter(G_d1, 1)
        # knot k = -B + sum_{i<k} widths_i for k = 1..K-1 (last knot pinned at B)
        g_xk[:, -1] = 0.0
        g_yk[:, -1] = 0.0
        g_w = g_w + np.cumsum(g_xk[:, ::-1], axis=1)[:, ::-1][:, 1:]
        g_h = g_h + np.cumsum(g_yk[:, ::-1], axis=1)[:, ::-1][:, 1:]
        g_pw = g_w * 2 * self.B * (1 - self.min_width * K)
        g_ph = g_h * 2 * self.B * (1 - self.min_height * K)
        pw, ph = geo["pw"], geo["ph"]
        g_uw = pw * (g_pw - np.sum(pw * g_pw, axis=1, keepdims=True))
        g_uh = ph * (g_ph - np.sum(ph * g_ph, axis=1, keepdims=True))
        g_ud = g_der[:, 1:K] * _sigmoid(geo["ud"])
        grad = np.concatenate([g_uw, g_uh, g_ud], axis=1).ravel()
        return loss, grad

    def copy(self):
        return Spline(self.dim, self.K, self.B, self.theta.copy(), self.min_width, self.min_height,
                      self.min_derivative)

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim, "bins": self.K, "bound": self.B,
                "min_width": self.min_width, "min_height": self.min_height,
                "min_derivative": self.min_derivative, "theta": self.theta.tolist()}


def coupling_masks(dim: int, layers: int) -> list[np.ndarray]:
    base = (np.arange(dim) % 2 == 0).astype(float)
    return [base if i % 2 == 0 else 1.0 - base for i in range(layers)]


class AffineCoupling(FlowTransform):
    """Stack of RealNVP-style affine coupling layers.

    Layer ``i`` keeps the coordinates selected by its binary mask and updates
    the others as ``x * exp(s) + t`` with ``s = s_max * tanh(net_s(x_masked))``.
    """

    kind = "affine_coupling"
    trainable = True

    def __init__(self, dim: int, masks, s_nets, t_nets, s_max: float = 2.0):
        super().__init__(dim)
        if dim < 2:
            raise ParameterError("affine coupling needs at least two dimensions")
        self.masks = [np.asarray(m, float) for m in masks]
        self.s_nets, self.t_nets = list(s_nets), list(t_nets)
        self.s_max = float(s_max)
        sizes = [net.n_params for pair in zip(self.s_nets, self.t_nets) for net in pair]
        theta = np.concatenate([net.theta for pair in zip(self.s_nets, self.t_nets) for net in pair])
        self.theta = theta
        k = 0
        for net, size in zip([n for pair in zip(self.s_nets, self.t_nets) for n in pair], sizes):
            net._bind(self.theta[k : k + size])
            k += size

    @classmethod
    def create(cls, dim: int, layers: int = 6, hidden=(16, 16), s_max: float = 2.0, seed: int = 0):
        """Coupling stack whose nets have zero output layers, so it starts as the identity."""
        s_nets, t_nets = [], []
        for i in range(layers):
            for store, tag in ((s_nets, 1), (t_nets, 2)):
                net = DenseNet.create([dim, *hidden, dim], "tanh", "identity", seed=seed * 1000 + 10 * i + tag)
                net.zero_output_layer()
                store.append(net)
        return cls(dim, coupling_masks(dim, layers), s_nets, t_nets, s_max)

    def _layer(self, i, X, cache=False):
        m = self.masks[i]
        xm = X * m
        if cache:
            a, cs = self.s_nets[i].forward_cache(xm)
            t, ct = self.t_nets[i].forward_cache(xm)
        else:
            a, t = self.s_nets[i].forward(xm), self.t_nets[i].forward(xm)
            cs = ct = None
        th = np.tanh(a)
        s = self.s_max * th * (1.0 - m)
        t = t * (1.0 - m)
        return s, t, th, cs, ct

    def _forward(self, X):
        ld = np.zeros(X.shape[0])
        for i in range(len(self.masks)):
            s, t, _, _, _ = self._layer(i, X)
            X = X * np.exp(s) + t
            ld += s.sum(axis=1)
        return X, ld

    def _inverse(self, Y):
        for i in range(len(self.masks) - 1, -1, -1):
            s, t, _, _, _ = self._layer(i, Y)
            Y = (Y - t) * np.exp(-s)
        return Y

    def nll_and_grad(self, X):
        n = X.shape[0]
        tape = []
        ld = np.zeros(n)
        for i in range(len(self.masks)):
            s, t, th, cs, ct = self._layer(i, X, cache=True)
            es = np.exp(s)
            tape.append((X, es, th, cs, ct))
            X = X * es + t
            ld += s.sum(axis=1)
        loss = float((0.5 * np.sum(X * X) - np.sum(ld)) / n)
        gy = X / n
        grads = []
        for i in range(len(self.masks) - 1, -1, -1):
            Xin, es, th, cs, ct = tape[i]
            m = self.masks[i]
            free = 1.0 - m
            g_s = (gy * Xin * es - 1.0 / n) * free
            g_t = gy * free
            g_a = g_s * self.s_max * (1.0 - th * th)
            gs_par, gs_in = self.s_nets[i].backward(cs, g_a)
            gt_par, gt_in = self.t_nets[i].backward(ct, g_t)
            grads.append((gs_par, gt_par))
            gy = gy * es + m * (gs_in + gt_in)
        flat = np.concatenate([np.concatenate(p) for p in reversed(grads)])
        return loss, flat

    def copy(self):
        return AffineCoupling(self.dim, [m.copy() for m in self.masks],
                              [n.copy() for n in self.s_nets], [n.copy() for n in self.t_nets], self.s_max)

    def to_dict(self):
        return {"type": self.kind, "dim": self.dim, "s_max": self.s_max,
                "masks": [m.tolist() for m in self.masks],
                "s_nets": [n.to_dict() for n in self.s_nets],
                "t_nets": [n.to_dict() for n in self.t_nets]}


class Composite(FlowTransform):
    """Apply ``flows[0]`` first, then ``flows[1]``, and so on."""

    kind = "composite"

    def __init__(self, flows):
        flows = list(flows)
        if not flows:
            raise ParameterError("composite flow needs at least one member")
        if any(f.dim != flows[0].dim for f in flows):
            raise ShapeError("composite members disagree on dimension")
        super().__init__(flows[0].dim)
        self.flows = flows
        self.elementwise = all(f.elementwise for f in flows)
        self.trainable = any(f.trainable for f in flows)

    def _forward(self, X):
        ld = np.zeros(X.shape[0])
        for f in self.flows:
            X, l = f._forward(X)
            ld = ld + l
        return X, ld

    def _inverse(self, Y):
        for f in reversed(self.flows):
            Y = f._inverse(Y)
        return Y

    def diag_jacobian(self, X):
        D = np.ones_like(X)
        for f in self.flows:
            D = D * f.diag_jacobian(X)
            X = f._forward(X)[0]
        return D

    def premap(self) -> AtanhPremap | None:
        first = self.flows[0]
        return first if isinstance(first, AtanhPremap) else None

    def copy(self):
        return Composite([f.copy() if hasattr(f, "copy") else f for f in self.flows])

    def to_dict(self):
        return {"type": self.kind, "flows": [f.to_dict() for f in self.flows]}


def nll_loss(flow: FlowTransform, batch) -> float:
    """Sum over samples of ``0.5 * |T(x)|^2 - log|det dT/dx|``."""
    X = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, float)
    Y, ld = flow.forward(_as_batch(X, flow.dim))
    return float(0.5 * np.sum(Y * Y) - np.sum(ld))


def ks_statistic(values) -> float:
    """Kolmogorov-Smirnov distance between a 1D sample and the standard normal."""
    v = np.sort(np.asarray(values, float).ravel())
    n = v.size
    cdf = ndtr(v)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


@dataclass
class FlowFitReport:
    initial_nll: float
    final_nll: float
    epochs: int
    seed: int
    ks: list[float]
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        return {"initial_nll": self.initial_nll, "final_nll": self.final_nll, "epochs": self.epochs,
                "seed": self.seed, "ks": self.ks, "config": self.config}


def _split_trainable(flow: FlowTransform):
    if not flow.trainable:
        raise ParameterError("flow has no trainable member")
    if isinstance(flow, Composite):
        pos = [i for i, f in enumerate(flow.flows) if f.trainable]
        if len(pos) != 1 or pos[0] != len(flow.flows) - 1:
            raise ParameterError("composite flows must end in exactly one trainable member")
        return flow.flows[:-1], flow.flows[-1]
    return [], flow


def fit(flow: FlowTransform, batch, cfg: TrainConfig):
    """Fit a copy of ``flow`` by minimizing the Gaussian NLL; returns ``(flow, report)``.

    Fixed members of a composite (e.g. the atanh premap) are applied once up
    front; only the final trainable member is optimized.
    """
    X = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, float)
    X = _as_batch(X, flow.dim)
    if X.shape[0] == 0:
        raise ParameterError("fit: empty batch")
    if not flow.trainable:
        raise ParameterError("flow has no trainable member")
    flow = flow.copy()
    fixed, train_part = _split_trainable(flow)
    if isinstance(flow, Composite):
        flow = Composite(fixed + [train_part])
    Z = X
    for f in fixed:
        Z = f._forward(Z)[0]
    tr, va = split_indices(Z.shape[0], cfg.validation_fraction, cfg.seed)
    Zt = Z[tr]
    initial = nll_loss(flow, X)
    try:
        adam_minimize(train_part.theta, lambda: train_part.nll_and_grad(Zt), int(cfg.epochs),
                      cfg.lr, cfg.scheduler)
    except TrainingError as exc:
        raise TrainingError(f"flow fit diverged: {exc}", epoch=exc.epoch, history=exc.history) from exc
    final = nll_loss(flow, X)
    if not np.isfinite(final):
        raise TrainingError("flow fit produced a non-finite NLL", epoch=int(cfg.epochs))
    check = X[va] if va.size else X
    Yc = flow.transform(check)
    ks = [ks_statistic(Yc[:, j]) for j in range(flow.dim)]
    report = FlowFitReport(initial, final, int(cfg.epochs), int(cfg.seed), ks,
                           {"lr": cfg.lr, "scheduler": cfg.scheduler,
                            "validation_fraction": cfg.validation_fraction})
    return flow, report


def bounded_flow(lo, hi, kind: str = "spline", seed: int = 0, hidden=(16, 16), layers: int = 6,
                 bins: int = 8, bound: float = 4.0) -> Composite:
    """Untrained ``atanh premap -> trainable`` flow for a law supported in the box ``(lo, hi)``."""
    pre = AtanhPremap(lo, hi)
    if kind == "spline":
        tail = Spline(pre.dim, bins, bound)
    elif kind == "coupling":
        tail = AffineCoupling.create(pre.dim, layers, hidden, seed=seed)
    else:
        raise ParameterError(f"unknown trainable flow kind {kind!r}")
    return Composite([pre, tail])


def flow_from_dict(d: dict[str, Any]) -> FlowTransform:
    from .distributions import law_from_dict

    kind = d["type"]
    if kind == "identity":
        return Identity(d["dim"])
    if kind == "analytic_erf":
        return AnalyticErfBox([law_from_dict(l) for l in d["laws"]])
    if kind == "atanh_premap":
        return AtanhPremap(d["lo"], d["hi"])
    if kind == "spline":
        return Spline(d["dim"], d["bins"], d["bound"], np.asarray(d["theta"]), d["min_width"],
                      d["min_height"], d["min_derivative"])
    if kind == "affine_coupling":
        return AffineCoupling(d["dim"], d["masks"], [DenseNet.from_dict(n) for n in d["s_nets"]],
                              [DenseNet.from_dict(n) for n in d["t_nets"]], d["s_max"])
    if kind == "composite":
        return Composite([flow_from_dict(f) for f in d["flows"]])
    raise ParameterError(f"unknown flow type {kind!r}")
