"""Shared flow-correctness checks used by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from mfshare.distributions import Trapezoidal1D, Triangular1D, UniformBox, make_rng
from mfshare.flows import AffineCoupling, AnalyticErfBox, AtanhPremap, Composite, Identity, Spline


def _randomize(flow, rng, scale):
    flow.theta[:] = rng.normal(0.0, scale, flow.theta.shape)
    return flow


def flow_variants(seed: int = 0):
    """``(name, flow, sampler)`` triples; ``sampler(rng, n)`` draws points inside the flow domain."""
    rng = make_rng(seed)
    box = UniformBox((-1.0, -1.0), (1.0, 1.0))
    lo4, hi4 = np.array([-1.0, 0.0, 2.0, -5.0]), np.array([1.0, 3.0, 2.5, 5.0])

    def inside(lo, hi, frac=0.95):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * frac
        return lambda r, n: r.uniform(mid - half, mid + half, (n, lo.size))

    spline1 = _randomize(Spline(1), rng, 0.8)
    spline3 = _randomize(Spline(3, bins=6, bound=3.0), rng, 0.8)
    coup2 = _randomize(AffineCoupling.create(2, layers=4, hidden=(8, 8), seed=1), rng, 0.3)
    coup4 = _randomize(AffineCoupling.create(4, layers=6, hidden=(6,), seed=2), rng, 0.3)
    comp = Composite([AtanhPremap(lo4, hi4), _randomize(AffineCoupling.create(4, 4, (8,), seed=3), rng, 0.3)])
    return [
        ("identity", Identity(3), lambda r, n: r.normal(size=(n, 3))),
        ("analytic_box", AnalyticErfBox.for_law(box), inside((-1, -1), (1, 1))),
        ("analytic_tri_trap", AnalyticErfBox([Triangular1D(-2, 0, 2), Trapezoidal1D(-2.5, -1.5, 1.5, 2.5)]),
         inside((-2, -2.5), (2, 2.5))),
        ("atanh_premap", AtanhPremap(lo4, hi4), inside(lo4, hi4)),
        ("spline_1d", spline1, lambda r, n: r.uniform(-5, 5, (n, 1))),
        ("spline_3d", spline3, lambda r, n: r.uniform(-4, 4, (n, 3))),
        ("coupling_2d", coup2, lambda r, n: r.normal(size=(n, 2))),
        ("coupling_4d", coup4, lambda r, n: r.normal(size=(n, 4))),
        ("composite_4d", comp, inside(lo4, hi4, 0.9)),
    ]


def round_trip_error(flow, X) -> float:
    Y, _ = flow.forward(X)
    return float(np.max(np.abs(flow.inverse(Y) - X)))


def fd_logdet(flow, X, h: float = 1e-5) -> np.ndarray:
    """``log|det J|`` from a central-difference Jacobian built column by column."""
    n, d = X.shape
    J = np.empty((n, d, d))
    for j in range(d):
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        J[:, :, j] = (flow.transform(Xp) - flow.transform(Xm)) / (2 * h)
    return np.linalg.slogdet(J)[1]


def logdet_error(flow, X, h: float = 1e-5) -> float:
    _, ld = flow.forward(X)
    return float(np.max(np.abs(ld - fd_logdet(flow, X, h))))
