"""Two-species reaction-diffusion benchmark (FitzHugh-Nagumo kinetics).

Cell-centred finite volumes on ``(-L, L)^2`` with zero-flux boundaries
(mirrored ghost cells) and classical RK4 in time. Solves are vectorized over
a leading batch axis so that many parameter samples advance together.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..distributions import Mapped, Product, Triangle2D, UniformBox, make_rng
from ..errors import BlowUpError, ParameterError, ShapeError
from ..estimators import ModelSpec

CFL_LIMIT = 0.25
HF_CELLS, HF_STEPS = 64, 400
LF_CELLS, LF_STEPS = 16, 100
W_COST = 0.1
DEFAULT_IC_SEED = 2024
TRIANGLE = ((0.25e-3, 4e-3), (1.75e-3, 5e-3), (1e-3, 6e-3))
K_RANGE = (0.5e-3, 1.5e-3)


@dataclass(frozen=True)
class RDConfig:
    m: int = HF_CELLS
    steps: int = HF_STEPS
    T: float = 4.0
    L: float = 1.0
    k: float = 1e-3
    du: float = 1e-3
    dv: float = 5e-3
    ic_seed: int = DEFAULT_IC_SEED
    w: float = W_COST
    reactions: bool = True

    def __post_init__(self):
        if self.m < 2 or self.steps < 1 or not self.T > 0 or not self.L > 0:
            raise ParameterError("RDConfig: need m >= 2, steps >= 1, T > 0, L > 0")
        if self.du < 0 or self.dv < 0:
            raise ParameterError("RDConfig: diffusion coefficients must be non-negative")
        cfl = self.cfl()
        if not cfl < CFL_LIMIT:
            raise ParameterError(f"RDConfig: diffusion CFL number {cfl:.4g} >= {CFL_LIMIT}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.m

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def cfl(self, d_max: float | None = None) -> float:
        d = max(self.du, self.dv) if d_max is None else d_max
        return d * self.dt / self.dx**2

    @classmethod
    def hf(cls, **kw) -> "RDConfig":
        return cls(HF_CELLS, HF_STEPS, **kw)

    @classmethod
    def lf(cls, d_bar: float = 3e-3, **kw) -> "RDConfig":
        return cls(LF_CELLS, LF_STEPS, du=d_bar, dv=d_bar, **kw)


def check_cfl(m: int, steps: int, d_max: float, T: float = 4.0, L: float = 1.0) -> float:
    """CFL number of a grid at the largest diffusion coefficient; raises if unstable."""
    cfg = RDConfig(m, steps, T, L, du=d_max, dv=d_max)
    return cfg.cfl()


def laplacian(F: np.ndarray, dx: float) -> np.ndarray:
    """5-point FV Laplacian of ``(..., m, m)`` cell averages with zero-flux boundaries."""
    G = np.pad(F, [(0, 0)] * (F.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    return (G[..., :-2, 1:-1] + G[..., 2:, 1:-1] + G[..., 1:-1, :-2] + G[..., 1:-1, 2:] - 4.0 * F) / (dx * dx)


def _rhs(u, v, du, dv, k, dx, reactions):
    fu = du * laplacian(u, dx)
    fv = dv * laplacian(v, dx)
    if reactions:
        fu += u - u**3 - k - v
        fv += u - v
    return fu, fv


def rd_rhs(u, v, cfg: RDConfig):
    """Time derivatives ``(du/dt, dv/dt)`` for one field pair."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    if u.shape != (cfg.m, cfg.m) or v.shape != (cfg.m, cfg.m):
        raise ShapeError(f"fields must be {cfg.m}x{cfg.m}")
    return _rhs(u, v, cfg.du, cfg.dv, cfg.k, cfg.dx, cfg.reactions)


def _solve_batch(u, v, du, dv, k, dx, dt, steps, reactions=True, callback=None):
    for step in range(steps):
        k1u, k1v = _rhs(u, v, du, dv, k, dx, reactions)
        k2u, k2v = _rhs(u + 0.5 * dt * k1u, v + 0.5 * dt * k1v, du, dv, k, dx, reactions)
        k3u, k3v = _rhs(u + 0.5 * dt * k2u, v + 0.5 * dt * k2v, du, dv, k, dx, reactions)
        k4u, k4v = _rhs(u + dt * k3u, v + dt * k3v, du, dv, k, dx, reactions)
        u = u + (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        v = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise BlowUpError(f"non-finite state after step {step + 1}", step + 1)
        if callback is not None:
            callback(step + 1, u, v)
    return u, v


@njit(cache=True)
def _rhs_cell_loop(u, v, du, dv, k, inv_dx2, fu, fv):
    m = u.shape[0]
    for i in range(m):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < m - 1 else m - 1
        for j in range(m):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < m - 1 else m - 1
            a = u[i, j]
            b = v[i, j]
            lu = (u[im, j] + u[ip, j] + u[i, jm] + u[i, jp] - 4.0 * a) * inv_dx2
            lv = (v[im, j] + v[ip, j] + v[i, jm] + v[i, jp] - 4.0 * b) * inv_dx2
            fu[i, j] = du * lu + a - a * a * a - k - b
            fv[i, j] = dv * lv + a - b


@njit(cache=True)
def _qoi_kernel(u0, v0, du, dv, k, dx, dt, steps):
    """Fused RK4 solve per sample; returns QoIs and the first blow-up step (0 if none)."""
    n = du.shape[0]
    m = u0.shape[0]
    inv_dx2 = 1.0 / (dx * dx)
    out = np.empty(n)
    blown = np.zeros(n, dtype=np.int64)
    u = np.empty((m, m))
    v = np.empty((m, m))
    tu = np.empty((m, m))
    tv = np.empty((m, m))
    k1u = np.empty((m, m))
    k1v = np.empty((m, m))
    k2u = np.empty((m, m))
    k2v = np.empty((m, m))
    k3u = np.empty((m, m))
    k3v = np.empty((m, m))
    k4u = np.empty((m, m))
    k4v = np.empty((m, m))
    for s in range(n):
        u[:, :] = u0
        v[:, :] = v0
        for step in range(steps):
            _rhs_cell_loop(u, v, du[s], dv[s], k[s], inv_dx2, k1u, k1v)
            for i in range(m):
                for j in range(m):
                    tu[i, j] = u[i, j] + 0.5 * dt * k1u[i, j]
                    tv[i, j] = v[i, j] + 0.5 * dt * k1v[i, j]
            _rhs_cell_loop(tu, tv, du[s], dv[s], k[s], inv_dx2, k2u, k2v)
            for i in range(m):
                for j in range(m):
                    tu[i, j] = u[i, j] + 0.5 * dt * k2u[i, j]
                    tv[i, j] = v[i, j] + 0.5 * dt * k2v[i, j]
            _rhs_cell_loop(tu, tv, du[s], dv[s], k[s], inv_dx2, k3u, k3v)
            for i in range(m):
                for j in range(m):
                    tu[i, j] = u[i, j] + dt * k3u[i, j]
                    tv[i, j] = v[i, j] + dt * k3v[i, j]
            _rhs_cell_loop(tu, tv, du[s], dv[s], k[s], inv_dx2, k4u, k4v)
            finite = True
            for i in range(m):
                for j in range(m):
                    a = u[i, j] + (dt / 6.0) * (k1u[i, j] + 2.0 * k2u[i, j] + 2.0 * k3u[i, j] + k4u[i, j])
                    b = v[i, j] + (dt / 6.0) * (k1v[i, j] + 2.0 * k2v[i, j] + 2.0 * k3v[i, j] + k4v[i, j])
                    u[i, j] = a
                    v[i, j] = b
                    if not (np.isfinite(a) and np.isfinite(b)):
                        finite = False
            if not finite:
                blown[s] = step + 1
                break
        su = 0.0
        sv = 0.0
        for i in range(m):
            for j in range(m):
                su += abs(u[i, j])
                sv += abs(v[i, j])
        out[s] = su / (m * m) + sv / (m * m)
    return out, blown


def rd_solve(cfg: RDConfig, u0, v0, callback=None):
    """Integrate one field pair to ``T`` with RK4; returns ``(u, v)``."""
    u0, v0 = np.asarray(u0, float), np.asarray(v0, float)
    if u0.shape != (cfg.m, cfg.m) or v0.shape != (cfg.m, cfg.m):
        raise ShapeError(f"initial fields must be {cfg.m}x{cfg.m}")
    return _solve_batch(u0.copy(), v0.copy(), cfg.du, cfg.dv, cfg.k, cfg.dx, cfg.dt, cfg.steps,
                        cfg.reactions, callback)


def rd_qoi(u, v) -> np.ndarray | float:
    """``mean|u| + mean|v|`` over the last two axes."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    q = np.mean(np.abs(u), axis=(-2, -1)) + np.mean(np.abs(v), axis=(-2, -1))
    return float(q) if np.ndim(q) == 0 else q


def make_ic(seed: int = DEFAULT_IC_SEED, m: int = HF_CELLS):
    """Standard normal cell values for ``u`` and ``v``, fixed by ``seed``."""
    rng = make_rng(seed)
    return rng.standard_normal((m, m)), rng.standard_normal((m, m))


def block_average(F: np.ndarray, factor: int) -> np.ndarray:
    m = F.shape[-1]
    if m % factor:
        raise ShapeError("grid size not divisible by the coarsening factor")
    c = m // factor
    return F.reshape(*F.shape[:-2], c, factor, c, factor).mean(axis=(-3, -1))


def refine(F: np.ndarray, factor: int) -> np.ndarray:
    """Piecewise-constant prolongation onto a finer grid."""
    return np.repeat(np.repeat(F, factor, axis=-2), factor, axis=-1)


def ic_for_grid(m: int, seed: int = DEFAULT_IC_SEED):
    """The fixed HF initial condition restricted (or prolonged) to an ``m x m`` grid."""
    u, v = make_ic(seed, HF_CELLS)
    if m == HF_CELLS:
        return u, v
    if m < HF_CELLS:
        f = HF_CELLS // m
        return block_average(u, f), block_average(v, f)
    f = m // HF_CELLS
    return refine(u, f), refine(v, f)


def solve_qoi_batch(du, dv, k, m: int, steps: int, ic_seed: int = DEFAULT_IC_SEED, T: float = 4.0,
                    L: float = 1.0) -> np.ndarray:
    """QoI for parameter vectors ``du, dv, k`` (equal length) via the compiled RK4 kernel."""
    du, dv, k = (np.atleast_1d(np.asarray(a, float)) for a in (du, dv, k))
    n = du.size
    dx, dt = 2.0 * L / m, T / steps
    d_max = float(max(du.max(initial=0.0), dv.max(initial=0.0)))
    if not d_max * dt / dx**2 < CFL_LIMIT:
        raise ParameterError(f"diffusion CFL number {d_max * dt / dx**2:.4g} >= {CFL_LIMIT}")
    u0, v0 = ic_for_grid(m, ic_seed)
    out, blown = _qoi_kernel(np.ascontiguousarray(u0), np.ascontiguousarray(v0), du, dv, k, dx, dt, steps)
    bad = np.flatnonzero(blown)
    if bad.size:
        i = int(bad[0])
        raise BlowUpError(f"sample {i}: non-finite state after step {int(blown[i])}", int(blown[i]))
    return out


def hf_to_lf(X):
    X = np.asarray(X, float)
    return np.column_stack([0.5 * (X[:, 0] + X[:, 1]), X[:, 2]])


def hf_law() -> Product:
    return Product((Triangle2D(*TRIANGLE), UniformBox((K_RANGE[0],), (K_RANGE[1],))))


def lf_law() -> Mapped:
    dbar = [0.5 * (a + b) for a, b in TRIANGLE]
    return Mapped(hf_law(), hf_to_lf, 2, (min(dbar), K_RANGE[0]), (max(dbar), K_RANGE[1]), "rd_lf")


def rd_models(seed_ic: int = DEFAULT_IC_SEED, hf_cells: int = HF_CELLS, hf_steps: int = HF_STEPS,
              lf_cells: int = LF_CELLS, lf_steps: int = LF_STEPS, w: float = W_COST):
    """HF model over ``(D_u, D_v, k)`` and LF model over ``(D_bar, k)`` sharing one fixed IC."""

    def hf_eval(X):
        X = np.asarray(X, float)
        return solve_qoi_batch(X[:, 0], X[:, 1], X[:, 2], hf_cells, hf_steps, seed_ic)

    def lf_eval(X):
        X = np.asarray(X, float)
        return solve_qoi_batch(X[:, 0], X[:, 0], X[:, 1], lf_cells, lf_steps, seed_ic)

    hf = ModelSpec(hf_eval, 3, hf_law(), 1.0, None, "rd_hf")
    lf = ModelSpec(lf_eval, 2, lf_law(), w, None, "rd_lf", from_hf=hf_to_lf)
    return hf, lf


def snapshot_csv(u, v) -> str:
    """Cell-centre coordinates and field values as CSV text (``i, j, x, y, u, v``)."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    m = u.shape[0]
    c = -1.0 + (np.arange(m) + 0.5) * 2.0 / m
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["i", "j", "x", "y", "u", "v"])
    for i in range(m):
        for j in range(m):
            wr.writerow([i, j, repr(float(c[j])), repr(float(c[i])), repr(float(u[i, j])), repr(float(v[i, j]))])
    return buf.getvalue()


def rd_snapshot(cfg: RDConfig):
    """Final-time fields for one parameter set, starting from the fixed IC on ``cfg``'s grid."""
    u0, v0 = ic_for_grid(cfg.m, cfg.ic_seed)
    return rd_solve(cfg, u0, v0)


__all__ = [
    "RDConfig", "rd_rhs", "rd_solve", "rd_qoi", "rd_models", "rd_snapshot", "snapshot_csv", "make_ic",
    "block_average", "refine", "ic_for_grid", "solve_qoi_batch", "hf_to_lf", "hf_law", "lf_law",
    "check_cfl", "laplacian",
]
