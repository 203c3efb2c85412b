"""Input laws, seeded sampling, one-dimensional CDFs and the inverse error function.

Laws are small frozen dataclasses. Every law knows its dimension, how to draw
from a :class:`numpy.random.Generator` and its bounding box (``None`` when the
support is unbounded). One-dimensional laws additionally expose ``cdf``,
``pdf`` and ``ppf`` so that exact transport maps to a standard Gaussian can
be written down in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import erf, ndtr, ndtri

from .errors import DomainError, ParameterError, UnsupportedLawError

__all__ = [
    "InputLaw",
    "UniformBox",
    "StdGaussian",
    "Triangle2D",
    "Triangular1D",
    "Trapezoidal1D",
    "Product",
    "Empirical",
    "SampleBatch",
    "make_rng",
    "sample",
    "cdf_1d",
    "pdf_1d",
    "ppf_1d",
    "erf",
    "erf_inv",
    "std_normal_cdf",
    "std_normal_ppf",
    "law_from_dict",
    "in_support",
]


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator with an explicit 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


class InputLaw:
    """Base class of every input law."""

    tag = "law"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        return None

    def is_1d(self) -> bool:
        return False

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformBox(InputLaw):
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    tag = "uniform_box"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise ParameterError("uniform_box: lo and hi must be non-empty and of equal length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ParameterError("uniform_box: lo <= hi required componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def draw(self, rng, n):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + (hi - lo) * rng.random((n, self.dim))

    def bounds(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def is_1d(self):
        return self.dim == 1

    def cdf(self, z):
        lo, hi = self.lo[0], self.hi[0]
        if hi == lo:
            return np.where(np.asarray(z) < lo, 0.0, 1.0)
        return np.clip((np.asarray(z, dtype=float) - lo) / (hi - lo), 0.0, 1.0)

    def pdf(self, z):
        lo, hi = self.lo[0], self.hi[0]
        z = np.asarray(z, dtype=float)
        return np.where((z >= lo) & (z <= hi), 1.0 / (hi - lo), 0.0)

    def ppf(self, p):
        lo, hi = self.lo[0], self.hi[0]
        return lo + (hi - lo) * np.asarray(p, dtype=float)

    def to_dict(self):
        return {"type": self.tag, "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class StdGaussian(InputLaw):
    d: int
    tag = "std_gaussian"

    def __post_init__(self):
        if int(self.d) < 1:
            raise ParameterError("std_gaussian: d >= 1 required")

    @property
    def dim(self):
        return int(self.d)

    def draw(self, rng, n):
        return rng.standard_normal((n, self.dim))

    def is_1d(self):
        return self.dim == 1

    def cdf(self, z):
        return ndtr(np.asarray(z, dtype=float))

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)

    def ppf(self, p):
        return ndtri(np.asarray(p, dtype=float))

    def to_dict(self):
        return {"type": self.tag, "d": self.dim}


@dataclass(frozen=True)
class Triangle2D(InputLaw):
    """Uniform law on the triangle with vertices ``v1, v2, v3``."""

    v1: tuple[float, float]
    v2: tuple[float, float]
    v3: tuple[float, float]
    tag = "triangle_2d"

    def __post_init__(self):
        for name in ("v1", "v2", "v3"):
            v = tuple(float(c) for c in getattr(self, name))
            if len(v) != 2:
                raise ParameterError("triangle_2d: vertices must be 2-vectors")
            object.__setattr__(self, name, v)
        if abs(self._area2()) <= 1e-300:
            raise ParameterError("triangle_2d: vertices are collinear")

    def _area2(self) -> float:
        (ax, ay), (bx, by), (cx, cy) = self.v1, self.v2, self.v3
        return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)

    @property
    def dim(self):
        return 2

    def draw(self, rng, n):
        u = rng.random((n, 2))
        fold = u.sum(axis=1) > 1.0
        u[fold] = 1.0 - u[fold]
        a, b, c = (np.asarray(v) for v in (self.v1, self.v2, self.v3))
        return a + u[:, :1] * (b - a) + u[:, 1:] * (c - a)

    def bounds(self):
        pts = np.array([self.v1, self.v2, self.v3])
        return pts.min(axis=0), pts.max(axis=0)

    def barycentric(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        a, b, c = (np.asarray(v) for v in (self.v1, self.v2, self.v3))
        m = np.column_stack([b - a, c - a])
        lam = np.linalg.solve(m, (pts - a).T).T
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def centroid(self) -> np.ndarray:
        return np.mean([self.v1, self.v2, self.v3], axis=0)

    def to_dict(self):
        return {"type": self.tag, "v1": list(self.v1), "v2": list(self.v2), "v3": list(self.v3)}


@dataclass(frozen=True)
class Triangular1D(InputLaw):
    a: float
    c: float
    b: float
    tag = "triangular_1d"

    def __post_init__(self):
        if not (self.a <= self.c <= self.b) or self.a == self.b:
            raise ParameterError("triangular_1d: a <= c <= b with a < b required")

    @property
    def dim(self):
        return 1

    def is_1d(self):
        return True

    def bounds(self):
        return np.array([self.a], float), np.array([self.b], float)

    def cdf(self, z):
        a, c, b = self.a, self.c, self.b
        z = np.clip(np.asarray(z, dtype=float), a, b)
        left = (z - a) ** 2 / ((b - a) * (c - a)) if c > a else np.zeros_like(z)
        right = 1.0 - (b - z) ** 2 / ((b - a) * (b - c)) if b > c else np.ones_like(z)
        return np.where(z <= c, left, right)

    def pdf(self, z):
        a, c, b = self.a, self.c, self.b
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            up = 2.0 * (z - a) / ((b - a) * (c - a)) if c > a else np.zeros_like(z)
            down = 2.0 * (b - z) / ((b - a) * (b - c)) if b > c else np.zeros_like(z)
        out = np.where(z <= c, up, down)
        return np.where((z < a) | (z > b), 0.0, out)

    def ppf(self, p):
        a, c, b = self.a, self.c, self.b
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        pc = (c - a) / (b - a)
        left = a + np.sqrt(p * (b - a) * (c - a))
        right = b - np.sqrt((1.0 - p) * (b - a) * (b - c))
        return np.where(p <= pc, left, right)

    def draw(self, rng, n):
        return self.ppf(rng.random(n))[:, None]

    def to_dict(self):
        return {"type": self.tag, "a": self.a, "c": self.c, "b": self.b}


@dataclass(frozen=True)
class Trapezoidal1D(InputLaw):
    a: float
    b: float
    c: float
    d: float
    tag = "trapezoidal_1d"

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d) or self.a == self.d:
            raise ParameterError("trapezoidal_1d: a <= b <= c <= d with a < d required")

    @property
    def dim(self):
        return 1

    def is_1d(self):
        return True

    @property
    def height(self) -> float:
        return 2.0 / ((self.d - self.a) + (self.c - self.b))

    def bounds(self):
        return np.array([self.a], float), np.array([self.d], float)

    def _masses(self):
        h = self.height
        return h * (self.b - self.a) / 2.0, h * (self.c - self.b)

    def cdf(self, z):
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        z = np.clip(np.asarray(z, dtype=float), a, d)
        m1, m2 = self._masses()
        with np.errstate(divide="ignore", invalid="ignore"):
            rise = h * (z - a) ** 2 / (2.0 * (b - a)) if b > a else np.zeros_like(z)
            fall = 1.0 - h * (d - z) ** 2 / (2.0 * (d - c)) if d > c else np.ones_like(z)
        flat = m1 + h * (z - b)
        return np.where(z < b, rise, np.where(z <= c, flat, fall))

    def pdf(self, z):
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            rise = h * (z - a) / (b - a) if b > a else np.full_like(z, h)
            fall = h * (d - z) / (d - c) if d > c else np.full_like(z, h)
        out = np.where(z < b, rise, np.where(z <= c, h, fall))
        return np.where((z < a) | (z > d), 0.0, out)

    def ppf(self, p):
        a, b, c, d, h = self.a, self.b, self.c, self.d, self.height
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        m1, m2 = self._masses()
        rise = a + np.sqrt(2.0 * (b - a) * p / h)
        flat = b + (p - m1) / h
        fall = d - np.sqrt(2.0 * (d - c) * (1.0 - p) / h)
        return np.where(p < m1, rise, np.where(p <= m1 + m2, flat, fall))

    def draw(self, rng, n):
        return self.ppf(rng.random(n))[:, None]

    def to_dict(self):
        return {"type": self.tag, "a": self.a, "b": self.b, "c": self.c, "d": self.d}


@dataclass(frozen=True)
class Product(InputLaw):
    """Independent concatenation of component laws."""

    parts: tuple[InputLaw, ...]
    tag = "product"

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ParameterError("product: at least one component law required")
        object.__setattr__(self, "parts", parts)

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    def draw(self, rng, n):
        return np.hstack([p.draw(rng, n) for p in self.parts])

    def bounds(self):
        los, his = [], []
        for p in self.parts:
            b = p.bounds()
            if b is None:
                return None
            los.append(b[0])
            his.append(b[1])
        return np.concatenate(los), np.concatenate(his)

    def coordinate_laws(self) -> list[InputLaw] | None:
        """Per-coordinate 1D laws when the product factorises fully, else ``None``."""
        out: list[InputLaw] = []
        for p in self.parts:
            split = _coordinate_laws(p)
            if split is None:
                return None
            out.extend(split)
        return out

    def to_dict(self):
        return {"type": self.tag, "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Empirical(InputLaw):
    """Law known only through a sample; draws resample rows with replacement."""

    values: np.ndarray = field(repr=False)
    tag = "empirical"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ParameterError("empirical: non-empty 2D sample matrix required")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.shape[1]

    def draw(self, rng, n):
        idx = rng.integers(0, self.values.shape[0], size=n)
        return self.values[idx].copy()

    def bounds(self):
        return self.values.min(axis=0), self.values.max(axis=0)

    def to_dict(self):
        return {"type": self.tag, "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class Mapped(InputLaw):
    """Law of ``fn(x)`` for ``x`` drawn from ``base``, with a known bounding box."""

    base: InputLaw
    fn: Any = field(repr=False)
    out_dim: int = 1
    lo: tuple[float, ...] | None = None
    hi: tuple[float, ...] | None = None
    name: str = "mapped"
    tag = "mapped"

    @property
    def dim(self):
        return int(self.out_dim)

    def draw(self, rng, n):
        return np.asarray(self.fn(self.base.draw(rng, n)), float).reshape(n, self.dim)

    def bounds(self):
        if self.lo is None or self.hi is None:
            return None
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def to_dict(self):
        return {"type": self.tag, "name": self.name, "base": self.base.to_dict()}


def _coordinate_laws(law: InputLaw) -> list[InputLaw] | None:
    if isinstance(law, UniformBox):
        return [UniformBox((lo,), (hi,)) for lo, hi in zip(law.lo, law.hi)]
    if isinstance(law, StdGaussian):
        return [StdGaussian(1) for _ in range(law.dim)]
    if isinstance(law, (Triangular1D, Trapezoidal1D)):
        return [law]
    if isinstance(law, Product):
        return law.coordinate_laws()
    return None


def coordinate_laws(law: InputLaw) -> list[InputLaw] | None:
    """Split ``law`` into independent 1D marginals if possible."""
    return _coordinate_laws(law)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    values: np.ndarray
    seed: int
    law_tag: str

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def sample(law: InputLaw, n: int, seed: int) -> SampleBatch:
    """Draw ``n`` i.i.d. rows from ``law``; identical arguments give identical bits."""
    if int(n) < 1:
        raise ParameterError("sample: n >= 1 required")
    values = np.ascontiguousarray(law.draw(make_rng(seed), int(n)), dtype=float)
    return SampleBatch(values=values, seed=int(seed), law_tag=law.tag)


def in_support(law: InputLaw, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean containment test per row."""
    pts = np.atleast_2d(pts)
    if isinstance(law, Triangle2D):
        return np.all(law.barycentric(pts) >= -tol, axis=1)
    if isinstance(law, Product):
        out = np.ones(pts.shape[0], bool)
        j = 0
        for p in law.parts:
            out &= in_support(p, pts[:, j : j + p.dim], tol)
            j += p.dim
        return out
    if isinstance(law, StdGaussian):
        return np.all(np.isfinite(pts), axis=1)
    b = law.bounds()
    if b is None:
        return np.ones(pts.shape[0], bool)
    return np.all((pts >= b[0] - tol) & (pts <= b[1] + tol), axis=1)


def _require_1d(law: InputLaw) -> None:
    if not law.is_1d():
        raise UnsupportedLawError(f"{law.tag} is not a one-dimensional law")


def cdf_1d(law: InputLaw, z):
    _require_1d(law)
    return law.cdf(z)


def pdf_1d(law: InputLaw, z):
    _require_1d(law)
    return law.pdf(z)


def ppf_1d(law: InputLaw, p):
    _require_1d(law)
    return law.ppf(p)


def std_normal_cdf(x):
    return ndtr(x)


def std_normal_ppf(p):
    return ndtri(p)


def _erfinv_seed(x: np.ndarray) -> np.ndarray:
    # Giles' single-precision polynomial in w = -log(1 - x^2)
    w = -np.log((1.0 - x) * (1.0 + x))
    small = w < 5.0
    ws = w - 2.5
    p_small = 2.81022636e-08
    for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
              -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
        p_small = c + p_small * ws
    wb = np.sqrt(np.maximum(w, 5.0)) - 3.0
    p_big = -0.000200214257
    for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
              -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
        p_big = c + p_big * wb
    return np.where(small, p_small, p_big) * x


def erf_inv(p):
    """Inverse error function on (-1, 1), accurate to ~1e-15 after Newton refinement."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(np.abs(arr) < 1.0)):
        raise DomainError("erf_inv: |p| < 1 required")
    x = _erfinv_seed(arr)
    two_over_sqrt_pi = 2.0 / math.sqrt(math.pi)
    for _ in range(2):
        x = x - (erf(x) - arr) / (two_over_sqrt_pi * np.exp(-x * x))
    return x if x.ndim else float(x)


_LAWS = {
    "uniform_box": lambda d: UniformBox(tuple(d["lo"]), tuple(d["hi"])),
    "std_gaussian": lambda d: StdGaussian(int(d["d"])),
    "triangle_2d": lambda d: Triangle2D(tuple(d["v1"]), tuple(d["v2"]), tuple(d["v3"])),
    "triangular_1d": lambda d: Triangular1D(d["a"], d["c"], d["b"]),
    "trapezoidal_1d": lambda d: Trapezoidal1D(d["a"], d["b"], d["c"], d["d"]),
    "product": lambda d: Product(tuple(law_from_dict(p) for p in d["parts"])),
    "empirical": lambda d: Empirical(np.asarray(d["values"], dtype=float)),
}


def law_from_dict(spec: dict[str, Any]) -> InputLaw:
    """Build a law from its run-config description, e.g. ``{"type": "uniform_box", ...}``."""
    try:
        build = _LAWS[spec["type"]]
    except KeyError as exc:
        raise ParameterError(f"unknown law description: {spec!r}") from exc
    return build(spec)
