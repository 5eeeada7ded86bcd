"""Compact convex sets (boxes, balls, products) and set descriptors.

Input sets and sampling domains are :class:`Box`, :class:`Ball` or a
:class:`ProductSet` of those. Every one of them knows its exact Euclidean
projection, which is what ``sat_U`` needs. :class:`PointSet` and
:class:`DiagonalSet` only serve as targets for point-to-set distances.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


class ConvexSet:
    dim: int

    def contains(self, u, tol=0.0):
        raise NotImplementedError

    def project(self, u):
        raise NotImplementedError

    def sample(self, rng, count):
        raise NotImplementedError

    def bounds(self):
        """Axis-aligned bounding box as ``(lo, hi)`` arrays."""
        raise NotImplementedError

    def extreme_points(self, limit=16):
        """A few extreme points, used for worst-case constant inputs."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box needs finite bounds with lo <= hi")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo, hi, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lo.shape[0]

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def contains(self, u, tol=0.0):
        u = np.asarray(u, dtype=float)
        return np.all((u >= self.lo - tol) & (u <= self.hi + tol), axis=-1)

    def project(self, u):
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)

    def sample(self, rng, count):
        return self.lo + (self.hi - self.lo) * rng.random((count, self.dim))

    def bounds(self):
        return self.lo, self.hi

    def extreme_points(self, limit=16):
        if self.dim == 0:
            return np.zeros((1, 0))
        pts = [np.where(bits, self.hi, self.lo) for bits in itertools.product([1, 0], repeat=self.dim)]
        return np.array(pts[:limit])

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class Ball(ConvexSet):
    """Origin-centred closed Euclidean ball."""

    radius: float
    dim: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.dim < 1:
            raise DimensionError("ball needs dimension >= 1")

    def contains(self, u, tol=0.0):
        return np.linalg.norm(np.asarray(u, dtype=float), axis=-1) <= self.radius + tol

    def project(self, u):
        u = np.asarray(u, dtype=float)
        norm = np.linalg.norm(u, axis=-1, keepdims=True)
        # scaling only happens when norm > radius > 0, so no division by zero
        factor = np.where(norm > self.radius, self.radius / np.where(norm > self.radius, norm, 1.0), 1.0)
        out = u * factor
        # rounding can leave a scaled point a hair outside; nudge it in so projection is idempotent
        for _ in range(8):
            over = np.linalg.norm(out, axis=-1, keepdims=True) > self.radius
            if not over.any():
                break
            out = np.where(over, out * (1.0 - 2.0**-52), out)
        return out

    def sample(self, rng, count):
        g = rng.standard_normal((count, self.dim))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        r = self.radius * rng.random((count, 1)) ** (1.0 / self.dim)
        return g * r

    def bounds(self):
        return np.full(self.dim, -self.radius), np.full(self.dim, self.radius)

    def extreme_points(self, limit=16):
        eye = np.eye(self.dim) * self.radius
        return np.concatenate([eye, -eye])[:limit]

    def to_dict(self):
        return {"type": "ball", "radius": self.radius, "dim": self.dim}


@dataclass(frozen=True)
class ProductSet(ConvexSet):
    factors: tuple

    @property
    def dim(self):
        return sum(f.dim for f in self.factors)

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        out, i = [], 0
        for f in self.factors:
            out.append(u[..., i:i + f.dim])
            i += f.dim
        return out

    def contains(self, u, tol=0.0):
        parts = self._split(u)
        ok = True
        for f, p in zip(self.factors, parts):
            ok = np.logical_and(ok, f.contains(p, tol))
        return ok

    def project(self, u):
        return np.concatenate([f.project(p) for f, p in zip(self.factors, self._split(u))], axis=-1)

    def sample(self, rng, count):
        return np.concatenate([f.sample(rng, count) for f in self.factors], axis=1)

    def bounds(self):
        los, his = zip(*(f.bounds() for f in self.factors))
        return np.concatenate(los), np.concatenate(his)

    def extreme_points(self, limit=16):
        pts = [np.concatenate(c) for c in itertools.product(*(f.extreme_points(limit) for f in self.factors))]
        return np.array(pts[:limit])

    def to_dict(self):
        return {"type": "product", "factors": [f.to_dict() for f in self.factors]}


def input_set_from_dict(d, dim=None) -> ConvexSet:
    kind = d.get("type")
    if kind == "box":
        box = Box(d["lo"], d["hi"])
        if dim is not None and box.dim != dim:
            raise DimensionError(f"input box has dimension {box.dim}, expected {dim}")
        return box
    if kind == "ball":
        bdim = int(d.get("dim", dim if dim is not None else 0))
        if dim is not None and bdim != dim:
            raise DimensionError(f"input ball has dimension {bdim}, expected {dim}")
        return Ball(float(d["radius"]), bdim)
    if kind == "product":
        return ProductSet(tuple(input_set_from_dict(f) for f in d["factors"]))
    raise ValueError(f"unknown input set type {kind!r}")


# --------------------------------------------------------------------------
# targets for point-to-set distances
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointSet:
    a: np.ndarray

    def __init__(self, a):
        a = np.atleast_1d(np.asarray(a, dtype=float)).copy()
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @property
    def dim(self):
        return self.a.shape[0]

    def contains(self, x, tol=0.0):
        return np.all(np.abs(np.asarray(x) - self.a) <= tol, axis=-1)

    def to_dict(self):
        return {"kind": "point", "a": self.a.tolist()}


@dataclass(frozen=True)
class DiagonalSet:
    """``{[x; x] : x in R^n}`` inside ``R^(2n)``."""

    n: int

    @property
    def dim(self):
        return 2 * self.n

    def contains(self, z, tol=0.0):
        z = np.asarray(z, dtype=float)
        return np.all(np.abs(z[..., : self.n] - z[..., self.n:]) <= tol, axis=-1)

    def to_dict(self):
        return {"kind": "diagonal", "n": self.n}


def target_from_dict(d):
    kind = d.get("kind")
    if kind == "point":
        return PointSet(d["a"])
    if kind == "diagonal":
        return DiagonalSet(int(d["n"]))
    if kind == "box":
        return Box(d["lo"], d["hi"])
    raise ValueError(f"unknown set kind {kind!r}")


def diagonal(ambient_dim: int) -> DiagonalSet:
    if ambient_dim % 2:
        raise DimensionError("the diagonal set needs an even ambient dimension")
    return DiagonalSet(ambient_dim // 2)
