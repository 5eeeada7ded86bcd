"""Metrics on R^n, the product metric on R^(2n), and point-to-set distances.

All ``dist`` methods broadcast over leading axes: ``x`` and ``y`` of shape
``(..., n)`` give distances of shape ``(...)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import DimensionError, NonFiniteError
from .sets import Box, DiagonalSet, PointSet


def _pair(x, y, n=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise DimensionError(f"dimension mismatch: {x.shape[-1:]} vs {y.shape[-1:]}")
    if n is not None and x.shape[-1] != n:
        raise DimensionError(f"metric is defined on R^{n}, got points of dimension {x.shape[-1]}")
    return x, y


class Metric:
    n = None

    def dist(self, x, y):
        raise NotImplementedError

    def __call__(self, x, y):
        return self.dist(x, y)

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Euclidean(Metric):
    n: int | None = None

    def dist(self, x, y):
        x, y = _pair(x, y, self.n)
        return np.linalg.norm(x - y, axis=-1)

    def to_dict(self):
        return {"kind": "euclidean"}


@dataclass(frozen=True, eq=False)
class Weighted(Metric):
    """``sqrt((x - y)^T P (x - y))`` with ``P`` symmetric positive definite."""

    P: np.ndarray
    _chol: np.ndarray = field(repr=False)

    def __init__(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float)).copy()
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionError("P must be a square matrix")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12):
            raise ValueError("P must be symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("P must be positive definite")
        P.flags.writeable = False
        object.__setattr__(self, "P", P)
        # d(x, y) = ||L^T (x - y)|| with P = L L^T
        object.__setattr__(self, "_chol", np.linalg.cholesky(P))

    @property
    def n(self):
        return self.P.shape[0]

    def dist(self, x, y):
        x, y = _pair(x, y, self.n)
        return np.linalg.norm((x - y) @ self._chol, axis=-1)

    def to_dict(self):
        return {"kind": "weighted", "P": self.P.tolist()}


@dataclass(frozen=True, eq=False)
class Pullback(Metric):
    """``||T(x) - T(y)||`` for a coordinate change ``T`` given as expressions in x1..xn."""

    exprs: tuple
    _fns: tuple = field(repr=False)

    def __init__(self, exprs):
        exprs = tuple(exprs)
        if not exprs:
            raise DimensionError("pullback map needs at least one component")
        object.__setattr__(self, "exprs", exprs)
        object.__setattr__(self, "_fns", tuple(ex.compile_expr(e) for e in exprs))

    @classmethod
    def from_strings(cls, components):
        n = len(components)
        return cls(ex.parse(c, n, 0) for c in components)

    @property
    def n(self):
        return len(self.exprs)

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise DimensionError(f"pullback map expects dimension {self.n}, got {x.shape[-1]}")
        b = ex.bind("x", x)
        try:
            cols = [np.broadcast_to(f(b), x.shape[:-1]) for f in self._fns]
        except NonFiniteError as e:
            raise NonFiniteError(f"pullback map evaluation failed: {e}") from None
        return np.stack(cols, axis=-1)

    def dist(self, x, y):
        x, y = _pair(x, y, self.n)
        return np.linalg.norm(self.transform(x) - self.transform(y), axis=-1)

    def to_dict(self):
        return {"kind": "pullback", "map": [ex.to_string(e) for e in self.exprs]}

    def collision_check(self, box: Box, samples=2000, seed=0, tol=1e-9):
        """Sampled injectivity test on ``box``.

        Samples ``samples`` random points and a tensor grid of about the same
        size. Returns the number of distinct sample pairs whose images lie within
        ``tol``; warns when it is nonzero. Global injectivity is not decidable
        for this expression class, so this is evidence only.
        """
        from scipy.spatial import cKDTree

        rng = np.random.default_rng(seed)
        # random points plus a tensor grid: symmetric grids expose folds such as x -> x^2 exactly
        per = max(2, int(samples ** (1.0 / box.dim)))
        axes = [np.linspace(a, b, per) for a, b in zip(box.lo, box.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
        pts = np.concatenate([box.sample(rng, samples), grid])
        img = self.transform(pts)
        pairs = cKDTree(img).query_pairs(tol, output_type="ndarray")
        if len(pairs):
            gaps = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
            pairs = pairs[gaps > tol]
        if len(pairs):
            warnings.warn(
                f"pullback map is not injective on the sampled box: {len(pairs)} colliding pairs",
                RuntimeWarning,
                stacklevel=2,
            )
        return len(pairs)


@dataclass(frozen=True)
class ProductMetric(Metric):
    """``d_hat(z, z') = d(x1, x1') + d(x2, x2')`` on ``R^(2n)``."""

    base: Metric
    n_base: int

    @property
    def n(self):
        return 2 * self.n_base

    def dist(self, z, w):
        z, w = _pair(z, w, self.n)
        k = self.n_base
        return self.base.dist(z[..., :k], w[..., :k]) + self.base.dist(z[..., k:], w[..., k:])

    def to_dict(self):
        return {"kind": "product", "base": self.base.to_dict(), "n": self.n_base}


def product_metric(d: Metric, n: int | None = None) -> ProductMetric:
    n = n if n is not None else d.n
    if n is None:
        raise DimensionError("base dimension needed for a euclidean product metric")
    return ProductMetric(d, int(n))


def metric_from_dict(d, n: int | None = None) -> Metric:
    kind = d.get("kind")
    if kind == "euclidean":
        return Euclidean(n)
    if kind == "weighted":
        m = Weighted(d["P"])
        if n is not None and m.n != n:
            raise DimensionError(f"weight matrix is {m.n}x{m.n}, state dimension is {n}")
        return m
    if kind == "pullback":
        comps = d["map"]
        if n is not None and len(comps) != n:
            raise DimensionError(f"pullback map has {len(comps)} components, state dimension is {n}")
        return Pullback.from_strings(comps)
    if kind == "product":
        return ProductMetric(metric_from_dict(d["base"], d.get("n")), int(d["n"]))
    raise ValueError(f"unknown metric kind {kind!r}")


def dist(d: Metric, x, y):
    return d.dist(x, y)


# --------------------------------------------------------------------------
# point-to-set distances
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchBudget:
    starts: int = 16
    max_iter: int = 500
    tol: float = 1e-10
    seed: int = 0
    bounds: Box | None = None


@dataclass
class DistanceEstimate:
    value: float
    exact: bool
    converged: bool
    witness: np.ndarray | None = None
    starts: int = 0
    iterations: int = 0

    def __float__(self):
        return float(self.value)


def compass_search(fun, starts, lo, hi, step0=None, max_iter=500, tol=1e-10):
    """Batched box-constrained compass search, one independent run per start.

    Each iteration polls ``x +- h*e_i`` for every start at once and moves to
    the best improving poll point (first one on ties); otherwise ``h`` is
    halved. A run stops when ``h`` falls below ``tol * max(1, width)``.

    Returns ``(points, values, converged, iterations)``.
    """
    p = np.array(starts, dtype=float)
    S, k = p.shape
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = float(np.max(hi - lo)) if k else 0.0
    h = np.full(S, step0 if step0 is not None else 0.25 * max(width, 1e-12))
    stop = tol * max(1.0, width)
    fp = np.asarray(fun(p), dtype=float)
    dirs = np.concatenate([np.eye(k), -np.eye(k)])
    it = 0
    for it in range(1, max_iter + 1):
        active = h >= stop
        if not active.any():
            break
        cand = np.clip(p[:, None, :] + h[:, None, None] * dirs[None], lo, hi)
        fc = np.asarray(fun(cand.reshape(-1, k)), dtype=float).reshape(S, 2 * k)
        best = np.argmin(fc, axis=1)
        fbest = fc[np.arange(S), best]
        improve = active & (fbest < fp)
        p[improve] = cand[improve, best[improve]]
        fp[improve] = fbest[improve]
        shrink = active & ~improve
        h[shrink] *= 0.5
    return p, fp, h < stop, it


def _minimize(fun, lo, hi, budget: SearchBudget):
    rng = np.random.default_rng(budget.seed)
    starts = lo + (hi - lo) * rng.random((budget.starts, lo.shape[0]))
    pts, vals, conv, iters = compass_search(fun, starts, lo, hi, max_iter=budget.max_iter, tol=budget.tol)
    # deterministic merge: min value, ties broken by start index
    best = int(np.argmin(vals))
    return pts[best], float(vals[best]), bool(conv[best]), iters


def point_to_set(d: Metric, x, A, budget: SearchBudget | None = None) -> DistanceEstimate:
    """``inf_{y in A} d(x, y)``.

    Exact for point sets and whenever ``x`` lies in ``A``. Otherwise a
    multi-start compass search over a compact surrogate (``budget.bounds``,
    or ``A`` itself for boxes, or the bounding box of the two halves of
    ``x`` widened by 10% for the diagonal) yields an upper bound; the
    estimate is flagged when the search did not reach its step tolerance.
    """
    budget = budget or SearchBudget()
    x = np.asarray(x, dtype=float)
    if isinstance(A, PointSet):
        return DistanceEstimate(float(d.dist(x, A.a)), True, True, A.a.copy())
    if bool(A.contains(x)):
        return DistanceEstimate(0.0, True, True, x.copy())

    if isinstance(A, DiagonalSet):
        n = A.n
        if x.shape[-1] != 2 * n:
            raise DimensionError(f"point has dimension {x.shape[-1]}, diagonal lives in R^{2 * n}")
        x1, x2 = x[:n], x[n:]
        if budget.bounds is not None:
            lo, hi = budget.bounds.lo, budget.bounds.hi
        else:
            lo, hi = np.minimum(x1, x2), np.maximum(x1, x2)
            pad = 0.1 * (hi - lo) + 1e-3
            lo, hi = lo - pad, hi + pad

        def fun(xp):
            return d.dist(np.concatenate([np.broadcast_to(x1, xp.shape), np.broadcast_to(x2, xp.shape)], axis=-1),
                          np.concatenate([xp, xp], axis=-1))

        w, val, conv, iters = _minimize(fun, lo, hi, budget)
        return DistanceEstimate(val, False, conv, np.concatenate([w, w]), budget.starts, iters)

    if isinstance(A, Box):
        if isinstance(d, Euclidean):
            y = A.project(x)
            return DistanceEstimate(float(d.dist(x, y)), True, True, y)
        w, val, conv, iters = _minimize(lambda y: d.dist(x, y), A.lo, A.hi, budget)
        return DistanceEstimate(val, False, conv, w, budget.starts, iters)

    raise TypeError(f"unsupported set {type(A).__name__}")


def diag_dist(d: Metric, z):
    """Closed-form distance from ``z = [x1; x2]`` to the diagonal: ``d(x1, x2)``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] % 2:
        raise DimensionError("diagonal distance needs an even ambient dimension")
    n = z.shape[-1] // 2
    return d.dist(z[..., :n], z[..., n:])


def set_distance(d: Metric, x, A, budget: SearchBudget | None = None):
    """Vectorized ``d(x, A)`` for the closed-form cases; falls back to search."""
    x = np.asarray(x, dtype=float)
    if isinstance(A, PointSet):
        return d.dist(x, np.broadcast_to(A.a, x.shape))
    if isinstance(A, DiagonalSet):
        base = d.base if isinstance(d, ProductMetric) else d
        return diag_dist(base, x)
    if isinstance(A, Box) and isinstance(d, Euclidean):
        return d.dist(x, A.project(x))
    flat = x.reshape(-1, x.shape[-1])
    out = np.array([point_to_set(d, p, A, budget).value for p in flat])
    return out.reshape(x.shape[:-1])


# --------------------------------------------------------------------------
# sampled metric diagnostics
# --------------------------------------------------------------------------


@dataclass
class AxiomReport:
    identity: float
    symmetry: float
    triangle: float
    positivity_min: float
    tol: float
    samples: int

    @property
    def passed(self):
        return (
            self.identity <= self.tol
            and self.symmetry <= self.tol
            and self.triangle <= self.tol
            and self.positivity_min > 0
        )


def check_axioms(d: Metric, box: Box, samples=1000, seed=0, tol=1e-9) -> AxiomReport:
    """Worst sampled violation of each metric axiom on ``box``."""
    rng = np.random.default_rng(seed)
    x, y, z = (box.sample(rng, samples) for _ in range(3))
    dxy, dyx = d.dist(x, y), d.dist(y, x)
    triangle = d.dist(x, z) - (dxy + d.dist(y, z))
    return AxiomReport(
        identity=float(np.max(np.abs(d.dist(x, x)))),
        symmetry=float(np.max(np.abs(dxy - dyx))),
        triangle=float(np.max(triangle)),
        positivity_min=float(np.min(dxy[np.any(x != y, axis=-1)])),
        tol=tol,
        samples=samples,
    )


def continuity_modulus(d: Metric, box: Box, samples=1000, radius=1e-3, seed=0) -> float:
    """Largest observed ``|d(x,y) - d(x',y)| / ||x - x'||`` over ``||x - x'|| <= radius``.

    A finite, moderate value supports the standing assumption that
    ``x -> d(x, y)`` is continuous in the Euclidean topology.
    """
    rng = np.random.default_rng(seed)
    x = box.sample(rng, samples)
    y = box.sample(rng, samples)
    step = rng.standard_normal(x.shape)
    step *= (radius * rng.random((samples, 1))) / np.linalg.norm(step, axis=1, keepdims=True)
    xp = x + step
    num = np.abs(d.dist(x, y) - d.dist(xp, y))
    return float(np.max(num / np.linalg.norm(step, axis=1)))
