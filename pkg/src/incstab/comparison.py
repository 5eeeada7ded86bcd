"""Parametric class-K, K-infinity and KL comparison functions.

Three K-infinity families are supported:

* ``linear``:  ``c*r``
* ``power``:   ``c*r**p``
* ``log``:     ``c*log(1 + r)`` (evaluation only; never inverted or composed)

KL functions are separable, ``k(r)*exp(-lam*t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NotInvertibleError, PreconditionError

FAMILIES = ("linear", "power", "log")


@dataclass(frozen=True)
class KInfFn:
    family: str
    c: float
    p: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"c must be positive and finite, got {self.c}")
        if not (np.isfinite(self.p) and self.p > 0):
            raise ValueError(f"p must be positive and finite, got {self.p}")
        if self.family == "linear" and self.p != 1.0:
            raise ValueError("linear family has p = 1")

    @classmethod
    def linear(cls, c=1.0):
        return cls("linear", float(c))

    @classmethod
    def power(cls, c, p):
        return cls("power", float(c), float(p))

    @classmethod
    def log(cls, c=1.0):
        return cls("log", float(c))

    @property
    def invertible(self):
        return self.family in ("linear", "power")

    def __call__(self, r):
        return eval_k(self, r)

    def to_dict(self):
        if self.family == "power":
            return {"family": "power", "c": self.c, "p": self.p}
        return {"family": self.family, "c": self.c}

    @classmethod
    def from_dict(cls, d):
        family = d["family"]
        if family == "power":
            return cls.power(d["c"], d["p"])
        return cls(family, float(d["c"]))


def _normalized(c, p):
    """Power-law ``c*r**p`` in canonical form (``linear`` when ``p == 1``)."""
    if p == 1.0:
        return KInfFn.linear(c)
    return KInfFn.power(c, p)


def eval_k(f: KInfFn, r):
    """Evaluate a K-infinity function; ``r`` may be a scalar or an array."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("class-K functions are defined on [0, inf) only")
    if f.family == "linear":
        out = f.c * r
    elif f.family == "power":
        out = f.c * np.power(r, f.p)
    else:
        out = f.c * np.log1p(r)
    return out if out.ndim else float(out)


def invert(f: KInfFn) -> KInfFn:
    """Closed-form inverse: ``(r/c)**(1/p)`` is again a power law."""
    if not f.invertible:
        raise NotInvertibleError(f"family {f.family!r} has no closed-form inverse here")
    return _normalized(f.c ** (-1.0 / f.p), 1.0 / f.p)


def compose(f: KInfFn, g: KInfFn) -> KInfFn:
    """``f o g`` for power-law families."""
    if not (f.invertible and g.invertible):
        raise NotInvertibleError("composition is only closed on linear/power families")
    return _normalized(f.c * g.c ** f.p, f.p * g.p)


def scale(f: KInfFn, factor: float) -> KInfFn:
    """``factor * f``."""
    if f.family == "log":
        return KInfFn.log(f.c * factor)
    return _normalized(f.c * factor, f.p)


@dataclass(frozen=True)
class KLFn:
    """Separable KL function ``k(r) * exp(-lam * t)``; ``lam`` in 1/time."""

    k: KInfFn
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"decay rate must be positive, got {self.lam}")

    def __call__(self, r, t):
        return eval_kl(self, r, t)

    def alpha(self) -> KInfFn:
        """``r -> beta(r, 0)``."""
        return self.k

    def scaled(self, factor: float) -> "KLFn":
        return KLFn(scale(self.k, factor), self.lam)

    def to_dict(self):
        return {"k": self.k.to_dict(), "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(KInfFn.from_dict(d["k"]), float(d["lambda"]))


def eval_kl(f: KLFn, r, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time argument must be nonnegative")
    out = np.asarray(eval_k(f.k, r)) * np.exp(-f.lam * t)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# class membership on a sample grid
# --------------------------------------------------------------------------


@dataclass
class ClassReport:
    kind: str
    checks: dict = field(default_factory=dict)
    first_violation: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        return {
            "kind": self.kind,
            "passed": self.passed,
            "checks": dict(self.checks),
            "first_violation": dict(self.first_violation),
        }


def default_grid(R=100.0, count=1000):
    """Points in ``(0, R]``, dense near zero (geometric) and across the range."""
    return np.unique(np.concatenate([np.geomspace(1e-6, R, count), np.linspace(R / count, R, count)]))


def verify_class(
    f,
    R: float = 100.0,
    threshold: float = 10.0,
    T: float = 10.0,
    count: int = 1000,
    kind: Optional[str] = None,
) -> ClassReport:
    """Check K-infinity (or KL) membership of ``f`` on a grid.

    ``f`` may be a :class:`KInfFn`, a :class:`KLFn`, or any vectorized
    callable ``f(r)`` / ``f(r, t)`` (pass ``kind="kl"`` for the latter).
    Unboundedness cannot be tested pointwise, so it is replaced by the proxy
    ``f(R) >= threshold``.
    """
    if kind is None:
        kind = "kl" if isinstance(f, KLFn) else "k"
    rs = default_grid(R, count)
    report = ClassReport(kind)

    if kind == "k":
        fn: Callable = f
        _k_checks(report, fn, rs, R, threshold, prefix="")
        return report

    ts = np.linspace(0.0, T, count)
    _k_checks(report, lambda r: f(r, 0.0), rs, R, threshold, prefix="")
    # decreasing in t for each fixed r > 0, tending to zero
    rr, tt = np.meshgrid(rs[:: max(1, len(rs) // 50)], ts, indexing="ij")
    vals = np.asarray(f(rr, tt), dtype=float)
    steps = np.diff(vals, axis=1)
    bad = np.argwhere(steps >= 0)
    report.checks["decreasing_in_t"] = bad.size == 0
    if bad.size:
        i, j = bad[0]
        report.first_violation["decreasing_in_t"] = {"r": float(rr[i, j]), "t": float(tt[i, j + 1])}
    tail = vals[:, -1] / np.maximum(vals[:, 0], np.finfo(float).tiny)
    report.checks["decays_in_t"] = bool(np.all(tail < 1.0))
    return report


def _k_checks(report, fn, rs, R, threshold, prefix):
    zero = float(np.asarray(fn(np.asarray(0.0))))
    report.checks[prefix + "zero_at_zero"] = zero == 0.0
    if zero != 0.0:
        report.first_violation[prefix + "zero_at_zero"] = {"r": 0.0, "value": zero}
    vals = np.asarray(fn(np.concatenate([[0.0], rs])), dtype=float)
    inc = np.diff(vals)
    bad = np.flatnonzero(~(inc > 0))
    report.checks[prefix + "strictly_increasing"] = bad.size == 0
    if bad.size:
        report.first_violation[prefix + "strictly_increasing"] = {"r": float(rs[bad[0]])}
    top = float(np.asarray(fn(np.asarray(R))))
    report.checks[prefix + "unbounded_proxy"] = top >= threshold
    if top < threshold:
        report.first_violation[prefix + "unbounded_proxy"] = {"r": R, "value": top, "threshold": threshold}


# --------------------------------------------------------------------------
# rho construction
# --------------------------------------------------------------------------


def construct_rho(beta: KLFn, gamma: KInfFn, R: float = 100.0, count: int = 1000) -> KInfFn:
    """Disturbance scaling ``rho(r) = 0.5 * gamma^-1(alpha^-1(r) / 4)``.

    ``alpha(r) = beta(r, 0)`` must dominate the identity strictly; this is
    checked on :func:`default_grid` over ``(0, R]`` and never patched up.
    The result is exact in the parameters, so ``gamma(2*rho(r))`` equals
    ``alpha^-1(r)/4`` up to rounding.

    Raises
    ------
    PreconditionError
        ``alpha(r) <= r`` at some sampled ``r`` (named in the message).
    NotInvertibleError
        ``alpha`` or ``gamma`` is not a power-law family.
    """
    alpha = beta.alpha()
    rs = default_grid(R, count)
    bad = np.flatnonzero(eval_k(alpha, rs) <= rs)
    if bad.size:
        r_bad = float(rs[bad[0]])
        raise PreconditionError(
            f"beta(r, 0) <= r at r = {r_bad:.6g}; rescale beta so that beta(r, 0) > r"
        )
    alpha_inv = invert(alpha)
    gamma_inv = invert(gamma)
    quarter = KInfFn.linear(0.25)
    return scale(compose(gamma_inv, compose(quarter, alpha_inv)), 0.5)
