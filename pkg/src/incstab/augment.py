"""The doubled systems used to reduce incremental stability to set stability.

``gas`` mode stacks two copies of the system driven by one shared input.
``iss`` mode drives the copies with ``sat_U(w1 +- rho(d(x1, x2)) * w2)`` where
``w1`` ranges over ``U`` and ``w2`` over the closed Euclidean unit ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .comparison import KInfFn, eval_k
from .errors import DimensionError, SignalError
from .metric import Metric, diag_dist, metric_from_dict
from .sets import Ball, ConvexSet, ProductSet
from .system import (
    DEFAULT_HORIZON,
    DEFAULT_STEP,
    ControlSystem,
    InputSignal,
    Trajectory,
    _input_fn,
    _step_count,
    rk4,
)


def sat(u, U: ConvexSet):
    """Euclidean projection of ``u`` onto the closed convex set ``U``.

    Identity inside ``U``; componentwise clamp for boxes; radial scaling for
    balls. Nonexpansive, so ``||sat(a) - sat(b)|| <= ||a - b||``.
    """
    return U.project(u)


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    base: ControlSystem
    mode: str
    metric: Metric | None = None
    rho: KInfFn | None = None
    _input_set: ConvexSet = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("gas", "iss"):
            raise ValueError("mode must be 'gas' or 'iss'")
        if self.mode == "iss":
            if self.metric is None or self.rho is None:
                raise ValueError("iss mode needs a metric and rho")
            if self.base.m == 0:
                raise DimensionError("iss mode needs a system with inputs")
            D = ProductSet((self.base.input_set, Ball(1.0, self.base.m)))
        else:
            D = self.base.input_set
        object.__setattr__(self, "_input_set", D)

    @property
    def n(self):
        return 2 * self.base.n

    @property
    def m(self):
        return self.input_set.dim

    @property
    def input_set(self):
        return self._input_set

    def inputs(self, z, w):
        """Inputs ``(u1, u2)`` seen by the two copies at state ``z`` and input ``w``."""
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.mode == "gas":
            return w, w
        n, m = self.base.n, self.base.m
        # rho(d) is re-evaluated at every call, i.e. at every RK4 stage
        r = eval_k(self.rho, self.metric.dist(z[..., :n], z[..., n:]))
        r = np.asarray(r)[..., None]
        w1, w2 = w[..., :m], w[..., m:]
        U = self.base.input_set
        return sat(w1 + r * w2, U), sat(w1 - r * w2, U)

    def f(self, z, w):
        n = self.base.n
        z = np.asarray(z, dtype=float)
        u1, u2 = self.inputs(z, w)
        return np.concatenate([self.base.f(z[..., :n], u1), self.base.f(z[..., n:], u2)], axis=-1)

    def to_dict(self):
        """System JSON for the doubled system.

        For ``gas`` mode the result is an ordinary system file over x1..x(2n).
        For ``iss`` mode each field component is printed with explicit
        ``sat(...)`` and ``rho_dist`` placeholders, and the construction block
        carries everything needed to rebuild it.
        """
        n, m = self.base.n, self.base.m
        first = {f"x{i}": f"x{i}" for i in range(1, n + 1)}
        second = {f"x{i}": f"x{n + i}" for i in range(1, n + 1)}
        out = {
            "name": f"{self.base.name}_augmented_{self.mode}",
            "state_dim": 2 * n,
            "input_dim": self.m,
            "input_set": self.input_set.to_dict(),
        }
        if self.mode == "gas":
            out["field"] = [ex.to_string(ex.rename(c, first)) for c in self.base.field] + [
                ex.to_string(ex.rename(c, second)) for c in self.base.field
            ]
            out["construction"] = {"mode": "gas", "base": self.base.to_dict()}
            return out
        w1 = [f"u{j}" for j in range(1, m + 1)]
        w2 = [f"u{m + j}" for j in range(1, m + 1)]
        arg_plus = "[" + ", ".join(f"{a} + rho_dist*{b}" for a, b in zip(w1, w2)) + "]"
        arg_minus = "[" + ", ".join(f"{a} - rho_dist*{b}" for a, b in zip(w1, w2)) + "]"
        fields = []
        for mapping, arg in ((first, arg_plus), (second, arg_minus)):
            for c in self.base.field:
                s = ex.to_string(ex.rename(c, {**mapping, **{f"u{j}": f"U_{j}_" for j in range(1, m + 1)}}))
                for j in range(1, m + 1):
                    s = s.replace(f"U_{j}_", f"sat({arg})[{j}]")
                fields.append(s)
        out["field"] = fields
        out["construction"] = {
            "mode": "iss",
            "base": self.base.to_dict(),
            "metric": self.metric.to_dict(),
            "rho": self.rho.to_dict(),
            "rho_dist": "rho(d(x[1..n], x[n+1..2n]))",
            "sat": {"input_set": self.base.input_set.to_dict(), "projection": "euclidean"},
        }
        return out

    @classmethod
    def from_dict(cls, d):
        c = d["construction"]
        base = ControlSystem.from_dict(c["base"])
        if c["mode"] == "gas":
            return augment_gas(base)
        return augment_iss(base, metric_from_dict(c["metric"], base.n), KInfFn.from_dict(c["rho"]))


def augment_gas(sys: ControlSystem) -> AugmentedSystem:
    return AugmentedSystem(sys, "gas")


def augment_iss(sys: ControlSystem, d: Metric, rho: KInfFn) -> AugmentedSystem:
    return AugmentedSystem(sys, "iss", d, rho)


def disturbance_signal(asys: AugmentedSystem, duration, dt, rng, batch=None) -> InputSignal:
    """Random piecewise-constant ``w = (w1, w2)`` with ``w1 in U`` and ``w2`` uniform in the unit ball."""
    cells = int(np.ceil(duration / dt - 1e-9))
    count = cells * (batch or 1)
    vals = asys.input_set.sample(rng, count)
    if batch is not None:
        vals = vals.reshape(cells, batch, asys.m)
    return InputSignal(vals, dt)


@dataclass(frozen=True, eq=False)
class AugmentedRun:
    trajectory: Trajectory
    diagonal_distance: np.ndarray


def integrate_augmented(
    asys: AugmentedSystem,
    z0,
    signal: InputSignal | None,
    horizon: float = DEFAULT_HORIZON,
    step: float = DEFAULT_STEP,
    d: Metric | None = None,
    record_every: int = 1,
) -> AugmentedRun:
    """Integrate the doubled system and trace ``d_hat(z(t), Delta) = d(x1(t), x2(t))``.

    ``d`` defaults to the metric of an iss-mode system and is required for
    gas mode.
    """
    d = d if d is not None else asys.metric
    if d is None:
        raise ValueError("a metric is needed for the diagonal-distance trace")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape[-1] != asys.n:
        raise DimensionError(f"initial state has dimension {z0.shape[-1]}, augmented system has {asys.n}")
    if signal is not None and not np.all(asys.input_set.contains(signal.values, 1e-12)):
        raise SignalError("augmented input leaves U x B1(0)" if asys.mode == "iss" else "signal leaves U")
    if signal is None and asys.m:
        raise SignalError("an input signal is required")
    steps = _step_count(horizon, step)
    xs = rk4(asys.f, z0, _input_fn(signal, steps, step, asys.m, z0.shape[:-1]), step, steps, record_every)
    t = np.arange(xs.shape[0]) * (step * record_every)
    return AugmentedRun(Trajectory(t, xs, signal), diag_dist(d, xs))
