"""Control systems, piecewise-constant input signals and fixed-step RK4."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import DimensionError, DivergenceError, NonFiniteError, SignalError
from .sets import Box, ConvexSet, input_set_from_dict

DIVERGENCE_BOUND = 1e8
DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 10.0


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """``xdot = f(x, u)`` with ``x`` in R^n and ``u`` in a compact convex set."""

    n: int
    m: int
    input_set: ConvexSet
    field: tuple
    name: str = "system"
    _fns: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.field) != self.n:
            raise DimensionError(f"field has {len(self.field)} components, state dimension is {self.n}")
        if self.input_set.dim != self.m:
            raise DimensionError(f"input set has dimension {self.input_set.dim}, input dimension is {self.m}")
        allowed = set(ex.state_names("x", self.n)) | set(ex.state_names("u", self.m))
        for comp in self.field:
            extra = ex.variables(comp) - allowed
            if extra:
                raise DimensionError(f"vector field uses {sorted(extra)}; only x1..xn, u1..um allowed")
        object.__setattr__(self, "_fns", tuple(ex.compile_expr(c) for c in self.field))

    @classmethod
    def from_strings(cls, field, input_set=None, m=0, name="system"):
        n = len(field)
        if input_set is None:
            input_set = Box(np.zeros(m), np.zeros(m)) if m == 0 else Box.cube(-1, 1, m)
        m = input_set.dim
        return cls(n, m, input_set, tuple(ex.parse(s, n, m) for s in field), name)

    @classmethod
    def from_dict(cls, d):
        n, m = int(d["state_dim"]), int(d["input_dim"])
        if "input_set" in d:
            U = input_set_from_dict(d["input_set"], m)
        elif m == 0:
            U = Box([], [])
        else:
            raise DimensionError("input_set is required when input_dim > 0")
        comps = d["field"]
        if len(comps) != n:
            raise DimensionError(f"field has {len(comps)} components, state_dim is {n}")
        return cls(n, m, U, tuple(ex.parse(s, n, m) for s in comps), d.get("name", "system"))

    def to_dict(self):
        return {
            "name": self.name,
            "state_dim": self.n,
            "input_dim": self.m,
            "input_set": self.input_set.to_dict(),
            "field": [ex.to_string(c) for c in self.field],
        }

    def f(self, x, u):
        """Vector field on stacked arrays: ``x (..., n)``, ``u (..., m)`` -> ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        b = ex.bind("x", x)
        b.update(ex.bind("u", u))
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return np.stack([np.broadcast_to(fn(b), shape) for fn in self._fns], axis=-1)


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Piecewise-constant signal: ``values[k]`` holds on ``[k*dt, (k+1)*dt)``.

    ``values`` has shape ``(cells, m)``, or ``(cells, batch, m)`` for a batch
    of signals sharing one grid.
    """

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim not in (2, 3) or v.shape[0] < 1:
            raise SignalError("signal values must have shape (cells, m) or (cells, batch, m)")
        if not self.dt > 0:
            raise SignalError("signal grid step must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def duration(self):
        return self.values.shape[0] * self.dt

    @property
    def m(self):
        return self.values.shape[-1]

    @property
    def batched(self):
        return self.values.ndim == 3

    def check_in(self, U: ConvexSet, tol=1e-12):
        if not np.all(U.contains(self.values, tol)):
            raise SignalError("signal leaves the input set")
        return self

    def to_dict(self):
        return {"dt": self.dt, "values": self.values.tolist()}


def constant_signal(value, duration, dt=None, batch=None) -> InputSignal:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    dt = dt or duration
    cells = int(round(duration / dt))
    if batch is None:
        return InputSignal(np.broadcast_to(value, (cells, value.shape[-1])).copy(), dt)
    return InputSignal(np.broadcast_to(value, (cells, batch, value.shape[-1])).copy(), dt)


def random_signal(U: ConvexSet, duration, dt, rng, batch=None) -> InputSignal:
    """Uniform i.i.d. cell values drawn from ``U`` (so always inside ``U``)."""
    cells = int(np.ceil(duration / dt - 1e-9))
    if batch is None:
        return InputSignal(U.sample(rng, cells), dt)
    vals = U.sample(rng, cells * batch).reshape(cells, batch, U.dim)
    return InputSignal(vals, dt)


def sup_norm_diff(a: InputSignal, b: InputSignal):
    """``max_k ||a_k - b_k||``; sup and ess-sup agree for piecewise-constant signals."""
    if a.dt != b.dt or a.values.shape != b.values.shape:
        raise SignalError("signals live on different grids")
    d = np.linalg.norm(a.values - b.values, axis=-1)
    out = d.max(axis=0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    signal: InputSignal | None = None

    def to_csv(self, path):
        if self.x.ndim != 2:
            raise DimensionError("only single trajectories are written as CSV")
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i}" for i in range(1, n + 1)])
            for tk, xk in zip(self.t, self.x):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in xk])


def _steps_per_cell(sig_dt, step):
    ratio = sig_dt / step
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise SignalError(f"signal grid step {sig_dt} is not a multiple of the integration step {step}")
    return k


def _step_count(horizon, step):
    count = int(round(horizon / step))
    if count < 1 or abs(horizon - count * step) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of step {step}")
    return count


def rk4(field_fn, x0, inputs, step, steps, record_every=1, bound=DIVERGENCE_BOUND):
    """Classical fixed-step RK4.

    ``inputs(k)`` returns the (held) input for step ``k``. Returns the states at
    steps ``0, record_every, 2*record_every, ...`` (shape ``(records, ...)``).
    Raises :class:`DivergenceError` once any component exceeds ``bound`` in
    magnitude (or the state becomes non-finite).
    """
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    half = 0.5 * step
    for k in range(steps):
        u = inputs(k)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                k1 = field_fn(x, u)
                k2 = field_fn(x + half * k1, u)
                k3 = field_fn(x + half * k2, u)
                k4 = field_fn(x + step * k3, u)
        except NonFiniteError as e:
            raise NonFiniteError(f"field evaluation failed near t = {k * step:.6g}: {e}") from None
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > bound:
            t = (k + 1) * step
            raise DivergenceError(f"state exceeded {bound:g} at t = {t:.6g} (not forward complete)", t)
        if (k + 1) % record_every == 0:
            out.append(x.copy())
    return np.array(out)


def _input_fn(signal, steps, step, m, batch_shape=()):
    if m == 0 and signal is None:
        u = np.zeros(batch_shape + (0,))
        return lambda k: u
    per_cell = _steps_per_cell(signal.dt, step)
    if signal.duration + 1e-9 * signal.dt < steps * step:
        raise SignalError(f"signal lasts {signal.duration}, shorter than the horizon {steps * step}")
    if signal.m != m:
        raise DimensionError(f"signal has dimension {signal.m}, system input dimension is {m}")
    vals = signal.values
    return lambda k: vals[k // per_cell]


def integrate(
    sys: ControlSystem,
    x0,
    sig: InputSignal | None = None,
    horizon: float = DEFAULT_HORIZON,
    step: float = DEFAULT_STEP,
    record_every: int = 1,
) -> Trajectory:
    """Integrate ``sys`` from ``x0`` under ``sig`` with fixed-step RK4.

    ``x0`` of shape ``(n,)`` gives one trajectory; ``(batch, n)`` together
    with a batched signal integrates a whole ensemble in lockstep. The signal
    grid step must be a multiple of ``step`` so every RK4 step sees one held
    input value.

    Raises
    ------
    DivergenceError
        Some component left ``[-1e8, 1e8]``; ``.time`` is the blow-up time.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    steps = _step_count(horizon, step)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != sys.n:
        raise DimensionError(f"initial state has dimension {x0.shape[-1]}, system has {sys.n}")
    if sig is None and sys.m:
        raise SignalError("an input signal is required for systems with inputs")
    if sig is not None:
        sig.check_in(sys.input_set)
    inputs = _input_fn(sig, steps, step, sys.m, x0.shape[:-1])
    xs = rk4(sys.f, x0, inputs, step, steps, record_every)
    t = np.arange(xs.shape[0]) * (step * record_every)
    return Trajectory(t, xs, sig)


def lipschitz_estimate(sys: ControlSystem, Q: Box, samples: int = 10000, seed: int = 0) -> float:
    """Sampled lower bound on the Lipschitz constant of ``f(., u)`` over ``Q``.

    Half of the pairs are independent uniform draws, half are close pairs
    (Euclidean gap below 1e-3 of the box width) that probe the local slope.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    half = samples // 2
    x = Q.sample(rng, samples)
    y = np.empty_like(x)
    y[:half] = Q.sample(rng, half)
    width = float(np.max(Q.hi - Q.lo)) or 1.0
    jitter = rng.standard_normal((samples - half, sys.n)) * (1e-3 * width)
    y[half:] = Q.project(x[half:] + jitter)
    u = sys.input_set.sample(rng, samples)
    gap = np.linalg.norm(x - y, axis=1)
    keep = gap > 0
    num = np.linalg.norm(sys.f(x[keep], u[keep]) - sys.f(y[keep], u[keep]), axis=1)
    return float(np.max(num / gap[keep], initial=0.0))
