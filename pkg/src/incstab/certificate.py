"""Sampled checking and falsification of incremental Lyapunov certificates.

Each Lyapunov inequality becomes a :class:`Condition`: a set of variable
blocks (``x``, ``y``, ``u``, ``v``, each living in a box or ball) plus a
vectorized *violation* function, positive exactly where the inequality is
broken. Checking samples the blocks; falsification samples and then climbs
the violation by coordinate-wise local ascent.

Every verdict here is empirical: quantifiers over R^n are replaced by a
compact box and a finite sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .comparison import KInfFn, eval_k
from .errors import DimensionError, GradientMismatchError, NonSmoothError
from .metric import Metric, Pullback, metric_from_dict, set_distance
from .sets import Ball, Box, ConvexSet, DiagonalSet, PointSet, target_from_dict
from .system import ControlSystem, InputSignal, integrate, random_signal

TOL = 1e-9
LABEL = "empirical, sampled"
CHUNK = 4096


# --------------------------------------------------------------------------
# certificates
# --------------------------------------------------------------------------


def _check_V(V, allowed):
    if ex.contains_op(V, "abs"):
        raise NonSmoothError("abs is not allowed in Lyapunov candidates (V must be smooth)")
    extra = ex.variables(V) - set(allowed)
    if extra:
        raise DimensionError(f"V uses {sorted(extra)}; allowed variables are {sorted(allowed)}")


@dataclass(frozen=True, eq=False)
class GasCertificate:
    """Candidate ``V(x, y)`` with metric, sandwich bounds and decay rate ``kappa``."""

    V: ex.Expr
    metric: Metric
    alpha_lo: KInfFn
    alpha_hi: KInfFn
    kappa: float
    n: int

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        _check_V(self.V, ex.state_names("x", self.n) + ex.state_names("y", self.n))

    def to_dict(self):
        return {
            "V": ex.to_string(self.V),
            "metric": self.metric.to_dict(),
            "alpha_lo": self.alpha_lo.to_dict(),
            "alpha_hi": self.alpha_hi.to_dict(),
            "kappa": self.kappa,
        }


@dataclass(frozen=True, eq=False)
class IssCertificate(GasCertificate):
    """Adds the input-difference gain ``sigma`` and, optionally, ``phi`` for the implication form."""

    sigma: KInfFn = None
    phi: KInfFn | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.sigma is None:
            raise ValueError("an ISS certificate needs sigma")

    def to_dict(self):
        d = super().to_dict()
        d["sigma"] = self.sigma.to_dict()
        if self.phi is not None:
            d["phi"] = self.phi.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class UgasCertificate:
    """Candidate ``V(x)`` for uniform stability with respect to ``target``."""

    V: ex.Expr
    metric: Metric
    target: object
    alpha_lo: KInfFn
    alpha_hi: KInfFn
    kappa: float
    n: int

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        _check_V(self.V, ex.state_names("x", self.n))

    def to_dict(self):
        return {
            "V": ex.to_string(self.V),
            "metric": self.metric.to_dict(),
            "target": self.target.to_dict(),
            "alpha_lo": self.alpha_lo.to_dict(),
            "alpha_hi": self.alpha_hi.to_dict(),
            "kappa": self.kappa,
        }


def certificate_from_dict(d, n: int, kind: str = "gas"):
    """Build a certificate of ``kind`` (``gas``, ``iss`` or ``ugas``) from its JSON form."""
    metric = metric_from_dict(d["metric"], n)
    lo, hi = KInfFn.from_dict(d["alpha_lo"]), KInfFn.from_dict(d["alpha_hi"])
    kappa = float(d["kappa"])
    if kind == "ugas":
        target = target_from_dict(d["target"])
        return UgasCertificate(ex.parse(d["V"], n, 0), metric, target, lo, hi, kappa, n)
    V = ex.parse(d["V"], n, 0)
    if kind == "gas":
        return GasCertificate(V, metric, lo, hi, kappa, n)
    if kind == "iss":
        phi = KInfFn.from_dict(d["phi"]) if d.get("phi") else None
        return IssCertificate(V, metric, lo, hi, kappa, n, KInfFn.from_dict(d["sigma"]), phi)
    raise ValueError(f"unknown certificate kind {kind!r}")


# --------------------------------------------------------------------------
# compiled pieces of V
# --------------------------------------------------------------------------


class _Compiled:
    """``V`` and its gradient blocks, compiled once."""

    def __init__(self, V, letters, n):
        self.V = V
        self.names = [f"{a}{i}" for a in letters for i in range(1, n + 1)]
        self.value = ex.compile_expr(V)
        self.grad_exprs = ex.gradient(V, self.names)
        self.grad = [ex.compile_expr(g) for g in self.grad_exprs]
        self.n = n
        self.letters = letters

    def bindings(self, *arrays):
        b = {}
        for letter, arr in zip(self.letters, arrays):
            b.update(ex.bind(letter, arr))
        return b

    def eval(self, *arrays):
        shape = np.asarray(arrays[0]).shape[:-1]
        return np.broadcast_to(self.value(self.bindings(*arrays)), shape)

    def grads(self, *arrays):
        """List of gradient blocks, one ``(..., n)`` array per letter."""
        b = self.bindings(*arrays)
        shape = np.asarray(arrays[0]).shape[:-1]
        cols = [np.broadcast_to(g(b), shape) for g in self.grad]
        out = []
        for k in range(len(self.letters)):
            out.append(np.stack(cols[k * self.n:(k + 1) * self.n], axis=-1))
        return out


def gradient_check(V, names, box_lo, box_hi, points=100, seed=0, rtol=1e-5):
    """Compare symbolic partials of ``V`` with central differences.

    The step for variable ``s`` is ``1e-5 * max(1, |s|)``. The error measure
    is ``|fd - g| / max(1, |g|)`` (relative, absolute near zero). Returns the
    worst error; raises :class:`GradientMismatchError` above ``rtol``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(box_lo, float), np.asarray(box_hi, float)
    pts = lo + (hi - lo) * rng.random((points, len(names)))
    base = {nm: pts[:, i] for i, nm in enumerate(names)}
    worst = 0.0
    for i, nm in enumerate(names):
        g = np.broadcast_to(ex.evaluate(ex.diff(V, nm), base), (points,))
        h = 1e-5 * np.maximum(1.0, np.abs(pts[:, i]))
        up = dict(base)
        up[nm] = pts[:, i] + h
        dn = dict(base)
        dn[nm] = pts[:, i] - h
        fd = (np.asarray(ex.evaluate(V, up)) - np.asarray(ex.evaluate(V, dn))) / (2 * h)
        err = np.abs(fd - g) / np.maximum(1.0, np.abs(g))
        worst = max(worst, float(np.max(err)))
    if worst > rtol:
        raise GradientMismatchError(f"symbolic gradient disagrees with finite differences (rel err {worst:.3g})")
    return worst


# --------------------------------------------------------------------------
# conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Condition:
    """A sampled inequality.

    ``blocks`` lists ``(name, set)`` pairs spanning the search space.
    ``violation`` maps a dict of block arrays to violation values (positive
    means the inequality fails). ``transform`` optionally turns the raw
    search blocks into the reported ones (the implication form derives ``v``
    from an auxiliary ball variable ``w`` this way).
    """

    name: str
    blocks: tuple
    violation_fn: Callable
    transform: Callable | None = None
    info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return sum(s.dim for _, s in self.blocks)

    def split(self, points):
        points = np.asarray(points, dtype=float)
        out, i = {}, 0
        for nm, s in self.blocks:
            out[nm] = points[..., i:i + s.dim]
            i += s.dim
        return out

    def reported(self, points):
        parts = self.split(points)
        return self.transform(parts) if self.transform else parts

    def violation(self, points):
        return np.asarray(self.violation_fn(self.reported(points)), dtype=float)

    def sample(self, rng, count):
        return np.concatenate([s.sample(rng, count) for _, s in self.blocks], axis=1)

    def project(self, points):
        parts = self.split(points)
        return np.concatenate([s.project(parts[nm]) for nm, s in self.blocks], axis=-1)

    def bounds(self):
        los, his = zip(*(s.bounds() for _, s in self.blocks))
        return np.concatenate(los), np.concatenate(his)


def _as_box(domain, n):
    if isinstance(domain, Box):
        if domain.dim != n:
            raise DimensionError(f"domain has dimension {domain.dim}, expected {n}")
        return domain
    lo, hi = domain
    return Box.cube(lo, hi, n)


def _inner(grad, field_values):
    return np.sum(grad * field_values, axis=-1)


def sandwich_condition(cert: GasCertificate, domain) -> Condition:
    box = _as_box(domain, cert.n)
    comp = _Compiled(cert.V, "xy", cert.n)

    def violation(p):
        dxy = cert.metric.dist(p["x"], p["y"])
        V = comp.eval(p["x"], p["y"])
        return np.maximum(eval_k(cert.alpha_lo, dxy) - V, V - eval_k(cert.alpha_hi, dxy))

    return Condition("sandwich", (("x", box), ("y", box)), violation)


def gas_decrease_condition(cert: GasCertificate, sys: ControlSystem, domain) -> Condition:
    _same_dim(cert, sys)
    box = _as_box(domain, cert.n)
    comp = _Compiled(cert.V, "xy", cert.n)

    def violation(p):
        x, y, u = p["x"], p["y"], p["u"]
        gx, gy = comp.grads(x, y)
        return _inner(gx, sys.f(x, u)) + _inner(gy, sys.f(y, u)) + cert.kappa * comp.eval(x, y)

    return Condition("decrease_gas", (("x", box), ("y", box), ("u", sys.input_set)), violation)


def iss_decrease_condition(cert: IssCertificate, sys: ControlSystem, domain, mode="sum", phi=None) -> Condition:
    """Sum form ``dV <= -kappa V + sigma(|u - v|)`` or implication form.

    The implication form only constrains ``(x, y, u, v)`` with
    ``phi(d(x, y)) >= |u - v|``; such ``v`` are generated as
    ``sat_U(u + phi(d(x, y)) * w)`` with ``w`` in the unit ball, which
    covers the premise set exactly because ``sat_U`` fixes ``u`` and is
    nonexpansive.
    """
    if not isinstance(cert, IssCertificate):
        raise TypeError("the ISS decrease check needs an ISS certificate (with sigma)")
    _same_dim(cert, sys)
    box = _as_box(domain, cert.n)
    comp = _Compiled(cert.V, "xy", cert.n)
    U = sys.input_set

    def lie(x, y, u, v):
        gx, gy = comp.grads(x, y)
        return _inner(gx, sys.f(x, u)) + _inner(gy, sys.f(y, v)) + cert.kappa * comp.eval(x, y)

    if mode == "sum":
        def violation(p):
            gap = np.linalg.norm(p["u"] - p["v"], axis=-1)
            return lie(p["x"], p["y"], p["u"], p["v"]) - eval_k(cert.sigma, gap)

        return Condition("decrease_iss_sum", (("x", box), ("y", box), ("u", U), ("v", U)), violation)

    if mode != "implication":
        raise ValueError("mode must be 'sum' or 'implication'")
    phi = phi if phi is not None else cert.phi
    if phi is None:
        raise ValueError("the implication form needs phi")

    def transform(p):
        radius = np.asarray(eval_k(phi, cert.metric.dist(p["x"], p["y"])))[..., None]
        v = U.project(p["u"] + radius * p["w"])
        return {"x": p["x"], "y": p["y"], "u": p["u"], "v": v}

    def violation(p):
        return lie(p["x"], p["y"], p["u"], p["v"])

    blocks = (("x", box), ("y", box), ("u", U), ("w", Ball(1.0, U.dim)))
    return Condition("decrease_iss_implication", blocks, violation, transform, {"phi": phi.to_dict()})


def ugas_sandwich_condition(cert: UgasCertificate, domain) -> Condition:
    box = _as_box(domain, cert.n)
    comp = _Compiled(cert.V, "x", cert.n)

    def violation(p):
        r = set_distance(cert.metric, p["x"], cert.target)
        V = comp.eval(p["x"])
        return np.maximum(eval_k(cert.alpha_lo, r) - V, V - eval_k(cert.alpha_hi, r))

    return Condition("sandwich_ugas", (("x", box),), violation)


def ugas_decrease_condition(cert: UgasCertificate, sys: ControlSystem, domain) -> Condition:
    _same_dim(cert, sys)
    box = _as_box(domain, cert.n)
    comp = _Compiled(cert.V, "x", cert.n)

    def violation(p):
        (g,) = comp.grads(p["x"])
        return _inner(g, sys.f(p["x"], p["u"])) + cert.kappa * comp.eval(p["x"])

    return Condition("decrease_ugas", (("x", box), ("u", sys.input_set)), violation)


def _same_dim(cert, sys):
    if cert.n != sys.n:
        raise DimensionError(f"certificate is for n={cert.n}, system has n={sys.n}")


# --------------------------------------------------------------------------
# sampling and reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Sampler:
    """``random``: ``count`` uniform draws, generated in fixed-size chunks
    seeded by ``(seed, chunk index)`` so a larger count always extends a
    smaller one. ``grid``: tensor grid with ``floor(count**(1/dim))`` points
    per axis (at least 2), projected onto ball-shaped blocks."""

    count: int = 10000
    seed: int = 0
    kind: str = "random"

    def points(self, cond: Condition):
        if self.kind == "grid":
            return _grid_points(cond, self.count)
        if self.kind != "random":
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        chunks = []
        left = self.count
        k = 0
        while left > 0:
            rng = np.random.default_rng([self.seed, k])
            chunks.append(cond.sample(rng, CHUNK)[: min(CHUNK, left)])
            left -= CHUNK
            k += 1
        return np.concatenate(chunks) if chunks else np.zeros((0, cond.dim))


def _grid_points(cond, count):
    lo, hi = cond.bounds()
    D = lo.shape[0]
    if D == 0:
        return np.zeros((1, 0))
    per = max(2, int(np.floor(count ** (1.0 / D) + 1e-9)))
    axes = [np.linspace(a, b, per) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, D)
    return cond.project(grid)


def _jsonable_witness(parts):
    return {k: np.asarray(v, dtype=float).tolist() for k, v in parts.items()}


@dataclass
class CheckReport:
    """Outcome of a sampled check.

    ``margin`` is the worst *slack* over the samples (``-max violation``):
    the check passes iff ``margin >= -tolerance``.
    """

    condition: str
    verdict: str
    margin: float
    witness: dict
    samples: int
    seed: int
    tolerance: float = TOL
    domain: dict | None = None
    parts: list = field(default_factory=list)
    gradient_error: float | None = None
    label: str = LABEL

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        d = {
            "condition": self.condition,
            "verdict": self.verdict,
            "margin": self.margin,
            "witness": self.witness,
            "samples": self.samples,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "label": self.label,
        }
        if self.domain is not None:
            d["domain"] = self.domain
        if self.gradient_error is not None:
            d["gradient_error"] = self.gradient_error
        if self.parts:
            d["parts"] = [p.to_dict() for p in self.parts]
        return d


def combine(name, reports) -> CheckReport:
    """Conjunction of several reports (worst margin, first failing witness)."""
    worst = min(reports, key=lambda r: r.margin)
    failing = [r for r in reports if not r.passed]
    verdict = "fail" if failing else "pass"
    witness = (failing[0] if failing else worst).witness
    return CheckReport(
        name, verdict, worst.margin, witness, sum(r.samples for r in reports), reports[0].seed,
        reports[0].tolerance, reports[0].domain, list(reports),
    )


def run_check(cond: Condition, sampler: Sampler, tol=TOL, domain=None) -> CheckReport:
    pts = sampler.points(cond)
    viol = cond.violation(pts)
    # argmax returns the first index on ties: deterministic reduction
    i = int(np.argmax(viol))
    worst = float(viol[i])
    verdict = "pass" if worst <= tol else "fail"
    witness = _jsonable_witness({k: v[i] for k, v in cond.reported(pts).items()})
    return CheckReport(cond.name, verdict, -worst + 0.0, witness, len(pts), sampler.seed, tol, domain)


def _domain_dict(domain, n):
    box = _as_box(domain, n)
    return {"lo": box.lo.tolist(), "hi": box.hi.tolist()}


def _pre_run(cert, domain, letters):
    box = _as_box(domain, cert.n)
    names = [f"{a}{i}" for a in letters for i in range(1, cert.n + 1)]
    lo = np.tile(box.lo, len(letters))
    hi = np.tile(box.hi, len(letters))
    if isinstance(cert.metric, Pullback):
        cert.metric.collision_check(box)
    return gradient_check(cert.V, names, lo, hi)


def check_sandwich(cert, domain=(-2.0, 2.0), sampler: Sampler = Sampler()) -> CheckReport:
    """``alpha_lo(d) <= V <= alpha_hi(d)`` on sampled pairs (or points, for U-GAS)."""
    if isinstance(cert, UgasCertificate):
        cond = ugas_sandwich_condition(cert, domain)
    else:
        cond = sandwich_condition(cert, domain)
    return run_check(cond, sampler, domain=_domain_dict(domain, cert.n))


def check_decrease_gas(cert: GasCertificate, sys: ControlSystem, domain=(-2.0, 2.0),
                       sampler: Sampler = Sampler()) -> CheckReport:
    """``dV/dx f(x,u) + dV/dy f(y,u) <= -kappa V`` on sampled ``(x, y, u)``.

    Gradients are symbolic and are first cross-checked against finite
    differences; a mismatch raises :class:`GradientMismatchError`.
    """
    err = _pre_run(cert, domain, "xy")
    rep = run_check(gas_decrease_condition(cert, sys, domain), sampler, domain=_domain_dict(domain, cert.n))
    rep.gradient_error = err
    return rep


def check_decrease_iss(cert: IssCertificate, sys: ControlSystem, domain=(-2.0, 2.0),
                       sampler: Sampler = Sampler(), mode: str = "sum", phi: KInfFn | None = None) -> CheckReport:
    err = _pre_run(cert, domain, "xy")
    cond = iss_decrease_condition(cert, sys, domain, mode, phi)
    rep = run_check(cond, sampler, domain=_domain_dict(domain, cert.n))
    rep.gradient_error = err
    return rep


def check_ugas(cert: UgasCertificate, sys: ControlSystem, domain=(-2.0, 2.0),
               sampler: Sampler = Sampler()) -> CheckReport:
    """Both U-GAS conditions; the report's ``parts`` hold the two sub-reports."""
    err = _pre_run(cert, domain, "x")
    dom = _domain_dict(domain, cert.n)
    sand = run_check(ugas_sandwich_condition(cert, domain), sampler, domain=dom)
    dec = run_check(ugas_decrease_condition(cert, sys, domain), sampler, domain=dom)
    rep = combine("ugas", [sand, dec])
    rep.gradient_error = err
    return rep


# --------------------------------------------------------------------------
# falsification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    samples: int = 10000
    refine_steps: int = 200


@dataclass
class Counterexample:
    """A verified violation; ``violation`` is positive (how far the inequality fails)."""

    condition: str
    witness: dict
    violation: float
    seed: int
    samples: int
    refine_sweeps: int
    label: str = LABEL

    def to_dict(self):
        return {
            "condition": self.condition,
            "witness": self.witness,
            "violation": self.violation,
            "seed": self.seed,
            "samples": self.samples,
            "refine_sweeps": self.refine_sweeps,
            "label": self.label,
        }


def falsify(cond: Condition, budget: Budget = Budget(), seed: int = 0, tol: float = TOL):
    """Search for a point violating ``cond``.

    Phase one draws ``budget.samples`` uniform points (chunked, seeded as in
    :class:`Sampler`). Phase two runs coordinate-wise ascent on the
    violation from the best sample: coordinates are swept in order and the
    better of ``+h`` and ``-h`` (``+h`` on ties) is kept if it improves; a
    sweep without improvement
    halves every step, down to a floor of 1e-8. The result is re-evaluated
    and returned only if it violates by more than ``tol``.
    """
    if budget.samples < 1:
        raise ValueError("budget must allow at least one sample")
    pts = Sampler(budget.samples, seed).points(cond)
    viol = cond.violation(pts)
    i = int(np.argmax(viol))
    p, best = pts[i].copy(), float(viol[i])

    lo, hi = cond.bounds()
    h = 0.1 * np.maximum(hi - lo, 1e-12)
    sweeps = 0
    while sweeps < budget.refine_steps and np.max(h, initial=0.0) >= 1e-8:
        sweeps += 1
        improved = False
        for k in range(p.shape[0]):
            cand = np.repeat(p[None], 2, axis=0)
            cand[0, k] += h[k]
            cand[1, k] -= h[k]
            cand = cond.project(cand)
            vals = cond.violation(cand)
            j = int(np.argmax(vals))
            if vals[j] > best:
                p, best = cand[j], float(vals[j])
                improved = True
        if not improved:
            h *= 0.5

    final = float(cond.violation(p[None])[0])
    if not final > tol:
        return None
    witness = _jsonable_witness({k: v[0] for k, v in cond.reported(p[None]).items()})
    return Counterexample(cond.name, witness, final, seed, len(pts), sweeps)


# --------------------------------------------------------------------------
# trajectory-level consequence of the decrease condition
# --------------------------------------------------------------------------


@dataclass
class DecayCheck:
    max_excess: float
    pairs: int
    points: int
    seed: int
    tolerance: float

    @property
    def passed(self):
        return self.max_excess <= self.tolerance


def trajectory_decay_check(cert: GasCertificate, sys: ControlSystem, domain=(-2.0, 2.0), pairs=100,
                           horizon=2.0, step=1e-3, signal_dt=0.1, seed=0, tol=1e-3) -> DecayCheck:
    """Compare ``V(x(t), y(t))`` with ``V(x0, y0) exp(-kappa t)`` along simulated pairs.

    Both trajectories share one random piecewise-constant input. Only the
    part of each pair before either state first leaves ``domain`` counts.
    """
    box = _as_box(domain, cert.n)
    rng = np.random.default_rng(seed)
    x0 = box.sample(rng, pairs)
    y0 = box.sample(rng, pairs)
    z0 = np.concatenate([x0, y0])
    if sys.m:
        sig = random_signal(sys.input_set, horizon, signal_dt, rng, batch=pairs)
        both = InputSignal(np.concatenate([sig.values, sig.values], axis=1), sig.dt)
    else:
        both = None
    tr = integrate(sys, z0, both, horizon, step)
    xs, ys = tr.x[:, :pairs], tr.x[:, pairs:]
    inside = box.contains(xs) & box.contains(ys)
    alive = np.cumprod(inside, axis=0).astype(bool)
    comp = _Compiled(cert.V, "xy", cert.n)
    V = comp.eval(xs, ys)
    bound = V[0][None, :] * np.exp(-cert.kappa * tr.t)[:, None]
    excess = np.where(alive, V - bound, -np.inf)
    return DecayCheck(float(np.max(excess)), pairs, int(alive.sum()), seed, tol)
