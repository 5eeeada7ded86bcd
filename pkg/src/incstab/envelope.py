"""Empirical KL envelopes and ISS gains fitted to simulated trajectory pairs.

The envelope family is ``beta(r, t) = c * r * exp(-lam * t)``. For samples
``(r0, t, distance)`` and a given ``c``, the rate is the largest ``lam``
with ``log(distance / r0) <= log c - lam * t`` on every sample: a 64-point
log grid on ``[1e-3, 10]`` brackets it and bisection refines the bracket to
a relative width of 1e-7, reporting the feasible (lower) end. How ``c`` is
chosen is described in :func:`fit_kl_envelope`. No feasible ``lam`` on the
grid, or a distance ratio above ``c_max = 1e3``, means there is no envelope
in the family.

All fits are evidence from a finite ensemble, never proofs, and every report
says so in its ``label``.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentedSystem, disturbance_signal, integrate_augmented
from .comparison import KInfFn, KLFn, eval_k, eval_kl
from .errors import DimensionError
from .metric import Metric
from .system import ControlSystem, InputSignal, integrate, random_signal

LABEL = "empirical, sampled"
C_MAX = 1e3
LAM_LO, LAM_HI, LAM_GRID = 1e-3, 10.0, 64
TOL = 1e-9
# distances below this are treated as exact zeros in the log-domain test
TINY = 1e-12

NO_ENVELOPE = "no envelope in family"
NO_GAIN = "no gain in family"


@dataclass(frozen=True)
class Ensemble:
    """How trajectory pairs are generated.

    ``x0`` is uniform in ``[init_lo, init_hi]^n``; the partner is
    ``x0 + s * e`` with ``e`` a random unit vector and ``s`` log-uniform,
    cycling through the three decades of ``[offset_lo, 1000 * offset_lo]``.
    Inputs are piecewise constant on a ``signal_dt`` grid; distances are
    recorded every ``record_dt``.
    """

    pairs: int = 50
    horizon: float = 10.0
    step: float = 1e-3
    signal_dt: float = 0.5
    record_dt: float = 0.05
    seed: int = 0
    init_lo: float = -2.0
    init_hi: float = 2.0
    offset_lo: float = 1e-2

    def __post_init__(self):
        if self.pairs < 50:
            raise ValueError("an ensemble needs at least 50 trajectory pairs")

    @property
    def record_every(self):
        k = int(round(self.record_dt / self.step))
        if k < 1 or abs(k * self.step - self.record_dt) > 1e-9:
            raise ValueError("record_dt must be a multiple of step")
        return k

    def to_dict(self):
        return asdict(self)


@dataclass
class EnvelopeData:
    """Flattened samples, one row per (pair, recorded time)."""

    pair_id: np.ndarray
    t: np.ndarray
    r0: np.ndarray
    distance: np.ndarray
    gap: np.ndarray | None = None

    def subset(self, mask):
        return EnvelopeData(
            self.pair_id[mask], self.t[mask], self.r0[mask], self.distance[mask],
            None if self.gap is None else self.gap[mask],
        )

    def extend(self, other: "EnvelopeData"):
        cat = np.concatenate
        gap = None if self.gap is None or other.gap is None else cat([self.gap, other.gap])
        return EnvelopeData(cat([self.pair_id, other.pair_id]), cat([self.t, other.t]),
                            cat([self.r0, other.r0]), cat([self.distance, other.distance]), gap)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pair_id", "t", "r0", "distance"])
            for row in zip(self.pair_id, self.t, self.r0, self.distance):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


@dataclass
class EnvelopeFit:
    kind: str
    verdict: str
    beta: KLFn | None
    data: EnvelopeData
    ensemble: dict
    gamma: KInfFn | None = None
    gamma_max: KInfFn | None = None
    max_form_verdict: str | None = None
    max_ratio: float | None = None
    notes: dict = field(default_factory=dict)
    label: str = LABEL

    @property
    def exists(self):
        return self.verdict in ("envelope", "gain")

    def envelope_values(self):
        """Envelope (sum form for ISS fits) at every sample."""
        vals = eval_kl(self.beta, self.data.r0, self.data.t)
        if self.gamma is not None:
            vals = vals + eval_k(self.gamma, self.data.gap)
        return vals

    def residuals(self):
        """``distance - envelope`` per sample (non-positive up to 1e-9 for a valid fit)."""
        return self.data.distance - self.envelope_values()

    def to_dict(self):
        d = {
            "kind": self.kind,
            "verdict": self.verdict,
            "label": self.label,
            "ensemble": self.ensemble,
            "samples": int(self.data.t.shape[0]),
        }
        if self.max_ratio is not None and np.isfinite(self.max_ratio):
            d["max_ratio"] = self.max_ratio
        if self.beta is not None:
            d["beta"] = self.beta.to_dict()
        if self.gamma is not None:
            d["gamma"] = self.gamma.to_dict()
        if self.gamma_max is not None:
            d["gamma_max_form"] = self.gamma_max.to_dict()
        if self.max_form_verdict is not None:
            d["max_form_verdict"] = self.max_form_verdict
        if self.exists:
            res = self.residuals()
            d["residuals"] = {"max_violation": float(np.max(res)) + 0.0, "min_slack": float(np.min(-res)) + 0.0}
        d.update(self.notes)
        return d


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def _lambda_feasible(lam, logc, t, logratio):
    return bool(np.all(logratio <= logc - lam * t))


def _max_lambda(logc, t, logratio, rtol):
    """Largest feasible rate at amplitude ``exp(logc)``, or None below the grid."""
    grid = np.geomspace(LAM_LO, LAM_HI, LAM_GRID)
    ok = [_lambda_feasible(lam, logc, t, logratio) for lam in grid]
    if not ok[0]:
        return None
    # feasibility is monotone in lam, so the last feasible grid point brackets the supremum
    i = int(np.nonzero(ok)[0][-1])
    lo = grid[i]
    if i + 1 < len(grid):
        hi = grid[i + 1]
        while hi - lo > rtol * lo:
            mid = 0.5 * (lo + hi)
            if _lambda_feasible(mid, logc, t, logratio):
                lo = mid
            else:
                hi = mid
    return float(lo)


def _area(c, lam, horizon):
    """Integral of ``c * exp(-lam * t)`` over the horizon: the size of the envelope."""
    return c * (1.0 - np.exp(-lam * horizon)) / lam


def fit_kl_envelope(data: EnvelopeData, c: float | None = None, c_max: float = C_MAX, rtol: float = 1e-7):
    """Fit ``c * r * exp(-lam * t)`` to ``data``.

    Without amplification (every ratio ``distance / r0`` at most 1, up to
    1e-9) the amplitude is pinned to ``c = 1`` and ``lam`` is maximized.
    When some ratio exceeds 1 the data shows transient growth: ``c`` then
    runs over the 64-point log grid on ``[1, c_max]`` (restricted to values
    at or above the largest ratio), ``lam(c)`` is maximized for each, the
    pair with the smallest envelope area over the horizon wins, and a second
    64-point grid between the winner's neighbours refines ``c``.

    Returns ``(beta, max_ratio)`` with ``beta`` None when no member fits.
    Passing ``c`` fixes the amplitude instead.
    """
    r0 = data.r0
    keep = (r0 > 0) & (data.distance > TINY)
    ratio = data.distance[keep] / r0[keep]
    max_ratio = float(np.max(ratio, initial=0.0))
    if np.any((r0 <= 0) & (data.distance > TINY)):
        # a pair starting on the same point drifted apart: nothing in the family fits
        return None, float("inf")
    t = data.t[keep]
    logratio = np.log(ratio)

    if c is not None or max_ratio <= 1.0 + 1e-9:
        c = max(1.0, max_ratio) if c is None else float(c)
        if c > c_max or max_ratio > c:
            return None, max_ratio
        lam = _max_lambda(np.log(c), t, logratio, rtol)
        return (KLFn(KInfFn.linear(c), lam) if lam is not None else None), max_ratio

    if max_ratio > c_max:
        return None, max_ratio
    horizon = float(np.max(data.t, initial=0.0)) or 1.0

    def best_on(cs):
        found = []
        for cc in cs:
            lam = _max_lambda(np.log(cc), t, logratio, rtol)
            if lam is not None:
                found.append((_area(cc, lam, horizon), cc, lam))
        return min(found) if found else None

    grid = np.geomspace(1.0, c_max, 64)
    grid = np.unique(np.concatenate([[max_ratio], grid[grid > max_ratio]]))
    best = best_on(grid)
    if best is None:
        return None, max_ratio
    j = int(np.searchsorted(grid, best[1]))
    lo_c, hi_c = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    best = min(best, best_on(np.geomspace(lo_c, hi_c, 64)) or best)
    return KLFn(KInfFn.linear(best[1]), best[2]), max_ratio


def envelope_violation(beta: KLFn, data: EnvelopeData, gamma: KInfFn | None = None, form: str = "sum"):
    """Largest ``distance - envelope`` over ``data``.

    ``form="sum"`` uses ``beta + gamma(gap)``, ``form="max"`` uses
    ``max(beta, gamma(gap))``; without ``gamma`` it is the plain KL check.
    """
    env = eval_kl(beta, data.r0, data.t)
    if gamma is not None:
        g = eval_k(gamma, data.gap)
        env = env + g if form == "sum" else np.maximum(env, g)
    return float(np.max(data.distance - env, initial=-np.inf))


def fit_gain(excess, gap, family="linear", c_max=C_MAX, p_grid=None):
    """Lexicographically smallest ``(c, p)`` with ``c * gap**p >= excess`` on every sample.

    Samples with ``excess <= 0`` impose nothing. A positive excess at zero
    gap cannot be covered by any K-infinity function: the result is None.
    Returns ``(gain, needed_c)``.
    """
    need = excess > 0
    if not np.any(need):
        return KInfFn.linear(TINY), 0.0
    if np.any(gap[need] <= 0):
        return None, float("inf")
    e, g = excess[need], gap[need]
    if family == "linear":
        ps = np.array([1.0])
    elif family == "power":
        ps = p_grid if p_grid is not None else np.union1d(np.geomspace(0.25, 4.0, 64), [1.0])
    else:
        raise ValueError("gain family must be 'linear' or 'power'")
    cs = np.array([np.max(e / g**p) for p in ps])
    j = int(np.argmin(cs))  # first minimum, i.e. smallest p among ties
    c, p = float(cs[j]), float(ps[j])
    if c > c_max:
        return None, c
    return (KInfFn.linear(c) if p == 1.0 else KInfFn.power(c, p)), c


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


def _initial_pairs(n, ens: Ensemble, rng, count):
    x0 = ens.init_lo + (ens.init_hi - ens.init_lo) * rng.random((count, n))
    e = rng.standard_normal((count, n))
    e /= np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-300)
    decade = np.arange(count) % 3
    s = ens.offset_lo * 10.0 ** (decade + rng.random(count))
    return x0, x0 + s[:, None] * e


def _cells(ens):
    return int(np.ceil(ens.horizon / ens.signal_dt - 1e-9))


def _vertex_values(U, cells, count):
    """Constant signals sitting at extreme points of ``U``, cycled over ``count`` pairs."""
    pts = U.extreme_points()
    vals = pts[np.arange(count) % len(pts)]
    return np.broadcast_to(vals[None], (cells,) + vals.shape).copy()


def _flatten(t, dist, r0, gap=None):
    K, P = dist.shape
    pair_id = np.tile(np.arange(P), K)
    tt = np.repeat(t, P)
    g = None if gap is None else np.tile(gap, K)
    return EnvelopeData(pair_id, tt, np.tile(r0, K), dist.reshape(-1), g)


def simulate_pairs(sys: ControlSystem, d: Metric, ens: Ensemble, kind="shared"):
    """Simulate ``ens.pairs`` pairs and return their distance samples.

    ``kind="shared"``: both states see one input; a few pairs (at most a
    fifth) hold a constant extreme input, since worst-case contraction often
    sits at a vertex of ``U``. ``kind="differing"``: a third of the pairs
    share one signal, a third hold two random constants, a third get
    independent random signals; ``gap`` holds ``sup ||u - v||``.
    """
    rng = np.random.default_rng(ens.seed)
    P = ens.pairs
    x0, y0 = _initial_pairs(sys.n, ens, rng, P)
    r0 = d.dist(x0, y0)
    cells = _cells(ens)
    gap = None
    if sys.m == 0:
        sig = None
    elif kind == "shared":
        vals = random_signal(sys.input_set, cells * ens.signal_dt, ens.signal_dt, rng, batch=P).values.copy()
        nv = min(P // 5, len(sys.input_set.extreme_points()))
        vals[:, :nv] = _vertex_values(sys.input_set, cells, nv)
        sig = InputSignal(np.concatenate([vals, vals], axis=1), ens.signal_dt)
    elif kind == "differing":
        U = sys.input_set
        u = random_signal(U, cells * ens.signal_dt, ens.signal_dt, rng, batch=P).values.copy()
        v = random_signal(U, cells * ens.signal_dt, ens.signal_dt, rng, batch=P).values.copy()
        third = P // 3
        v[:, :third] = u[:, :third]
        cu, cv = U.sample(rng, P - 2 * third), U.sample(rng, P - 2 * third)
        u[:, third:P - third] = cu[None]
        v[:, third:P - third] = cv[None]
        gap = np.linalg.norm(u - v, axis=-1).max(axis=0)
        sig = InputSignal(np.concatenate([u, v], axis=1), ens.signal_dt)
    else:
        raise ValueError("kind must be 'shared' or 'differing'")
    tr = integrate(sys, np.concatenate([x0, y0]), sig, ens.horizon, ens.step, ens.record_every)
    dist = d.dist(tr.x[:, :P], tr.x[:, P:])
    return _flatten(tr.t, dist, r0, gap)


# --------------------------------------------------------------------------
# public estimators
# --------------------------------------------------------------------------


def estimate_gas_envelope(sys: ControlSystem, d: Metric, ensemble: Ensemble = Ensemble(),
                          c_max: float = C_MAX) -> EnvelopeFit:
    """KL envelope for pairs of trajectories driven by the same input."""
    data = simulate_pairs(sys, d, ensemble, "shared")
    beta, max_ratio = fit_kl_envelope(data, c_max=c_max)
    verdict = "envelope" if beta is not None else NO_ENVELOPE
    return EnvelopeFit("gas", verdict, beta, data, ensemble.to_dict(), max_ratio=max_ratio)


def estimate_iss_gain(sys: ControlSystem, d: Metric, beta: KLFn, ensemble: Ensemble = Ensemble(),
                      family: str = "linear", c_max: float = C_MAX) -> EnvelopeFit:
    """Smallest gain ``gamma`` in ``family`` with ``distance <= beta + gamma(gap)``.

    The max form ``distance <= max(beta, gamma_max(gap))`` is fitted
    separately and reported next to it; no conversion between the two is
    claimed.
    """
    if sys.m == 0:
        raise DimensionError("an ISS gain needs a system with inputs")
    data = simulate_pairs(sys, d, ensemble, "differing")
    env = eval_kl(beta, data.r0, data.t)
    gamma, need = fit_gain(data.distance - env, data.gap, family, c_max)
    over = data.distance > env + TOL
    gmax, _ = fit_gain(np.where(over, data.distance, 0.0), data.gap, family, c_max)
    verdict = "gain" if gamma is not None else NO_GAIN
    fit = EnvelopeFit(
        "iss", verdict, beta, data, ensemble.to_dict(), gamma=gamma, gamma_max=gmax,
        max_form_verdict="gain" if gmax is not None else NO_GAIN,
    )
    fit.notes["gain_family"] = family
    if gamma is None:
        fit.notes["required_c"] = need
    return fit


def validate_ugas(asys: AugmentedSystem, ensemble: Ensemble = Ensemble(pairs=200), d: Metric | None = None,
                  c_max: float = C_MAX) -> EnvelopeFit:
    """KL envelope for ``d_hat(z(t), Delta)`` of the doubled system under random disturbances.

    Disturbances ``w = (w1, w2)`` are piecewise constant with ``w1`` uniform
    in ``U`` and ``w2`` uniform in the unit ball.
    """
    d = d if d is not None else asys.metric
    rng = np.random.default_rng(ensemble.seed)
    n = asys.base.n
    P = ensemble.pairs
    x0, y0 = _initial_pairs(n, ensemble, rng, P)
    z0 = np.concatenate([x0, y0], axis=1)
    sig = disturbance_signal(asys, _cells(ensemble) * ensemble.signal_dt, ensemble.signal_dt, rng, batch=P)
    run = integrate_augmented(asys, z0, sig, ensemble.horizon, ensemble.step, d, ensemble.record_every)
    data = _flatten(run.trajectory.t, run.diagonal_distance, run.diagonal_distance[0])
    beta, max_ratio = fit_kl_envelope(data, c_max=c_max)
    verdict = "envelope" if beta is not None else NO_ENVELOPE
    fit = EnvelopeFit("ugas", verdict, beta, data, ensemble.to_dict(), max_ratio=max_ratio)
    if asys.rho is not None:
        fit.notes["rho"] = asys.rho.to_dict()
    return fit
